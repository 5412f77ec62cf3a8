//! Dataset-level robustness metrics from per-input certificates.

use serde::{Deserialize, Serialize};

use crate::envelope::{Certificate, Phase};

/// Fractions are in `[0, 1]`; every field is `None` for an empty set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    /// Clean test error.
    pub clean_error: Option<f64>,
    /// Misclassified cleanly or by the attack.
    pub pgd_error: Option<f64>,
    /// Not fully certified at ε.
    pub certified_error: Option<f64>,
    /// Mean certified radius.
    pub average_bound: Option<f64>,
}

impl Aggregates {
    /// Mean radius an all-or-nothing certifier gets from the same bounds,
    /// `ε·(1 − CRE)`.
    pub fn binary_average_bound(&self, epsilon: f64) -> Option<f64> {
        self.certified_error.map(|cre| epsilon * (1.0 - cre))
    }
}

/// What the aggregates need from one certified input.
pub trait CertifiedInput {
    fn misclassified(&self) -> bool;
    fn phase(&self) -> Phase;
    fn radius(&self) -> f64;
}

impl CertifiedInput for Certificate {
    fn misclassified(&self) -> bool {
        self.prediction != self.label
    }
    fn phase(&self) -> Phase {
        self.phase
    }
    fn radius(&self) -> f64 {
        self.radius
    }
}

/// `pgd_success` is ignored unless it has one flag per input.
pub fn aggregate<C: CertifiedInput>(certs: &[C], pgd_success: Option<&[bool]>) -> Aggregates {
    if certs.is_empty() {
        return Aggregates::default();
    }
    let n = certs.len() as f64;
    let frac = |count: usize| Some(count as f64 / n);
    Aggregates {
        clean_error: frac(certs.iter().filter(|c| c.misclassified()).count()),
        pgd_error: pgd_success.and_then(|flags| {
            (flags.len() == certs.len()).then(|| flags.iter().filter(|&&f| f).count() as f64 / n)
        }),
        certified_error: frac(certs.iter().filter(|c| c.phase() != Phase::Full).count()),
        average_bound: Some(certs.iter().map(|c| c.radius()).sum::<f64>() / n),
    }
}
