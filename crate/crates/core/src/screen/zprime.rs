use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which control-mean combination goes in the Z' denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZPrimeVariant {
    /// `|μp + μn|`, the default.
    #[default]
    MeanSum,
    /// `|μp − μn|`, the usual screening definition.
    MeanDifference,
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (N − 1).
pub(crate) fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// `1 − 3(σp + σn) / |μp + μn|` with sample standard deviations.
pub fn z_prime(neutral: &[f64], positive: &[f64]) -> Result<f64> {
    z_prime_with(neutral, positive, ZPrimeVariant::MeanSum)
}

pub fn z_prime_with(neutral: &[f64], positive: &[f64], variant: ZPrimeVariant) -> Result<f64> {
    if neutral.len() < 2 || positive.len() < 2 {
        return Err(Error::DegenerateControls(format!(
            "need at least 2 samples per group, got {} neutral and {} positive",
            neutral.len(),
            positive.len()
        )));
    }
    if neutral.iter().chain(positive).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("control values".into()));
    }
    let (mn, mp) = (mean(neutral), mean(positive));
    let denom = match variant {
        ZPrimeVariant::MeanSum => (mp + mn).abs(),
        ZPrimeVariant::MeanDifference => (mp - mn).abs(),
    };
    if denom == 0.0 {
        return Err(Error::DegenerateControls("control means give a zero denominator".into()));
    }
    let spread = sample_sd(neutral) + sample_sd(positive);
    Ok(1.0 - 3.0 * spread / denom)
}
