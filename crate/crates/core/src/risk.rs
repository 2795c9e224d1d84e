//! Exponential-utility certainty equivalents and the ensemble bounds they
//! approximate.
//!
//! For a risk coefficient `beta` the utility is `U(v) = exp(2 beta v)`; the
//! certainty equivalent of an ensemble `V_i` is `U^-1(E U(V_i))`. Its
//! second-order expansion is `mean + beta * variance`, while the agent-facing
//! pessimistic bound is `mean + beta * std`. The two are kept apart here.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UtilityFamily {
    /// `exp(2 beta v)`, `beta != 0`.
    Exponential,
    /// Identity utility, the risk-neutral case `beta == 0`.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskSpec {
    beta: f64,
    family: UtilityFamily,
}

impl RiskSpec {
    pub fn new(beta: f64) -> Result<Self> {
        if !beta.is_finite() {
            return Err(Error::Contract(format!("risk coefficient must be finite, got {beta}")));
        }
        let family = if beta == 0.0 {
            UtilityFamily::Linear
        } else {
            UtilityFamily::Exponential
        };
        Ok(Self { beta, family })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn family(&self) -> UtilityFamily {
        self.family
    }

    pub fn utility(&self, v: f64) -> f64 {
        match self.family {
            UtilityFamily::Linear => v,
            UtilityFamily::Exponential => (2.0 * self.beta * v).exp(),
        }
    }
}

/// Mean and population standard deviation of an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub mean: f64,
    pub std: f64,
    pub members: Vec<f64>,
}

impl EnsembleStats {
    pub fn from_members(members: &[f64]) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Contract("ensemble has no members".into()));
        }
        let n = members.len() as f64;
        let mean = members.iter().sum::<f64>() / n;
        let std = if members.len() == 2 {
            0.5 * (members[0] - members[1]).abs()
        } else {
            (members.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
        };
        Ok(Self {
            mean,
            std,
            members: members.to_vec(),
        })
    }

    /// Statistics without member values, for closed-form use.
    pub fn from_moments(mean: f64, std: f64) -> Self {
        Self {
            mean,
            std,
            members: Vec::new(),
        }
    }

    pub fn variance(&self) -> f64 {
        self.std * self.std
    }
}

/// Minimum of two critics written as ensemble statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinDecomposition {
    pub mean: f64,
    pub deviation: f64,
    pub min: f64,
}

/// `min(q1, q2) = (q1 + q2) / 2 - |q1 - q2| / 2`.
pub fn min_as_stats(q1: f64, q2: f64) -> MinDecomposition {
    let mean = 0.5 * (q1 + q2);
    let deviation = 0.5 * (q1 - q2).abs();
    MinDecomposition {
        mean,
        deviation,
        min: mean - deviation,
    }
}

/// `mean + beta * std`.
pub fn pessimistic_value(stats: &EnsembleStats, beta: f64) -> f64 {
    stats.mean + beta * stats.std
}

/// Second-order certainty equivalent `mean + beta * variance`.
pub fn certainty_equivalent_approx(stats: &EnsembleStats, beta: f64) -> f64 {
    stats.mean + beta * stats.variance()
}

/// `(1 / 2beta) ln E exp(2 beta (V_i - mean))`, centred and stabilized.
fn log_mgf_premium(members: &[f64], mean: f64, beta: f64) -> Result<f64> {
    let exps: Vec<f64> = members.iter().map(|v| 2.0 * beta * (v - mean)).collect();
    if exps.iter().any(|e| !e.is_finite()) {
        return Err(Error::Range(format!(
            "2 * beta * (v - mean) overflows for beta = {beta}"
        )));
    }
    let n = exps.len() as f64;
    let pivot = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_mean = if exps.iter().all(|e| e.abs() <= 1.0) {
        (exps.iter().map(|e| e.exp_m1()).sum::<f64>() / n).ln_1p()
    } else {
        pivot + (exps.iter().map(|e| (e - pivot).exp()).sum::<f64>() / n).ln()
    };
    let premium = log_mean / (2.0 * beta);
    if !premium.is_finite() {
        return Err(Error::Range(format!("certainty equivalent overflowed for beta = {beta}")));
    }
    Ok(premium)
}

/// Exact certainty equivalent of an ensemble (equally weighted members).
pub fn certainty_equivalent_exact(members: &[f64], spec: &RiskSpec) -> Result<f64> {
    let stats = EnsembleStats::from_members(members)?;
    Ok(stats.mean + risk_premium_centered(members, stats.mean, spec)?)
}

fn risk_premium_centered(members: &[f64], mean: f64, spec: &RiskSpec) -> Result<f64> {
    match spec.family {
        UtilityFamily::Linear => Ok(0.0),
        UtilityFamily::Exponential => log_mgf_premium(members, mean, spec.beta),
    }
}

/// Certainty equivalent minus the ensemble mean.
pub fn risk_premium(members: &[f64], spec: &RiskSpec) -> Result<f64> {
    let stats = EnsembleStats::from_members(members)?;
    risk_premium_centered(members, stats.mean, spec)
}

/// `|exact CE - (mean + beta * variance)|`.
pub fn ce_residual(members: &[f64], beta: f64) -> Result<f64> {
    let spec = RiskSpec::new(beta)?;
    let stats = EnsembleStats::from_members(members)?;
    let exact = stats.mean + risk_premium_centered(members, stats.mean, &spec)?;
    Ok((exact - certainty_equivalent_approx(&stats, beta)).abs())
}

/// Monte-Carlo certainty equivalent with a delta-method standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Draws `n` values from `sampler` and returns their certainty equivalent.
pub fn certainty_equivalent_mc(
    mut sampler: impl FnMut() -> f64,
    n: usize,
    spec: &RiskSpec,
) -> Result<McEstimate> {
    if n < 2 {
        return Err(Error::Contract("need at least two samples".into()));
    }
    let samples: Vec<f64> = (0..n).map(|_| sampler()).collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let value = mean + risk_premium_centered(&samples, mean, spec)?;
    let std_error = match spec.family {
        UtilityFamily::Linear => {
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        }
        UtilityFamily::Exponential => {
            // se(CE) = |1/2beta| * sd(W) / (sqrt(n) * E W), W = exp(2 beta (V - c))
            let beta = spec.beta;
            let pivot = samples
                .iter()
                .map(|v| 2.0 * beta * (v - mean))
                .fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = samples
                .iter()
                .map(|v| (2.0 * beta * (v - mean) - pivot).exp())
                .collect();
            let w_mean = w.iter().sum::<f64>() / n as f64;
            let w_var = w.iter().map(|x| (x - w_mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (w_var.sqrt() / (n as f64).sqrt() / w_mean) / (2.0 * beta.abs())
        }
    };
    Ok(McEstimate { value, std_error })
}

/// One row of the certainty-equivalent documentation grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CeRow {
    pub beta: f64,
    pub spread: f64,
    pub exact: f64,
    pub approx: f64,
    pub residual: f64,
}

/// Evaluates the two-point ensemble `{-spread, +spread}` over a grid.
pub fn ce_table(betas: &[f64], spreads: &[f64]) -> Result<Vec<CeRow>> {
    let mut rows = Vec::with_capacity(betas.len() * spreads.len());
    for &beta in betas {
        let spec = RiskSpec::new(beta)?;
        for &spread in spreads {
            let members = [-spread, spread];
            let stats = EnsembleStats::from_members(&members)?;
            let exact = certainty_equivalent_exact(&members, &spec)?;
            let approx = certainty_equivalent_approx(&stats, beta);
            rows.push(CeRow {
                beta,
                spread,
                exact,
                approx,
                residual: (exact - approx).abs(),
            });
        }
    }
    Ok(rows)
}

pub fn write_ce_csv(rows: &[CeRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "beta,spread,exact_ce,approx_ce,residual")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.beta, r.spread, r.exact, r.approx, r.residual)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(beta: f64) -> RiskSpec {
        RiskSpec::new(beta).unwrap()
    }

    #[test]
    fn min_decomposition_examples() {
        assert_eq!(
            min_as_stats(1.0, 3.0),
            MinDecomposition {
                mean: 2.0,
                deviation: 1.0,
                min: 1.0
            }
        );
        assert_eq!(
            min_as_stats(2.0, 2.0),
            MinDecomposition {
                mean: 2.0,
                deviation: 0.0,
                min: 2.0
            }
        );
    }

    #[test]
    fn family_tag_follows_beta() {
        assert_eq!(spec(0.0).family(), UtilityFamily::Linear);
        assert_eq!(spec(-0.3).family(), UtilityFamily::Exponential);
        assert!(RiskSpec::new(f64::NAN).is_err());
    }

    #[test]
    fn pessimistic_value_examples() {
        let s = EnsembleStats::from_moments(2.0, 1.0);
        assert_eq!(pessimistic_value(&s, -1.0), 1.0);
        assert_eq!(pessimistic_value(&s, -1.0), min_as_stats(1.0, 3.0).min);
        assert_eq!(pessimistic_value(&s, 0.0), 2.0);
        assert!((pessimistic_value(&s, -0.2) - 1.8).abs() < 1e-15);
    }

    #[test]
    fn two_point_exact_and_approx() {
        let exact = certainty_equivalent_exact(&[1.0, 3.0], &spec(-1.0)).unwrap();
        let direct = -0.5 * (0.5 * ((-2.0f64).exp() + (-6.0f64).exp())).ln();
        assert!((exact - direct).abs() < 1e-14);
        assert!((exact - 1.3375).abs() < 1e-4);
        let stats = EnsembleStats::from_members(&[1.0, 3.0]).unwrap();
        assert_eq!(certainty_equivalent_approx(&stats, -1.0), 1.0);
        let r = ce_residual(&[1.0, 3.0], -1.0).unwrap();
        assert!((r - (direct - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn degenerate_ensembles_have_no_premium() {
        for beta in [-3.0, -0.2, 0.0, 0.5, 4.0] {
            let ce = certainty_equivalent_exact(&[1.7, 1.7, 1.7], &spec(beta)).unwrap();
            assert!((ce - 1.7).abs() < 1e-15);
            assert_eq!(risk_premium(&[1.7, 1.7, 1.7], &spec(beta)).unwrap(), 0.0);
            assert_eq!(ce_residual(&[1.7, 1.7], beta).unwrap(), 0.0);
        }
        let s = EnsembleStats::from_moments(3.0, 0.0);
        assert_eq!(certainty_equivalent_approx(&s, -7.0), 3.0);
    }

    #[test]
    fn premium_flips_sign_on_symmetric_ensembles() {
        let members = [-0.8, -0.1, 0.1, 0.8];
        for beta in [0.1, 0.7, 2.0] {
            let neg = risk_premium(&members, &spec(-beta)).unwrap();
            let pos = risk_premium(&members, &spec(beta)).unwrap();
            assert!(neg < 0.0 && pos > 0.0);
            assert!((neg + pos).abs() < 1e-14);
        }
    }

    #[test]
    fn large_spreads_do_not_overflow() {
        let ce = certainty_equivalent_exact(&[-1e4, 1e4], &spec(-1.0)).unwrap();
        // dominated by the lower member: -1e4 + ln 2 / 2
        assert!((ce - (-1e4 + 0.5 * 2f64.ln())).abs() < 1e-9);
        assert!(certainty_equivalent_exact(&[-1e308, 1e308], &spec(-4.0)).is_err());
    }

    #[test]
    fn residual_grows_superlinearly_for_two_point_ensembles() {
        let r: Vec<f64> = [0.25, 0.5, 1.0]
            .iter()
            .map(|s| ce_residual(&[-s, *s], -1.0).unwrap())
            .collect();
        assert!(r[1] / r[0] > 2.0 && r[2] / r[1] > 2.0);
    }

    #[test]
    fn ce_csv_has_header_and_rows() {
        let rows = ce_table(&[-1.0, 0.5], &[0.1, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_ce_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "beta,spread,exact_ce,approx_ce,residual");
        assert_eq!(text.lines().count(), 5);
    }

    proptest! {
        #[test]
        fn min_identity_holds(q1 in -1e6f64..1e6, q2 in -1e6f64..1e6) {
            let d = min_as_stats(q1, q2);
            let scale = q1.abs().max(q2.abs()).max(1e-300);
            prop_assert!((d.min - q1.min(q2)).abs() <= 1e-12 * scale);
        }

        #[test]
        fn ce_nondecreasing_in_beta(members in prop::collection::vec(-5.0f64..5.0, 2..8)) {
            let grid: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.1).collect();
            let ces: Vec<f64> = grid
                .iter()
                .map(|&b| certainty_equivalent_exact(&members, &spec(b)).unwrap())
                .collect();
            for w in ces.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
        }

        #[test]
        fn jensen_consistency(members in prop::collection::vec(-5.0f64..5.0, 2..8), beta in 0.01f64..3.0) {
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            let averse = certainty_equivalent_exact(&members, &spec(-beta)).unwrap();
            let seeking = certainty_equivalent_exact(&members, &spec(beta)).unwrap();
            prop_assert!(averse <= mean + 1e-12);
            prop_assert!(seeking >= mean - 1e-12);
            prop_assert_eq!(certainty_equivalent_exact(&members, &spec(0.0)).unwrap(), mean);
        }
    }
}
