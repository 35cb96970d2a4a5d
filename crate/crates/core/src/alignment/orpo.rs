//! Odds-ratio preference loss over per-token log-probabilities.
//!
//! With `m_y = mean(logp_y)` and `P_y = exp(m_y)`:
//!
//! ```text
//! log_odds(P)    = m - ln(1 - e^m)
//! log_odds_ratio = log_odds(P_chosen) - log_odds(P_rejected)
//! or_term        = -ln σ(log_odds_ratio)
//! nll_term       = -m_chosen
//! loss           = nll_term + λ · or_term
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AlignError;

/// Sequence probabilities at or above this are rejected; the odds blow up.
pub const MAX_SEQUENCE_PROB: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrpoOutput {
    pub loss: f64,
    pub nll_term: f64,
    pub or_term: f64,
    pub log_odds_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrpoGradient {
    pub chosen: Vec<f64>,
    pub rejected: Vec<f64>,
}

fn mean_checked(logps: &[f64], side: &str) -> Result<f64, AlignError> {
    if logps.is_empty() {
        return Err(AlignError::Domain(format!("{side} log-probs are empty")));
    }
    if let Some(v) = logps.iter().find(|v| !v.is_finite() || **v > 0.0) {
        return Err(AlignError::Domain(format!("{side} log-prob {v} is not a finite value <= 0")));
    }
    let m = logps.iter().sum::<f64>() / logps.len() as f64;
    if m.exp() >= MAX_SEQUENCE_PROB {
        return Err(AlignError::Domain(format!("{side} sequence probability {} is too close to 1", m.exp())));
    }
    Ok(m)
}

/// ln(p / (1 - p)) for p = e^m, computed without forming 1 - p directly.
fn log_odds(m: f64) -> f64 {
    m - (-m.exp_m1()).ln()
}

/// -ln σ(x) = ln(1 + e^-x).
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// σ(-x) = 1 - σ(x).
fn sigmoid_neg(x: f64) -> f64 {
    if x >= 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

fn check_lambda(lambda: f64) -> Result<(), AlignError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(AlignError::Domain(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

pub fn orpo_loss(logp_chosen: &[f64], logp_rejected: &[f64], lambda: f64) -> Result<OrpoOutput, AlignError> {
    check_lambda(lambda)?;
    let mc = mean_checked(logp_chosen, "chosen")?;
    let mr = mean_checked(logp_rejected, "rejected")?;
    let log_odds_ratio = log_odds(mc) - log_odds(mr);
    let or_term = neg_log_sigmoid(log_odds_ratio);
    let nll_term = -mc;
    Ok(OrpoOutput { loss: nll_term + lambda * or_term, nll_term, or_term, log_odds_ratio })
}

/// Analytic derivative of the loss with respect to every log-prob.
pub fn orpo_gradient(logp_chosen: &[f64], logp_rejected: &[f64], lambda: f64) -> Result<OrpoGradient, AlignError> {
    let out = orpo_loss(logp_chosen, logp_rejected, lambda)?;
    let mc = logp_chosen.iter().sum::<f64>() / logp_chosen.len() as f64;
    let mr = logp_rejected.iter().sum::<f64>() / logp_rejected.len() as f64;
    // d loss / d log_odds_ratio
    let dl_dlor = -lambda * sigmoid_neg(out.log_odds_ratio);
    // d log_odds / d m = 1 / (1 - e^m)
    let dlo_c = 1.0 / -mc.exp_m1();
    let dlo_r = 1.0 / -mr.exp_m1();
    let (nc, nr) = (logp_chosen.len() as f64, logp_rejected.len() as f64);
    let gc = (-1.0 + dl_dlor * dlo_c) / nc;
    let gr = -dl_dlor * dlo_r / nr;
    Ok(OrpoGradient { chosen: vec![gc; logp_chosen.len()], rejected: vec![gr; logp_rejected.len()] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub instances: usize,
    pub max_relative_error: f64,
}

/// Compares [`orpo_gradient`] with central finite differences on random
/// instances. Relative error uses `max(|analytic|, |numeric|, 1e-8)` as
/// the scale.
pub fn orpo_gradient_check(instances: usize, step: f64, seed: u64) -> GradientCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let nc = rng.random_range(1..=16);
        let nr = rng.random_range(1..=16);
        let c: Vec<f64> = (0..nc).map(|_| rng.random_range(-4.0..-0.05)).collect();
        let r: Vec<f64> = (0..nr).map(|_| rng.random_range(-4.0..-0.05)).collect();
        let lambda = rng.random_range(0.0..2.0);
        let g = orpo_gradient(&c, &r, lambda).expect("sampled inputs are in the domain");
        let loss = |c: &[f64], r: &[f64]| orpo_loss(c, r, lambda).expect("in domain").loss;
        let mut compare = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * step);
            let scale = analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic - numeric).abs() / scale);
        };
        for i in 0..nc {
            let (mut p, mut m) = (c.clone(), c.clone());
            p[i] += step;
            m[i] -= step;
            compare(g.chosen[i], loss(&p, &r), loss(&m, &r));
        }
        for j in 0..nr {
            let (mut p, mut m) = (r.clone(), r.clone());
            p[j] += step;
            m[j] -= step;
            compare(g.rejected[j], loss(&c, &p), loss(&c, &m));
        }
    }
    GradientCheck { instances, max_relative_error: worst }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scalar_example_without_odds_term() {
        let out = orpo_loss(&[0.9f64.ln()], &[0.5f64.ln()], 0.0).unwrap();
        assert!((out.loss - -(0.9f64.ln())).abs() < 1e-12);
        // odds 9 vs 1
        assert!((out.log_odds_ratio - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_inputs_give_ln_two() {
        let x = [-0.3, -1.2, -0.01];
        let out = orpo_loss(&x, &x, 1.0).unwrap();
        assert_eq!(out.log_odds_ratio, 0.0);
        assert_eq!(out.or_term, std::f64::consts::LN_2);
    }

    #[test]
    fn domain_errors() {
        assert!(orpo_loss(&[], &[-1.0], 0.1).is_err());
        assert!(orpo_loss(&[0.1], &[-1.0], 0.1).is_err());
        assert!(orpo_loss(&[0.0], &[-1.0], 0.1).is_err());
        assert!(orpo_loss(&[-1e-13], &[-1.0], 0.1).is_err());
        assert!(orpo_loss(&[-1.0], &[-1.0], -0.1).is_err());
        assert!(orpo_loss(&[f64::NAN], &[-1.0], 0.1).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let check = orpo_gradient_check(100, 1e-6, 11);
        assert!(check.max_relative_error < 1e-5, "{check:?}");
    }

    #[test]
    fn or_term_vanishes_for_large_margins() {
        let out = orpo_loss(&[-1e-6], &[-50.0], 1.0).unwrap();
        assert!(out.or_term > 0.0 && out.or_term < 1e-5);
    }

    proptest! {
        #[test]
        fn monotone_in_each_component(
            c in proptest::collection::vec(-5.0f64..-0.1, 1..8),
            r in proptest::collection::vec(-5.0f64..-0.1, 1..8),
            lambda in 0.01f64..2.0, i in 0usize..8, delta in 0.001f64..0.05
        ) {
            let base = orpo_loss(&c, &r, lambda).unwrap();
            prop_assert!(base.or_term > 0.0);
            let mut c2 = c.clone();
            let ic = i % c.len();
            c2[ic] += delta;
            prop_assert!(orpo_loss(&c2, &r, lambda).unwrap().loss < base.loss);
            let mut r2 = r.clone();
            let ir = i % r.len();
            r2[ir] += delta;
            prop_assert!(orpo_loss(&c, &r2, lambda).unwrap().loss >= base.loss);
        }
    }
}
