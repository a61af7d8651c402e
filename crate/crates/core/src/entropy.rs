//! Entropy of the softmax over group losses and the gradient combination
//! that ascends it.
//!
//! With `p = softmax(ℓ)` the coefficients are
//! `w'_i = p_i log p_i − p_i Σ_j p_j log p_j` and the entropy direction is
//! `d_ent = Σ_i w'_i ∇ℓ_i`. The gradient of `H(p)` with respect to the
//! parameters is `−d_ent`, so the descent-style update `θ − η·d_ent`
//! increases the entropy and pulls the group losses together.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group_state::{combine_raw, Direction, GradientSet, LossVector};

/// Probabilities are clamped to this floor before taking logs.
pub const LOG_FLOOR: f64 = 1e-300;

/// Which coefficient formula backs the entropy direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientVariant {
    /// Softmax-entropy coefficients.
    #[default]
    Softmax,
    /// Loss-normalized variant `q_i = ℓ_i / Σ ℓ_j`; requires positive losses.
    Alt,
}

/// Softmax over group losses. Entries lie in `[0, 1]`; an entry can round
/// to exactly 0 or 1 when the losses are far apart.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxDistribution {
    p: Vec<f64>,
}

impl SoftmaxDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("distribution", "entries must lie in [0, 1]"));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("distribution", format!("sums to {s}")));
        }
        Ok(Self { p })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }
}

/// Per-group coefficients of the entropy direction.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyCoefficients {
    wprime: Vec<f64>,
}

impl EntropyCoefficients {
    pub fn as_slice(&self) -> &[f64] {
        &self.wprime
    }
}

fn safe_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

pub fn softmax_losses(losses: &LossVector) -> SoftmaxDistribution {
    let max = losses.max();
    let exps: Vec<f64> = losses.values().iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    SoftmaxDistribution {
        p: exps.into_iter().map(|e| e / z).collect(),
    }
}

/// Shannon entropy `−Σ p log p` of the softmax over the losses.
pub fn entropy_value(losses: &LossVector) -> f64 {
    let p = softmax_losses(losses);
    -p.p.iter().map(|&pi| pi * safe_ln(pi)).sum::<f64>()
}

pub fn entropy_coefficients(p: &SoftmaxDistribution) -> EntropyCoefficients {
    let first = p.p[0];
    // Uniform p → every term is p·(log p − log p).
    if p.p.iter().all(|&v| v == first) {
        return EntropyCoefficients {
            wprime: vec![0.0; p.p.len()],
        };
    }
    let logs: Vec<f64> = p.p.iter().map(|&v| safe_ln(v)).collect();
    let mean_log: f64 = p.p.iter().zip(&logs).map(|(pi, li)| pi * li).sum();
    EntropyCoefficients {
        wprime: p
            .p
            .iter()
            .zip(&logs)
            .map(|(pi, li)| pi * (li - mean_log))
            .collect(),
    }
}

/// Coefficients of the loss-normalized balancing function.
///
/// With `S = Σ ℓ_j` and `q_i = ℓ_i / S`, coefficient `i` is
/// `(log q_i · S − Σ_j log q_j · ℓ_j) / S = log q_i − Σ_j q_j log q_j`.
/// The `ℓ`-weighted sum of these coefficients is zero. The direction built
/// from them has the same sign contract as [`entropy_direction`]: its
/// negative is `S` times the gradient of the entropy of `q`.
pub fn alt_coefficients(losses: &LossVector) -> Result<EntropyCoefficients> {
    if let Some(i) = losses.values().iter().position(|&l| l <= 0.0) {
        return Err(Error::invalid(
            format!("losses[{i}]"),
            format!("must be strictly positive, got {}", losses.values()[i]),
        ));
    }
    let vals = losses.values();
    let first = vals[0];
    if vals.iter().all(|&v| v == first) {
        return Ok(EntropyCoefficients {
            wprime: vec![0.0; vals.len()],
        });
    }
    let total: f64 = vals.iter().sum();
    let logs: Vec<f64> = vals.iter().map(|&l| safe_ln(l / total)).collect();
    let weighted: f64 = vals.iter().zip(&logs).map(|(l, lq)| l * lq).sum();
    Ok(EntropyCoefficients {
        wprime: logs.iter().map(|lq| (lq * total - weighted) / total).collect(),
    })
}

/// Coefficients for the given variant.
pub fn coefficients(losses: &LossVector, variant: CoefficientVariant) -> Result<EntropyCoefficients> {
    match variant {
        CoefficientVariant::Softmax => Ok(entropy_coefficients(&softmax_losses(losses))),
        CoefficientVariant::Alt => alt_coefficients(losses),
    }
}

/// `d_ent = Σ_i w'_i g_i` with softmax-entropy coefficients.
pub fn entropy_direction(g: &GradientSet, losses: &LossVector) -> Result<Direction> {
    if g.groups() != losses.len() {
        return Err(Error::Shape {
            context: "entropy direction",
            expected: losses.len(),
            got: g.groups(),
        });
    }
    let w = entropy_coefficients(&softmax_losses(losses));
    combine_raw(g, &w.wprime)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lv(v: &[f64]) -> LossVector {
        LossVector::new(v.to_vec()).unwrap()
    }

    // Reference values below were evaluated with mpmath at 50 digits:
    // p(1,2) = (0.2689414213699951, 0.7310585786300049)
    // H = 0.5822031088882180
    // w' = (-0.1966119332414819, 0.1966119332414819)
    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_losses(&lv(&[5.0, 5.0, 5.0])).p, vec![1.0 / 3.0; 3]);
        let p = softmax_losses(&lv(&[1.0, 2.0]));
        assert!((p.p[0] - 0.2689414213699951).abs() < 1e-15);
        assert!((p.p[1] - 0.7310585786300049).abs() < 1e-15);
        assert_eq!(p, softmax_losses(&lv(&[101.0, 102.0])));
        // no overflow
        let p = softmax_losses(&lv(&[800.0, 801.0]));
        assert!(p.p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy_value(&lv(&[2.0; 4])) - 4f64.ln()).abs() < 1e-15);
        assert!(entropy_value(&lv(&[0.0, 50.0])) < 1e-15);
        assert!((entropy_value(&lv(&[1.0, 2.0])) - 0.582203108888218).abs() < 1e-12);
    }

    #[test]
    fn coefficient_examples() {
        let w = entropy_coefficients(&softmax_losses(&lv(&[1.0, 2.0])));
        assert!((w.wprime[0] + 0.1966119332414819).abs() < 1e-12);
        assert!((w.wprime[1] - 0.1966119332414819).abs() < 1e-12);
        let w = entropy_coefficients(&SoftmaxDistribution::new(vec![0.25; 4]).unwrap());
        assert_eq!(w.wprime, vec![0.0; 4]);
    }

    #[test]
    fn direction_examples() {
        let g = GradientSet::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let d = entropy_direction(&g, &lv(&[1.0, 2.0])).unwrap();
        assert!((d.0[0] + 0.1966119332414819).abs() < 1e-12);
        assert!((d.0[1] - 0.1966119332414819).abs() < 1e-12);
        let d = entropy_direction(&g, &lv(&[0.7, 0.7])).unwrap();
        assert_eq!(d.0, vec![0.0, 0.0]);
        assert!(entropy_direction(&g, &lv(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn alt_examples() {
        let w = alt_coefficients(&lv(&[0.5, 0.5, 0.5])).unwrap();
        assert_eq!(w.wprime, vec![0.0; 3]);
        let w = alt_coefficients(&lv(&[1.0, 2.0])).unwrap();
        assert!(w.wprime[0] < 0.0 && w.wprime[1] > 0.0);
        // log(1/3) - (1/3 log 1/3 + 2/3 log 2/3), log(2/3) - (...)
        let h = (1.0f64 / 3.0) * (1.0f64 / 3.0).ln() + (2.0f64 / 3.0) * (2.0f64 / 3.0).ln();
        assert!((w.wprime[0] - ((1.0f64 / 3.0).ln() - h)).abs() < 1e-14);
        assert!((w.wprime[1] - ((2.0f64 / 3.0).ln() - h)).abs() < 1e-14);
        assert!(alt_coefficients(&lv(&[0.0, 1.0])).is_err());
        assert!(alt_coefficients(&lv(&[-1.0, 1.0])).is_err());
    }

    #[test]
    fn alt_loss_weighted_sum_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let k = rng.random_range(2..8);
            let l: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..5.0)).collect();
            let w = alt_coefficients(&lv(&l)).unwrap();
            let s: f64 = l.iter().zip(&w.wprime).map(|(a, b)| a * b).sum();
            assert!(s.abs() < 1e-10, "{s}");
        }
    }

    #[test]
    fn sign_pattern_on_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2000 {
            let k = rng.random_range(2..8);
            let l: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..5.0)).collect();
            let imax = (0..k).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap();
            let imin = (0..k).min_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap();
            for variant in [CoefficientVariant::Softmax, CoefficientVariant::Alt] {
                let w = coefficients(&lv(&l), variant).unwrap();
                assert!(w.wprime[imax] > 0.0);
                assert!(w.wprime[imin] < 0.0);
            }
        }
    }

    /// Quadratic group model ℓ_k(θ) = ½‖θ − a_k‖².
    fn quad_losses(theta: &[f64], anchors: &[Vec<f64>]) -> LossVector {
        lv(&anchors
            .iter()
            .map(|a| 0.5 * theta.iter().zip(a).map(|(t, x)| (t - x).powi(2)).sum::<f64>())
            .collect::<Vec<_>>())
    }

    fn quad_grads(theta: &[f64], anchors: &[Vec<f64>]) -> GradientSet {
        GradientSet::new(
            anchors
                .iter()
                .map(|a| theta.iter().zip(a).map(|(t, x)| t - x).collect())
                .collect(),
        )
        .unwrap()
    }

    fn alt_entropy(l: &LossVector) -> f64 {
        let s: f64 = l.values().iter().sum();
        -l.values().iter().map(|v| (v / s) * (v / s).ln()).sum::<f64>()
    }

    #[test]
    fn alt_direction_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-5;
        for _ in 0..100 {
            let k = rng.random_range(2..=6);
            let d = rng.random_range(2..=10);
            let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let anchors: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let l = quad_losses(&theta, &anchors);
            let s: f64 = l.values().iter().sum();
            let w = alt_coefficients(&l).unwrap();
            let dir = combine_raw(&quad_grads(&theta, &anchors), &w.wprime).unwrap();
            let mut fd = vec![0.0; d];
            for j in 0..d {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                fd[j] = (alt_entropy(&quad_losses(&tp, &anchors))
                    - alt_entropy(&quad_losses(&tm, &anchors)))
                    / (2.0 * h);
            }
            let analytic: Vec<f64> = dir.0.iter().map(|v| -v / s).collect();
            let num: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
            assert!(num / den < 1e-4, "relative error {}", num / den);
        }
    }

    #[test]
    fn first_order_ascent_on_quadratic_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..200 {
            let k = rng.random_range(2..=6);
            let d = rng.random_range(2..=10);
            let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let anchors: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let l = quad_losses(&theta, &anchors);
            let dir = entropy_direction(&quad_grads(&theta, &anchors), &l).unwrap();
            if dir.norm() <= 1e-6 {
                continue;
            }
            let stepped: Vec<f64> = theta.iter().zip(&dir.0).map(|(t, v)| t - 1e-4 * v).collect();
            assert!(entropy_value(&quad_losses(&stepped, &anchors)) > entropy_value(&l));
        }
    }

    #[test]
    fn shift_invariance_on_exact_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let k = rng.random_range(2..7);
            // dyadic values so that adding an integer shift is exact
            let l: Vec<f64> = (0..k).map(|_| rng.random_range(0..4096) as f64 / 1024.0).collect();
            let s = rng.random_range(-300i32..300) as f64;
            let shifted: Vec<f64> = l.iter().map(|v| v + s).collect();
            assert_eq!(softmax_losses(&lv(&l)), softmax_losses(&lv(&shifted)));
        }
    }
}
