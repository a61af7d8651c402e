//! Minimum-norm point in the convex hull of the group gradients (MGDA).
//!
//! Works on the Gram matrix only: minimize `wᵀ M w` over the simplex.
//! Two groups use the closed-form interpolation; larger problems use
//! Frank–Wolfe with exact line search, taking either the step toward the
//! vertex with the smallest `(Mw)_i` or an away step from the support
//! vertex with the largest one, whichever gap is larger. Away steps can
//! drop vertices, which gives linear convergence on the simplex where the
//! plain toward-only iteration zig-zags.

use crate::error::{Error, Result};
use crate::group_state::{GramMatrix, SimplexWeights};

pub const DEFAULT_MAX_ITER: usize = 250;
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MinNormResult {
    pub weights: SimplexWeights,
    /// `‖Σ w_k g_k‖² = wᵀ M w`.
    pub norm_sq: f64,
    pub iterations: usize,
    /// Objective value after each iteration, starting with the initial point.
    pub trace: Vec<f64>,
}

fn finish(m: &GramMatrix, w: Vec<f64>, iterations: usize, mut trace: Vec<f64>) -> Result<MinNormResult> {
    let weights = SimplexWeights::new(w)?;
    let norm_sq = m.quad_form(weights.as_slice()).max(0.0);
    if trace.is_empty() {
        trace.push(norm_sq);
    }
    Ok(MinNormResult {
        weights,
        norm_sq,
        iterations,
        trace,
    })
}

/// Optimal `γ` on `w = (γ, 1−γ)` for two gradients.
pub fn two_group_gamma(m11: f64, m12: f64, m22: f64) -> f64 {
    let denom = m11 - 2.0 * m12 + m22;
    if denom <= 0.0 {
        // identical gradients: every weight gives the same direction
        return 0.5;
    }
    ((m22 - m12) / denom).clamp(0.0, 1.0)
}

pub fn frank_wolfe_minnorm(m: &GramMatrix, max_iter: usize, tol: f64) -> Result<MinNormResult> {
    if max_iter == 0 {
        return Err(Error::invalid("max_iter", "must be at least 1"));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::invalid("tol", format!("must be > 0, got {tol}")));
    }
    m.check_psd()?;
    let k = m.size();

    if k == 1 {
        return finish(m, vec![1.0], 0, Vec::new());
    }
    if let Some(i) = (0..k).find(|&i| m.get(i, i) == 0.0) {
        return finish(m, SimplexWeights::vertex(k, i).as_slice().to_vec(), 0, Vec::new());
    }
    if k == 2 {
        let gamma = two_group_gamma(m.get(0, 0), m.get(0, 1), m.get(1, 1));
        return finish(m, vec![gamma, 1.0 - gamma], 1, Vec::new());
    }

    let mut w = vec![1.0 / k as f64; k];
    let mut mw = m.mul_vec(&w);
    let mut obj: f64 = mw.iter().zip(&w).map(|(a, b)| a * b).sum();
    let mut trace = vec![obj];
    let mut iterations = 0;
    while iterations < max_iter {
        let (toward, toward_val) = mw
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        let fw_gap = obj - toward_val;
        if fw_gap <= tol {
            break;
        }
        iterations += 1;
        let (away, away_val) = mw
            .iter()
            .copied()
            .enumerate()
            .filter(|&(i, _)| w[i] > 0.0)
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let away_gap = away_val - obj;

        // Move along w + γ·(e_t − w) (toward) or w + γ·(w − e_a) (away).
        // Along u = ±(e_i − w): f(γ) = obj + 2γ·slope + γ²·curv with
        // curv = M_ii − 2(Mw)_i + obj.
        let (vertex, sign, max_step) = if fw_gap >= away_gap || w[away] >= 1.0 {
            (toward, 1.0, 1.0)
        } else {
            (away, -1.0, w[away] / (1.0 - w[away]))
        };
        let slope = sign * (mw[vertex] - obj);
        let curvature = m.get(vertex, vertex) - 2.0 * mw[vertex] + obj;
        let gamma = if curvature > 0.0 {
            (-slope / curvature).clamp(0.0, max_step)
        } else {
            max_step
        };
        let keep = 1.0 - sign * gamma;
        let col: Vec<f64> = (0..k).map(|j| m.get(j, vertex)).collect();
        for j in 0..k {
            w[j] *= keep;
            mw[j] = keep * mw[j] + sign * gamma * col[j];
        }
        w[vertex] += sign * gamma;
        if sign < 0.0 && gamma == max_step {
            // away step dropped the vertex
            w[vertex] = 0.0;
        }
        obj = mw.iter().zip(&w).map(|(a, b)| a * b).sum();
        trace.push(obj);
    }
    finish(m, w, iterations, trace)
}

/// [`frank_wolfe_minnorm`] with the default iteration budget and tolerance.
pub fn min_norm(m: &GramMatrix) -> Result<MinNormResult> {
    frank_wolfe_minnorm(m, DEFAULT_MAX_ITER, DEFAULT_TOL)
}
