//! Numeric types shared by every solver: per-group losses and gradients,
//! their Gram matrix, simplex weights, and the controlling vector.
//!
//! All solvers work on the K×K Gram matrix rather than on D-dimensional
//! gradients; [`gram`] and [`combine`] are the only places where the
//! parameter dimension appears.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries of a [`SimplexWeights`] may be this far below zero before
/// construction rejects them.
pub const SIMPLEX_NEG_TOL: f64 = 1e-12;

/// Raw weight vectors must sum to 1 within this tolerance before renormalization.
pub const SIMPLEX_SUM_TOL: f64 = 1e-6;

fn check_finite(field: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::invalid(
            format!("{field}[{i}]"),
            format!("must be finite, got {}", values[i]),
        )),
        None => Ok(()),
    }
}

/// Per-group scalar losses, optionally paired with per-group sample counts.
///
/// The counts are only consumed by the pooled-ERM strategy, which weights
/// groups by size.
#[derive(Debug, Clone, PartialEq)]
pub struct LossVector {
    values: Vec<f64>,
    counts: Option<Vec<usize>>,
}

impl LossVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(
                "losses",
                format!("need at least 2 groups, got {}", values.len()),
            ));
        }
        check_finite("losses", &values)?;
        Ok(Self {
            values,
            counts: None,
        })
    }

    pub fn with_counts(values: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let mut lv = Self::new(values)?;
        if counts.len() != lv.values.len() {
            return Err(Error::Shape {
                context: "group counts",
                expected: lv.values.len(),
                got: counts.len(),
            });
        }
        lv.counts = Some(counts);
        Ok(lv)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn counts(&self) -> Option<&[usize]> {
        self.counts.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// K per-group gradient rows sharing one parameter dimension D.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    rows: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::invalid("gradients", "need at least one group"));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::invalid("gradients", "dimension must be at least 1"));
        }
        for (k, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Shape {
                    context: "gradient row",
                    expected: dim,
                    got: row.len(),
                });
            }
            check_finite(&format!("gradients[{k}]"), row)?;
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    /// Number of groups K.
    pub fn groups(&self) -> usize {
        self.rows.len()
    }

    /// Parameter dimension D.
    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }
}

/// Symmetric K×K matrix of pairwise gradient inner products.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    m: Vec<Vec<f64>>,
}

impl GramMatrix {
    /// Builds a Gram matrix from explicit entries, checking symmetry and
    /// a non-negative diagonal. Positive semidefiniteness is checked by
    /// the solvers that depend on it.
    pub fn from_rows(m: Vec<Vec<f64>>) -> Result<Self> {
        let k = m.len();
        if k == 0 {
            return Err(Error::invalid("gram", "empty matrix"));
        }
        for (i, row) in m.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Shape {
                    context: "gram row",
                    expected: k,
                    got: row.len(),
                });
            }
            check_finite(&format!("gram[{i}]"), row)?;
        }
        for i in 0..k {
            if m[i][i] < 0.0 {
                return Err(Error::invalid(
                    format!("gram[{i}][{i}]"),
                    "diagonal must be non-negative",
                ));
            }
            for j in 0..i {
                if (m[i][j] - m[j][i]).abs() > 1e-12 {
                    return Err(Error::invalid(
                        format!("gram[{i}][{j}]"),
                        "matrix is not symmetric",
                    ));
                }
            }
        }
        Ok(Self { m })
    }

    pub fn size(&self) -> usize {
        self.m.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.m
    }

    /// Matrix-vector product `M·w`.
    pub fn mul_vec(&self, w: &[f64]) -> Vec<f64> {
        self.m
            .iter()
            .map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Quadratic form `wᵀ M w`.
    pub fn quad_form(&self, w: &[f64]) -> f64 {
        self.mul_vec(w).iter().zip(w).map(|(a, b)| a * b).sum()
    }

    /// Smallest eigenvalue of the matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let k = self.size();
        let mat = nalgebra::DMatrix::from_fn(k, k, |i, j| self.m[i][j]);
        mat.symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Rejects matrices with an eigenvalue below `-1e-9·max(1, max diagonal)`.
    pub fn check_psd(&self) -> Result<()> {
        let scale = (0..self.size()).map(|i| self.m[i][i]).fold(1.0, f64::max);
        let min_eigenvalue = self.min_eigenvalue();
        if min_eigenvalue < -1e-9 * scale {
            return Err(Error::NotPsd { min_eigenvalue });
        }
        Ok(())
    }
}

/// Convex combination weights on the probability simplex Δ_K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexWeights {
    w: Vec<f64>,
}

impl SimplexWeights {
    /// Clamps residue down to `-1e-12` to zero and renormalizes to sum 1.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("weights", "empty weight vector"));
        }
        check_finite("weights", &w)?;
        if let Some(i) = w.iter().position(|&v| v < -SIMPLEX_NEG_TOL) {
            return Err(Error::invalid(
                format!("weights[{i}]"),
                format!("negative entry {}", w[i]),
            ));
        }
        let clamped: Vec<f64> = w.into_iter().map(|v| v.max(0.0)).collect();
        let sum: f64 = clamped.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::invalid(
                "weights",
                format!("entries must sum to 1, got {sum}"),
            ));
        }
        Ok(Self {
            w: clamped.into_iter().map(|v| v / sum).collect(),
        })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            w: vec![1.0 / k as f64; k],
        }
    }

    pub fn vertex(k: usize, i: usize) -> Self {
        let mut w = vec![0.0; k];
        w[i] = 1.0;
        Self { w }
    }

    /// Weights proportional to group sizes.
    pub fn proportional(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::invalid("group counts", "all counts are zero"));
        }
        Ok(Self {
            w: counts.iter().map(|&n| n as f64 / total as f64).collect(),
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Strictly positive per-group loss multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ControllingVector {
    c: Vec<f64>,
}

impl ControllingVector {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::invalid("control", "empty controlling vector"));
        }
        if let Some(i) = c.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(
                format!("control[{i}]"),
                format!("must be finite and > 0, got {}", c[i]),
            ));
        }
        Ok(Self { c })
    }

    pub fn ones(k: usize) -> Self {
        Self { c: vec![1.0; k] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.c
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ControllingVector {
    type Error = Error;

    fn try_from(c: Vec<f64>) -> Result<Self> {
        Self::new(c)
    }
}

impl From<ControllingVector> for Vec<f64> {
    fn from(c: ControllingVector) -> Self {
        c.c
    }
}

/// Parameter-space update direction; the update is `θ ← θ − η·d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction(pub Vec<f64>);

impl Direction {
    pub fn zeros(dim: usize) -> Self {
        Direction(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pairwise inner products of the gradient rows.
///
/// Each upper-triangle entry is one left-to-right dot product and is
/// mirrored, so the result is exactly symmetric.
pub fn gram(g: &GradientSet) -> GramMatrix {
    let k = g.groups();
    let mut m = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let v = dot(g.row(i), g.row(j));
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    GramMatrix { m }
}

/// Weighted sum of gradients, `Σ_k w_k g_k`.
pub fn combine(g: &GradientSet, w: &SimplexWeights) -> Result<Direction> {
    combine_raw(g, w.as_slice())
}

/// [`combine`] for arbitrary real coefficients (used for `d_ent`).
pub fn combine_raw(g: &GradientSet, coeffs: &[f64]) -> Result<Direction> {
    if coeffs.len() != g.groups() {
        return Err(Error::Shape {
            context: "combination weights",
            expected: g.groups(),
            got: coeffs.len(),
        });
    }
    let mut d = vec![0.0; g.dim()];
    for (row, &wk) in g.rows().iter().zip(coeffs) {
        for (di, gi) in d.iter_mut().zip(row) {
            *di += wk * gi;
        }
    }
    Ok(Direction(d))
}

/// Scales each group's loss and gradient by its controlling coefficient.
pub fn apply_control(
    losses: &LossVector,
    g: &GradientSet,
    c: &ControllingVector,
) -> Result<(LossVector, GradientSet)> {
    let k = losses.len();
    if g.groups() != k {
        return Err(Error::Shape {
            context: "gradient groups",
            expected: k,
            got: g.groups(),
        });
    }
    if c.len() != k {
        return Err(Error::Shape {
            context: "controlling vector",
            expected: k,
            got: c.len(),
        });
    }
    let cs = c.as_slice();
    let values = losses.values.iter().zip(cs).map(|(l, c)| c * l).collect();
    let rows = g
        .rows
        .iter()
        .zip(cs)
        .map(|(row, c)| row.iter().map(|v| c * v).collect())
        .collect();
    Ok((
        LossVector {
            values,
            counts: losses.counts.clone(),
        },
        GradientSet { rows },
    ))
}
