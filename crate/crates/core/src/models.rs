//! Small softmax classifiers with hand-written backprop.
//!
//! Parameters are one flat vector. Layout:
//!
//! * `LinearSoftmax`: `W (C×F)` row-major, then `b (C)`.
//! * `Mlp1`: `W1 (H×F)`, `b1 (H)`, `W2 (C×H)`, `b2 (C)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group_state::{GradientSet, LossVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearSoftmax,
    Mlp1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `a` and output `h`.
    fn derivative(self, a: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub classes: usize,
    /// Hidden width; ignored by `LinearSoftmax`.
    pub hidden: usize,
    /// Hidden activation; ignored by `LinearSoftmax`.
    pub activation: Activation,
}

impl ModelSpec {
    pub fn linear(feature_dim: usize, classes: usize) -> Self {
        Self {
            kind: ModelKind::LinearSoftmax,
            feature_dim,
            classes,
            hidden: 0,
            activation: Activation::Relu,
        }
    }

    pub fn mlp(feature_dim: usize, hidden: usize, classes: usize, activation: Activation) -> Self {
        Self {
            kind: ModelKind::Mlp1,
            feature_dim,
            classes,
            hidden,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::invalid("model.feature_dim", "must be >= 1"));
        }
        if self.classes == 0 {
            return Err(Error::invalid("model.classes", "must be >= 1"));
        }
        if self.kind == ModelKind::Mlp1 && self.hidden == 0 {
            return Err(Error::invalid("model.hidden", "must be >= 1 for mlp1"));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let (f, c, h) = (self.feature_dim, self.classes, self.hidden);
        match self.kind {
            ModelKind::LinearSoftmax => c * f + c,
            ModelKind::Mlp1 => (h * f + h) + (c * h + c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParams {
    pub theta: Vec<f64>,
}

/// Samples with labels and group ids. Inputs are row-major `N×F`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    feature_dim: usize,
    labels: Vec<usize>,
    groups: Vec<usize>,
    num_groups: usize,
}

impl Batch {
    pub fn new(
        inputs: Vec<f64>,
        feature_dim: usize,
        labels: Vec<usize>,
        groups: Vec<usize>,
        num_groups: usize,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::invalid("batch.f", "feature dimension must be >= 1"));
        }
        let n = labels.len();
        if inputs.len() != n * feature_dim {
            return Err(Error::Shape {
                context: "batch features",
                expected: n * feature_dim,
                got: inputs.len(),
            });
        }
        if groups.len() != n {
            return Err(Error::Shape {
                context: "batch group ids",
                expected: n,
                got: groups.len(),
            });
        }
        if let Some(i) = groups.iter().position(|&g| g >= num_groups) {
            return Err(Error::invalid(
                format!("batch.groups[{i}]"),
                format!("group id {} out of range 0..{num_groups}", groups[i]),
            ));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("batch.features", "non-finite feature"));
        }
        Ok(Self {
            inputs,
            feature_dim,
            labels,
            groups,
            num_groups,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    /// Sample indices of each group, in order of appearance.
    pub fn group_indices(&self) -> Vec<Vec<usize>> {
        let mut idx = vec![Vec::new(); self.num_groups];
        for (i, &g) in self.groups.iter().enumerate() {
            idx[g].push(i);
        }
        idx
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_groups];
        for &g in &self.groups {
            counts[g] += 1;
        }
        counts
    }
}

fn check_compat(spec: &ModelSpec, params: &ModelParams, feature_dim: usize) -> Result<()> {
    if params.theta.len() != spec.num_params() {
        return Err(Error::Shape {
            context: "model parameters",
            expected: spec.num_params(),
            got: params.theta.len(),
        });
    }
    if feature_dim != spec.feature_dim {
        return Err(Error::Shape {
            context: "input features",
            expected: spec.feature_dim,
            got: feature_dim,
        });
    }
    Ok(())
}

/// Glorot-uniform weights, zero biases.
pub fn init(spec: &ModelSpec, seed: u64) -> ModelParams {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut fill = |theta: &mut Vec<f64>, fan_in: usize, fan_out: usize| {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            theta.push(a * (2.0 * u - 1.0));
        }
        theta.extend(std::iter::repeat_n(0.0, fan_out));
    };
    let mut theta = Vec::with_capacity(spec.num_params());
    match spec.kind {
        ModelKind::LinearSoftmax => fill(&mut theta, spec.feature_dim, spec.classes),
        ModelKind::Mlp1 => {
            fill(&mut theta, spec.feature_dim, spec.hidden);
            fill(&mut theta, spec.hidden, spec.classes);
        }
    }
    ModelParams { theta }
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(n_in).zip(b)) {
        *o = bias + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

/// Stable softmax in place; returns log-sum-exp of the input.
fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

/// Reusable buffers for one forward/backward pass.
struct Workspace {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
    dhidden: Vec<f64>,
}

impl Workspace {
    fn new(spec: &ModelSpec) -> Self {
        Self {
            hidden_pre: vec![0.0; spec.hidden],
            hidden: vec![0.0; spec.hidden],
            logits: vec![0.0; spec.classes],
            dhidden: vec![0.0; spec.hidden],
        }
    }
}

/// Forward pass; leaves logits (and hidden activations) in the workspace.
fn forward(spec: &ModelSpec, theta: &[f64], x: &[f64], ws: &mut Workspace) {
    let (f, c, h) = (spec.feature_dim, spec.classes, spec.hidden);
    match spec.kind {
        ModelKind::LinearSoftmax => {
            let (w, b) = theta.split_at(c * f);
            affine(w, b, x, &mut ws.logits);
        }
        ModelKind::Mlp1 => {
            let (w1, rest) = theta.split_at(h * f);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            affine(w1, b1, x, &mut ws.hidden_pre);
            for (o, a) in ws.hidden.iter_mut().zip(&ws.hidden_pre) {
                *o = spec.activation.apply(*a);
            }
            affine(w2, b2, &ws.hidden, &mut ws.logits);
        }
    }
}

/// Adds the gradient of one sample's cross-entropy to `grad`; returns its loss.
fn accumulate(
    spec: &ModelSpec,
    theta: &[f64],
    x: &[f64],
    y: usize,
    ws: &mut Workspace,
    grad: &mut [f64],
) -> f64 {
    forward(spec, theta, x, ws);
    let lse = {
        let z_y = ws.logits[y];
        let lse = softmax_in_place(&mut ws.logits);
        lse - z_y
    };
    // logits now hold probabilities; turn them into dL/dz
    ws.logits[y] -= 1.0;
    let (f, c, h) = (spec.feature_dim, spec.classes, spec.hidden);
    let dz = &ws.logits;
    match spec.kind {
        ModelKind::LinearSoftmax => {
            let (gw, gb) = grad.split_at_mut(c * f);
            for (k, &d) in dz.iter().enumerate() {
                for (gv, xv) in gw[k * f..(k + 1) * f].iter_mut().zip(x) {
                    *gv += d * xv;
                }
                gb[k] += d;
            }
        }
        ModelKind::Mlp1 => {
            let w2 = &theta[h * f + h..h * f + h + c * h];
            let (gw1, rest) = grad.split_at_mut(h * f);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(c * h);
            ws.dhidden.iter_mut().for_each(|v| *v = 0.0);
            for (k, &d) in dz.iter().enumerate() {
                for j in 0..h {
                    gw2[k * h + j] += d * ws.hidden[j];
                    ws.dhidden[j] += d * w2[k * h + j];
                }
                gb2[k] += d;
            }
            for j in 0..h {
                let da = ws.dhidden[j] * spec.activation.derivative(ws.hidden_pre[j], ws.hidden[j]);
                for (gv, xv) in gw1[j * f..(j + 1) * f].iter_mut().zip(x) {
                    *gv += da * xv;
                }
                gb1[j] += da;
            }
        }
    }
    lse
}

fn check_labels(spec: &ModelSpec, batch: &Batch) -> Result<()> {
    match batch.labels.iter().position(|&y| y >= spec.classes) {
        Some(i) => Err(Error::invalid(
            format!("batch.labels[{i}]"),
            format!("label {} out of range 0..{}", batch.labels[i], spec.classes),
        )),
        None => Ok(()),
    }
}

/// Mean cross-entropy and its gradient over the given sample indices.
pub fn loss_and_grad_on(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &Batch,
    indices: &[usize],
) -> Result<(f64, Vec<f64>)> {
    check_compat(spec, params, batch.feature_dim)?;
    check_labels(spec, batch)?;
    if indices.is_empty() {
        return Err(Error::invalid("batch", "no samples"));
    }
    let mut ws = Workspace::new(spec);
    let mut grad = vec![0.0; spec.num_params()];
    let mut loss = 0.0;
    for &i in indices {
        loss += accumulate(spec, &params.theta, batch.row(i), batch.labels[i], &mut ws, &mut grad);
    }
    let n = indices.len() as f64;
    grad.iter_mut().for_each(|v| *v /= n);
    Ok((loss / n, grad))
}

/// Mean cross-entropy over the whole batch and its exact gradient.
pub fn loss_and_grad(spec: &ModelSpec, params: &ModelParams, batch: &Batch) -> Result<(f64, Vec<f64>)> {
    let all: Vec<usize> = (0..batch.len()).collect();
    loss_and_grad_on(spec, params, batch, &all)
}

/// Per-group mean losses, gradients, and sample counts.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLossGrads {
    pub losses: Vec<f64>,
    pub grads: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl GroupLossGrads {
    /// Losses paired with counts, as consumed by the balancer.
    pub fn loss_vector(&self) -> Result<LossVector> {
        LossVector::with_counts(self.losses.clone(), self.counts.clone())
    }

    pub fn gradient_set(&self) -> Result<GradientSet> {
        GradientSet::new(self.grads.clone())
    }
}

/// [`group_losses_and_grads`] restricted to per-group index lists.
pub fn group_losses_and_grads_on(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &Batch,
    per_group: &[Vec<usize>],
) -> Result<GroupLossGrads> {
    let mut out = GroupLossGrads {
        losses: Vec::with_capacity(per_group.len()),
        grads: Vec::with_capacity(per_group.len()),
        counts: Vec::with_capacity(per_group.len()),
    };
    for (g, idx) in per_group.iter().enumerate() {
        if idx.is_empty() {
            return Err(Error::EmptyGroup { group: g });
        }
        let (l, grad) = loss_and_grad_on(spec, params, batch, idx)?;
        out.losses.push(l);
        out.grads.push(grad);
        out.counts.push(idx.len());
    }
    Ok(out)
}

pub fn group_losses_and_grads(spec: &ModelSpec, params: &ModelParams, batch: &Batch) -> Result<GroupLossGrads> {
    group_losses_and_grads_on(spec, params, batch, &batch.group_indices())
}

/// Per-group mean cross-entropy without gradients. Empty groups give an error.
pub fn group_losses(spec: &ModelSpec, params: &ModelParams, batch: &Batch) -> Result<Vec<f64>> {
    check_compat(spec, params, batch.feature_dim)?;
    check_labels(spec, batch)?;
    let mut ws = Workspace::new(spec);
    let mut sums = vec![0.0; batch.num_groups];
    for i in 0..batch.len() {
        forward(spec, &params.theta, batch.row(i), &mut ws);
        let z_y = ws.logits[batch.labels[i]];
        sums[batch.groups[i]] += softmax_in_place(&mut ws.logits) - z_y;
    }
    let counts = batch.group_counts();
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyGroup { group: g });
    }
    Ok(sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect())
}

/// Argmax class per row (ties to the lowest index) and `P(class 1)`;
/// the score is 0 for single-class models.
pub fn predict(
    spec: &ModelSpec,
    params: &ModelParams,
    inputs: &[f64],
) -> Result<(Vec<usize>, Vec<f64>)> {
    check_compat(spec, params, spec.feature_dim)?;
    let f = spec.feature_dim;
    if !inputs.len().is_multiple_of(f) {
        return Err(Error::Shape {
            context: "prediction inputs",
            expected: (inputs.len() / f + 1) * f,
            got: inputs.len(),
        });
    }
    let mut ws = Workspace::new(spec);
    let mut classes = Vec::with_capacity(inputs.len() / f);
    let mut scores = Vec::with_capacity(inputs.len() / f);
    for x in inputs.chunks_exact(f) {
        forward(spec, &params.theta, x, &mut ws);
        let mut best = 0;
        for k in 1..spec.classes {
            if ws.logits[k] > ws.logits[best] {
                best = k;
            }
        }
        classes.push(best);
        softmax_in_place(&mut ws.logits);
        scores.push(if spec.classes > 1 { ws.logits[1] } else { 0.0 });
    }
    Ok((classes, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, f: usize, c: usize, k: usize) -> Batch {
        let inputs = (0..n * f).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
        let groups = (0..n).map(|i| i % k).collect();
        Batch::new(inputs, f, labels, groups, k).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, spec: &ModelSpec) -> ModelParams {
        ModelParams {
            theta: (0..spec.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    /// Straightforward nested-loop forward pass used as an oracle.
    fn oracle_logits(spec: &ModelSpec, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let (f, c, h) = (spec.feature_dim, spec.classes, spec.hidden);
        let layer = |w: &[f64], b: &[f64], inp: &[f64], n_out: usize| -> Vec<f64> {
            (0..n_out)
                .map(|o| {
                    let mut s = b[o];
                    for i in 0..inp.len() {
                        s += w[o * inp.len() + i] * inp[i];
                    }
                    s
                })
                .collect()
        };
        match spec.kind {
            ModelKind::LinearSoftmax => layer(&theta[..c * f], &theta[c * f..], x, c),
            ModelKind::Mlp1 => {
                let a = layer(&theta[..h * f], &theta[h * f..h * f + h], x, h);
                let hid: Vec<f64> = a
                    .iter()
                    .map(|&v| match spec.activation {
                        Activation::Relu => v.max(0.0),
                        Activation::Tanh => v.tanh(),
                    })
                    .collect();
                let off = h * f + h;
                layer(&theta[off..off + c * h], &theta[off + c * h..], &hid, c)
            }
        }
    }

    fn oracle_loss(spec: &ModelSpec, theta: &[f64], batch: &Batch) -> f64 {
        let mut total = 0.0;
        for i in 0..batch.len() {
            let z = oracle_logits(spec, theta, batch.row(i));
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - z[batch.labels()[i]];
        }
        total / batch.len() as f64
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(ModelSpec::linear(2, 2).num_params(), 6);
        assert_eq!(ModelSpec::mlp(3, 4, 2, Activation::Relu).num_params(), 26);
        let spec = ModelSpec::mlp(3, 4, 2, Activation::Tanh);
        assert_eq!(init(&spec, 9).theta.len(), 26);
        assert_eq!(init(&spec, 9), init(&spec, 9));
        assert_ne!(init(&spec, 9), init(&spec, 10));
    }

    #[test]
    fn init_bounds_and_zero_biases() {
        let spec = ModelSpec::linear(4, 3);
        let p = init(&spec, 1);
        let a = (6.0f64 / 7.0).sqrt();
        assert!(p.theta[..12].iter().all(|v| v.abs() <= a));
        assert_eq!(&p.theta[12..], &[0.0; 3]);
    }

    #[test]
    fn zero_params_give_log2() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = ModelSpec::linear(3, 2);
        let batch = random_batch(&mut rng, 10, 3, 2, 2);
        let zero = ModelParams {
            theta: vec![0.0; spec.num_params()],
        };
        let (loss, _) = loss_and_grad(&spec, &zero, &batch).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        let (classes, scores) = predict(&spec, &zero, batch.inputs()).unwrap();
        assert!(classes.iter().all(|&c| c == 0));
        assert!(scores.iter().all(|&s| s == 0.5));
    }

    #[test]
    fn single_sample_closed_form() {
        // W = [[1, 0], [0, 1]], b = 0, x = (1, 2), y = 0.
        // z = (1, 2), p = softmax(z), dz = p − e_0, dW = dz ⊗ x, db = dz.
        let spec = ModelSpec::linear(2, 2);
        let params = ModelParams {
            theta: vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        };
        let batch = Batch::new(vec![1.0, 2.0], 2, vec![0], vec![0], 1).unwrap();
        let (loss, grad) = loss_and_grad(&spec, &params, &batch).unwrap();
        let p0 = 1.0 / (1.0 + 1f64.exp());
        let p1 = 1.0 - p0;
        assert!((loss + p0.ln()).abs() < 1e-14);
        let expected = [p0 - 1.0, 2.0 * (p0 - 1.0), p1, 2.0 * p1, p0 - 1.0, p1];
        for (g, e) in grad.iter().zip(expected) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let h = 1e-6;
        for trial in 0..60 {
            let f = rng.random_range(1..5);
            let c = rng.random_range(2..4);
            let spec = match trial % 3 {
                0 => ModelSpec::linear(f, c),
                1 => ModelSpec::mlp(f, rng.random_range(1..5), c, Activation::Tanh),
                _ => ModelSpec::mlp(f, rng.random_range(1..5), c, Activation::Relu),
            };
            let batch = random_batch(&mut rng, 8, f, c, 2);
            let params = random_params(&mut rng, &spec);
            let (loss, grad) = loss_and_grad(&spec, &params, &batch).unwrap();
            assert!(loss >= 0.0);
            assert!((loss - oracle_loss(&spec, &params.theta, &batch)).abs() < 1e-12);
            for j in 0..spec.num_params() {
                let mut tp = params.theta.clone();
                let mut tm = params.theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let fd = (oracle_loss(&spec, &tp, &batch) - oracle_loss(&spec, &tm, &batch)) / (2.0 * h);
                let rel = (grad[j] - fd).abs() / fd.abs().max(grad[j].abs()).max(1e-3);
                assert!(rel <= 1e-5, "trial {trial} coord {j}: {} vs {fd}", grad[j]);
            }
        }
    }

    #[test]
    fn group_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = ModelSpec::mlp(3, 5, 2, Activation::Tanh);
        let batch = random_batch(&mut rng, 31, 3, 2, 4);
        let params = random_params(&mut rng, &spec);
        let groups = group_losses_and_grads(&spec, &params, &batch).unwrap();
        let (_, pooled) = loss_and_grad(&spec, &params, &batch).unwrap();
        let forward_only = group_losses(&spec, &params, &batch).unwrap();
        for (a, b) in forward_only.iter().zip(&groups.losses) {
            assert!((a - b).abs() < 1e-14);
        }
        let n = batch.len() as f64;
        for j in 0..spec.num_params() {
            let s: f64 = (0..4).map(|k| groups.counts[k] as f64 / n * groups.grads[k][j]).sum();
            assert!((s - pooled[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn single_group_and_identical_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ModelSpec::linear(2, 2);
        let params = random_params(&mut rng, &spec);
        let single = random_batch(&mut rng, 12, 2, 2, 1);
        let g = group_losses_and_grads(&spec, &params, &single).unwrap();
        let (l, grad) = loss_and_grad(&spec, &params, &single).unwrap();
        assert_eq!(g.losses, vec![l]);
        assert_eq!(g.grads, vec![grad]);

        let base = random_batch(&mut rng, 5, 2, 2, 1);
        let mut inputs = base.inputs().to_vec();
        inputs.extend_from_slice(base.inputs());
        let mut labels = base.labels().to_vec();
        labels.extend_from_slice(base.labels());
        let groups = [vec![0; 5], vec![1; 5]].concat();
        let twin = Batch::new(inputs, 2, labels, groups, 2).unwrap();
        let g = group_losses_and_grads(&spec, &params, &twin).unwrap();
        assert_eq!(g.losses[0], g.losses[1]);
        assert_eq!(g.grads[0], g.grads[1]);
    }

    #[test]
    fn empty_group_is_named() {
        let batch = Batch::new(vec![0.0, 1.0], 1, vec![0, 1], vec![0, 2], 3).unwrap();
        let spec = ModelSpec::linear(1, 2);
        let err = group_losses_and_grads(&spec, &init(&spec, 0), &batch).unwrap_err();
        assert!(matches!(err, Error::EmptyGroup { group: 1 }));
    }

    #[test]
    fn shape_errors() {
        let spec = ModelSpec::linear(2, 2);
        let batch = Batch::new(vec![0.0; 3], 3, vec![0], vec![0], 1).unwrap();
        assert!(loss_and_grad(&spec, &init(&spec, 0), &batch).is_err());
        assert!(predict(&spec, &init(&spec, 0), &[0.0; 3]).is_err());
        assert!(Batch::new(vec![0.0; 3], 2, vec![0], vec![0], 1).is_err());
        assert!(Batch::new(vec![0.0; 2], 2, vec![0], vec![1], 1).is_err());
        let bad_label = Batch::new(vec![0.0; 2], 2, vec![5], vec![0], 1).unwrap();
        assert!(loss_and_grad(&spec, &init(&spec, 0), &bad_label).is_err());
    }

    #[test]
    fn predict_separable_and_oracle() {
        // class 1 iff x0 > 0, weights (−5, 5) on x0
        let spec = ModelSpec::linear(2, 2);
        let params = ModelParams {
            theta: vec![-5.0, 0.0, 5.0, 0.0, 0.0, 0.0],
        };
        let xs = [1.0, 0.3, -2.0, 1.0, 0.5, -1.0, -0.1, 9.0];
        let (classes, _) = predict(&spec, &params, &xs).unwrap();
        assert_eq!(classes, vec![1, 0, 1, 0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ModelSpec::mlp(3, 4, 3, Activation::Relu);
        let params = random_params(&mut rng, &spec);
        let xs: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (classes, scores) = predict(&spec, &params, &xs).unwrap();
        for (i, x) in xs.chunks(3).enumerate() {
            let z = oracle_logits(&spec, &params.theta, x);
            let best = (0..3).fold(0, |b, k| if z[k] > z[b] { k } else { b });
            assert_eq!(classes[i], best);
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
            assert!((scores[i] - (z[1] - m).exp() / s).abs() < 1e-14);
        }
    }
}
