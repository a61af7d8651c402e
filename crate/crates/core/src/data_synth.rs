//! Four-group synthetic data with a label-correlated spurious coordinate.
//!
//! A sample with label `y` and attribute `a` has features
//! `[(2y−1)·μ_core + ε₀, (2a−1)·μ_sp + ε₁, ε₂, …]` with i.i.d. `N(0, σ²)`
//! noise, and group id `2y + a`. Samples are laid out in group blocks.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::models::Batch;

pub const NUM_GROUPS: usize = 4;

/// Recorded in every dataset file so the streams can be regenerated elsewhere.
pub const PRNG_ID: &str = "chacha20 (20 rounds); key from seed_from_u64(seed) (PCG32 expansion, \
rand_core 0.9); stream 0/1/2 for train/val/test; uniform u = ((next_u64 >> 11) + 1) * 2^-53; \
normals by Box-Muller pairs z0 = r*cos(2*pi*u2), z1 = r*sin(2*pi*u2), r = sqrt(-2 ln u1); \
sample-major, coordinate-minor order";

/// Waterbirds-like group mix in order (y0,a0), (y0,a1), (y1,a0), (y1,a1).
pub const WATERBIRDS_PROPORTIONS: [f64; NUM_GROUPS] = [0.73, 0.04, 0.01, 0.22];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalBalance {
    AsTrain,
    #[default]
    GroupBalanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub proportions: [f64; NUM_GROUPS],
    pub core_gap: f64,
    pub spurious_gap: f64,
    pub noise_dims: usize,
    pub noise_sigma: f64,
    pub val_test_balance: EvalBalance,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_train: 4000,
            n_val: 1000,
            n_test: 2000,
            proportions: WATERBIRDS_PROPORTIONS,
            core_gap: 1.0,
            spurious_gap: 2.0,
            noise_dims: 6,
            noise_sigma: 1.0,
            val_test_balance: EvalBalance::GroupBalanced,
        }
    }
}

impl SyntheticSpec {
    pub fn feature_dim(&self) -> usize {
        2 + self.noise_dims
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.proportions.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::invalid(
                format!("proportions[{k}]"),
                format!("must be positive, got {}", self.proportions[k]),
            ));
        }
        let sum: f64 = self.proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("proportions", format!("must sum to 1, got {sum}")));
        }
        if !(self.core_gap.is_finite() && self.core_gap > 0.0) {
            return Err(Error::invalid("core_gap", format!("must be > 0, got {}", self.core_gap)));
        }
        if !self.spurious_gap.is_finite() {
            return Err(Error::invalid("spurious_gap", "must be finite"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid(
                "noise_sigma",
                format!("must be finite and >= 0, got {}", self.noise_sigma),
            ));
        }
        for (name, n) in [("n_train", self.n_train), ("n_val", self.n_val), ("n_test", self.n_test)] {
            if n < NUM_GROUPS {
                return Err(Error::invalid(
                    name,
                    format!("{n} samples cannot cover {NUM_GROUPS} groups"),
                ));
            }
        }
        Ok(())
    }

    fn split_counts(&self, n: usize, balance: EvalBalance) -> Result<Vec<usize>> {
        match balance {
            EvalBalance::AsTrain => group_counts(n, &self.proportions),
            EvalBalance::GroupBalanced => group_counts(n, &[1.0 / NUM_GROUPS as f64; NUM_GROUPS]),
        }
    }
}

/// Largest-remainder apportionment of `n` samples, at least one per group.
/// Remainder ties go to the lower group index.
pub fn group_counts(n: usize, proportions: &[f64]) -> Result<Vec<usize>> {
    let k = proportions.len();
    if n < k {
        return Err(Error::invalid("n", format!("{n} samples cannot cover {k} groups")));
    }
    let quotas: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        let (ri, rj) = (quotas[i] - quotas[i].floor(), quotas[j] - quotas[j].floor());
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    while let Some(z) = counts.iter().position(|&c| c == 0) {
        // take from the group furthest above its quota
        let surplus = |i: usize| counts[i] as f64 - quotas[i];
        let donor = (0..k)
            .filter(|&i| counts[i] > 1)
            .fold(None, |b: Option<usize>, i| match b {
                Some(b) if surplus(b) >= surplus(i) => Some(b),
                _ => Some(i),
            })
            .expect("n >= k leaves a group with two or more samples");
        counts[donor] -= 1;
        counts[z] = 1;
    }
    Ok(counts)
}

pub fn group_id(y: usize, a: usize) -> usize {
    2 * y + a
}

/// `(label, spurious attribute)` of a group id.
pub fn group_parts(group: usize) -> (usize, usize) {
    (group / 2, group % 2)
}

struct NormalStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NormalStream {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    fn uniform_open0(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_open0();
        let u2 = self.uniform_open0();
        let r = (-2.0 * u1.ln()).sqrt();
        let t = std::f64::consts::TAU * u2;
        self.spare = Some(r * t.sin());
        r * t.cos()
    }
}

fn generate_split(spec: &SyntheticSpec, counts: &[usize], seed: u64, stream: u64) -> Result<Batch> {
    let f = spec.feature_dim();
    let n: usize = counts.iter().sum();
    let mut noise = NormalStream::new(seed, stream);
    let mut inputs = Vec::with_capacity(n * f);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for (g, &count) in counts.iter().enumerate() {
        let (y, a) = group_parts(g);
        let core = (2.0 * y as f64 - 1.0) * spec.core_gap;
        let spurious = (2.0 * a as f64 - 1.0) * spec.spurious_gap;
        for _ in 0..count {
            for j in 0..f {
                let mean = match j {
                    0 => core,
                    1 => spurious,
                    _ => 0.0,
                };
                inputs.push(mean + spec.noise_sigma * noise.next());
            }
            labels.push(y);
            groups.push(g);
        }
    }
    Batch::new(inputs, f, labels, groups, NUM_GROUPS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SyntheticSpec,
    pub seed: u64,
    pub train: Batch,
    pub val: Batch,
    pub test: Batch,
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let train_counts = spec.split_counts(spec.n_train, EvalBalance::AsTrain)?;
    let val_counts = spec.split_counts(spec.n_val, spec.val_test_balance)?;
    let test_counts = spec.split_counts(spec.n_test, spec.val_test_balance)?;
    Ok(Dataset {
        spec: spec.clone(),
        seed,
        train: generate_split(spec, &train_counts, seed, 0)?,
        val: generate_split(spec, &val_counts, seed, 1)?,
        test: generate_split(spec, &test_counts, seed, 2)?,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitFile {
    features: Vec<f64>,
    labels: Vec<usize>,
    groups: Vec<usize>,
    n: usize,
    f: usize,
}

impl From<&Batch> for SplitFile {
    fn from(b: &Batch) -> Self {
        Self {
            features: b.inputs().to_vec(),
            labels: b.labels().to_vec(),
            groups: b.groups().to_vec(),
            n: b.len(),
            f: b.feature_dim(),
        }
    }
}

impl SplitFile {
    fn into_batch(self, name: &str) -> Result<Batch> {
        if self.labels.len() != self.n {
            return Err(Error::invalid(
                format!("{name}.n"),
                format!("says {} but {} labels present", self.n, self.labels.len()),
            ));
        }
        let batch = Batch::new(self.features, self.f, self.labels, self.groups, NUM_GROUPS)?;
        for (i, (&y, &g)) in batch.labels().iter().zip(batch.groups()).enumerate() {
            if y > 1 || group_parts(g).0 != y {
                return Err(Error::invalid(
                    format!("{name}.labels[{i}]"),
                    format!("label {y} inconsistent with group {g}"),
                ));
            }
        }
        if let Some(g) = batch.group_counts().iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("{name}.groups"), format!("group {g} is empty")));
        }
        Ok(batch)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    spec: SyntheticSpec,
    seed: u64,
    prng: String,
    train: SplitFile,
    val: SplitFile,
    test: SplitFile,
}

impl Dataset {
    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            spec: self.spec.clone(),
            seed: self.seed,
            prng: PRNG_ID.to_string(),
            train: (&self.train).into(),
            val: (&self.val).into(),
            test: (&self.test).into(),
        };
        serde_json::to_string(&file).expect("dataset serialization cannot fail")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })?;
        file.spec.validate()?;
        let f = file.spec.feature_dim();
        let data = Self {
            spec: file.spec,
            seed: file.seed,
            train: file.train.into_batch("train")?,
            val: file.val.into_batch("val")?,
            test: file.test.into_batch("test")?,
        };
        for (name, b) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
            if b.feature_dim() != f {
                return Err(Error::Shape {
                    context: if name == "train" { "train features" } else { "eval features" },
                    expected: f,
                    got: b.feature_dim(),
                });
            }
        }
        Ok(data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, path)
    }
}

/// Per-group accuracy of the two single-coordinate threshold classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BayesReference {
    /// Predict `y = 1` iff the core coordinate is positive.
    pub core_only: [f64; NUM_GROUPS],
    /// Predict `y = 1` iff the spurious coordinate is positive.
    pub spurious_only: [f64; NUM_GROUPS],
}

pub fn bayes_reference(spec: &SyntheticSpec) -> Result<BayesReference> {
    spec.validate()?;
    let aligned = |gap: f64| -> f64 {
        if spec.noise_sigma == 0.0 {
            // threshold at 0 of a point mass; a zero gap sits on the boundary
            // and is classified as y = 0, which the caller resolves per group
            return if gap > 0.0 { 1.0 } else { 0.0 };
        }
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        std.cdf(gap / spec.noise_sigma)
    };
    let core = aligned(spec.core_gap);
    let sp = aligned(spec.spurious_gap);
    let mut out = BayesReference {
        core_only: [core; NUM_GROUPS],
        spurious_only: [0.0; NUM_GROUPS],
    };
    for g in 0..NUM_GROUPS {
        let (y, a) = group_parts(g);
        out.spurious_only[g] = if spec.noise_sigma == 0.0 && spec.spurious_gap == 0.0 {
            // every sample lands on 0 and is predicted as class 0
            if y == 0 { 1.0 } else { 0.0 }
        } else if y == a {
            sp
        } else {
            1.0 - sp
        };
    }
    Ok(out)
}
