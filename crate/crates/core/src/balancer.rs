//! Per-step combination weights for every training strategy.
//!
//! The entropy-balanced strategy ([`Strategy::Cpt`]) solves
//!
//! ```text
//! maximize   wᵀ M w'
//! s.t.       (M w)_k ≥ 0        for k in the worst set
//!            (M w)_k ≥ (M w')_k for every other k
//!            w ∈ Δ_K
//! ```
//!
//! where `M` is the Gram matrix of the (control-scaled) group gradients and
//! `w'` are the entropy coefficients. Since `(M w)_k = ⟨d, g_k⟩` and
//! `(M w')_k = ⟨d_ent, g_k⟩`, the constraints say the update does not
//! increase any worst-group loss to first order and is no worse than
//! `d_ent` on the remaining groups.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::entropy::{coefficients, CoefficientVariant};
use crate::error::{Error, Result};
use crate::group_state::{
    apply_control, combine, combine_raw, gram, ControllingVector, Direction, GradientSet,
    GramMatrix, LossVector, SimplexWeights,
};
use crate::lp::{self, Constraint, LpProblem};
use crate::minnorm;

/// Serialized by its short [`name`](Strategy::name).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Pooled ERM: groups weighted by their sample counts.
    ErmPooled,
    /// Uniform `1/K` weights (entropy term disabled).
    AverageGradient,
    /// Follow only the highest-loss group.
    GroupDro,
    /// Minimum-norm point of the gradient convex hull.
    Mgda,
    /// Entropy-balanced LP.
    Cpt,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::ErmPooled,
        Strategy::AverageGradient,
        Strategy::GroupDro,
        Strategy::Mgda,
        Strategy::Cpt,
    ];

    /// Short name used on the command line and in reports.
    pub fn name(self) -> &'static str {
        match self {
            Strategy::ErmPooled => "erm",
            Strategy::AverageGradient => "average",
            Strategy::GroupDro => "groupdro",
            Strategy::Mgda => "mgda",
            Strategy::Cpt => "cpt",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let found = Strategy::ALL.into_iter().find(|st| {
            st.name() == lower
                || match st {
                    Strategy::ErmPooled => lower == "erm_pooled",
                    Strategy::AverageGradient => lower == "average_gradient",
                    Strategy::GroupDro => lower == "group_dro",
                    _ => false,
                }
        });
        found.ok_or_else(|| {
            let names: Vec<_> = Strategy::ALL.iter().map(|s| s.name()).collect();
            Error::invalid(
                "strategy",
                format!("unknown strategy '{s}', expected one of: {}", names.join(", ")),
            )
        })
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What to do when the relaxed LP is infeasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Re-solve with only the worst-set constraints.
    #[default]
    WorstOnly,
    /// Use the MGDA weights.
    MinNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalancerConfig {
    /// Threshold on `‖d_ent‖` below which the uniform average is used.
    pub eps_balance: f64,
    /// Losses within this distance of the maximum count as worst.
    pub tie_tol: f64,
    pub coefficient_variant: CoefficientVariant,
    pub fallback: Fallback,
}

impl Default for BalancerConfig {
    fn default() -> Self {
        Self {
            eps_balance: 1e-4,
            tie_tol: 1e-9,
            coefficient_variant: CoefficientVariant::Softmax,
            fallback: Fallback::WorstOnly,
        }
    }
}

impl BalancerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_balance.is_finite() && self.eps_balance > 0.0) {
            return Err(Error::invalid(
                "balancer.eps_balance",
                format!("must be finite and > 0, got {}", self.eps_balance),
            ));
        }
        if !(self.tie_tol.is_finite() && self.tie_tol >= 0.0) {
            return Err(Error::invalid(
                "balancer.tie_tol",
                format!("must be finite and >= 0, got {}", self.tie_tol),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    LpOptimal,
    LpFallback,
    EpsBalanced,
    StrategyFixed,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::LpOptimal => "lp_optimal",
            Branch::LpFallback => "lp_fallback",
            Branch::EpsBalanced => "eps_balanced",
            Branch::StrategyFixed => "strategy_fixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `‖d_ent‖` of the scaled problem (Cpt only).
    pub d_ent_norm: Option<f64>,
    /// Groups whose scaled loss is within `tie_tol` of the maximum.
    pub worst_set: Vec<usize>,
    /// `⟨d, g_k⟩` for the emitted direction.
    pub alignment: Vec<f64>,
    /// `⟨d_ent, g_k⟩` (Cpt only).
    pub ent_alignment: Vec<f64>,
    /// `(M w)_k − rhs_k` of the LP constraints that the emitted weights
    /// were solved under (Cpt LP branches only).
    pub slacks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDecision {
    pub weights: SimplexWeights,
    /// `Σ w_k c_k g_k` — the combination of the control-scaled gradients.
    pub direction: Direction,
    pub branch: Branch,
    pub diagnostics: Diagnostics,
}

fn worst_set(losses: &LossVector, tie_tol: f64) -> Vec<usize> {
    let max = losses.max();
    (0..losses.len())
        .filter(|&k| losses.values()[k] >= max - tie_tol)
        .collect()
}

fn cpt_problem(m: &GramMatrix, v: &[f64], worst: &[usize], worst_only: bool) -> Result<LpProblem> {
    let k = m.size();
    let constraints = (0..k)
        .filter_map(|i| {
            let in_worst = worst.contains(&i);
            (in_worst || !worst_only).then(|| Constraint {
                a: m.rows()[i].clone(),
                b: if in_worst { 0.0 } else { v[i] },
            })
        })
        .collect();
    LpProblem::new(v.to_vec(), constraints)
}

fn slacks(p: &LpProblem, w: &SimplexWeights) -> Vec<f64> {
    p.constraints()
        .iter()
        .map(|c| c.a.iter().zip(w.as_slice()).map(|(a, x)| a * x).sum::<f64>() - c.b)
        .collect()
}

/// Computes the combination weights and update direction for one step.
pub fn step(
    losses: &LossVector,
    g: &GradientSet,
    c: &ControllingVector,
    strategy: Strategy,
    cfg: &BalancerConfig,
) -> Result<StepDecision> {
    cfg.validate()?;
    let (losses, g) = apply_control(losses, g, c)?;
    let k = losses.len();
    let worst = worst_set(&losses, cfg.tie_tol);
    let mut diagnostics = Diagnostics {
        worst_set: worst.clone(),
        ..Diagnostics::default()
    };

    let (weights, branch) = match strategy {
        Strategy::ErmPooled => {
            let counts = losses.counts().ok_or_else(|| {
                Error::invalid("losses", "pooled ERM needs per-group sample counts")
            })?;
            (SimplexWeights::proportional(counts)?, Branch::StrategyFixed)
        }
        Strategy::AverageGradient => (SimplexWeights::uniform(k), Branch::StrategyFixed),
        Strategy::GroupDro => {
            let max = losses.max();
            let argmax = losses
                .values()
                .iter()
                .position(|&l| l == max)
                .expect("finite losses have a maximum");
            (SimplexWeights::vertex(k, argmax), Branch::StrategyFixed)
        }
        Strategy::Mgda => (minnorm::min_norm(&gram(&g))?.weights, Branch::StrategyFixed),
        Strategy::Cpt => {
            let m = gram(&g);
            let wprime = coefficients(&losses, cfg.coefficient_variant)?;
            let d_ent = combine_raw(&g, wprime.as_slice())?;
            let d_ent_norm = d_ent.norm();
            diagnostics.d_ent_norm = Some(d_ent_norm);
            diagnostics.ent_alignment = (0..k).map(|i| d_ent.dot(g.row(i))).collect();
            let all_zero = (0..k).all(|i| m.get(i, i) == 0.0);
            if all_zero || d_ent_norm <= cfg.eps_balance {
                (SimplexWeights::uniform(k), Branch::EpsBalanced)
            } else {
                let v = m.mul_vec(wprime.as_slice());
                let full = cpt_problem(&m, &v, &worst, false)?;
                let sol = lp::solve(&full)?;
                match sol.w {
                    Some(w) => {
                        diagnostics.slacks = slacks(&full, &w);
                        (w, Branch::LpOptimal)
                    }
                    None => {
                        let w = match cfg.fallback {
                            Fallback::WorstOnly => {
                                let relaxed = cpt_problem(&m, &v, &worst, true)?;
                                match lp::solve(&relaxed)?.w {
                                    Some(w) => {
                                        diagnostics.slacks = slacks(&relaxed, &w);
                                        w
                                    }
                                    // The min-norm point satisfies every
                                    // ⟨d, g_k⟩ ≥ ‖d‖² ≥ 0, so this is only
                                    // reachable through round-off.
                                    None => minnorm::min_norm(&m)?.weights,
                                }
                            }
                            Fallback::MinNorm => minnorm::min_norm(&m)?.weights,
                        };
                        (w, Branch::LpFallback)
                    }
                }
            }
        }
    };

    let direction = combine(&g, &weights)?;
    diagnostics.alignment = (0..k).map(|i| direction.dot(g.row(i))).collect();
    Ok(StepDecision {
        weights,
        direction,
        branch,
        diagnostics,
    })
}
