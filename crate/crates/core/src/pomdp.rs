//! Tabular POMDP and memoryless-policy types, JSON loaders, and structural
//! validation.
//!
//! Index conventions, used everywhere in this crate:
//! - steps `h` are 1-based, `h ∈ 1..=H`;
//! - `transition[h-1][s][a]` is the distribution of `s_{h+1}` given
//!   `(s_h = s, a_h = a)`, present for `h = 1..H-1` (so `H-1` slices);
//! - `emission[h-1][s]` is the distribution of `o_h` given `s_h = s`
//!   (`H` slices);
//! - `reward[h-1][o][a]` is the deterministic reward `R(o_h, a_h)`, required
//!   to lie in `(0, 1]` (`H` slices).

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tol::DIST_TOL;

/// Finite-horizon tabular POMDP with per-step tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularPomdp {
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "S")]
    pub state_count: usize,
    #[serde(rename = "O")]
    pub obs_count: usize,
    #[serde(rename = "A")]
    pub action_count: usize,
    /// Initial latent-state distribution.
    pub d1: Vec<f64>,
    /// `transition[h-1][s][a]` -> distribution over next states, `h = 1..H-1`.
    pub transition: Vec<Vec<Vec<Vec<f64>>>>,
    /// `emission[h-1][s]` -> distribution over observations, `h = 1..=H`.
    pub emission: Vec<Vec<Vec<f64>>>,
    /// `reward[h-1][o][a]` -> reward in `(0, 1]`, `h = 1..=H`.
    pub reward: Vec<Vec<Vec<f64>>>,
}

/// Per-step observation-conditioned action distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorylessPolicy {
    /// `pi[h-1][o]` -> distribution over actions, `h = 1..=H`.
    pub pi: Vec<Vec<Vec<f64>>>,
}

impl TabularPomdp {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("POMDP serialization cannot fail")
    }

    /// Distribution of `s_{h+1}` given `(s_h, a_h)`; valid for `h < H`.
    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        &self.transition[h - 1][s][a]
    }

    /// Distribution of `o_h` given `s_h`.
    pub fn emission_row(&self, h: usize, s: usize) -> &[f64] {
        &self.emission[h - 1][s]
    }

    pub fn reward_at(&self, h: usize, o: usize, a: usize) -> f64 {
        self.reward[h - 1][o][a]
    }

    /// Stable content hash used to tie datasets to the model they came from.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("POMDP serialization cannot fail");
        let digest = Sha256::digest(&bytes);
        let mut out = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    /// Shape-only sanity used before the value checks of [`validate_model`].
    /// Wrong dimensions are hard errors naming the offending slice.
    pub fn check_shape(&self) -> Result<()> {
        let (horizon, s, o, a) = (self.horizon, self.state_count, self.obs_count, self.action_count);
        if horizon == 0 || s == 0 || o == 0 || a == 0 {
            return Err(Error::Structural {
                slice: "header".into(),
                detail: format!("H, S, O, A must be positive (got H={horizon} S={s} O={o} A={a})"),
            });
        }
        let expect = |name: String, got: usize, want: usize| -> Result<()> {
            if got != want {
                return Err(Error::Structural {
                    slice: name,
                    detail: format!("expected length {want}, got {got}"),
                });
            }
            Ok(())
        };
        expect("d1".into(), self.d1.len(), s)?;
        expect("transition".into(), self.transition.len(), horizon - 1)?;
        for (hi, slice) in self.transition.iter().enumerate() {
            expect(format!("transition[{hi}]"), slice.len(), s)?;
            for (si, per_state) in slice.iter().enumerate() {
                expect(format!("transition[{hi}][{si}]"), per_state.len(), a)?;
                for (ai, row) in per_state.iter().enumerate() {
                    expect(format!("transition[{hi}][{si}][{ai}]"), row.len(), s)?;
                }
            }
        }
        expect("emission".into(), self.emission.len(), horizon)?;
        for (hi, slice) in self.emission.iter().enumerate() {
            expect(format!("emission[{hi}]"), slice.len(), s)?;
            for (si, row) in slice.iter().enumerate() {
                expect(format!("emission[{hi}][{si}]"), row.len(), o)?;
            }
        }
        expect("reward".into(), self.reward.len(), horizon)?;
        for (hi, slice) in self.reward.iter().enumerate() {
            expect(format!("reward[{hi}]"), slice.len(), o)?;
            for (oi, row) in slice.iter().enumerate() {
                expect(format!("reward[{hi}][{oi}]"), row.len(), a)?;
            }
        }
        Ok(())
    }
}

impl MemorylessPolicy {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serialization cannot fail")
    }

    /// Uniform policy over `a` at every `(h, o)`.
    pub fn uniform(horizon: usize, obs: usize, actions: usize) -> Self {
        let row = vec![1.0 / actions as f64; actions];
        Self {
            pi: vec![vec![row; obs]; horizon],
        }
    }

    pub fn action_probs(&self, h: usize, o: usize) -> &[f64] {
        &self.pi[h - 1][o]
    }

    pub fn prob(&self, h: usize, o: usize, a: usize) -> f64 {
        self.pi[h - 1][o][a]
    }

    pub fn check_shape(&self, horizon: usize, obs: usize, actions: usize) -> Result<()> {
        if self.pi.len() != horizon {
            return Err(Error::Structural {
                slice: "pi".into(),
                detail: format!("expected {horizon} step slices, got {}", self.pi.len()),
            });
        }
        for (hi, slice) in self.pi.iter().enumerate() {
            if slice.len() != obs {
                return Err(Error::Structural {
                    slice: format!("pi[{hi}]"),
                    detail: format!("expected {obs} observation rows, got {}", slice.len()),
                });
            }
            for (oi, row) in slice.iter().enumerate() {
                if row.len() != actions {
                    return Err(Error::Structural {
                        slice: format!("pi[{hi}][{oi}]"),
                        detail: format!("expected {actions} action entries, got {}", row.len()),
                    });
                }
            }
        }
        Ok(())
    }
}

/// One validation check with an optional numeric payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub step: Option<usize>,
    pub passed: bool,
    pub value: Option<f64>,
    pub detail: String,
}

/// Collection of validation checks; complete in the sense that every check
/// contributes one entry per step it applies to.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn push(&mut self, check: ValidationCheck) {
        self.checks.push(check);
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.checks.extend(other.checks);
    }
}

fn check_distribution(report: &mut ValidationReport, name: String, step: Option<usize>, row: &[f64]) {
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = row.iter().sum();
    let normalized = (sum - 1.0).abs() <= DIST_TOL;
    let nonneg = min >= -DIST_TOL && min.is_finite();
    report.push(ValidationCheck {
        name: format!("normalization:{name}"),
        step,
        passed: normalized && nonneg,
        value: Some(sum),
        detail: if normalized && nonneg {
            String::new()
        } else {
            format!("sum = {sum:.15}, min entry = {min:.3e}")
        },
    });
}

/// Structural validation: normalization of every stored distribution, slice
/// counts, and strict reward positivity. Value-level problems are reported as
/// failed checks; malformed shapes are hard errors.
pub fn validate_model(model: &TabularPomdp) -> Result<ValidationReport> {
    model.check_shape()?;
    let mut report = ValidationReport::default();
    check_distribution(&mut report, "d1".into(), None, &model.d1);
    for h in 1..model.horizon {
        for s in 0..model.state_count {
            for a in 0..model.action_count {
                check_distribution(
                    &mut report,
                    format!("transition[s={s}][a={a}]"),
                    Some(h),
                    model.transition_row(h, s, a),
                );
            }
        }
    }
    for h in 1..=model.horizon {
        for s in 0..model.state_count {
            check_distribution(
                &mut report,
                format!("emission[s={s}]"),
                Some(h),
                model.emission_row(h, s),
            );
        }
    }
    // Rewards must be strictly positive so that reward-to-go weighting never
    // divides by zero.
    for h in 1..=model.horizon {
        let mut min_reward = f64::INFINITY;
        let mut max_reward = f64::NEG_INFINITY;
        let mut offender = None;
        for o in 0..model.obs_count {
            for a in 0..model.action_count {
                let r = model.reward_at(h, o, a);
                if r < min_reward {
                    min_reward = r;
                    offender = Some((o, a));
                }
                max_reward = max_reward.max(r);
            }
        }
        let passed = min_reward > 0.0 && max_reward <= 1.0 + DIST_TOL;
        report.push(ValidationCheck {
            name: "reward_positivity".into(),
            step: Some(h),
            passed,
            value: Some(min_reward),
            detail: if passed {
                String::new()
            } else {
                let (o, a) = offender.unwrap_or((0, 0));
                format!("reward range [{min_reward}, {max_reward}] at (o={o}, a={a}); strict positivity required")
            },
        });
    }
    Ok(report)
}

/// Validate a policy against the model dimensions.
pub fn validate_policy(model: &TabularPomdp, policy: &MemorylessPolicy) -> Result<ValidationReport> {
    policy.check_shape(model.horizon, model.obs_count, model.action_count)?;
    let mut report = ValidationReport::default();
    for h in 1..=model.horizon {
        for o in 0..model.obs_count {
            check_distribution(&mut report, format!("pi[o={o}]"), Some(h), policy.action_probs(h, o));
        }
    }
    Ok(report)
}

/// One-step action probability ratio `mu(o_h, a_h) = pi_e(a|o) / pi_b(a|o)`.
///
/// Errors when the evaluation policy puts mass on an action the behavior
/// policy never plays at that `(h, o)`.
pub fn action_ratio(
    pi_e: &MemorylessPolicy,
    pi_b: &MemorylessPolicy,
    h: usize,
    o: usize,
    a: usize,
) -> Result<f64> {
    let pe = pi_e.prob(h, o, a);
    let pb = pi_b.prob(h, o, a);
    if pb == 0.0 {
        if pe > 0.0 {
            return Err(Error::ActionCoverage {
                step: h,
                obs: o,
                action: a,
                pi_e: pe,
            });
        }
        return Ok(0.0);
    }
    Ok(pe / pb)
}

/// `C_mu`: the largest one-step ratio over all `(h, o, a)` with positive
/// behavior probability. Always `>= 1` when both rows are normalized.
pub fn c_mu(pi_e: &MemorylessPolicy, pi_b: &MemorylessPolicy) -> Result<f64> {
    let mut worst = 0.0_f64;
    for (hi, slice) in pi_e.pi.iter().enumerate() {
        for (o, row) in slice.iter().enumerate() {
            for (a, _) in row.iter().enumerate() {
                worst = worst.max(action_ratio(pi_e, pi_b, hi + 1, o, a)?);
            }
        }
    }
    Ok(worst)
}

/// Largest per-step ratio `max_{o,a} mu(o_h, a_h)` for each step.
pub fn per_step_max_ratio(pi_e: &MemorylessPolicy, pi_b: &MemorylessPolicy) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pi_e.pi.len());
    for (hi, slice) in pi_e.pi.iter().enumerate() {
        let mut worst = 0.0_f64;
        for (o, row) in slice.iter().enumerate() {
            for (a, _) in row.iter().enumerate() {
                worst = worst.max(action_ratio(pi_e, pi_b, hi + 1, o, a)?);
            }
        }
        out.push(worst);
    }
    Ok(out)
}
