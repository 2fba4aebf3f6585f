//! Off-policy estimators: plug-in evaluation, importance-sampling baselines,
//! the two minimax estimators over finite function classes, and exact
//! (population-level) variants of both.
//!
//! This is a research harness with a known model: function classes are built
//! from the exact constructions and evaluated on sampled futures through
//! model-computed features, materialized as dense per-step tables. The
//! estimators themselves touch only logged data (observations, actions,
//! rewards, logged behavior probabilities).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coverage::BoundEvaluation;
use crate::error::{Error, Result};
use crate::exact::Scenario;
use crate::fdvf::{construct_history_weights, construct_reward_weighted_fdvf};
use crate::index::episode_indices;
use crate::residual::bellman_residual_s_dense;
use crate::simulate::TrajectoryDataset;
use crate::stepfn::{HistoryFunction, StepFunction, ValueFunction};

/// How a finite function class is perturbed around its exact anchor member.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassSpec {
    /// Number of perturbed members added around the exact solution.
    pub perturbations: usize,
    /// Perturbation magnitude in parameter space.
    pub magnitude: f64,
    pub seed: u64,
}

impl Default for ClassSpec {
    fn default() -> Self {
        Self {
            perturbations: 4,
            magnitude: 0.08,
            seed: 17,
        }
    }
}

/// Finite class of future-domain functions, with dense tables for fast
/// evaluation on data.
#[derive(Debug, Clone)]
pub struct ValueClass {
    pub members: Vec<ValueFunction>,
    /// `tables[member][h-1][future_id]`.
    pub tables: Vec<Vec<Vec<f64>>>,
    pub sup_norm: f64,
}

/// Finite class of history-domain functions.
#[derive(Debug, Clone)]
pub struct HistoryClass {
    pub members: Vec<HistoryFunction>,
    pub tables: Vec<Vec<Vec<f64>>>,
    pub sup_norm: f64,
}

impl ValueClass {
    fn from_members(scn: &Scenario, members: Vec<ValueFunction>) -> Self {
        let tables: Vec<Vec<Vec<f64>>> = members.iter().map(|v| v.to_dense(&scn.algebras)).collect();
        let sup_norm = members
            .iter()
            .map(|v| v.sup_norm(&scn.algebras))
            .fold(0.0, f64::max);
        Self {
            members,
            tables,
            sup_norm,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl HistoryClass {
    fn from_members(scn: &Scenario, members: Vec<HistoryFunction>) -> Self {
        let tables: Vec<Vec<Vec<f64>>> = members.iter().map(|w| w.to_dense(&scn.algebras)).collect();
        let sup_norm = members
            .iter()
            .map(|w| w.sup_norm(&scn.algebras))
            .fold(0.0, f64::max);
        Self {
            members,
            tables,
            sup_norm,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Build the three classes: values anchored at the reward-weighted exact
/// solution with seeded parameter perturbations; the helper class as the
/// exact residual projections of every value member (so completeness holds
/// by construction); weights anchored at the belief-matching solution.
pub fn build_classes(scn: &Scenario, spec: &ClassSpec) -> Result<(ValueClass, HistoryClass, HistoryClass)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s_count = scn.model.state_count;

    let anchor = construct_reward_weighted_fdvf(scn)?;
    let base_theta = anchor.theta.clone().expect("reward-weighted solution carries parameters");
    let mut value_members = vec![anchor.value];
    for _ in 0..spec.perturbations {
        let steps: Vec<StepFunction> = base_theta
            .iter()
            .map(|theta| {
                let noise = nalgebra::DVector::from_fn(s_count, |_, _| {
                    spec.magnitude * (2.0 * rng.random::<f64>() - 1.0)
                });
                StepFunction::OutcomeLinear {
                    theta: theta + noise,
                    weighting: crate::stepfn::FutureWeighting::InverseZReward,
                }
            })
            .collect();
        value_members.push(ValueFunction { steps });
    }
    let vclass = ValueClass::from_members(scn, value_members);

    let mut xi_members = Vec::with_capacity(vclass.len());
    for dense in &vclass.tables {
        let latent = bellman_residual_s_dense(scn, dense)?;
        let projected = crate::residual::project_latent_residual(scn, &latent);
        xi_members.push(HistoryFunction {
            steps: projected.into_iter().map(StepFunction::Dense).collect(),
        });
    }
    let xiclass = HistoryClass::from_members(scn, xi_members);

    let weights = construct_history_weights(scn)?;
    let base_w_theta = weights.theta.clone();
    let mut w_members = vec![weights.weights];
    for _ in 0..spec.perturbations {
        let steps: Vec<StepFunction> = base_w_theta
            .iter()
            .map(|theta| {
                let noise = nalgebra::DVector::from_fn(s_count, |_, _| {
                    spec.magnitude * (2.0 * rng.random::<f64>() - 1.0)
                });
                StepFunction::BeliefLinear { theta: theta + noise }
            })
            .collect();
        w_members.push(HistoryFunction { steps });
    }
    let wclass = HistoryClass::from_members(scn, w_members);

    Ok((vclass, xiclass, wclass))
}

/// Per-trajectory indices and ratios reused by every estimator.
pub struct PreparedData {
    /// `futures[i][h-1]`: id of the future starting at step h.
    pub futures: Vec<Vec<u64>>,
    pub histories: Vec<Vec<u64>>,
    pub mus: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<f64>>,
    pub n: usize,
}

pub fn prepare_data(scn: &Scenario, dataset: &TrajectoryDataset) -> Result<PreparedData> {
    let dims = scn.dims();
    let n = dataset.len();
    let mut futures = Vec::with_capacity(n);
    let mut histories = Vec::with_capacity(n);
    let mut mus = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for (i, t) in dataset.trajectories.iter().enumerate() {
        let (hist, fut) = episode_indices(&dims, &t.obs, &t.acts)?;
        let mut mu = Vec::with_capacity(t.horizon());
        for (hi, step) in t.steps().enumerate() {
            let pe = scn.pi_e.prob(hi + 1, step.obs, step.act);
            if step.bprob == 0.0 {
                if pe > 0.0 {
                    return Err(Error::DataCoverage {
                        trajectory: i,
                        step: hi + 1,
                    });
                }
                mu.push(0.0);
            } else {
                mu.push(pe / step.bprob);
            }
        }
        futures.push(fut);
        histories.push(hist);
        mus.push(mu);
        rewards.push(t.rews.clone());
    }
    Ok(PreparedData {
        futures,
        histories,
        mus,
        rewards,
        n,
    })
}

/// Empirical mean of `V(f_1)` for a dense step-1 table.
pub fn plug_in_estimate(data: &PreparedData, step1_table: &[f64]) -> f64 {
    data.futures
        .iter()
        .map(|fut| step1_table[fut[0] as usize])
        .sum::<f64>()
        / data.n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IsMode {
    FullTrajectory,
    PerDecision,
}

/// Importance-sampling baselines on logged probabilities.
pub fn is_estimate(data: &PreparedData, mode: IsMode) -> f64 {
    let mut total = 0.0;
    for i in 0..data.n {
        let horizon = data.mus[i].len();
        match mode {
            IsMode::FullTrajectory => {
                let weight: f64 = data.mus[i].iter().product();
                let ret: f64 = data.rewards[i].iter().sum();
                total += weight * ret;
            }
            IsMode::PerDecision => {
                let mut cum = 1.0;
                for h in 0..horizon {
                    cum *= data.mus[i][h];
                    total += cum * data.rewards[i][h];
                }
            }
        }
    }
    total / data.n as f64
}

/// Median-of-means configuration for the weight-based estimator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MomConfig {
    pub blocks: usize,
}

/// Default block count: `min(n, ceil(8 ln(2/delta)))`.
pub fn default_mom_blocks(n: usize, delta: f64) -> usize {
    n.min((8.0 * (2.0 / delta).ln()).ceil() as usize)
}

fn median_of_means(values: &[f64], blocks: usize) -> f64 {
    let n = values.len();
    let mut means = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let lo = b * n / blocks;
        let hi = (b + 1) * n / blocks;
        if hi > lo {
            means.push(values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64);
        }
    }
    means.sort_by(|a, b| a.partial_cmp(b).expect("block means are finite"));
    let m = means.len();
    if m % 2 == 1 {
        means[m / 2]
    } else {
        0.5 * (means[m / 2 - 1] + means[m / 2])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub estimate: f64,
    pub n: usize,
    pub selected_value: Option<usize>,
    pub selected_adversary: Option<usize>,
    /// Per-step losses at the selected pair.
    pub per_step_losses: Vec<f64>,
    pub bound: Option<BoundEvaluation>,
}

/// Per-trajectory, per-step temporal-difference terms
/// `mu_h (r_h + V(f_{h+1})) - V(f_h)` for every class member.
fn td_terms(data: &PreparedData, vclass: &ValueClass, horizon: usize) -> Vec<Vec<Vec<f64>>> {
    let mut terms = vec![vec![vec![0.0; vclass.len()]; horizon]; data.n];
    for i in 0..data.n {
        for h in 1..=horizon {
            for (vi, tables) in vclass.tables.iter().enumerate() {
                let v_next = if h < horizon {
                    tables[h][data.futures[i][h] as usize]
                } else {
                    0.0
                };
                let v_here = tables[h - 1][data.futures[i][h - 1] as usize];
                terms[i][h - 1][vi] = data.mus[i][h - 1] * (data.rewards[i][h - 1] + v_next) - v_here;
            }
        }
    }
    terms
}

/// Minimax estimator with an adversarial helper class: each pair is scored
/// by the empirical quadratic loss
/// `E_D[(mu (r + V') - V) xi - xi^2 / 2]` summed over steps; the value
/// member minimizing the worst helper is selected and evaluated plug-in
/// style. Ties break to the lowest index.
pub fn minimax_fdvf_estimate(
    scn: &Scenario,
    data: &PreparedData,
    vclass: &ValueClass,
    xiclass: &HistoryClass,
) -> Result<EstimateReport> {
    if vclass.is_empty() || xiclass.is_empty() {
        return Err(Error::EmptyClass);
    }
    let horizon = scn.horizon();
    let terms = td_terms(data, vclass, horizon);
    let mut best: Option<(usize, f64, usize, Vec<f64>)> = None;
    for vi in 0..vclass.len() {
        let mut worst: Option<(usize, f64, Vec<f64>)> = None;
        for xi in 0..xiclass.len() {
            let mut per_step = vec![0.0; horizon];
            for h in 1..=horizon {
                let table = &xiclass.tables[xi][h - 1];
                let mut acc = 0.0;
                for i in 0..data.n {
                    let x = table[data.histories[i][h - 1] as usize];
                    acc += terms[i][h - 1][vi] * x - 0.5 * x * x;
                }
                per_step[h - 1] = acc / data.n as f64;
            }
            let total: f64 = per_step.iter().sum();
            if worst.as_ref().is_none_or(|(_, w, _)| total > *w) {
                worst = Some((xi, total, per_step));
            }
        }
        let (xi, total, per_step) = worst.expect("helper class is nonempty");
        if best.as_ref().is_none_or(|(_, b, _, _)| total < *b) {
            best = Some((vi, total, xi, per_step));
        }
    }
    let (vi, _, xi, per_step) = best.expect("value class is nonempty");
    Ok(EstimateReport {
        estimator: "minimax".into(),
        estimate: plug_in_estimate(data, &vclass.tables[vi][0]),
        n: data.n,
        selected_value: Some(vi),
        selected_adversary: Some(xi),
        per_step_losses: per_step,
        bound: None,
    })
}

/// Weight-based estimator: each pair is scored by the absolute weighted
/// temporal-difference mean per step (optionally a median of block means),
/// summed over steps.
pub fn mis_estimate(
    scn: &Scenario,
    data: &PreparedData,
    vclass: &ValueClass,
    wclass: &HistoryClass,
    mom: Option<MomConfig>,
) -> Result<EstimateReport> {
    if vclass.is_empty() || wclass.is_empty() {
        return Err(Error::EmptyClass);
    }
    if let Some(cfg) = mom {
        if cfg.blocks > data.n || cfg.blocks == 0 {
            return Err(Error::MedianOfMeans {
                blocks: cfg.blocks,
                samples: data.n,
            });
        }
    }
    let horizon = scn.horizon();
    let terms = td_terms(data, vclass, horizon);
    let mut scratch = vec![0.0; data.n];
    let mut best: Option<(usize, f64, usize, Vec<f64>)> = None;
    for vi in 0..vclass.len() {
        let mut worst: Option<(usize, f64, Vec<f64>)> = None;
        for wi in 0..wclass.len() {
            let mut per_step = vec![0.0; horizon];
            for h in 1..=horizon {
                let table = &wclass.tables[wi][h - 1];
                match mom {
                    None => {
                        let mut acc = 0.0;
                        for i in 0..data.n {
                            acc += table[data.histories[i][h - 1] as usize] * terms[i][h - 1][vi];
                        }
                        per_step[h - 1] = acc / data.n as f64;
                    }
                    Some(cfg) => {
                        for i in 0..data.n {
                            scratch[i] = table[data.histories[i][h - 1] as usize] * terms[i][h - 1][vi];
                        }
                        per_step[h - 1] = median_of_means(&scratch, cfg.blocks);
                    }
                }
            }
            let total: f64 = per_step.iter().map(|l| l.abs()).sum();
            if worst.as_ref().is_none_or(|(_, w, _)| total > *w) {
                worst = Some((wi, total, per_step));
            }
        }
        let (wi, total, per_step) = worst.expect("weight class is nonempty");
        if best.as_ref().is_none_or(|(_, b, _, _)| total < *b) {
            best = Some((vi, total, wi, per_step));
        }
    }
    let (vi, _, wi, per_step) = best.expect("value class is nonempty");
    Ok(EstimateReport {
        estimator: if mom.is_some() { "mis-mom".into() } else { "mis".into() },
        estimate: plug_in_estimate(data, &vclass.tables[vi][0]),
        n: data.n,
        selected_value: Some(vi),
        selected_adversary: Some(wi),
        per_step_losses: per_step,
        bound: None,
    })
}

/// Exact expectation of the history residual paired with a helper table:
/// the population value of one loss term.
fn population_pair_loss(scn: &Scenario, residual: &[Vec<f64>], helper: &[Vec<f64>], quadratic: bool) -> Vec<f64> {
    (1..=scn.horizon())
        .map(|h| {
            let alg = scn.algebra(h);
            (0..alg.history_count())
                .map(|tau| {
                    let d = alg.behavior_history_marginal[tau];
                    if d == 0.0 {
                        return 0.0;
                    }
                    let x = helper[h - 1][tau];
                    let r = residual[h - 1][tau];
                    if quadratic {
                        d * (r * x - 0.5 * x * x)
                    } else {
                        d * r * x
                    }
                })
                .sum()
        })
        .collect()
}

fn class_residuals(scn: &Scenario, vclass: &ValueClass) -> Result<Vec<Vec<Vec<f64>>>> {
    vclass
        .tables
        .iter()
        .map(|dense| {
            let latent = bellman_residual_s_dense(scn, dense)?;
            Ok(crate::residual::project_latent_residual(scn, &latent))
        })
        .collect()
}

/// Population (exact-expectation) version of [`minimax_fdvf_estimate`]: the
/// selected member has zero population objective whenever the class contains
/// an exact solution, and its plug-in value is the true policy value.
pub fn minimax_population(scn: &Scenario, vclass: &ValueClass, xiclass: &HistoryClass) -> Result<EstimateReport> {
    if vclass.is_empty() || xiclass.is_empty() {
        return Err(Error::EmptyClass);
    }
    let residuals = class_residuals(scn, vclass)?;
    let mut best: Option<(usize, f64, usize, Vec<f64>)> = None;
    for vi in 0..vclass.len() {
        let mut worst: Option<(usize, f64, Vec<f64>)> = None;
        for xi in 0..xiclass.len() {
            let per_step = population_pair_loss(scn, &residuals[vi], &xiclass.tables[xi], true);
            let total: f64 = per_step.iter().sum();
            if worst.as_ref().is_none_or(|(_, w, _)| total > *w) {
                worst = Some((xi, total, per_step));
            }
        }
        let (xi, total, per_step) = worst.expect("helper class is nonempty");
        if best.as_ref().is_none_or(|(_, b, _, _)| total < *b) {
            best = Some((vi, total, xi, per_step));
        }
    }
    let (vi, _, xi, per_step) = best.expect("value class is nonempty");
    Ok(EstimateReport {
        estimator: "minimax-population".into(),
        estimate: scn.behavior_mean_initial(&vclass.tables[vi][0]),
        n: 0,
        selected_value: Some(vi),
        selected_adversary: Some(xi),
        per_step_losses: per_step,
        bound: None,
    })
}

/// Population version of [`mis_estimate`].
pub fn mis_population(scn: &Scenario, vclass: &ValueClass, wclass: &HistoryClass) -> Result<EstimateReport> {
    if vclass.is_empty() || wclass.is_empty() {
        return Err(Error::EmptyClass);
    }
    let residuals = class_residuals(scn, vclass)?;
    let mut best: Option<(usize, f64, usize, Vec<f64>)> = None;
    for vi in 0..vclass.len() {
        let mut worst: Option<(usize, f64, Vec<f64>)> = None;
        for wi in 0..wclass.len() {
            let per_step = population_pair_loss(scn, &residuals[vi], &wclass.tables[wi], false);
            let total: f64 = per_step.iter().map(|l| l.abs()).sum();
            if worst.as_ref().is_none_or(|(_, w, _)| total > *w) {
                worst = Some((wi, total, per_step));
            }
        }
        let (wi, total, per_step) = worst.expect("weight class is nonempty");
        if best.as_ref().is_none_or(|(_, b, _, _)| total < *b) {
            best = Some((vi, total, wi, per_step));
        }
    }
    let (vi, _, wi, per_step) = best.expect("value class is nonempty");
    Ok(EstimateReport {
        estimator: "mis-population".into(),
        estimate: scn.behavior_mean_initial(&vclass.tables[vi][0]),
        n: 0,
        selected_value: Some(vi),
        selected_adversary: Some(wi),
        per_step_losses: per_step,
        bound: None,
    })
}

/// Exact approximation-error surrogates for the weight-based estimator.
///
/// The first term is the exact minimax objective over the classes. The
/// second evaluates the weight-class error at the best single member rather
/// than over the span of the class, so it upper-bounds the span infimum;
/// reports carry this flag.
pub fn assumption_surrogates(scn: &Scenario, vclass: &ValueClass, wclass: &HistoryClass) -> Result<(f64, f64)> {
    if vclass.is_empty() || wclass.is_empty() {
        return Err(Error::EmptyClass);
    }
    let residuals = class_residuals(scn, vclass)?;
    let mut eps_v = f64::INFINITY;
    for residual in &residuals {
        let mut worst = 0.0_f64;
        for wi in 0..wclass.len() {
            let total: f64 = population_pair_loss(scn, residual, &wclass.tables[wi], false)
                .iter()
                .sum();
            worst = worst.max(total.abs());
        }
        eps_v = eps_v.min(worst);
    }

    let star = construct_history_weights(scn)?;
    let star_tables = star.weights.to_dense(&scn.algebras);
    let mut eps_w = f64::INFINITY;
    for wi in 0..wclass.len() {
        let diff: Vec<Vec<f64>> = star_tables
            .iter()
            .zip(wclass.tables[wi].iter())
            .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x - y).collect())
            .collect();
        let mut worst = 0.0_f64;
        for residual in &residuals {
            let total: f64 = population_pair_loss(scn, residual, &diff, false).iter().sum();
            worst = worst.max(total.abs());
        }
        eps_w = eps_w.min(worst);
    }
    Ok((eps_v, eps_w))
}
