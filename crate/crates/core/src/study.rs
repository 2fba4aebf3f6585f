//! Seeded convergence and comparison studies over a grid of sample sizes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverage::{bound_evaluation, coverage_report, BoundInputs, BoundKind};
use crate::error::{Error, Result};
use crate::estimators::{
    assumption_surrogates, build_classes, is_estimate, minimax_fdvf_estimate, mis_estimate,
    plug_in_estimate, prepare_data, ClassSpec, HistoryClass, IsMode, MomConfig, ValueClass,
};
use crate::exact::Scenario;
use crate::fixtures::{generate_fixture, FixtureKind, FixtureParams};
use crate::simulate::sample_dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorChoice {
    #[serde(rename = "minimax")]
    Minimax,
    #[serde(rename = "mis")]
    Mis,
    #[serde(rename = "mis-mom")]
    MisMom,
    #[serde(rename = "is")]
    Is,
    #[serde(rename = "pd-is")]
    PdIs,
    #[serde(rename = "plugin")]
    Plugin,
}

impl EstimatorChoice {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "minimax" => Self::Minimax,
            "mis" => Self::Mis,
            "mis-mom" => Self::MisMom,
            "is" => Self::Is,
            "pd-is" => Self::PdIs,
            "plugin" => Self::Plugin,
            other => return Err(Error::InvalidArgument(format!("unknown estimator '{other}'"))),
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Minimax => "minimax",
            Self::Mis => "mis",
            Self::MisMom => "mis-mom",
            Self::Is => "is",
            Self::PdIs => "pd-is",
            Self::Plugin => "plugin",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Fixture kind name (`bandit`, `random`, `chain`, ...).
    pub fixture: String,
    #[serde(default)]
    pub fixture_seed: u64,
    #[serde(default)]
    pub params: Option<FixtureParams>,
    pub n_grid: Vec<usize>,
    pub seed_count: usize,
    pub estimators: Vec<String>,
    pub root_seed: u64,
    #[serde(default)]
    pub class: ClassSpec,
    #[serde(default)]
    pub mom_blocks: Option<usize>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_constant")]
    pub bound_constant: f64,
    #[serde(default)]
    pub budget: Option<u64>,
}

fn default_delta() -> f64 {
    0.05
}

fn default_constant() -> f64 {
    1.0
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyPoint {
    pub n: usize,
    pub mean: f64,
    pub rmse: f64,
    pub bound_thm2: f64,
    pub bound_thm3: f64,
    pub estimates: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorCurve {
    pub estimator: String,
    /// Fitted slope of `ln rmse` against `ln n`.
    pub slope: f64,
    pub points: Vec<StudyPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyResult {
    pub fixture: String,
    pub true_value: f64,
    pub seed_count: usize,
    pub curves: Vec<EstimatorCurve>,
}

impl StudyResult {
    pub fn curve(&self, estimator: &str) -> Option<&EstimatorCurve> {
        self.curves.iter().find(|c| c.estimator == estimator)
    }
}

fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(x, _)| x.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| y.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys.iter()).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    let var: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    cov / var
}

struct StudyContext {
    scenario: Scenario,
    vclass: ValueClass,
    xiclass: HistoryClass,
    wclass: HistoryClass,
}

fn estimate_once(
    ctx: &StudyContext,
    choice: EstimatorChoice,
    data: &crate::estimators::PreparedData,
    mom_blocks: Option<usize>,
) -> Result<f64> {
    Ok(match choice {
        EstimatorChoice::Minimax => {
            minimax_fdvf_estimate(&ctx.scenario, data, &ctx.vclass, &ctx.xiclass)?.estimate
        }
        EstimatorChoice::Mis => mis_estimate(&ctx.scenario, data, &ctx.vclass, &ctx.wclass, None)?.estimate,
        EstimatorChoice::MisMom => {
            let blocks = mom_blocks
                .unwrap_or_else(|| crate::estimators::default_mom_blocks(data.n, 0.05));
            mis_estimate(&ctx.scenario, data, &ctx.vclass, &ctx.wclass, Some(MomConfig { blocks }))?.estimate
        }
        EstimatorChoice::Is => is_estimate(data, IsMode::FullTrajectory),
        EstimatorChoice::PdIs => is_estimate(data, IsMode::PerDecision),
        EstimatorChoice::Plugin => plug_in_estimate(data, &ctx.vclass.tables[0][0]),
    })
}

/// Run the configured estimators over the sample-size grid with
/// `seed_count` independent datasets per size. Fully deterministic for a
/// fixed config, independent of thread count: seed `s` uses dataset seed
/// `root_seed + s`, and all reductions happen in index order.
pub fn run_convergence_study(config: &StudyConfig) -> Result<StudyResult> {
    let kind = FixtureKind::parse(&config.fixture)?;
    let params = config.params.clone().unwrap_or_default();
    let fixture = generate_fixture(kind, &params, config.fixture_seed)?;
    let budget = config.budget.unwrap_or(crate::tol::DEFAULT_BUDGET);
    let scenario = fixture.scenario(budget)?;
    let (vclass, xiclass, wclass) = build_classes(&scenario, &config.class)?;
    let (eps_v, eps_w) = assumption_surrogates(&scenario, &vclass, &wclass)?;
    let coverage = coverage_report(&scenario)?;
    let true_value = scenario.true_value();
    let estimators: Vec<EstimatorChoice> = config
        .estimators
        .iter()
        .map(|name| EstimatorChoice::parse(name))
        .collect::<Result<_>>()?;
    let ctx = StudyContext {
        scenario,
        vclass,
        xiclass,
        wclass,
    };

    // estimates[grid][estimator][seed]
    let mut estimates: Vec<Vec<Vec<f64>>> = Vec::with_capacity(config.n_grid.len());
    for &n in &config.n_grid {
        let per_seed: Vec<Vec<f64>> = (0..config.seed_count as u64)
            .into_par_iter()
            .map(|s| {
                let dataset = sample_dataset(
                    &ctx.scenario.model,
                    &ctx.scenario.pi_b,
                    n,
                    config.root_seed.wrapping_add(s),
                );
                let data = prepare_data(&ctx.scenario, &dataset)?;
                estimators
                    .iter()
                    .map(|&choice| estimate_once(&ctx, choice, &data, config.mom_blocks))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut by_estimator = vec![Vec::with_capacity(config.seed_count); estimators.len()];
        for seed_row in per_seed {
            for (ei, est) in seed_row.into_iter().enumerate() {
                by_estimator[ei].push(est);
            }
        }
        estimates.push(by_estimator);
    }

    let bound_inputs = |n: usize, adversary: usize| BoundInputs {
        n,
        delta: config.delta,
        class_v: ctx.vclass.len(),
        class_adversary: adversary,
        sup_v: ctx.vclass.sup_norm,
        sup_adversary: ctx.xiclass.sup_norm,
        eps_v,
        eps_w,
        constant: config.bound_constant,
        iv: None,
        dr: None,
    };

    let horizon = ctx.scenario.horizon();
    let curves = estimators
        .iter()
        .enumerate()
        .map(|(ei, choice)| {
            let points: Vec<StudyPoint> = config
                .n_grid
                .iter()
                .enumerate()
                .map(|(ni, &n)| {
                    let ests = &estimates[ni][ei];
                    let mean = ests.iter().sum::<f64>() / ests.len() as f64;
                    let mse = ests.iter().map(|e| (e - true_value) * (e - true_value)).sum::<f64>()
                        / ests.len() as f64;
                    StudyPoint {
                        n,
                        mean,
                        rmse: mse.sqrt(),
                        bound_thm2: bound_evaluation(
                            BoundKind::Thm2,
                            &coverage,
                            horizon,
                            bound_inputs(n, ctx.xiclass.len()),
                        )
                        .value,
                        bound_thm3: bound_evaluation(
                            BoundKind::Thm3,
                            &coverage,
                            horizon,
                            bound_inputs(n, ctx.wclass.len()),
                        )
                        .value,
                        estimates: ests.clone(),
                    }
                })
                .collect();
            let slope = log_log_slope(
                &points
                    .iter()
                    .map(|p| (p.n as f64, p.rmse.max(1e-300)))
                    .collect::<Vec<_>>(),
            );
            EstimatorCurve {
                estimator: choice.label().into(),
                slope,
                points,
            }
        })
        .collect();

    Ok(StudyResult {
        fixture: fixture.name.clone(),
        true_value,
        seed_count: config.seed_count,
        curves,
    })
}
