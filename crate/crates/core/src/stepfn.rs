//! Step-indexed function families over futures and histories.
//!
//! Functions come in a dense-table form or a feature-linear form. For futures
//! the feature vector is the outcome column `u(f)` rescaled by one of the
//! weighting schemes below; for histories it is the belief column `b(tau)`.

use nalgebra::DVector;

use crate::exact::StepAlgebra;

/// Rescaling applied to the outcome column in the feature-linear form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FutureWeighting {
    /// `V(f) = <u(f), theta>`.
    Plain,
    /// `V(f) = <u(f), theta> / Z(f)`; zero where `Z(f) = 0`.
    InverseZ,
    /// `V(f) = R^+(f) <u(f), theta> / Z(f)`; zero where `Z(f) = 0`.
    InverseZReward,
}

/// One step's function, over futures or histories depending on context.
#[derive(Debug, Clone)]
pub enum StepFunction {
    Dense(Vec<f64>),
    OutcomeLinear {
        theta: DVector<f64>,
        weighting: FutureWeighting,
    },
    BeliefLinear {
        theta: DVector<f64>,
    },
}

impl StepFunction {
    pub fn zero_dense(len: usize) -> Self {
        StepFunction::Dense(vec![0.0; len])
    }

    /// Evaluate on the future with id `f` at this step.
    pub fn eval_future(&self, alg: &StepAlgebra, f: u64) -> f64 {
        let f = f as usize;
        match self {
            StepFunction::Dense(table) => table[f],
            StepFunction::OutcomeLinear { theta, weighting } => {
                let dot = alg.outcomes.column(f).dot(theta);
                match weighting {
                    FutureWeighting::Plain => dot,
                    FutureWeighting::InverseZ => {
                        if alg.z[f] == 0.0 {
                            0.0
                        } else {
                            dot / alg.z[f]
                        }
                    }
                    FutureWeighting::InverseZReward => {
                        if alg.z[f] == 0.0 {
                            0.0
                        } else {
                            alg.reward_to_go[f] * dot / alg.z[f]
                        }
                    }
                }
            }
            StepFunction::BeliefLinear { .. } => panic!("history function evaluated on a future"),
        }
    }

    /// Evaluate on the history with id `tau` at this step.
    pub fn eval_history(&self, alg: &StepAlgebra, tau: u64) -> f64 {
        let tau = tau as usize;
        match self {
            StepFunction::Dense(table) => table[tau],
            StepFunction::BeliefLinear { theta } => alg.beliefs.column(tau).dot(theta),
            StepFunction::OutcomeLinear { .. } => panic!("future function evaluated on a history"),
        }
    }

    pub fn materialize_futures(&self, alg: &StepAlgebra) -> Vec<f64> {
        (0..alg.future_count() as u64).map(|f| self.eval_future(alg, f)).collect()
    }

    pub fn materialize_histories(&self, alg: &StepAlgebra) -> Vec<f64> {
        (0..alg.history_count() as u64).map(|t| self.eval_history(alg, t)).collect()
    }
}

/// A function over the full future domain, one entry per step `h = 1..=H`.
/// The value after the final step is identically zero by convention.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    pub steps: Vec<StepFunction>,
}

impl ValueFunction {
    pub fn zero(algebras: &[StepAlgebra]) -> Self {
        Self {
            steps: algebras.iter().map(|a| StepFunction::zero_dense(a.future_count())).collect(),
        }
    }

    pub fn eval(&self, algebras: &[StepAlgebra], h: usize, f: u64) -> f64 {
        self.steps[h - 1].eval_future(&algebras[h - 1], f)
    }

    /// Dense tables for every step.
    pub fn to_dense(&self, algebras: &[StepAlgebra]) -> Vec<Vec<f64>> {
        self.steps
            .iter()
            .zip(algebras.iter())
            .map(|(f, a)| f.materialize_futures(a))
            .collect()
    }

    /// Sup norm over futures that are reachable (`Z(f) > 0`) at any step.
    pub fn sup_norm(&self, algebras: &[StepAlgebra]) -> f64 {
        self.per_step_sup(algebras).into_iter().fold(0.0, f64::max)
    }

    pub fn per_step_sup(&self, algebras: &[StepAlgebra]) -> Vec<f64> {
        self.steps
            .iter()
            .zip(algebras.iter())
            .map(|(func, alg)| {
                (0..alg.future_count() as u64)
                    .filter(|&f| alg.z[f as usize] > 0.0)
                    .map(|f| func.eval_future(alg, f).abs())
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// `Z_h`-weighted 2-norm per step: `sqrt(sum_f Z(f) V(f)^2)`.
    pub fn per_step_z_norm(&self, algebras: &[StepAlgebra]) -> Vec<f64> {
        self.steps
            .iter()
            .zip(algebras.iter())
            .map(|(func, alg)| {
                (0..alg.future_count() as u64)
                    .map(|f| {
                        let v = func.eval_future(alg, f);
                        alg.z[f as usize] * v * v
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Plain 2-norm per step.
    pub fn per_step_l2_norm(&self, algebras: &[StepAlgebra]) -> Vec<f64> {
        self.steps
            .iter()
            .zip(algebras.iter())
            .map(|(func, alg)| {
                (0..alg.future_count() as u64)
                    .map(|f| {
                        let v = func.eval_future(alg, f);
                        v * v
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

/// A function over the full history domain, one entry per step.
#[derive(Debug, Clone)]
pub struct HistoryFunction {
    pub steps: Vec<StepFunction>,
}

impl HistoryFunction {
    pub fn zero(algebras: &[StepAlgebra]) -> Self {
        Self {
            steps: algebras.iter().map(|a| StepFunction::zero_dense(a.history_count())).collect(),
        }
    }

    pub fn eval(&self, algebras: &[StepAlgebra], h: usize, tau: u64) -> f64 {
        self.steps[h - 1].eval_history(&algebras[h - 1], tau)
    }

    pub fn to_dense(&self, algebras: &[StepAlgebra]) -> Vec<Vec<f64>> {
        self.steps
            .iter()
            .zip(algebras.iter())
            .map(|(f, a)| f.materialize_histories(a))
            .collect()
    }

    /// Sup norm over histories reachable under either policy.
    pub fn sup_norm(&self, algebras: &[StepAlgebra]) -> f64 {
        self.steps
            .iter()
            .zip(algebras.iter())
            .map(|(func, alg)| {
                (0..alg.history_count() as u64)
                    .filter(|&t| alg.history_reachable[t as usize])
                    .map(|t| func.eval_history(alg, t).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// `d^{pi_b}`-weighted 2-norm per step.
    pub fn per_step_behavior_l2(&self, algebras: &[StepAlgebra]) -> Vec<f64> {
        self.steps
            .iter()
            .zip(algebras.iter())
            .map(|(func, alg)| {
                (0..alg.history_count() as u64)
                    .map(|t| {
                        let w = func.eval_history(alg, t);
                        alg.behavior_history_marginal[t as usize] * w * w
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{random_fixture, FixtureParams};
    use crate::tol::DEFAULT_BUDGET;

    #[test]
    fn dense_and_linear_forms_agree_once_materialized() {
        let fx = random_fixture(&FixtureParams::small(), 3).unwrap();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        for (h, alg) in scn.algebras.iter().enumerate() {
            let theta = DVector::from_fn(scn.model.state_count, |s, _| 0.3 + 0.1 * (s as f64 + h as f64));
            for weighting in [FutureWeighting::Plain, FutureWeighting::InverseZ, FutureWeighting::InverseZReward] {
                let linear = StepFunction::OutcomeLinear {
                    theta: theta.clone(),
                    weighting,
                };
                let dense = StepFunction::Dense(linear.materialize_futures(alg));
                for f in 0..alg.future_count() as u64 {
                    let a = linear.eval_future(alg, f);
                    let b = dense.eval_future(alg, f);
                    assert!((a - b).abs() < 1e-10);
                }
            }
            let linear = StepFunction::BeliefLinear { theta };
            let dense = StepFunction::Dense(linear.materialize_histories(alg));
            for t in 0..alg.history_count() as u64 {
                assert!((linear.eval_history(alg, t) - dense.eval_history(alg, t)).abs() < 1e-10);
            }
        }
    }
}
