//! Seeded trajectory sampling under the behavior policy, and dataset
//! persistence as JSONL.
//!
//! Every trajectory draws from its own counter-derived substream of the root
//! seed, so sampling is reproducible and order-independent under parallel
//! generation. Latent states are retained for diagnostics only: estimators
//! consume trajectories through [`Trajectory::steps`], which does not expose
//! them.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::pomdp::{MemorylessPolicy, TabularPomdp};

/// One logged episode: observations, actions, rewards, and the logged
/// behavior probability of each action taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub obs: Vec<usize>,
    pub acts: Vec<usize>,
    pub rews: Vec<f64>,
    pub bprobs: Vec<f64>,
    /// Diagnostic-only latent states; never persisted, never read by
    /// estimators.
    #[serde(skip)]
    latents: Option<Vec<usize>>,
}

/// The observable slice of one step.
#[derive(Debug, Clone, Copy)]
pub struct LoggedStep {
    pub obs: usize,
    pub act: usize,
    pub reward: f64,
    pub bprob: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.obs.len()
    }

    /// Observable view consumed by estimators.
    pub fn steps(&self) -> impl Iterator<Item = LoggedStep> + '_ {
        (0..self.obs.len()).map(|h| LoggedStep {
            obs: self.obs[h],
            act: self.acts[h],
            reward: self.rews[h],
            bprob: self.bprobs[h],
        })
    }

    pub fn total_reward(&self) -> f64 {
        self.rews.iter().sum()
    }

    pub fn diagnostic_latents(&self) -> Option<&[usize]> {
        self.latents.as_deref()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetHeader {
    fingerprint: String,
    seed: u64,
    n: usize,
}

/// A seeded batch of behavior-policy episodes tied to a model fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub fingerprint: String,
    pub root_seed: u64,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

fn sample_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn sample_one(model: &TabularPomdp, pi_b: &MemorylessPolicy, root_seed: u64, index: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(index);
    let horizon = model.horizon;
    let mut obs = Vec::with_capacity(horizon);
    let mut acts = Vec::with_capacity(horizon);
    let mut rews = Vec::with_capacity(horizon);
    let mut bprobs = Vec::with_capacity(horizon);
    let mut latents = Vec::with_capacity(horizon);
    let mut s = sample_categorical(&mut rng, &model.d1);
    for h in 1..=horizon {
        latents.push(s);
        let o = sample_categorical(&mut rng, model.emission_row(h, s));
        let a = sample_categorical(&mut rng, pi_b.action_probs(h, o));
        obs.push(o);
        acts.push(a);
        rews.push(model.reward_at(h, o, a));
        bprobs.push(pi_b.prob(h, o, a));
        if h < horizon {
            s = sample_categorical(&mut rng, model.transition_row(h, s, a));
        }
    }
    Trajectory {
        obs,
        acts,
        rews,
        bprobs,
        latents: Some(latents),
    }
}

/// Sample `n` episodes under the behavior policy. Trajectory `i` uses the
/// substream `(root_seed, i)`, so the result is bit-identical across runs
/// and thread counts.
pub fn sample_dataset(
    model: &TabularPomdp,
    pi_b: &MemorylessPolicy,
    n: usize,
    root_seed: u64,
) -> TrajectoryDataset {
    let trajectories: Vec<Trajectory> = (0..n as u64)
        .into_par_iter()
        .map(|i| sample_one(model, pi_b, root_seed, i))
        .collect();
    TrajectoryDataset {
        fingerprint: model.fingerprint(),
        root_seed,
        trajectories,
    }
}

/// Write as JSONL: a header line with fingerprint/seed/count, then one
/// trajectory per line.
pub fn write_dataset(dataset: &TrajectoryDataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = DatasetHeader {
        fingerprint: dataset.fingerprint.clone(),
        seed: dataset.root_seed,
        n: dataset.len(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for t in &dataset.trajectories {
        writeln!(out, "{}", serde_json::to_string(t)?)?;
    }
    out.flush()?;
    Ok(())
}

/// Read a JSONL dataset. When a model is supplied, its fingerprint must
/// match the one recorded in the header.
pub fn read_dataset(path: &Path, expected_model: Option<&TabularPomdp>) -> Result<TrajectoryDataset> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header_line = lines.next().ok_or(Error::Parse {
        line: 1,
        detail: "missing header line".into(),
    })??;
    let header: DatasetHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        line: 1,
        detail: e.to_string(),
    })?;
    if let Some(model) = expected_model {
        let expected = model.fingerprint();
        if expected != header.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected,
                found: header.fingerprint,
            });
        }
    }
    let mut trajectories = Vec::with_capacity(header.n);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let t: Trajectory = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 2,
            detail: e.to_string(),
        })?;
        trajectories.push(t);
    }
    if trajectories.len() != header.n {
        return Err(Error::Parse {
            line: trajectories.len() + 1,
            detail: format!("expected {} trajectories, file has {}", header.n, trajectories.len()),
        });
    }
    Ok(TrajectoryDataset {
        fingerprint: header.fingerprint,
        root_seed: header.seed,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::Scenario;
    use crate::fixtures::{bandit_fixture, random_fixture, FixtureParams};
    use crate::index::{episode_indices, SpaceDims};
    use crate::tol::DEFAULT_BUDGET;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn deterministic_model_yields_identical_trajectories() {
        let model = TabularPomdp {
            horizon: 2,
            state_count: 1,
            obs_count: 1,
            action_count: 1,
            d1: vec![1.0],
            transition: vec![vec![vec![vec![1.0]]]],
            emission: vec![vec![vec![1.0]]; 2],
            reward: vec![vec![vec![0.3]]; 2],
        };
        let pi = MemorylessPolicy::uniform(2, 1, 1);
        let data = sample_dataset(&model, &pi, 50, 7);
        for t in &data.trajectories {
            assert_eq!(t, &data.trajectories[0]);
            assert_eq!(t.total_reward(), 0.6);
        }
    }

    #[test]
    fn bandit_mean_return_matches_exact_value() {
        let fx = bandit_fixture();
        let n = 100_000;
        let data = sample_dataset(&fx.model, &fx.pi_b, n, 11);
        let mean: f64 = data.trajectories.iter().map(|t| t.total_reward()).sum::<f64>() / n as f64;
        // Returns are 0.2 or 0.8 with equal probability: variance 0.09.
        let band = 3.0 * (0.09_f64 / n as f64).sqrt();
        assert!((mean - 0.5).abs() < band, "mean {mean} outside {band}");
    }

    #[test]
    fn logged_probabilities_and_rewards_match_tables() {
        let fx = random_fixture(&FixtureParams::small(), 71).unwrap();
        let data = sample_dataset(&fx.model, &fx.pi_b, 200, 3);
        for t in &data.trajectories {
            for (h, step) in t.steps().enumerate() {
                assert_eq!(step.reward, fx.model.reward_at(h + 1, step.obs, step.act));
                assert_eq!(step.bprob, fx.pi_b.prob(h + 1, step.obs, step.act));
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let fx = random_fixture(&FixtureParams::small(), 72).unwrap();
        let a = sample_dataset(&fx.model, &fx.pi_b, 500, 9);
        let b = sample_dataset(&fx.model, &fx.pi_b, 500, 9);
        assert_eq!(a, b);
    }

    #[test]
    fn roundtrip_and_byte_identity() {
        let dir = tempfile::tempdir().unwrap();
        let fx = random_fixture(&FixtureParams::small(), 73).unwrap();
        let data = sample_dataset(&fx.model, &fx.pi_b, 100, 13);
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        write_dataset(&data, &p1).unwrap();
        let back = read_dataset(&p1, Some(&fx.model)).unwrap();
        assert_eq!(back.fingerprint, data.fingerprint);
        assert_eq!(back.root_seed, data.root_seed);
        // Latents are diagnostic-only and dropped by persistence.
        for (a, b) in back.trajectories.iter().zip(data.trajectories.iter()) {
            assert_eq!(a.obs, b.obs);
            assert_eq!(a.acts, b.acts);
            assert_eq!(a.rews, b.rews);
            assert_eq!(a.bprobs, b.bprobs);
            assert!(a.diagnostic_latents().is_none());
            assert!(b.diagnostic_latents().is_some());
        }
        let regenerated = sample_dataset(&fx.model, &fx.pi_b, 100, 13);
        write_dataset(&regenerated, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let fx = bandit_fixture();
        let data = sample_dataset(&fx.model, &fx.pi_b, 5, 1);
        let path = dir.path().join("d.jsonl");
        write_dataset(&data, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let truncated: Vec<&str> = text.lines().take(4).collect();
        std::fs::write(&path, truncated.join("\n")).unwrap();
        match read_dataset(&path, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn fingerprint_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let fx = bandit_fixture();
        let data = sample_dataset(&fx.model, &fx.pi_b, 5, 1);
        let path = dir.path().join("d.jsonl");
        write_dataset(&data, &path).unwrap();
        let other = random_fixture(&FixtureParams::small(), 74).unwrap();
        assert!(matches!(
            read_dataset(&path, Some(&other.model)),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn first_step_observation_frequencies_match_marginal() {
        let fx = random_fixture(&FixtureParams::small(), 75).unwrap();
        let n = 100_000;
        let data = sample_dataset(&fx.model, &fx.pi_b, n, 21);
        // Exact marginal of o_1.
        let mut expected = vec![0.0; fx.model.obs_count];
        for (s, &p) in fx.model.d1.iter().enumerate() {
            for (o, &po) in fx.model.emission_row(1, s).iter().enumerate() {
                expected[o] += p * po;
            }
        }
        let mut counts = vec![0usize; fx.model.obs_count];
        for t in &data.trajectories {
            counts[t.obs[0]] += 1;
        }
        for o in 0..fx.model.obs_count {
            let p = expected[o];
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            let freq = counts[o] as f64 / n as f64;
            assert!((freq - p).abs() < 3.0 * sd + 1e-9, "obs {o}: {freq} vs {p}");
        }
    }

    #[test]
    fn full_trajectory_distribution_passes_chi_square() {
        let fx = random_fixture(&FixtureParams::with_dims(2, 2, 2, 2), 76).unwrap();
        let scn = Scenario::build(fx.model.clone(), fx.pi_b.clone(), fx.pi_b.clone(), DEFAULT_BUDGET).unwrap();
        let dims = SpaceDims::of(&fx.model);
        let n = 100_000;
        let data = sample_dataset(&fx.model, &fx.pi_b, n, 31);
        let cells = dims.future_count(1) as usize;
        let mut counts = vec![0usize; cells];
        for t in &data.trajectories {
            let (_, futures) = episode_indices(&dims, &t.obs, &t.acts).unwrap();
            counts[futures[0] as usize] += 1;
        }
        // The step-1 future marginal is exactly the trajectory distribution.
        let expected = &scn.algebra(1).future_marginal;
        let mut stat = 0.0;
        let mut dof = 0usize;
        for f in 0..cells {
            let e = expected[f] * n as f64;
            assert!(e > 5.0, "cell {f} too small for the test setup");
            let d = counts[f] as f64 - e;
            stat += d * d / e;
            dof += 1;
        }
        let chi = ChiSquared::new((dof - 1) as f64).unwrap();
        let p_value = 1.0 - chi.cdf(stat);
        assert!(p_value > 0.001, "chi-square stat {stat}, p {p_value}");
    }
}
