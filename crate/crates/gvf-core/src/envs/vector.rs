//! Lock-step batch of independent environment copies, one per actor.

use nalgebra::DMatrix;

use super::{Action, EmptyRoom, EmptyRoomConfig, StepOutcome, OBS_LEN};
use crate::rng::{derive_seed, stream};

#[derive(Clone, Debug)]
pub struct VectorEnv {
    envs: Vec<EmptyRoom>,
}

impl VectorEnv {
    /// `n_actors` copies with independent per-actor streams derived from
    /// `seed`.
    pub fn new(cfg: &EmptyRoomConfig, n_actors: usize, seed: u64) -> Self {
        assert!(n_actors >= 1);
        let seeds: Vec<u64> = (0..n_actors)
            .map(|i| derive_seed(seed, stream::ENV ^ (i as u64) << 8))
            .collect();
        Self::with_seeds(cfg, &seeds)
    }

    /// Explicit per-actor seeds (identical seeds give identical copies).
    pub fn with_seeds(cfg: &EmptyRoomConfig, seeds: &[u64]) -> Self {
        assert!(!seeds.is_empty());
        VectorEnv {
            envs: seeds
                .iter()
                .map(|&s| EmptyRoom::new(cfg.clone(), s))
                .collect(),
        }
    }

    pub fn n_actors(&self) -> usize {
        self.envs.len()
    }

    pub fn reset_all(&mut self) {
        for env in &mut self.envs {
            env.reset();
        }
    }

    /// Steps every actor, in actor-index order.
    pub fn step(&mut self, actions: &[Action]) -> Vec<StepOutcome> {
        assert_eq!(actions.len(), self.envs.len());
        self.envs
            .iter_mut()
            .zip(actions)
            .map(|(env, &a)| env.step(a))
            .collect()
    }

    /// Current observations as columns of a (OBS_LEN x n_actors) matrix.
    pub fn observations(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(OBS_LEN, self.envs.len());
        for (i, env) in self.envs.iter().enumerate() {
            m.column_mut(i).copy_from_slice(&env.observation());
        }
        m
    }

    pub fn actor(&self, i: usize) -> &EmptyRoom {
        &self.envs[i]
    }
}
