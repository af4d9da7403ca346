//! Exact transition model of the empty room, extracted by simulating every
//! (state, action) pair once.

use nalgebra::{DMatrix, DVector};

use super::{state_cell, Action, EmptyRoom, EmptyRoomConfig, N_STATES};

/// Tabular model: per-action transition matrices, the uniform random policy
/// chain, its reward vector, and the blocked-move flags.
#[derive(Clone, Debug)]
pub struct ExactModel {
    pub cfg: EmptyRoomConfig,
    /// Interior cells in state-index order.
    pub states: Vec<(usize, usize)>,
    /// One row-stochastic 49x49 matrix per action.
    pub p_action: Vec<DMatrix<f64>>,
    /// Mean of the four action matrices.
    pub p_policy: DMatrix<f64>,
    /// Expected one-step reward under the uniform policy.
    pub reward_policy: DVector<f64>,
    /// Deterministic successor per (state, action).
    pub next_state: Vec<[usize; 4]>,
    /// Reward per (state, action).
    pub reward_sa: Vec<[f64; 4]>,
    /// Blocked flag per (state, action).
    pub blocked: Vec<[bool; 4]>,
}

impl ExactModel {
    pub fn build(cfg: &EmptyRoomConfig) -> Self {
        let mut env = EmptyRoom::new(cfg.clone(), 0);
        let states: Vec<(usize, usize)> = (0..N_STATES).map(state_cell).collect();
        let mut p_action = vec![DMatrix::zeros(N_STATES, N_STATES); 4];
        let mut next_state = vec![[0usize; 4]; N_STATES];
        let mut reward_sa = vec![[0.0f64; 4]; N_STATES];
        let mut blocked = vec![[false; 4]; N_STATES];

        for (s, &cell) in states.iter().enumerate() {
            for action in Action::ALL {
                env.set_position(cell);
                let outcome = env.step(action);
                let s_next = env.state_index();
                let a = action.index();
                p_action[a][(s, s_next)] = 1.0;
                next_state[s][a] = s_next;
                reward_sa[s][a] = outcome.reward;
                blocked[s][a] = outcome.blocked;
            }
        }

        let mut p_policy = DMatrix::zeros(N_STATES, N_STATES);
        for p in &p_action {
            p_policy += p;
        }
        p_policy /= 4.0;

        let reward_policy = DVector::from_fn(N_STATES, |s, _| {
            reward_sa[s].iter().sum::<f64>() / 4.0
        });

        ExactModel {
            cfg: cfg.clone(),
            states,
            p_action,
            p_policy,
            reward_policy,
            next_state,
            reward_sa,
            blocked,
        }
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }
}
