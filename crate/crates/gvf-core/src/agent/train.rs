//! Training loops: TD policy evaluation under the fixed random policy, and
//! a synchronous advantage actor-critic for the control task. Both run
//! `n_actors` lock-step actors and update every `rollout_len` steps, with
//! separate optimizers for the RL loss and the answer loss.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{softmax, AgentNet, HeadLayout};
use crate::envs::{Action, EmptyRoomConfig, ExactModel, VectorEnv, N_STATES, OBS_LEN};
use crate::features::{FeatureError, FeatureExtractor};
use crate::oracle::{true_values, OracleError};
use crate::qnet::QuestionNetwork;
use crate::rng::{chacha, derive_seed, stream};
use crate::targets::{answer_loss, compute_targets, TargetError};
use crate::tinynn::{NetError, Optimizer, OptimizerKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_n_actors")]
    pub n_actors: usize,
    #[serde(default = "default_rollout_len")]
    pub rollout_len: usize,
    #[serde(default = "default_gamma_env")]
    pub gamma_env: f64,
    /// Optimizer for the answer loss and, unless overridden, the RL loss.
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// Optional separate optimizer for the RL loss.
    #[serde(default)]
    pub rl_optimizer: Option<OptimizerKind>,
    /// Mixing coefficient c: scales the answer-loss learning rate when the
    /// gradients are not stopped (end-to-end training). Ignored otherwise.
    #[serde(default = "default_one")]
    pub answer_lr_scale: f64,
    #[serde(default = "default_entropy_coef")]
    pub entropy_coef: f64,
    #[serde(default = "default_value_coef")]
    pub value_coef: f64,
    pub total_frames: u64,
    #[serde(default = "default_eval_period")]
    pub eval_period: u64,
    /// Filled in from the experiment seed during config resolution.
    #[serde(default)]
    pub seed: u64,
}

fn default_n_actors() -> usize {
    8
}
fn default_rollout_len() -> usize {
    8
}
fn default_gamma_env() -> f64 {
    0.98
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::adam(0.001)
}
fn default_one() -> f64 {
    1.0
}
fn default_entropy_coef() -> f64 {
    0.01
}
fn default_value_coef() -> f64 {
    0.5
}
fn default_eval_period() -> u64 {
    10_000
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Target(#[from] TargetError),
}

/// One metrics emission. `value_mse` is the mean squared error of the value
/// head against the true random-policy values over all 49 states.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub frames: u64,
    pub value_mse: f64,
    pub answer_loss: f64,
    /// Control mode only: mean policy entropy over the last rollout batch.
    pub policy_entropy: Option<f64>,
    /// Control mode only: average reward per frame since the previous row.
    pub avg_reward: Option<f64>,
}

fn validate(
    agent: &AgentNet,
    qnet: Option<&QuestionNetwork>,
    extractor: Option<&FeatureExtractor>,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    let mut problems = Vec::new();
    if cfg.n_actors == 0 {
        problems.push("n_actors must be at least 1".to_string());
    }
    if cfg.rollout_len == 0 {
        problems.push("rollout_len must be at least 1".to_string());
    }
    if !(0.0..1.0).contains(&cfg.gamma_env) {
        problems.push(format!("gamma_env {} outside [0, 1)", cfg.gamma_env));
    }
    if cfg.total_frames == 0 {
        problems.push("total_frames must be positive".to_string());
    }
    if cfg.eval_period == 0 {
        problems.push("eval_period must be positive".to_string());
    }
    if cfg.answer_lr_scale <= 0.0 {
        problems.push("answer_lr_scale must be positive".to_string());
    }
    if agent.obs_len() != OBS_LEN {
        problems.push(format!(
            "agent expects observations of length {}, environment provides {}",
            agent.obs_len(),
            OBS_LEN
        ));
    }
    match (qnet, extractor, &agent.answer_head) {
        (Some(net), Some(ext), Some(head)) => {
            if ext.count() != net.n_features {
                problems.push(format!(
                    "feature extractor provides {} features, network expects {}",
                    ext.count(),
                    net.n_features
                ));
            }
            if head.out_dim() != net.prediction_count() {
                problems.push(format!(
                    "answer head has {} outputs, network has {} predictions",
                    head.out_dim(),
                    net.prediction_count()
                ));
            }
            for name in &net.actions {
                if Action::from_name(name).is_none() {
                    problems.push(format!("network action \"{name}\" is not a grid action"));
                }
            }
        }
        (None, None, None) => {}
        _ => problems.push(
            "question network, feature extractor and answer head must be provided together"
                .to_string(),
        ),
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(TrainError::Config(problems.join("; ")))
    }
}

/// Environment action index -> network action index.
fn env_to_net_map(net: &QuestionNetwork) -> Vec<Option<usize>> {
    Action::ALL
        .iter()
        .map(|a| net.action_index(a.name()))
        .collect()
}

/// Observations of all 49 states as matrix columns, for the metric sweep.
fn all_state_observations() -> DMatrix<f64> {
    let mut m = DMatrix::zeros(OBS_LEN, N_STATES);
    for s in 0..N_STATES {
        m.column_mut(s)
            .copy_from_slice(&crate::envs::observation_for(crate::envs::state_cell(s)));
    }
    m
}

fn value_mse(agent: &AgentNet, state_obs: &DMatrix<f64>, truth: &[f64]) -> Result<f64, NetError> {
    let values = agent.values(state_obs)?;
    let n = truth.len() as f64;
    Ok(values
        .iter()
        .zip(truth)
        .map(|(v, t)| (v - t) * (v - t))
        .sum::<f64>()
        / n)
}

/// Rollout data gathered before one update. Column (t, actor) of `obs` is
/// `t * n_actors + actor`; the trailing actor-block holds the bootstrap
/// observations, so `col + n_actors` addresses the successor of `col`.
struct Rollout {
    obs: DMatrix<f64>,
    rewards: Vec<f64>,
    executed: Vec<usize>,
    features: Option<Vec<Vec<f64>>>,
}

impl Rollout {
    fn sample_cols(&self, n_actors: usize) -> usize {
        self.obs.ncols() - n_actors
    }
}

struct Optimizers {
    rl_head: Optimizer,
    rl_repr: Option<Optimizer>,
    answer_head: Option<Optimizer>,
    answer_repr: Option<Optimizer>,
}

impl Optimizers {
    fn new(agent: &AgentNet, cfg: &TrainConfig) -> Self {
        let rl_kind = cfg.rl_optimizer.unwrap_or(cfg.optimizer);
        let answer_kind = if agent.stop_gradient {
            cfg.optimizer
        } else {
            cfg.optimizer.scaled(cfg.answer_lr_scale)
        };
        Optimizers {
            rl_head: Optimizer::new(rl_kind, &agent.rl_head),
            rl_repr: (!agent.stop_gradient).then(|| Optimizer::new(rl_kind, &agent.repr)),
            answer_head: agent
                .answer_head
                .as_ref()
                .map(|h| Optimizer::new(answer_kind, h)),
            answer_repr: agent
                .answer_head
                .as_ref()
                .map(|_| Optimizer::new(answer_kind, &agent.repr)),
        }
    }
}

/// Computes the answer-loss gradients for one rollout. Returns the batch
/// answer loss and the gradient with respect to the answer-head outputs.
fn answer_pass(
    qnet: &QuestionNetwork,
    env_to_net: &[Option<usize>],
    answers: &DMatrix<f64>,
    rollout: &Rollout,
    n_actors: usize,
) -> Result<(f64, DMatrix<f64>), TrainError> {
    let features = rollout
        .features
        .as_ref()
        .expect("features collected when a question network is present");
    let n_p = answers.nrows();
    let sample_cols = rollout.sample_cols(n_actors);
    let batch = sample_cols as f64;
    let mut grad = DMatrix::zeros(n_p, answers.ncols());
    let mut total_loss = 0.0;
    let mut next_scratch = vec![0.0; n_p];
    let mut pred_scratch = vec![0.0; n_p];
    for col in 0..sample_cols {
        let next_col = col + n_actors;
        for (i, v) in answers.column(next_col).iter().enumerate() {
            next_scratch[i] = *v;
        }
        for (i, v) in answers.column(col).iter().enumerate() {
            pred_scratch[i] = *v;
        }
        let targets = compute_targets(
            qnet,
            &features[col],
            &next_scratch,
            env_to_net[rollout.executed[col]],
            false,
        )?;
        let (loss, g) = answer_loss(&pred_scratch, &targets);
        total_loss += loss / batch;
        for (i, gi) in g.iter().enumerate() {
            grad[(i, col)] = gi / batch;
        }
    }
    Ok((total_loss, grad))
}

/// Applies one update given the per-head output gradients. Honors the
/// stop-gradient boundary and keeps the RL and answer losses on separate
/// optimizers (each also owning its own view of the representation).
fn apply_update(
    agent: &mut AgentNet,
    opts: &mut Optimizers,
    repr_tape: &crate::tinynn::Tape,
    rl_tape: &crate::tinynn::Tape,
    answer_tape: Option<&crate::tinynn::Tape>,
    rl_out_grad: &DMatrix<f64>,
    answer_out_grad: Option<&DMatrix<f64>>,
) {
    let (rl_grads, rl_state_grad) = agent.rl_head.backward(rl_tape, rl_out_grad);
    opts.rl_head.step(&mut agent.rl_head, &rl_grads);
    if let Some(opt) = opts.rl_repr.as_mut() {
        let (repr_grads, _) = agent.repr.backward(repr_tape, &rl_state_grad);
        opt.step(&mut agent.repr, &repr_grads);
    }

    if let (Some(head), Some(grad), Some(tape)) =
        (agent.answer_head.as_mut(), answer_out_grad, answer_tape)
    {
        let (head_grads, answer_state_grad) = head.backward(tape, grad);
        opts.answer_head
            .as_mut()
            .expect("answer optimizer present")
            .step(head, &head_grads);
        let (repr_grads, _) = agent.repr.backward(repr_tape, &answer_state_grad);
        opts.answer_repr
            .as_mut()
            .expect("answer repr optimizer present")
            .step(&mut agent.repr, &repr_grads);
    }
}

/// TD policy evaluation under the uniform random policy.
///
/// Every `rollout_len` steps the value head regresses on one-step TD
/// targets `r + gamma v(s')` and the answer head on the question network's
/// TD targets, both with constant (semi-gradient) bootstraps. Emits the
/// oracle value MSE every `eval_period` frames.
pub fn evaluate_policy_train(
    agent: &mut AgentNet,
    qnet: Option<&QuestionNetwork>,
    extractor: Option<&FeatureExtractor>,
    env_cfg: &EmptyRoomConfig,
    cfg: &TrainConfig,
) -> Result<Vec<MetricsRow>, TrainError> {
    validate(agent, qnet, extractor, cfg)?;
    let model = ExactModel::build(env_cfg);
    let truth: Vec<f64> = true_values(&model, cfg.gamma_env)?.iter().copied().collect();
    let state_obs = all_state_observations();
    let env_to_net = qnet.map(env_to_net_map);
    let mut envs = VectorEnv::new(env_cfg, cfg.n_actors, derive_seed(cfg.seed, stream::ENV));
    let mut policy_rng = chacha(derive_seed(cfg.seed, stream::POLICY));
    let mut opts = Optimizers::new(agent, cfg);

    let mut metrics = Vec::new();
    let mut frames: u64 = 0;
    let mut next_eval: u64 = 0;
    let mut last_answer_loss = 0.0;
    emit(&mut metrics, &mut next_eval, frames, cfg.eval_period, agent, &state_obs, &truth,
         last_answer_loss, None, None)?;

    while frames < cfg.total_frames {
        let rollout = collect_uniform(&mut envs, extractor, cfg, &mut policy_rng)?;
        frames += (cfg.rollout_len * cfg.n_actors) as u64;

        let (states, repr_tape) = agent.repr.forward(&rollout.obs)?;
        let (values, rl_tape) = agent.rl_head.forward(&states)?;
        let answer_fwd = match (&agent.answer_head, qnet) {
            (Some(head), Some(_)) => Some(head.forward(&states)?),
            _ => None,
        };

        // n-step bootstrapped value targets over the rollout, with constant
        // bootstraps. One-step targets at gamma near 1 propagate the value
        // scale so slowly that it oscillates under representation drift.
        let sample_cols = rollout.sample_cols(cfg.n_actors);
        let batch = sample_cols as f64;
        let mut targets = vec![0.0; rollout.obs.ncols()];
        for i in 0..cfg.n_actors {
            let col = sample_cols + i;
            targets[col] = values[(0, col)];
        }
        for col in (0..sample_cols).rev() {
            targets[col] = rollout.rewards[col] + cfg.gamma_env * targets[col + cfg.n_actors];
        }
        let mut rl_grad = DMatrix::zeros(values.nrows(), values.ncols());
        for col in 0..sample_cols {
            rl_grad[(0, col)] = 2.0 * (values[(0, col)] - targets[col]) / batch;
        }

        let answer_grad = match (&answer_fwd, qnet) {
            (Some((answers, _)), Some(net)) => {
                let (loss, grad) = answer_pass(
                    net,
                    env_to_net.as_ref().expect("map built with network"),
                    answers,
                    &rollout,
                    cfg.n_actors,
                )?;
                last_answer_loss = loss;
                Some(grad)
            }
            _ => None,
        };

        apply_update(
            agent,
            &mut opts,
            &repr_tape,
            &rl_tape,
            answer_fwd.as_ref().map(|(_, t)| t),
            &rl_grad,
            answer_grad.as_ref(),
        );

        emit(&mut metrics, &mut next_eval, frames, cfg.eval_period, agent, &state_obs, &truth,
             last_answer_loss, None, None)?;
    }
    if metrics.last().map(|m| m.frames) != Some(frames) {
        metrics.push(MetricsRow {
            frames,
            value_mse: value_mse(agent, &state_obs, &truth)?,
            answer_loss: last_answer_loss,
            policy_entropy: None,
            avg_reward: None,
        });
    }
    Ok(metrics)
}

/// Synchronous advantage actor-critic on the goal-reaching task, with the
/// question network's answer loss mixed in when provided.
pub fn actor_critic_train(
    agent: &mut AgentNet,
    qnet: Option<&QuestionNetwork>,
    extractor: Option<&FeatureExtractor>,
    env_cfg: &EmptyRoomConfig,
    cfg: &TrainConfig,
) -> Result<Vec<MetricsRow>, TrainError> {
    validate(agent, qnet, extractor, cfg)?;
    let n_actions = match agent.head_layout {
        HeadLayout::ValueAndPolicy { n_actions } => n_actions,
        HeadLayout::ValueOnly => {
            return Err(TrainError::Config(
                "actor-critic training needs a policy head".to_string(),
            ))
        }
    };
    if n_actions != Action::ALL.len() {
        return Err(TrainError::Config(format!(
            "policy head has {n_actions} actions, grid has {}",
            Action::ALL.len()
        )));
    }
    let model = ExactModel::build(env_cfg);
    let truth: Vec<f64> = true_values(&model, cfg.gamma_env)?.iter().copied().collect();
    let state_obs = all_state_observations();
    let env_to_net = qnet.map(env_to_net_map);
    let mut envs = VectorEnv::new(env_cfg, cfg.n_actors, derive_seed(cfg.seed, stream::ENV));
    let mut policy_rng = chacha(derive_seed(cfg.seed, stream::POLICY));
    let mut opts = Optimizers::new(agent, cfg);

    let mut metrics = Vec::new();
    let mut frames: u64 = 0;
    let mut next_eval: u64 = 0;
    let mut last_answer_loss = 0.0;
    let mut last_entropy = (Action::ALL.len() as f64).ln();
    let mut reward_since_eval = 0.0;
    let mut frames_since_eval: u64 = 0;
    emit(&mut metrics, &mut next_eval, frames, cfg.eval_period, agent, &state_obs, &truth,
         last_answer_loss, Some(last_entropy), Some(0.0))?;

    while frames < cfg.total_frames {
        let rollout = collect_on_policy(agent, &mut envs, extractor, cfg, &mut policy_rng)?;
        let chunk = (cfg.rollout_len * cfg.n_actors) as u64;
        frames += chunk;
        frames_since_eval += chunk;
        reward_since_eval += rollout.rewards.iter().sum::<f64>();

        let (states, repr_tape) = agent.repr.forward(&rollout.obs)?;
        let (rl_out, rl_tape) = agent.rl_head.forward(&states)?;
        let answer_fwd = match (&agent.answer_head, qnet) {
            (Some(head), Some(_)) => Some(head.forward(&states)?),
            _ => None,
        };

        let sample_cols = rollout.sample_cols(cfg.n_actors);
        let batch = sample_cols as f64;

        // n-step bootstrapped returns over the rollout.
        let mut returns = vec![0.0; rollout.obs.ncols()];
        for i in 0..cfg.n_actors {
            let col = sample_cols + i;
            returns[col] = rl_out[(0, col)];
        }
        for col in (0..sample_cols).rev() {
            returns[col] = rollout.rewards[col] + cfg.gamma_env * returns[col + cfg.n_actors];
        }

        let mut rl_grad = DMatrix::zeros(rl_out.nrows(), rl_out.ncols());
        let mut entropy_sum = 0.0;
        for col in 0..sample_cols {
            let value = rl_out[(0, col)];
            let advantage = returns[col] - value;
            rl_grad[(0, col)] = 2.0 * cfg.value_coef * (value - returns[col]) / batch;

            let logits: Vec<f64> = (0..n_actions).map(|a| rl_out[(1 + a, col)]).collect();
            let p = softmax(&logits);
            let entropy: f64 = -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>();
            entropy_sum += entropy;
            let executed = rollout.executed[col];
            for a in 0..n_actions {
                let indicator = if a == executed { 1.0 } else { 0.0 };
                let policy_term = (p[a] - indicator) * advantage;
                let entropy_term = cfg.entropy_coef * p[a] * (p[a].ln() + entropy);
                rl_grad[(1 + a, col)] = (policy_term + entropy_term) / batch;
            }
        }
        last_entropy = entropy_sum / batch;

        let answer_grad = match (&answer_fwd, qnet) {
            (Some((answers, _)), Some(net)) => {
                let (loss, grad) = answer_pass(
                    net,
                    env_to_net.as_ref().expect("map built with network"),
                    answers,
                    &rollout,
                    cfg.n_actors,
                )?;
                last_answer_loss = loss;
                Some(grad)
            }
            _ => None,
        };

        apply_update(
            agent,
            &mut opts,
            &repr_tape,
            &rl_tape,
            answer_fwd.as_ref().map(|(_, t)| t),
            &rl_grad,
            answer_grad.as_ref(),
        );

        let avg = if frames_since_eval == 0 {
            0.0
        } else {
            reward_since_eval / frames_since_eval as f64
        };
        let emitted = emit(&mut metrics, &mut next_eval, frames, cfg.eval_period, agent,
                           &state_obs, &truth, last_answer_loss, Some(last_entropy), Some(avg))?;
        if emitted {
            reward_since_eval = 0.0;
            frames_since_eval = 0;
        }
    }
    if metrics.last().map(|m| m.frames) != Some(frames) {
        let avg = if frames_since_eval == 0 {
            0.0
        } else {
            reward_since_eval / frames_since_eval as f64
        };
        metrics.push(MetricsRow {
            frames,
            value_mse: value_mse(agent, &state_obs, &truth)?,
            answer_loss: last_answer_loss,
            policy_entropy: Some(last_entropy),
            avg_reward: Some(avg),
        });
    }
    Ok(metrics)
}

fn collect_uniform(
    envs: &mut VectorEnv,
    extractor: Option<&FeatureExtractor>,
    cfg: &TrainConfig,
    policy_rng: &mut ChaCha8Rng,
) -> Result<Rollout, TrainError> {
    let a = cfg.n_actors;
    let t_len = cfg.rollout_len;
    let mut obs = DMatrix::zeros(OBS_LEN, (t_len + 1) * a);
    obs.columns_mut(0, a).copy_from(&envs.observations());
    let mut rewards = vec![0.0; t_len * a];
    let mut executed = vec![0usize; t_len * a];
    let mut features = extractor.map(|_| vec![Vec::new(); t_len * a]);

    for t in 0..t_len {
        let actions: Vec<Action> = (0..a)
            .map(|_| Action::ALL[policy_rng.random_range(0..4)])
            .collect();
        let outcomes = envs.step(&actions);
        for (i, out) in outcomes.iter().enumerate() {
            let col = t * a + i;
            obs.column_mut(col + a).copy_from_slice(&out.obs);
            rewards[col] = out.reward;
            executed[col] = actions[i].index();
            if let (Some(f), Some(ext)) = (features.as_mut(), extractor) {
                f[col] = ext.eval(&out.transition)?;
            }
        }
    }
    Ok(Rollout {
        obs,
        rewards,
        executed,
        features,
    })
}

fn collect_on_policy(
    agent: &AgentNet,
    envs: &mut VectorEnv,
    extractor: Option<&FeatureExtractor>,
    cfg: &TrainConfig,
    policy_rng: &mut ChaCha8Rng,
) -> Result<Rollout, TrainError> {
    let a = cfg.n_actors;
    let t_len = cfg.rollout_len;
    let n_actions = Action::ALL.len();
    let mut obs = DMatrix::zeros(OBS_LEN, (t_len + 1) * a);
    obs.columns_mut(0, a).copy_from(&envs.observations());
    let mut rewards = vec![0.0; t_len * a];
    let mut executed = vec![0usize; t_len * a];
    let mut features = extractor.map(|_| vec![Vec::new(); t_len * a]);

    for t in 0..t_len {
        let current = obs.columns(t * a, a).into_owned();
        let states = agent.repr.output(&current)?;
        let rl_out = agent.rl_head.output(&states)?;
        let actions: Vec<Action> = (0..a)
            .map(|i| {
                let logits: Vec<f64> = (0..n_actions).map(|k| rl_out[(1 + k, i)]).collect();
                let p = softmax(&logits);
                sample_categorical(&p, policy_rng)
            })
            .map(|k| Action::ALL[k])
            .collect();
        let outcomes = envs.step(&actions);
        for (i, out) in outcomes.iter().enumerate() {
            let col = t * a + i;
            obs.column_mut(col + a).copy_from_slice(&out.obs);
            rewards[col] = out.reward;
            executed[col] = actions[i].index();
            if let (Some(f), Some(ext)) = (features.as_mut(), extractor) {
                f[col] = ext.eval(&out.transition)?;
            }
        }
    }
    Ok(Rollout {
        obs,
        rewards,
        executed,
        features,
    })
}

fn sample_categorical(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let draw: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if draw < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Pushes a metrics row if `frames` crossed the evaluation boundary.
/// Returns whether a row was emitted.
#[allow(clippy::too_many_arguments)]
fn emit(
    metrics: &mut Vec<MetricsRow>,
    next_eval: &mut u64,
    frames: u64,
    eval_period: u64,
    agent: &AgentNet,
    state_obs: &DMatrix<f64>,
    truth: &[f64],
    answer_loss: f64,
    entropy: Option<f64>,
    avg_reward: Option<f64>,
) -> Result<bool, TrainError> {
    if frames < *next_eval {
        return Ok(false);
    }
    while *next_eval <= frames {
        *next_eval += eval_period;
    }
    metrics.push(MetricsRow {
        frames,
        value_mse: value_mse(agent, state_obs, truth)?,
        answer_loss,
        policy_entropy: entropy,
        avg_reward,
    });
    Ok(true)
}
