use nalgebra::DMatrix;

use super::*;
use crate::envs::{action_names, observation_for, state_cell, EmptyRoomConfig, ExactModel, N_STATES, OBS_LEN};
use crate::features::{FeatureExtractor, FeatureSpec, ObsShape};
use crate::oracle::value_iteration;
use crate::qnet::QuestionNetwork;
use crate::targets::{answer_loss, compute_targets};
use crate::tinynn::{column, grad_check_flat, Activation, DenseNet, OptimizerKind};

fn grid_shape() -> ObsShape {
    ObsShape {
        height: 9,
        width: 9,
        channels: 2,
    }
}

fn touch() -> FeatureExtractor {
    FeatureExtractor::build(&FeatureSpec::Touch, grid_shape()).unwrap()
}

fn small_train_config(total_frames: u64) -> TrainConfig {
    TrainConfig {
        n_actors: 4,
        rollout_len: 4,
        gamma_env: 0.98,
        optimizer: OptimizerKind::adam(0.001),
        rl_optimizer: None,
        answer_lr_scale: 1.0,
        entropy_coef: 0.01,
        value_coef: 0.5,
        total_frames,
        eval_period: 1_000,
        seed: 12,
    }
}

#[test]
fn predict_has_correct_widths_and_is_deterministic() {
    let net = QuestionNetwork::full_tree(&action_names(), 2).unwrap();
    let agent = AgentNet::init(
        &AgentConfig::default(),
        OBS_LEN,
        HeadLayout::ValueOnly,
        Some(net.prediction_count()),
        7,
    );
    let obs = observation_for((4, 4));
    let a = agent.predict(&obs).unwrap();
    let b = agent.predict(&obs).unwrap();
    assert_eq!(a.state.len(), 32);
    assert_eq!(a.answers.as_ref().unwrap().len(), net.prediction_count());
    assert!(a.value.is_finite());
    assert!(a.policy.is_none());
    assert_eq!(a.value, b.value);
    assert_eq!(a.answers.unwrap(), b.answers.unwrap());

    let control = AgentNet::init(
        &AgentConfig::default(),
        OBS_LEN,
        HeadLayout::ValueAndPolicy { n_actions: 4 },
        None,
        7,
    );
    let p = control.predict(&obs).unwrap().policy.unwrap();
    assert_eq!(p.len(), 4);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn zero_learning_rates_keep_mse_constant() {
    let net = QuestionNetwork::full_tree(&action_names(), 1).unwrap();
    let mut agent = AgentNet::init(
        &AgentConfig::default(),
        OBS_LEN,
        HeadLayout::ValueOnly,
        Some(net.prediction_count()),
        3,
    );
    let mut cfg = small_train_config(4_000);
    cfg.optimizer = OptimizerKind::adam(0.0);
    let rows = evaluate_policy_train(
        &mut agent,
        Some(&net),
        Some(&touch()),
        &EmptyRoomConfig::default(),
        &cfg,
    )
    .unwrap();
    assert!(rows.len() >= 3);
    for row in &rows {
        assert_eq!(row.value_mse, rows[0].value_mse);
    }
}

#[test]
fn stop_gradient_isolates_representation_from_rl_loss() {
    // With the gradient stopped, the representation trajectory must be
    // bit-identical whether the RL head learns or not.
    let net = QuestionNetwork::full_tree(&action_names(), 1).unwrap();
    let run = |rl_lr: f64| {
        let mut agent = AgentNet::init(
            &AgentConfig::default(),
            OBS_LEN,
            HeadLayout::ValueOnly,
            Some(net.prediction_count()),
            5,
        );
        let mut cfg = small_train_config(3_200);
        cfg.rl_optimizer = Some(OptimizerKind::adam(rl_lr));
        evaluate_policy_train(
            &mut agent,
            Some(&net),
            Some(&touch()),
            &EmptyRoomConfig::default(),
            &cfg,
        )
        .unwrap();
        agent.repr.flat_params()
    };
    assert_eq!(run(0.001), run(0.0));
}

#[test]
fn end_to_end_rl_loss_does_reach_representation() {
    let run = |stop: bool| {
        let mut agent = AgentNet::init(
            &AgentConfig {
                stop_gradient: stop,
                ..AgentConfig::default()
            },
            OBS_LEN,
            HeadLayout::ValueOnly,
            None,
            5,
        );
        let cfg = small_train_config(1_600);
        evaluate_policy_train(&mut agent, None, None, &EmptyRoomConfig::default(), &cfg).unwrap();
        agent.repr.flat_params()
    };
    let frozen = run(true);
    let trained = run(false);
    let init = AgentNet::init(
        &AgentConfig::default(),
        OBS_LEN,
        HeadLayout::ValueOnly,
        None,
        5,
    )
    .repr
    .flat_params();
    assert_eq!(frozen, init);
    assert_ne!(trained, init);
}

#[test]
fn reported_mse_matches_independent_recomputation() {
    let net = QuestionNetwork::full_tree(&action_names(), 1).unwrap();
    let mut agent = AgentNet::init(
        &AgentConfig::default(),
        OBS_LEN,
        HeadLayout::ValueOnly,
        Some(net.prediction_count()),
        9,
    );
    let cfg = small_train_config(4_000);
    let rows = evaluate_policy_train(
        &mut agent,
        Some(&net),
        Some(&touch()),
        &EmptyRoomConfig::default(),
        &cfg,
    )
    .unwrap();
    let last = rows.last().unwrap();

    // Recompute from scratch: per-state forward passes against a value
    // function obtained by the iterative route.
    let model = ExactModel::build(&EmptyRoomConfig::default());
    let truth = value_iteration(&model, 0.98, 1e-13);
    let mut mse = 0.0;
    for s in 0..N_STATES {
        let v = agent.predict(&observation_for(state_cell(s))).unwrap().value;
        mse += (v - truth[s]) * (v - truth[s]) / N_STATES as f64;
    }
    assert!(
        (mse - last.value_mse).abs() < 1e-6,
        "reported {}, recomputed {mse}",
        last.value_mse
    );
}

#[test]
fn answer_loss_decreases_on_easy_targets() {
    let net = QuestionNetwork::full_tree(&action_names(), 1).unwrap();
    let mut agent = AgentNet::init(
        &AgentConfig::default(),
        OBS_LEN,
        HeadLayout::ValueOnly,
        Some(net.prediction_count()),
        11,
    );
    let cfg = small_train_config(40_000);
    let rows = evaluate_policy_train(
        &mut agent,
        Some(&net),
        Some(&touch()),
        &EmptyRoomConfig::default(),
        &cfg,
    )
    .unwrap();
    let last = rows.last().unwrap();
    assert!(
        last.answer_loss < 0.01,
        "answer loss stayed at {}",
        last.answer_loss
    );
}

#[test]
fn identical_runs_produce_identical_metrics() {
    let net = QuestionNetwork::full_tree(&action_names(), 1).unwrap();
    let run = || {
        let mut agent = AgentNet::init(
            &AgentConfig::default(),
            OBS_LEN,
            HeadLayout::ValueOnly,
            Some(net.prediction_count()),
            21,
        );
        evaluate_policy_train(
            &mut agent,
            Some(&net),
            Some(&touch()),
            &EmptyRoomConfig::default(),
            &small_train_config(3_200),
        )
        .unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn semi_gradient_excludes_bootstrap_term() {
    // One-state chain: the discounted-sum target bootstraps on the same
    // parameters. The analytic gradient treats the bootstrap as constant;
    // finite differences of the frozen-target objective agree with it, and
    // finite differences of the moving-target objective do not.
    let net = QuestionNetwork::discounted_sum(1, 0.8).unwrap();
    let head = DenseNet::init(&[2, 1], &[Activation::Identity], 3);
    let obs = column(&[0.7, -0.4]);
    let feature = vec![1.0];

    let answers_of = |h: &DenseNet| h.output(&obs).unwrap()[(0, 0)];

    let (out, tape) = head.forward(&obs).unwrap();
    let current = out[(0, 0)];
    let frozen = compute_targets(&net, &feature, &[current], None, false).unwrap();
    let (_, grad) = answer_loss(&[current], &frozen);
    let (grads, _) = head.backward(&tape, &DMatrix::from_element(1, 1, grad[0]));
    let analytic = DenseNet::flat_grads(&grads);
    let params = head.flat_params();

    // Frozen target: matches.
    let mut probe = head.clone();
    let frozen_target = frozen.targets[0];
    let report = grad_check_flat(
        &params,
        &analytic,
        |p| {
            probe.set_flat_params(p);
            let y = answers_of(&probe);
            (y - frozen_target) * (y - frozen_target)
        },
        1e-6,
        1e-6,
    );
    assert!(report.pass(), "semi-gradient mismatch: {}", report.max_rel_error);

    // Moving target: the true derivative picks up a (1 - gamma) factor, so
    // the comparison must fail decisively.
    let mut probe = head.clone();
    let report = grad_check_flat(
        &params,
        &analytic,
        |p| {
            probe.set_flat_params(p);
            let y = answers_of(&probe);
            let t = compute_targets(&net, &feature, &[y], None, false).unwrap().targets[0];
            (y - t) * (y - t)
        },
        1e-6,
        1e-6,
    );
    assert!(
        report.max_rel_error > 0.5,
        "moving-target probe unexpectedly close: {}",
        report.max_rel_error
    );
}

#[test]
fn huge_entropy_bonus_keeps_policy_uniform() {
    let mut agent = AgentNet::init(
        &AgentConfig {
            stop_gradient: false,
            ..AgentConfig::default()
        },
        OBS_LEN,
        HeadLayout::ValueAndPolicy { n_actions: 4 },
        None,
        13,
    );
    let mut cfg = small_train_config(20_000);
    cfg.entropy_coef = 10.0;
    let rows = actor_critic_train(&mut agent, None, None, &EmptyRoomConfig::default(), &cfg).unwrap();
    let entropy = rows.last().unwrap().policy_entropy.unwrap();
    let max_entropy = (4.0f64).ln();
    assert!(
        entropy > 0.99 * max_entropy,
        "entropy {entropy} vs max {max_entropy}"
    );
}

#[test]
fn stop_gradient_without_answers_freezes_representation_in_control() {
    let mut agent = AgentNet::init(
        &AgentConfig::default(),
        OBS_LEN,
        HeadLayout::ValueAndPolicy { n_actions: 4 },
        None,
        17,
    );
    let init = agent.repr.flat_params();
    let cfg = small_train_config(3_200);
    actor_critic_train(&mut agent, None, None, &EmptyRoomConfig::default(), &cfg).unwrap();
    assert_eq!(agent.repr.flat_params(), init);
}

#[test]
fn actor_critic_logit_gradients_match_finite_differences() {
    // The combined policy + value + entropy gradient at the RL-head output,
    // checked against finite differences of an explicitly written loss.
    let n_actions = 4;
    let advantage = 0.8;
    let executed = 2usize;
    let ret = 0.3;
    let value_coef = 0.5;
    let entropy_coef = 0.01;
    let out0: Vec<f64> = vec![0.1, 0.4, -0.2, 0.3, -0.5];

    let loss = |out: &[f64]| {
        let value = out[0];
        let logits = &out[1..];
        let p = softmax(logits);
        let policy_loss = -(p[executed].ln()) * advantage;
        let value_loss = value_coef * (value - ret) * (value - ret);
        let entropy: f64 = -p.iter().map(|&x| x * x.ln()).sum::<f64>();
        policy_loss + value_loss - entropy_coef * entropy
    };

    let mut analytic = vec![0.0; 1 + n_actions];
    analytic[0] = 2.0 * value_coef * (out0[0] - ret);
    let p = softmax(&out0[1..]);
    let entropy: f64 = -p.iter().map(|&x| x * x.ln()).sum::<f64>();
    for a in 0..n_actions {
        let indicator = if a == executed { 1.0 } else { 0.0 };
        analytic[1 + a] =
            (p[a] - indicator) * advantage + entropy_coef * p[a] * (p[a].ln() + entropy);
    }

    let report = grad_check_flat(&out0, &analytic, |x| loss(x), 1e-6, 1e-7);
    assert!(report.pass(), "max rel error {}", report.max_rel_error);
}

#[test]
fn checkpoint_round_trips_agent_exactly() {
    let net = QuestionNetwork::full_tree(&action_names(), 2).unwrap();
    let agent = AgentNet::init(
        &AgentConfig::default(),
        OBS_LEN,
        HeadLayout::ValueOnly,
        Some(net.prediction_count()),
        31,
    );
    let cp = Checkpoint::from_agent(&agent, &EmptyRoomConfig::default(), 0.98);
    let text = cp.to_json();
    let restored = Checkpoint::from_json(&text).unwrap().into_agent().unwrap();
    assert_eq!(restored, agent);
}

#[test]
fn config_validation_reports_mismatches() {
    let net = QuestionNetwork::full_tree(&action_names(), 1).unwrap();
    let mut agent = AgentNet::init(
        &AgentConfig::default(),
        OBS_LEN,
        HeadLayout::ValueOnly,
        Some(net.prediction_count() + 1),
        3,
    );
    let err = evaluate_policy_train(
        &mut agent,
        Some(&net),
        Some(&touch()),
        &EmptyRoomConfig::default(),
        &small_train_config(1_000),
    )
    .unwrap_err();
    assert!(matches!(err, TrainError::Config(_)), "{err}");
}
