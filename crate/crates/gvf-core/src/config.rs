//! Experiment configuration: a versioned JSON document resolving to an
//! environment, an optional question network with features, an agent and a
//! training schedule. Resolution materializes every default and derived
//! seed so the resolved snapshot reproduces the run byte for byte.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentConfig, AgentNet, HeadLayout, TrainConfig};
use crate::envs::{action_names, EmptyRoomConfig, GRID, OBS_LEN};
use crate::features::{FeatureExtractor, FeatureSpec, ObsShape};
use crate::qnet::{GeneratorConfig, QnetError, QuestionNetwork};
use crate::rng::{derive_seed, stream};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported config version {0} (expected {CONFIG_VERSION})")]
    Version(u32),
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error("cannot build question network: {0}")]
    Qnet(#[from] QnetError),
    #[error("cannot read question network file {path}: {reason}")]
    NetFile { path: String, reason: String },
    #[error("cannot build feature extractor: {0}")]
    Feature(#[from] crate::features::FeatureError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Policy evaluation of the uniform random policy.
    Eval,
    /// Actor-critic control on the goal task.
    Control,
}

/// Where the question network comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum QuestionNetSource {
    DiscountedSum {
        n_features: usize,
        gamma: f64,
    },
    /// Full action-conditional tree over the grid actions.
    FullTree {
        depth: usize,
    },
    Generator {
        n_features: usize,
        gamma: f64,
        depth: usize,
        repeat: usize,
        /// Defaults to a stream derived from the experiment seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        /// Defaults to the grid actions.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        actions: Option<Vec<String>>,
    },
    File {
        path: String,
    },
}

/// Feature section; the random variants may leave the seed to be derived
/// from the experiment seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSource {
    Touch,
    RandomLinear {
        count: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    RandomPatchLinear {
        patch_rows: usize,
        patch_cols: usize,
        functions_per_patch: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default)]
    pub env: EmptyRoomConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_net: Option<QuestionNetSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureSource>,
    #[serde(default)]
    pub agent: AgentConfig,
    pub train: TrainConfig,
    /// Where run artifacts go; a CLI flag may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Stamped into resolved snapshots for provenance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_version: Option<String>,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

/// Everything needed to run the experiment, with all randomness pinned.
pub struct ResolvedExperiment {
    pub config: ExperimentConfig,
    pub qnet: Option<QuestionNetwork>,
    pub extractor: Option<FeatureExtractor>,
    pub agent: AgentNet,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        if cfg.version != CONFIG_VERSION {
            return Err(ConfigError::Version(cfg.version));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if let Err(e) = self.env.validate() {
            problems.push(format!("env: {e}"));
        }
        match (&self.question_net, &self.features) {
            (Some(_), Some(_)) | (None, None) => {}
            (Some(_), None) => {
                problems.push("question_net requires a features section".to_string())
            }
            (None, Some(_)) => {
                problems.push("features given without a question_net".to_string())
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }

    /// Builds the network, extractor and agent, materializing derived seeds
    /// and defaults into the returned config copy.
    pub fn resolve(&self) -> Result<ResolvedExperiment, ConfigError> {
        self.validate()?;
        let mut resolved = self.clone();
        resolved.code_version = Some(env!("CARGO_PKG_VERSION").to_string());
        // The experiment seed is the single source of randomness.
        resolved.train.seed = self.seed;

        let qnet = match &mut resolved.question_net {
            None => None,
            Some(QuestionNetSource::DiscountedSum { n_features, gamma }) => {
                Some(QuestionNetwork::discounted_sum(*n_features, *gamma)?)
            }
            Some(QuestionNetSource::FullTree { depth }) => {
                Some(QuestionNetwork::full_tree(&action_names(), *depth)?)
            }
            Some(QuestionNetSource::Generator {
                n_features,
                gamma,
                depth,
                repeat,
                seed,
                actions,
            }) => {
                let seed = *seed.get_or_insert(derive_seed(self.seed, stream::QNET));
                let actions = actions.get_or_insert_with(action_names).clone();
                Some(QuestionNetwork::generate(&GeneratorConfig {
                    n_features: *n_features,
                    gamma: *gamma,
                    actions,
                    depth: *depth,
                    repeat: *repeat,
                    seed,
                })?)
            }
            Some(QuestionNetSource::File { path }) => {
                let text = std::fs::read_to_string(&*path).map_err(|e| ConfigError::NetFile {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
                Some(
                    QuestionNetwork::from_json(&text).map_err(|e| ConfigError::NetFile {
                        path: path.clone(),
                        reason: e.to_string(),
                    })?,
                )
            }
        };

        let shape = ObsShape {
            height: GRID,
            width: GRID,
            channels: 2,
        };
        let extractor = match &mut resolved.features {
            None => None,
            Some(FeatureSource::Touch) => {
                Some(FeatureExtractor::build(&FeatureSpec::Touch, shape)?)
            }
            Some(FeatureSource::RandomLinear { count, seed }) => {
                let seed = *seed.get_or_insert(derive_seed(self.seed, stream::FEATURES));
                Some(FeatureExtractor::build(
                    &FeatureSpec::RandomLinear {
                        count: *count,
                        seed,
                        low: -1.0,
                        high: 1.0,
                    },
                    shape,
                )?)
            }
            Some(FeatureSource::RandomPatchLinear {
                patch_rows,
                patch_cols,
                functions_per_patch,
                seed,
            }) => {
                let seed = *seed.get_or_insert(derive_seed(self.seed, stream::FEATURES));
                Some(FeatureExtractor::build(
                    &FeatureSpec::RandomPatchLinear {
                        patch_rows: *patch_rows,
                        patch_cols: *patch_cols,
                        functions_per_patch: *functions_per_patch,
                        seed,
                        low: -1.0,
                        high: 1.0,
                    },
                    shape,
                )?)
            }
        };

        if let (Some(net), Some(ext)) = (&qnet, &extractor) {
            if net.n_features != ext.count() {
                return Err(ConfigError::Invalid(vec![format!(
                    "features: extractor provides {} features, question network expects {}",
                    ext.count(),
                    net.n_features
                )]));
            }
        }

        let head_layout = match resolved.kind {
            ExperimentKind::Eval => HeadLayout::ValueOnly,
            ExperimentKind::Control => HeadLayout::ValueAndPolicy {
                n_actions: action_names().len(),
            },
        };
        let agent = AgentNet::init(
            &resolved.agent,
            OBS_LEN,
            head_layout,
            qnet.as_ref().map(|n| n.prediction_count()),
            self.seed,
        );

        Ok(ResolvedExperiment {
            config: resolved,
            qnet,
            extractor,
            agent,
        })
    }
}
