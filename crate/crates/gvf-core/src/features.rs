//! Transition features f(O, A, O'): the scalar signals that question
//! networks accumulate.
//!
//! `touch` reads the grid world's blocked-move flag. The random variants
//! draw fixed linear functionals g at construction time and report the
//! change |g(O') - g(O)|, so features of a null transition are exactly zero
//! and every output is nonnegative.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::Transition;
use crate::rng::chacha;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSpec {
    /// 1 when the attempted move was blocked by a wall.
    Touch,
    /// `count` random linear functionals of the flattened observation.
    RandomLinear {
        count: usize,
        seed: u64,
        /// Weight distribution bounds, uniform over [low, high).
        #[serde(default = "default_low")]
        low: f64,
        #[serde(default = "default_high")]
        high: f64,
    },
    /// Random linear functionals shared across the disjoint patches of a
    /// (patch_rows x patch_cols) grid over a single-plane image.
    RandomPatchLinear {
        patch_rows: usize,
        patch_cols: usize,
        functions_per_patch: usize,
        seed: u64,
        #[serde(default = "default_low")]
        low: f64,
        #[serde(default = "default_high")]
        high: f64,
    },
}

fn default_low() -> f64 {
    -1.0
}

fn default_high() -> f64 {
    1.0
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("observation length {got} does not match extractor input length {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("image {height}x{width} is not divisible into a {patch_rows}x{patch_cols} patch grid")]
    IndivisiblePatches {
        height: usize,
        width: usize,
        patch_rows: usize,
        patch_cols: usize,
    },
    #[error("feature count must be at least 1")]
    EmptySpec,
    #[error("invalid weight range [{low}, {high})")]
    BadWeightRange { low: f64, high: f64 },
}

/// Shape of the observations an extractor will see.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObsShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ObsShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Touch,
    /// Rows are functionals over the flattened observation.
    Linear { weights: DMatrix<f64> },
    /// Rows are functionals over one flattened patch; applied to every
    /// patch of the grid, function-major output order.
    PatchLinear {
        functions: DMatrix<f64>,
        grid_rows: usize,
        grid_cols: usize,
        patch_h: usize,
        patch_w: usize,
        width: usize,
    },
}

/// A feature spec bound to an observation shape, with weights drawn.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    kind: Kind,
    count: usize,
    input_len: usize,
}

impl FeatureExtractor {
    pub fn build(spec: &FeatureSpec, shape: ObsShape) -> Result<Self, FeatureError> {
        match *spec {
            FeatureSpec::Touch => Ok(FeatureExtractor {
                kind: Kind::Touch,
                count: 1,
                input_len: shape.len(),
            }),
            FeatureSpec::RandomLinear { count, seed, low, high } => {
                if count == 0 {
                    return Err(FeatureError::EmptySpec);
                }
                check_range(low, high)?;
                let mut rng = chacha(seed);
                let weights = draw_matrix(&mut rng, count, shape.len(), low, high);
                Ok(FeatureExtractor {
                    kind: Kind::Linear { weights },
                    count,
                    input_len: shape.len(),
                })
            }
            FeatureSpec::RandomPatchLinear {
                patch_rows,
                patch_cols,
                functions_per_patch,
                seed,
                low,
                high,
            } => {
                if functions_per_patch == 0 || patch_rows == 0 || patch_cols == 0 {
                    return Err(FeatureError::EmptySpec);
                }
                check_range(low, high)?;
                if shape.channels != 1
                    || shape.height % patch_rows != 0
                    || shape.width % patch_cols != 0
                {
                    return Err(FeatureError::IndivisiblePatches {
                        height: shape.height,
                        width: shape.width,
                        patch_rows,
                        patch_cols,
                    });
                }
                let patch_h = shape.height / patch_rows;
                let patch_w = shape.width / patch_cols;
                let mut rng = chacha(seed);
                let functions =
                    draw_matrix(&mut rng, functions_per_patch, patch_h * patch_w, low, high);
                Ok(FeatureExtractor {
                    kind: Kind::PatchLinear {
                        functions,
                        grid_rows: patch_rows,
                        grid_cols: patch_cols,
                        patch_h,
                        patch_w,
                        width: shape.width,
                    },
                    count: patch_rows * patch_cols * functions_per_patch,
                    input_len: shape.len(),
                })
            }
        }
    }

    /// Linear extractor with explicit functionals, one per row.
    pub fn linear_with_weights(weights: DMatrix<f64>) -> Self {
        let count = weights.nrows();
        let input_len = weights.ncols();
        FeatureExtractor {
            kind: Kind::Linear { weights },
            count,
            input_len,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Whether the feature reads observations (as opposed to the blocked
    /// flag only). Observation-based features of a null transition vanish.
    pub fn reads_observations(&self) -> bool {
        !matches!(self.kind, Kind::Touch)
    }

    pub fn eval(&self, t: &Transition) -> Result<Vec<f64>, FeatureError> {
        match &self.kind {
            Kind::Touch => Ok(vec![if t.blocked { 1.0 } else { 0.0 }]),
            Kind::Linear { weights } => {
                let diff = self.obs_diff(t)?;
                Ok(weights
                    .row_iter()
                    .map(|w| w.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>().abs())
                    .collect())
            }
            Kind::PatchLinear {
                functions,
                grid_rows,
                grid_cols,
                patch_h,
                patch_w,
                width,
            } => {
                let diff = self.obs_diff(t)?;
                let mut out = Vec::with_capacity(self.count);
                for f in functions.row_iter() {
                    for pr in 0..*grid_rows {
                        for pc in 0..*grid_cols {
                            let mut acc = 0.0;
                            for r in 0..*patch_h {
                                let row = pr * patch_h + r;
                                let base = row * width + pc * patch_w;
                                for c in 0..*patch_w {
                                    acc += f[r * patch_w + c] * diff[base + c];
                                }
                            }
                            out.push(acc.abs());
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    fn obs_diff(&self, t: &Transition) -> Result<Vec<f64>, FeatureError> {
        if t.obs.len() != self.input_len || t.next_obs.len() != self.input_len {
            return Err(FeatureError::ShapeMismatch {
                expected: self.input_len,
                got: if t.obs.len() != self.input_len {
                    t.obs.len()
                } else {
                    t.next_obs.len()
                },
            });
        }
        Ok(t.next_obs
            .iter()
            .zip(&t.obs)
            .map(|(n, o)| n - o)
            .collect())
    }
}

fn check_range(low: f64, high: f64) -> Result<(), FeatureError> {
    if low.is_finite() && high.is_finite() && low < high {
        Ok(())
    } else {
        Err(FeatureError::BadWeightRange { low, high })
    }
}

fn draw_matrix(
    rng: &mut impl Rng,
    rows: usize,
    cols: usize,
    low: f64,
    high: f64,
) -> DMatrix<f64> {
    // Row-major draw order so the k-th functional's weights are contiguous
    // in the stream regardless of storage layout.
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = rng.random_range(low..high);
        }
    }
    m
}
