//! Gaussian spatial rewards for GUI grounding, with a group-relative policy
//! optimization harness that trains a small box-prediction policy on
//! synthetic grounding tasks.
//!
//! * [`geometry`]: boxes, points, box-derived Gaussians.
//! * [`rewards`]: dense Gaussian rewards, sparse and spurious baselines.
//! * [`grpo`]: advantage normalization, clipped surrogate, KL penalty.
//! * [`policy`]: the affine Gaussian box policy.
//! * [`env`]: task generation, annotation loading, evaluation.
//! * [`train`]: the training loop tying them together.

pub mod env;
pub mod error;
pub mod geometry;
pub mod grpo;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{BBox, Gaussian2, Point2};
pub use rewards::{RewardBreakdown, RewardConfig, RewardVariant};
