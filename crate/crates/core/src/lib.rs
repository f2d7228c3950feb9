//! Preference-robust direct preference optimization at desk scale.
//!
//! The crate pairs DPO with a per-example worst case over the preference
//! probability: each soft label `q` is replaced by the most adversarial `p`
//! within a divergence ball of radius `ρ` around it. Around that core sit a
//! synthetic preference generator with controlled label noise, small
//! differentiable policies, a deterministic trainer, a restless-bandit
//! reward-design environment and an experiment harness.
//!
//! ```
//! use dpo_pro::robust_inner::{worst_case_chi2, Side};
//!
//! let r = worst_case_chi2(0.5, 0.04, Side::FavoringA).unwrap();
//! assert!((r.p_hat - 0.6).abs() < 1e-12);
//! ```

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod losses;
pub mod numerics;
pub mod policy;
pub mod preference_data;
pub mod rmab;
pub mod robust_inner;
pub mod trainer;

pub use error::{Error, Result};
