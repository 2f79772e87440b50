//! Desk-scale out-of-domain knowledge distillation.
//!
//! A teacher network is trained on one synthetic domain and its knowledge is
//! transferred to a smaller student that must serve a shifted domain. The
//! pipeline has three stages: data-free warmup of a generator/encoder/student
//! triple against the frozen teacher ([`dfkd`]), learning an anchor network
//! that maps student-domain latents back toward the teacher's domain
//! ([`anchor`]), and curriculum mixup training of the student on real and
//! anchor-generated data ([`mixup`]).
//!
//! Everything runs on the crate's own reverse-mode autodiff substrate
//! ([`diffcore`]); [`domains`] provides the synthetic spurious-correlation
//! benchmark, and [`harness`] ties the stages, baselines, and reporting
//! together. All randomness is derived from explicit seeds, and runs with the
//! same config and seed are bitwise reproducible.

pub mod anchor;
pub mod checkpoint;
pub mod config;
pub mod dfkd;
pub mod diffcore;
pub mod domains;
pub mod error;
pub mod harness;
pub mod losses;
pub mod mixup;
pub mod models;
pub mod report;
pub mod seeding;

pub use error::{Error, Result};
