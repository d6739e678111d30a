//! Desk-scale geometry distillation for a miniature vision-language model.
//!
//! A frozen camera-conditioned teacher extracts geometry-aware features
//! from oracle multi-view renders of synthetic scenes; the vision side of
//! a tiny VLM is fine-tuned on spatial multiple-choice QA with a three-term
//! objective (task cross-entropy + feature alignment + interface
//! preservation), leaving the text encoder and answer head untouched.

pub mod ablation;
pub mod cache;
pub mod config;
pub mod harness;
pub mod objective;
pub mod report;
pub mod scene;
pub mod student;
pub mod teacher;
pub mod tensor;
pub mod train;
