//! Operator surface for training runs, evaluation reports and live sessions.

pub mod commands;
pub mod manifest;
pub mod serve;
