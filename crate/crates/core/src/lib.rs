//! Transient-stability-aware virtual inertia scheduling.

pub mod case_study;
pub mod dispatch;
pub mod grid;
pub mod igdt;
pub mod predictor;
pub mod risk;
pub mod tds;
