//! Independent oracles and case generators shared by the integration and
//! acceptance tests.

#![allow(dead_code)]

pub mod choreo;
pub mod consensus;
pub mod deploy_cases;
pub mod learning;
