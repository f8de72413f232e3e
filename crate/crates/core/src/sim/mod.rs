//! Simulation studies: outcome generators, size/power studies of the
//! combined tests against Bonferroni on the non-nested tests, and coverage
//! studies of the inverted intervals.

mod config;
mod generate;
mod study;

pub use config::{parse_study_config, preset, StudyConfig, PRESETS};
pub use generate::{gen_outcomes, gen_outcomes_sim1, gen_outcomes_sim2, interaction_f, Sim1Config, Sim2Config, Variances};
pub use study::{
    coverage_study, emit_tables, paired_sign_test, parse_table, power_study, run_study, write_table, CoverageConfig,
    Method, PairedComparison, PowerConfig, PowerStudy, StudyResult, StudyRow,
};
