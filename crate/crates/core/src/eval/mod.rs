//! Synthetic benchmark suite, pixel oracles and ablation runner.

mod ablation;
mod generate;
mod score;

pub use ablation::{
    default_grid, run_ablations, run_config, CategoryAccuracy, ConfigRow, EvalConfig, EvalOptions, EvalReport,
    SceneOutcome, SuiteSummary, TimingPair, NOISY_EDIT_FAILURE,
};
pub use generate::{
    generate_suite, render_description, Corruption, CorruptionKind, SceneShape, SyntheticScene, CANVAS,
    INSTANCE_SCALES, MIN_GAP,
};
pub use score::{score, SceneScore, ScoreConfig, Tally};
