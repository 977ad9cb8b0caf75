//! End-to-end orchestration: sliding-window inference, mIoU evaluation,
//! diagnostics, parameter sweeps, and the bundled synthetic fixture.

mod analyze;
mod evaluate;
mod fixture;
mod infer;
mod run_config;
mod segment;
mod sweep;
mod window;

pub use analyze::{analyze, AnalyzeOutcome};
pub use evaluate::{
    accumulate_confusion, evaluate, report_from_confusion, ClassCounts, ClassIoU, EvalReport,
    EvalTiming,
};
pub use fixture::{
    fixture_run_config, make_fixture, write_fixture_checkpoint, FixturePaths, FIXTURE_CLASSES,
    FIXTURE_DISTRACTION_DIMS, FIXTURE_HEADS, FIXTURE_IGNORE, FIXTURE_LAYERS, FIXTURE_PATCH,
    FIXTURE_PROJ_DIM, FIXTURE_TAU, FIXTURE_WIDTH, FIXTURE_WINDOW,
};
pub use infer::{resize_short_side, window_features, WindowOutput};
pub use run_config::{Mode, RunConfig, RunConfigPatch};
pub use segment::{segment_image, SegmentOutcome};
pub use sweep::{apply_sweep_value, sweep, SweepRow};
pub use window::{window_origins, LogitCanvas};
