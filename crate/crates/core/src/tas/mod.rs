//! Trajectory-anchored multi-view editing of a Gaussian cloud.

mod config;
mod engine;
mod metrics;
mod session;
mod session_file;
mod toy;

pub use config::{default_t_q, ScoreBackend, TasConfig};
pub use engine::{
    compute_loss, draw_noise, form_pseudo_gts, pseudo_gt_from_eps, pseudo_gt_literal, reconstruct,
    run_no_tas, run_tas, run_variant, tas_outer_step, trajectory_steps, InnerResult, LossTerms, LossWeights,
    OuterStep, PseudoGtStep, TasRun, Variant,
};
pub use metrics::{
    cross_view_disagreement, edit_window, psnr, MetricsLog, MetricsRow, CSV_HEADER,
};
pub use session::{EditSession, TargetMode};
pub use session_file::{write_toy_session, MaskSpec, SessionSpec, TargetModeSpec};
pub use toy::{toy_scenario, ToyScenario};
