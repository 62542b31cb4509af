//! Score-distillation pseudo-ground-truths and the reconstruction view of
//! the distillation gradient.

mod annealing;
mod demo;
mod equivalence;
mod pseudo_gt;
mod residual;

pub use annealing::{AnnealCurve, AnnealingSchedule};
pub use demo::{
    demo_fixed_point, demo_images, demo_symbolic_pseudo_gt, run_distill_demo, run_distill_demo_with, DemoStep,
    DistillDemoConfig, DistillDemoResult,
};
pub use equivalence::{assert_sds_equivalence, residual_gap, EquivalenceReport, EQUIVALENCE_TOL};
pub use pseudo_gt::{
    ddim_invert_to, default_classifier_direction, pseudo_gt, pseudo_gt_terms,
    ClassifierDirection, IsmContext, IsmStep, NfsdContext, PseudoGtContext, PseudoGtKind,
    PseudoGtTerms,
};
pub use residual::{sds_residual_classic, sds_residual_recon, WeightSchedule};
