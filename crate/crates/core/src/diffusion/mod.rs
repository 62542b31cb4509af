//! Noise schedules, DDIM/DDCM sampling steps and analytic score models.

mod sampler;
mod schedule;
mod score;

pub use sampler::{
    add_noise, ddcm_sample, ddcm_step, ddcm_x0_step, ddim_step, predict_x0, DdcmTrajectory,
};
pub use schedule::{NoiseSchedule, ScheduleKind};
pub use score::{AnalyticGmmScore, Component, Condition, ScoreModel};
