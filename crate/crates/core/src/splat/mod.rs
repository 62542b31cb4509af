//! Differentiable isotropic Gaussian splatting with orthographic cameras.

mod camera;
mod cloud;
mod loss;
mod optim;
mod render;
mod scene_io;

pub use camera::{mat_mul, mat_vec, rot_x, rot_y, transpose, Camera, Mat3, IDENTITY};
pub use cloud::{logit, sigmoid, CloudGradients, Gaussian, GaussianCloud, PARAMS_PER_GAUSSIAN};
pub use loss::{
    anchor_loss, anchor_loss_grad, huber, l1_loss, l1_loss_grad, perceptual_loss,
    perceptual_loss_grad, pyramid_factors, smooth_l1_loss_grad, smooth_perceptual_loss_grad,
    PYRAMID_LEVELS,
};
pub use optim::{apply_grad_step, GroupRates};
pub use render::{
    latent_of_image, project, render, render_backward, Projected, RenderedImage, ALPHA_MAX,
    CUTOFF_SIGMAS,
};
pub use scene_io::{load_scene, parse_scene, save_scene, scene_from_doc, scene_to_string, Scene};
