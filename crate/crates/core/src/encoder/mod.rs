//! Voxelwise ridge encoding models with nested cross-validation.
//!
//! Each outer fold keeps its own model, fitted on standardized training rows
//! and converted back to raw design units (`y = bias + x W`). Attribution of a
//! TR uses the model of the fold that held that TR out.

mod cv;
mod model;
mod ridge;

pub use cv::{fit_fold, nested_cv, nested_cv_matrices, CvOptions, CvResult, FoldSpec};
pub use model::{
    decompose_weights, design_to_matrix, restack, select_layers, write_alignment_csv, EncodingModel, FoldModel, Head,
    ResponseMatrix, MODEL_FORMAT, MODEL_VERSION,
};
pub use ridge::{default_lambdas, fit_ridge, log_grid, pearson, pearson_per_voxel, RidgeSolver};
