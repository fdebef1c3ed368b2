//! The spatial-correlation network: a small MLP over pooled RoI features with
//! a zoom indicator head and per-overlap-pattern box prediction heads.

pub mod dataset;
pub mod io;
pub mod labels;
pub mod loss;
pub mod model;
pub mod train;

pub use dataset::{build_training_image, training_rois, RoiSampling};
pub use io::{load_model, save_model, write_loss_history};
pub use labels::{make_labels, zoom_label, ScNetLabels};
pub use loss::{loss, smooth_l1, xent, LossWeights};
pub use model::{sigmoid, Dense, OutputGrad, ScNetModel, ScNetOutput};
pub use train::{moving_average, train, train_from, ScNetConfig, TrainOutcome, TrainingImage, TrainingSample};
