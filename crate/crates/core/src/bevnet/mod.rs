//! The learned BEV pipeline: labels, losses, view transform, decoder and
//! the toy training loop.

pub mod decoder;
pub mod labels;
pub mod losses;
pub mod model;
pub mod train;
pub mod view;

pub use decoder::{decode_backward, decode_bev, decode_forward, ConvLayer, DecoderOutput, DecoderParams, HeadSizes};
pub use labels::{direction_bin, make_direction_labels, rasterize_vector_map, LabelPack};
pub use losses::{
    direction_loss, discriminative_loss, segmentation_loss, step_node, DiscriminativeLoss, LossWeights,
};
pub use model::{encode_image, model_losses, LossBreakdown, Modality, Model, ModelConfig, ModelGradients, Prediction, SceneInput};
pub use view::{neural_view_transform, view_backward, view_forward, ViewTransformParams};
pub use train::{final_loss, pooled_iou, train, train_toy, StepRecord, TrainConfig, TrainOutcome, TrainingSet};
