//! Train CNN image classifiers on directory-structured datasets, evaluate
//! them, and explain their predictions with CAM-family saliency maps.

pub mod backbones;
pub mod cam;
pub mod dataset;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod preprocess;
pub mod pretrain;
pub mod reporting;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use scalar::Scalar;

/// Single-precision types used by the command-line pipeline.
pub type Image32 = image::Image<f32>;
pub type Model32 = backbones::ClassifierModel<f32>;
pub type Heatmap32 = cam::Heatmap<f32>;
pub type TapResult32 = backbones::TapResult<f32>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type LabeledImage32 = dataset::LabeledImage<f32>;

/// Double-precision types used by the gradient and CAM oracles.
pub type Image64 = image::Image<f64>;
pub type Model64 = backbones::ClassifierModel<f64>;
pub type Heatmap64 = cam::Heatmap<f64>;
pub type TapResult64 = backbones::TapResult<f64>;
pub type Tensor64 = tensor::Tensor<f64>;
