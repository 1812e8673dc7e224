//! Small feedforward and convolutional networks with hand-written
//! backpropagation, first-order trainers and a closed-form linear baseline.
//!
//! Parameters live in one flat vector laid out block by block (trunk, then
//! heads in order); batch-normalization running statistics live in a separate
//! buffer vector so that gradients and parameters stay in one-to-one
//! correspondence.

mod checkpoint;
mod elm;
mod gradcheck;
mod layers;
mod network;
mod optim;
mod spec;
mod tensor;
mod train;

pub use checkpoint::{stopping_iteration, Checkpoint, Normalization, Prediction, StageHistory};
pub use elm::{elm_fit, ElmModel};
pub use gradcheck::{gradient_check, GradCheckReport, GRADCHECK_FLOOR};
pub use network::{Cache, Mode, Network};
pub use optim::{mse_loss, optimizer_step, OptimizerSpec, OptimizerState};
pub use spec::{HeadKind, HeadSpec, LayerSlot, LayerSpec, Layout, NetworkSpec, TRUNK};
pub use tensor::Tensor;
pub use train::{train, train_two_stage, TrainingOptions, TrainingSet};
