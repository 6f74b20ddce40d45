//! Dense tensors, a reverse-mode tape, the Adam optimizer and checkpoint IO.

mod checkpoint;
mod graph;
mod optim;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use graph::{log_softmax, Gradients, Graph, Var};
pub use optim::{adam_step, AdamConfig, LrSchedule};
pub use tensor::{ParameterStore, Tensor};
