//! Training paths, objectives, optimizer/EMA updates and the training loop.

pub mod config;
pub mod losses;
pub mod optim;
pub mod paths;
pub mod trainer;

pub use config::TrainConfig;
pub use losses::{hinge_d, hinge_g, loss_d, loss_g, loss_rec, loss_sty, r1_penalty, LossReport};
pub use optim::{ema_update, Adam};
pub use paths::{run_paths, PathOutputs};
pub use trainer::{train, TrainOptions, TrainSummary, Trainer};
