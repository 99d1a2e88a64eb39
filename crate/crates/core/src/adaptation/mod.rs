//! Cycle-consistent target-to-source image translation with a nested
//! mask-space adversary that judges the frozen segmenter's predictions on
//! translated images.

mod losses;
mod networks;
mod pool;
mod schedule;
mod state;

pub use losses::{
    cycle_loss, lsgan_losses, semantic_losses, smoothed_one_hot, total_objective, LossComponents, LossWeights,
};
pub use networks::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
pub use pool::ImagePool;
pub use schedule::{lr_at, LrSchedule};
pub use state::{
    build_adaptation, train_adaptation, train_adaptation_with, AdaptationConfig, AdaptationState, EpochLog,
    GeneratorPass, LossReport,
};
