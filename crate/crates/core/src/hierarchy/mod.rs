//! Combination schedules and bottom-up training with weight-averaged
//! initialization of combined nodes.

mod checkpoint;
mod config;
mod schedule;
mod train;

pub use checkpoint::{checkpoint_file_name, Checkpoint, CheckpointStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{TrainConfig, DEFAULT_SEED};
pub use schedule::{build_schedule, CombinationSchedule, ScheduleNode};
pub use train::{
    class_balanced_batches, compose_node_datasets, init_from_children, load_node_data, node_datasets, node_seed,
    train_bottom_up, train_on_data, train_segment, NodeData, DIVERGENCE_LIMIT, TRAIN_SPLIT, VAL_SPLIT,
};
