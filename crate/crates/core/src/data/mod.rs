//! Class datasets, their on-disk format, synthetic generation and task splits.

mod dataset;
pub mod format;
mod stream;
mod synthetic;

pub use dataset::{load_dataset, save_dataset, validate_classes, ClassDataset, ClassId, Split, MANIFEST};
pub use stream::{build_task_stream, StreamLayout, Task, TaskStream};
pub use synthetic::{generate_synthetic, SyntheticSpec};
