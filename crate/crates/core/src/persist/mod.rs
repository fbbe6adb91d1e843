//! On-disk formats: checkpoints, dataset directories and metrics files.

mod checkpoint;
mod dataset;
mod metrics;

pub use checkpoint::{
    check_compatible, decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, Header, TensorEntry, MAGIC,
};
pub use dataset::{load_dataset, load_index, save_dataset, DatasetIndex, IndexEntry, INDEX_FILE};
pub use metrics::{append_csv_row, append_json_line, read_json_lines, write_json};
