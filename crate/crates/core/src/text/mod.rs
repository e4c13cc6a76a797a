//! Alphabet, label batches, CE/CTC objectives, greedy decoders and metrics.

mod alphabet;
pub mod ctc;
mod decode;
mod loss;
mod metrics;

pub use alphabet::{Alphabet, LabelBatch};
pub use decode::{decode_ce, decode_ctc, decode_ctc_batch};
pub use loss::{ce_loss, smoothed_targets};
pub use metrics::{edit_distance, metrics, Metrics};
