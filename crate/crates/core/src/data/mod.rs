//! Corpus ingestion, text encoding and batching.

mod batch;
mod iam;
mod vocab;

pub use batch::{
    make_batches, truncated_offsets, Batch, BatchIter, DatasetSplit, DEFAULT_MAX_LEN,
    DEFAULT_VALIDATION_FRACTION,
};
pub use iam::{
    load_iam, parse_ascii_transcription, parse_iam_linestrokes, CorpusStats, IamCorpus,
    ASCII_DIR, LINE_STROKES_DIR,
};
pub use vocab::{encode_text, TextEncoding, Vocabulary, UNKNOWN, VOCAB_SIZE};
