//! Corpus ingestion, synthetic data and splitting.

pub mod corpus;
pub mod record;
pub mod split;
pub mod synth;

pub use corpus::{load_corpus, write_corpus};
pub use record::{DatasetManifest, ManifestFile, RecordRef, SampleRecord, Split};
pub use split::split;
pub use synth::{generate_synthetic, SynthConfig};
