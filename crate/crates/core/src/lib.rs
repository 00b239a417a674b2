//! Visually grounded speech at desk scale.
//!
//! Matchmap attention between spoken frames and image cells, contrastive
//! training objectives, few-shot pair mining, and the evaluation protocols
//! for few-shot word learning, keyword localisation and mutual exclusivity.
//! Everything runs on plain feature tensors, either generated here with
//! known ground truth or supplied through the manifest format.

pub mod attention;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod mining;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod train;
pub mod types;

pub use attention::{LocalisationResult, SimilarityHead, WordImageScore};
pub use data::{Dataset, DatasetManifest, GeneratorConfig, Prototypes, Tensor, ValidationReport};
pub use error::{Error, Result};
pub use eval::{EvalReport, MeVariant, TrialSpec};
pub use losses::LossConfig;
pub use mining::{MinedPairSet, SegmentMatch};
pub use model::{Embedder, ExchangeableScorer, Model, ModelDims, PrototypeOracle, Scorer, WordToImage};
pub use rng::RandomSource;
pub use train::{Checkpoint, Stage, TrainConfig};
pub use types::{
    AlignmentSpan, ClassId, Embedding, Familiarity, FrameSequence, LabeledItem, Language, MatchingSet, Matchmap,
    PixelGrid, Split, SupportPair, SupportSet,
};

/// Toolkit version recorded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
