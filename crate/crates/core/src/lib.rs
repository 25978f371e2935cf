//! Semantically guided copy-paste augmentation for object-detection datasets.
//!
//! The crate decides *what* object to paste into a training image and *where*
//! to put it by comparing word embeddings of category labels, then composites
//! the chosen instance and rewrites the annotations.
//!
//! The pieces, bottom-up:
//!
//! - [`embedding`]: word-vector loading, label resolution, similarity metrics.
//! - [`mask`]: binary masks, instance maps, run-length and polygon codecs.
//! - [`annotation`]: COCO-style JSON and VOC-style XML datasets.
//! - [`bank`]: the object bank of cropped instances and masks.
//! - [`matcher`]: pairwise label similarity and category selection strategies.
//! - [`compositor`]: scaling, placement, compositing, blending and occlusion.
//! - [`augment`]: the per-image augmentation procedure.
//! - [`config`] and [`pipeline`]: reproducible dataset-level commands.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod annotation;
pub mod augment;
pub mod bank;
pub mod compositor;
pub mod config;
pub mod embedding;
pub mod error;
pub mod mask;
pub mod matcher;
pub mod pipeline;
pub mod rng;
pub mod synthetic;

pub use annotation::{AnnotatedImage, AnnotatedObject, BBox, Dataset, DatasetFormat, DatasetManifest};
pub use augment::{augment_image, AugmentParams, CompositeResult};
pub use bank::{BankEntry, MaskSource, ObjectBank};
pub use config::AugmentationConfig;
pub use embedding::{EmbeddingStore, SimilarityMetric, WordVector};
pub use error::{Error, Result};
pub use mask::{BinaryMask, PixelRect};
pub use matcher::{CategoryCounter, MatchDecision, SelectionStrategy, StrategyKind};
