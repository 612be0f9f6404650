//! Few-shot classification with hallucinated training data.
//!
//! Novel classes get extra training rows from two sources: features fused
//! with class semantics (`ivdh`), and prototypes plus resampled rows built
//! from the statistics of semantically and visually related base classes
//! (`pvdh`). The `harness` module runs episodes over either pipeline.

mod binio;
pub mod classifier;
pub mod episodes;
pub mod error;
pub mod harness;
pub mod ivdh;
pub mod pvdh;
pub mod relations;
pub mod stats;
pub mod store;
pub mod synthetic;

pub use error::{Error, Result};
