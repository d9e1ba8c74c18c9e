//! Scene-text aware multimodal classification.
//!
//! The pipeline turns per-image OCR transcriptions into a text feature
//! (tf-idf top-k selection followed by an embedding sum), fuses it with a
//! precomputed image feature (concatenation, averaging, or compact bilinear
//! pooling through count sketches), and trains a linear softmax classifier
//! on the result. All inputs are plain text / JSON-lines files; see
//! [`datasets`] for the formats.
//!
//! ```
//! use scenefuse::sketch_fusion::{mcb_fuse, FeatureVector, SketchParams};
//!
//! let x = FeatureVector::new(vec![1.0, 2.0, 3.0]).unwrap();
//! let y = FeatureVector::new(vec![0.5, -1.0]).unwrap();
//! let px = SketchParams::generate(3, 8, 1).unwrap();
//! let py = SketchParams::generate(2, 8, 2).unwrap();
//! let z = mcb_fuse(&x, &y, &px, &py, true).unwrap();
//! assert_eq!(z.dim(), 8);
//! ```

pub mod classifier;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod rng;
pub mod sketch_fusion;
pub mod text_features;

pub use error::{Error, Result};
pub use sketch_fusion::FeatureVector;
