//! Alternating-view k-means (AV-KMEANS).
//!
//! Joint representation learning and clustering over two-view corpora: each
//! instance is split into a query view (the opening user utterance) and a
//! content view (the rest of the conversation). Cluster assignments computed
//! on one view supervise prototypical-network training of the other view's
//! encoder, and warm-started k-means carries the assignment back.
//!
//! Modules:
//! - [`corpus`]: two-view corpora, tokenization, vocabularies, word embeddings
//! - [`encoders`]: averaging / BiLSTM / hierarchical BiLSTM encoders with
//!   hand-written reverse-mode gradients and Adam
//! - [`kmeans`]: Lloyd's k-means with k-means++ seeding and warm starts
//! - [`protonet`]: episodic prototypical-network training
//! - [`avkmeans`]: the alternating-view driver
//! - [`pretrain`]: autoencoder and quick-thoughts encoder pretraining
//! - [`evaluation`]: precision / recall / F1 and Hungarian-matched accuracy
//! - [`dataprep`]: duplicate-question clusters and synthetic planted corpora

pub mod avkmeans;
pub mod corpus;
pub mod dataprep;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod kmeans;
pub mod linalg;
pub mod pretrain;
pub mod protonet;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::Matrix;
