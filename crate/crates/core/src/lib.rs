//! Zero-shot extreme multi-label classification with a teacher in the loop.
//!
//! A light bi-encoder embeds documents and label texts onto the unit sphere.
//! Each training cycle shortlists labels per document by nearest-neighbor
//! search, asks a relevance teacher which shortlisted labels fit, and trains
//! the encoder on the approved pairs with a margin triplet loss and in-batch
//! negatives. At inference only the encoder and a label index are needed.

pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod index;
pub mod synth;
pub mod teacher;
pub mod trainer;
