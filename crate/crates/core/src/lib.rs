//! Legal statute identification as inductive link prediction over a
//! heterogeneous citation network of facts and statutes.
//!
//! The pipeline: facts and the statute hierarchy are loaded ([`corpus`]) and
//! split ([`split`]); training facts plus the hierarchy form a typed citation
//! graph ([`graph`]); a hierarchical attention encoder ([`han`]) embeds text,
//! a metapath encoder ([`structural`]) embeds graph neighborhoods, and a shared
//! scorer ([`scorer`]) produces attribute, structural and alignment scores
//! that [`training`] combines into a weighted loss and thresholded predictions.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod graph;
pub mod han;
pub mod layers;
pub mod model;
pub mod pipeline;
pub mod scorer;
pub mod split;
pub mod structural;
pub mod synth;
pub mod tape;
pub mod training;

pub use error::{Error, Result};
