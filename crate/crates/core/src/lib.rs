//! Iterative alternating attention reader for Cloze-style comprehension.
//!
//! Pipeline: [`data`] turns corpora into id sequences, [`encoder`] builds
//! bidirectional GRU encodings, [`inference`] runs the alternating
//! query/document attention loop, [`prediction`] turns the last document
//! attention into candidate probabilities, and [`training`] fits the whole
//! thing with ADAM. Everything is differentiated by the small reverse-mode
//! engine in [`tensor`].

pub mod binio;
pub mod cli;
pub mod data;
pub mod dropout;
pub mod encoder;
pub mod error;
pub mod inference;
pub mod model;
pub mod params;
pub mod prediction;
pub mod tensor;
pub mod training;

pub use error::{Category, Error, Result};
