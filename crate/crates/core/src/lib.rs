pub mod autodiff;
pub mod cloze;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod io;
pub mod kv;
pub mod models;
pub mod preprocess;
pub mod rng;
pub mod scoring;
pub mod synth;
pub mod table;
pub mod tokenizer;
pub mod trainer;
pub mod zorro;

pub use error::{Error, Result};
