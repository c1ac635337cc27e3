mod bitio;
pub mod coder;
pub mod container;
pub mod context;
pub mod error;
pub mod mixer;
pub mod pipeline;
pub mod ssm;
pub mod tokenizer;
pub mod vocabmap;

pub use error::{Error, Result};
pub use pipeline::{compress, decompress, CodecOptions, Variant};
pub use tokenizer::TokenizerDefinition;
