pub mod embed_io;
pub mod error;
pub mod mapping;
pub mod matrix;
pub mod preprocess;
pub mod retrieval;
pub mod eval;
pub mod refine;
pub mod cli;
