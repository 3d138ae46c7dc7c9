pub mod backends;
pub mod context;
pub mod encoder;
pub mod engine;
pub mod eval;
pub mod index;
pub mod memory;
pub mod repository;
pub mod tokens;
pub mod writer;
