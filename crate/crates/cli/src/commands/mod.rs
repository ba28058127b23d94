pub mod eval;
pub mod gen_benchmark;
pub mod hist;
pub mod preview;
pub mod train;
