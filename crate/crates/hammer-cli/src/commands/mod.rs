pub mod ablate;
pub mod eval;
pub mod gen_data;
pub mod localize;
pub mod train;
