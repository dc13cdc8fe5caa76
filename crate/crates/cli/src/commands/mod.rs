pub mod attack;
pub mod gen_data;
pub mod report;
pub mod train;
