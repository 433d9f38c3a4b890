pub mod cartridge;
pub mod dataset;
pub mod preprocess;
pub mod provenance;
pub mod scm;
pub mod study;
pub mod swglm;
