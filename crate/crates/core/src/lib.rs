pub mod annotations;
pub mod catalog;
pub mod export;
pub mod qc;
pub mod quality;
pub mod vocab;
pub mod workspace;
