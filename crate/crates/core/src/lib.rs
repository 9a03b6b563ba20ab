pub mod config;
pub mod data;
pub mod evaluation;
pub mod geometry;
pub mod layers;
pub mod losses;
pub mod network;
pub mod pose;
pub mod tensor;
pub mod training;
