//! Core library for the grokking lab.

pub mod group;
pub mod ka;
pub mod tensor;
pub mod gradcheck;
pub mod model;
pub mod checkpoint;
pub mod dataset;
pub mod training;
pub mod transfer;
pub mod analysis;
