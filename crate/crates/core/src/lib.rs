pub mod align;
pub mod data;
pub mod engine;
pub mod gcn;
pub mod graph;
pub mod tensor;
pub mod towers;
