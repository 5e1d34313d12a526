pub mod analysis;
pub mod corpus;
pub mod fixtures;
pub mod fuzz;
pub mod geometry;
pub mod map;
pub mod mutation;
pub mod rng;
pub mod scenario;
pub mod sem;
pub mod sim;
