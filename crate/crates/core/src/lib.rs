pub mod arrivals;
pub mod drift;
pub mod error;
pub mod eval;
pub mod excursions;
pub mod grid;
pub mod inference;
pub mod likelihood;
pub mod rng;
pub mod sim;

