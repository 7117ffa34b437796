pub mod error;
pub mod gaussian;
pub mod lp;
pub mod sampling;
pub mod violation;
pub mod volume;
pub mod model;
pub mod mve;
pub mod recipes;
