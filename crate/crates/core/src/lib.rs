//! Distributed Nash equilibrium seeking for games between coalitions whose
//! agents only estimate the gradient components they interfere with.

pub mod analysis;
pub mod dynamics;
pub mod expr;
pub mod game;
pub mod graph;
pub mod numeric;
pub mod oracle;
pub mod presets;
pub mod scenario;
