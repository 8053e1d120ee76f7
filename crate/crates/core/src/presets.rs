//! Scenario files shipped with the library.

use crate::game::Game;
use crate::scenario::{parse_scenario, Scenario, ScenarioError};

const PRESETS: &[(&str, &str)] = &[
    ("example2", include_str!("../presets/example2.toml")),
    ("coalition1-fig1", include_str!("../presets/coalition1-fig1.toml")),
    ("congestion-demo", include_str!("../presets/congestion-demo.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// TOML text of a preset.
pub fn source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<Scenario, ScenarioError> {
    parse_scenario(source(name).ok_or_else(|| ScenarioError::UnknownPreset(name.to_string()))?)
}

pub fn example2() -> Scenario {
    load("example2").expect("shipped preset is valid")
}

pub fn example2_game() -> Game {
    example2().game
}
