//! Experiment runner for stochastic receding-horizon control: configuration
//! files, the moment cache, closed-loop experiments and their artifacts.

pub mod cache;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

pub use error::{CliError, Result};

/// Bundled configurations, by name.
pub const BUNDLED: [(&str, &str); 3] = [
    ("example61", include_str!("../configs/example61.toml")),
    ("example62", include_str!("../configs/example62.toml")),
    ("example63", include_str!("../configs/example63.toml")),
];

pub fn bundled_config(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}
