//! Built-in experiment specs.

use crate::error::CliError;
use crate::spec::ExperimentSpec;

pub const PRESETS: [(&str, &str); 4] = [
    ("iid-mnist-like", include_str!("../presets/iid-mnist-like.toml")),
    ("noniid-fmnist-like", include_str!("../presets/noniid-fmnist-like.toml")),
    ("theory-quadratic", include_str!("../presets/theory-quadratic.toml")),
    ("hybrid-round20", include_str!("../presets/hybrid-round20.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset(name: &str) -> Result<ExperimentSpec, CliError> {
    let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        CliError::config(format!("unknown preset `{name}`; available: {}", names().collect::<Vec<_>>().join(", ")))
    })?;
    ExperimentSpec::from_toml(text)
}
