//! Shared command plumbing: failure classification mapped to process exit
//! codes, scenario and problem-file loading, output formatting, and the
//! `DIFFTRAFFIC_LOG` progress channel.

use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use anyhow::{Context, Result};
use difftraffic_core::{validate_scenario, Scenario};
use serde::Serialize;

/// Bad input: unreadable files, malformed JSON, failed validation. Exit 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

/// Failed run: simulation aborts or optimizer breakdowns. Exit 1.
#[derive(Debug)]
pub struct RunError(pub String);

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for RunError {}

pub fn input_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(InputError(msg.into()))
}

pub fn run_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(RunError(msg.into()))
}

/// Exit code for a failed command: 2 when any error in the chain is
/// input-side, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.is::<InputError>() {
        2
    } else {
        1
    }
}

/// Parse and validate a scenario file. Parse errors carry the serde message,
/// which names the offending key and its line; validation errors name the
/// entity.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)
        .map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))?;
    let sc: Scenario = serde_json::from_str(&text)
        .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let violations = validate_scenario(&sc);
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(input_error(format!(
            "{}: invalid scenario: {}",
            path.display(),
            msgs.join("; ")
        )));
    }
    Ok(sc)
}

/// Read a JSON problem description.
pub fn load_spec<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

/// 17 significant digits, enough to restore the exact f64 bits.
pub fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .with_context(|| format!("serializing {}", path.display()))?;
    text.push('\n');
    write_text(path, &text)
}

/// Whether `DIFFTRAFFIC_LOG` asks for progress chatter on stderr.
pub fn verbose() -> bool {
    static ON: OnceLock<bool> = OnceLock::new();
    *ON.get_or_init(|| match std::env::var("DIFFTRAFFIC_LOG") {
        Ok(v) => !matches!(v.as_str(), "" | "0" | "off"),
        Err(_) => false,
    })
}

pub fn note(msg: impl AsRef<str>) {
    if verbose() {
        eprintln!("[difftraffic] {}", msg.as_ref());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_kind() {
        assert_eq!(exit_code(&input_error("bad file")), 2);
        assert_eq!(exit_code(&run_error("solver died")), 1);
        let wrapped = input_error("bad file").context("while loading");
        assert_eq!(exit_code(&wrapped), 2);
    }

    #[test]
    fn sig17_round_trips_f64_bits() {
        for &x in &[0.1, 1.0 / 3.0, 1234.5678e-12, -0.375, std::f64::consts::PI] {
            let back: f64 = sig17(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn missing_scenario_file_is_an_input_error() {
        let err = load_scenario(Path::new("/nonexistent/s.json")).unwrap_err();
        assert_eq!(exit_code(&err), 2);
    }
}
