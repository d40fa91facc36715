use thiserror::Error;

use crate::validate::Violation;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scenario invalid: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(vs: &[Violation]) -> String {
    let shown: Vec<String> = vs.iter().take(5).map(|v| v.to_string()).collect();
    let mut s = shown.join("; ");
    if vs.len() > 5 {
        s.push_str(&format!(" (+{} more)", vs.len() - 5));
    }
    s
}
