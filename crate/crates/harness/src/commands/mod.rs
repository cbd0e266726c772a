pub mod edgeworth;
pub mod expansion;
pub mod selftest;
pub mod simulate;
pub mod validate;

use std::path::{Path, PathBuf};

use anyhow::Context;

/// Everything a command needs besides its configuration.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>, workers: usize) -> Self {
        Self {
            out_dir: out_dir.into(),
            workers,
        }
    }

    pub fn prepare(&self) -> anyhow::Result<&Path> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating output directory {}", self.out_dir.display()))?;
        Ok(&self.out_dir)
    }
}

/// A named pass/fail verdict in a summary.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Verdict {
    pub name: String,
    /// `None` when the check does not apply to this configuration.
    pub passed: Option<bool>,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: Some(passed),
            detail,
        }
    }

    pub fn skipped(name: &str, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: None,
            detail,
        }
    }

    pub fn line(&self) -> String {
        let tag = match self.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        format!("{tag} {}: {}", self.name, self.detail)
    }
}

pub fn all_passed(verdicts: &[Verdict]) -> bool {
    verdicts.iter().all(|v| v.passed != Some(false))
}
