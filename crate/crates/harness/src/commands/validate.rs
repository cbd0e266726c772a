use std::io::Write;

use brwre_core::environment::{validate_model, FindingLevel, ValidationReport};

use crate::config::ExperimentConfig;
use crate::output::fmt_float;

pub fn run_validate(cfg: &ExperimentConfig, out: &mut impl Write) -> std::io::Result<ValidationReport> {
    let report = validate_model(&cfg.model);
    for f in &report.findings {
        let tag = match f.level {
            FindingLevel::Pass => "PASS",
            FindingLevel::Warn => "WARN",
            FindingLevel::Fail => "FAIL",
        };
        writeln!(out, "{tag} {}: {}", f.code, f.message)?;
    }
    writeln!(out, "E ln m_0 = {}", fmt_float(report.expected_log_mean))?;
    for (nu, m) in (2..=6).zip(report.annealed_central_moments) {
        writeln!(out, "E sigma_0^({nu}) = {}", fmt_float(m))?;
    }
    writeln!(out, "{}", if report.passed() { "model valid" } else { "model invalid" })?;
    Ok(report)
}
