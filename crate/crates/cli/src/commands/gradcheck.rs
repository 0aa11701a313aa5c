use std::fmt::Write;

use refsr_core::autodiff::GradCheckConfig;
use refsr_core::gradsuite::{run_gradient_suite, SuiteCase};

use crate::config::RunConfig;
use crate::run::RunRecord;
use crate::CliError;

/// Runs the gradient suite with points drawn from the run seed, prints a
/// per-kernel table and fails (exit 2) if any check fails.
pub fn gradcheck(cfg: &RunConfig, quiet: bool) -> Result<Vec<SuiteCase>, CliError> {
    let mut rec = RunRecord::start("gradcheck", cfg, quiet)?;
    let gc = GradCheckConfig::default();
    rec.log(format!(
        "central differences h={}, tolerance {}, {} coordinates per check, pass fraction {}",
        gc.h, gc.tol, gc.samples, gc.pass_fraction
    ));
    let cases = run_gradient_suite(cfg.seed, &gc)?;
    rec.log(format!("{:<22} {:>12} {:>9}  status", "kernel", "max_rel_err", "passed"));
    let mut csv = String::from("kernel,max_rel_err,passed,checked,pass\n");
    for c in &cases {
        let r = &c.report;
        let status = if r.pass { "ok" } else { "FAIL" };
        rec.log(format!("{:<22} {:>12.3e} {:>5}/{:<3}  {status}", c.name, r.max_rel_err, r.passed, r.checked));
        writeln!(csv, "{},{},{},{},{}", c.name, r.max_rel_err, r.passed, r.checked, r.pass).expect("string write");
    }
    rec.write("gradcheck.csv", csv.as_bytes())?;
    let failed = cases.iter().filter(|c| !c.report.pass).count();
    rec.log(format!("{} of {} checks passed", cases.len() - failed, cases.len()));
    rec.finish()?;
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} gradient checks failed")));
    }
    Ok(cases)
}
