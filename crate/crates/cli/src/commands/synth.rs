use std::fmt::Write;

use super::{pgm, scene, validate};
use crate::config::RunConfig;
use crate::run::RunRecord;
use crate::CliError;

/// Writes the HR target, its LR version, the reference and the per-pixel
/// ground-truth correspondences of one synthetic pair.
pub fn synth(cfg: &RunConfig, quiet: bool) -> Result<(), CliError> {
    validate(cfg)?;
    let mut rec = RunRecord::start("synth", cfg, quiet)?;
    let sc = scene(cfg, cfg.seed)?;
    rec.write("t2_hr.pgm", &pgm(&sc.pair.t2)?)?;
    rec.write("t2_lr.pgm", &pgm(&sc.lr)?)?;
    rec.write("pd_ref.pgm", &pgm(&sc.pair.pd)?)?;

    let w = cfg.size;
    let mut csv = String::from("row,col,ref_row,ref_col\n");
    for (i, p) in sc.pair.correspondence.positions.iter().enumerate() {
        if let Some((y, x)) = p {
            writeln!(csv, "{},{},{y},{x}", i / w, i % w).expect("string write");
        }
    }
    rec.write("correspondence.csv", csv.as_bytes())?;
    rec.log(format!(
        "{}: {} foreground pixels, reference/target scale {}",
        sc.id(cfg),
        sc.pair.correspondence.foreground_count(),
        sc.pair.correspondence.ratio
    ));
    rec.finish()
}
