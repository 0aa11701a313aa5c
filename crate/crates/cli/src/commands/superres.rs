use std::path::Path;

use refsr_core::data_io::{bicubic_upsample, decode_image};
use refsr_core::model::forward_full;

use super::{load_model, pgm, validate, SR_FACTOR};
use crate::config::RunConfig;
use crate::run::RunRecord;
use crate::CliError;

pub fn superres(
    cfg: &RunConfig,
    lr_path: &Path,
    ref_path: &Path,
    checkpoint: Option<&Path>,
    quiet: bool,
) -> Result<(), CliError> {
    validate(cfg)?;
    let mut rec = RunRecord::start("superres", cfg, quiet)?;
    let lr = decode_image(&rec.read_input(lr_path)?).map_err(CliError::invalid)?;
    let pd = decode_image(&rec.read_input(ref_path)?).map_err(CliError::invalid)?;
    let (lh, lw) = (lr.shape()[1], lr.shape()[2]);
    let (rh, rw) = (pd.shape()[1], pd.shape()[2]);
    if rh != SR_FACTOR * lh || rw != SR_FACTOR * lw {
        return Err(CliError::Invalid(format!(
            "reference is {rh}x{rw}; expected {}x{} for a {lh}x{lw} input",
            SR_FACTOR * lh,
            SR_FACTOR * lw
        )));
    }
    let model = load_model(cfg, checkpoint, &mut rec)?;
    let (sr, _) = forward_full(&model, &lr, &pd)?;
    rec.write("sr.pgm", &pgm(&sr)?)?;
    rec.write("bicubic.pgm", &pgm(&bicubic_upsample(&lr, SR_FACTOR)?)?)?;
    rec.log(format!("super-resolved {lh}x{lw} to {rh}x{rw}"));
    rec.finish()
}
