use std::fmt::Write;
use std::path::{Path, PathBuf};

use refsr_core::data_io::bicubic_upsample;
use refsr_core::losses::{psnr, residual_map, ssim_index, total_loss, LossWeights};
use refsr_core::model::forward_full;
use refsr_core::Tensor;

use super::{load_model, pgm, scene, unit_to_image, validate, SR_FACTOR};
use crate::config::RunConfig;
use crate::run::RunRecord;
use crate::CliError;

pub const METRICS_HEADER: &str = "image_id,psnr_db,ssim,l1,fr,total";

/// Quality of one image against its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub image_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub l1: f64,
    pub fr: f64,
    pub total: f64,
}

impl ImageMetrics {
    fn measure(image_id: String, img: &Tensor, hr: &Tensor, weights: &LossWeights) -> Result<Self, CliError> {
        let losses = total_loss(img, hr, weights)?;
        Ok(Self {
            image_id,
            psnr_db: psnr(img, hr)?,
            ssim: ssim_index(img, hr)?,
            l1: losses.l1,
            fr: losses.fr,
            total: losses.total,
        })
    }

    fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.image_id, self.psnr_db, self.ssim, self.l1, self.fr, self.total)
    }
}

/// Model and bicubic metrics, one entry per image in seed order.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub model: Vec<ImageMetrics>,
    pub bicubic: Vec<ImageMetrics>,
}

/// Evaluates the model on `images` synthetic pairs seeded consecutively from
/// the run seed, writing `metrics.csv`, `bicubic.csv`, the super-resolved
/// images and normalized residual maps.
pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, images: usize, quiet: bool) -> Result<EvalOutcome, CliError> {
    validate(cfg)?;
    if images == 0 {
        return Err(CliError::Invalid("--images must be >= 1".into()));
    }
    let mut rec = RunRecord::start("eval", cfg, quiet)?;
    let default_ckpt: PathBuf = rec.out_dir().join("checkpoint.ftck");
    let ckpt = checkpoint.or_else(|| default_ckpt.exists().then_some(default_ckpt.as_path()));
    let model = load_model(cfg, ckpt, &mut rec)?;
    let weights = cfg.train_config().loss;

    let mut out = EvalOutcome { model: Vec::new(), bicubic: Vec::new() };
    for k in 0..images as u64 {
        let sc = scene(cfg, cfg.seed + k)?;
        let id = sc.id(cfg);
        let hr = &sc.pair.t2;
        let (sr, _) = forward_full(&model, &sc.lr, &sc.pair.pd)?;
        let bic = bicubic_upsample(&sc.lr, SR_FACTOR)?;
        let m = ImageMetrics::measure(id.clone(), &sr, hr, &weights)?;
        let b = ImageMetrics::measure(id.clone(), &bic, hr, &weights)?;
        rec.log(format!(
            "{id}: model {:.3} dB / SSIM {:.4}, bicubic {:.3} dB / SSIM {:.4}",
            m.psnr_db, m.ssim, b.psnr_db, b.ssim
        ));
        rec.write(&format!("sr_{id}.pgm"), &pgm(&sr)?)?;
        rec.write(&format!("residual_{id}.pgm"), &pgm(&unit_to_image(&residual_map(&sr, hr)?.1))?)?;
        rec.write(&format!("residual_bicubic_{id}.pgm"), &pgm(&unit_to_image(&residual_map(&bic, hr)?.1))?)?;
        out.model.push(m);
        out.bicubic.push(b);
    }
    for (name, rows) in [("metrics.csv", &out.model), ("bicubic.csv", &out.bicubic)] {
        let mut csv = format!("{METRICS_HEADER}\n");
        for r in rows {
            writeln!(csv, "{}", r.csv_row()).expect("string write");
        }
        rec.write(name, csv.as_bytes())?;
    }
    rec.finish()?;
    Ok(out)
}
