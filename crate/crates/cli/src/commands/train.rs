use std::fmt::Write;

use refsr_core::data_io::encode_checkpoint;
use refsr_core::losses::LossReport;
use refsr_core::model::{forward_full, Model, Trainer};

use super::{pgm, scene, validate};
use crate::config::RunConfig;
use crate::run::RunRecord;
use crate::CliError;

/// Loss history of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Losses evaluated at each step, before that step's update.
    pub history: Vec<LossReport>,
}

/// Fits a seeded model to the configured synthetic pair and writes the loss
/// history, the checkpoint and the final super-resolved image.
pub fn train(cfg: &RunConfig, quiet: bool) -> Result<TrainOutcome, CliError> {
    validate(cfg)?;
    let mut rec = RunRecord::start("train", cfg, quiet)?;
    let sc = scene(cfg, cfg.seed)?;
    let model = Model::new(cfg.model_config(), cfg.seed);
    rec.log(format!("{} parameters, {} steps on {}", model.num_parameters(), cfg.steps, sc.id(cfg)));
    let mut trainer = Trainer::new(model, cfg.train_config(), &sc.lr, &sc.pair.pd, &sc.pair.t2)?;

    let mut csv = String::from("step,l1,ssim_loss,fr,total\n");
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let r = trainer.step()?;
        writeln!(csv, "{step},{},{},{},{}", r.l1, r.ssim_loss, r.fr, r.total).expect("string write");
        if step == 1 || step % 50 == 0 || step == cfg.steps {
            rec.log(format!("step {step}: total {:.6} (l1 {:.6} ssim {:.6} fr {:.6})", r.total, r.l1, r.ssim_loss, r.fr));
        }
        history.push(r);
    }
    rec.write("loss.csv", csv.as_bytes())?;
    rec.write("checkpoint.ftck", &encode_checkpoint(&trainer.model.named_tensors())?)?;
    let (sr, _) = forward_full(&trainer.model, &sc.lr, &sc.pair.pd)?;
    rec.write("sr.pgm", &pgm(&sr)?)?;
    rec.finish()?;
    Ok(TrainOutcome { history })
}
