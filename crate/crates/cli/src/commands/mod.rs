//! Subcommand bodies. Each validates its configuration up front (exit 1),
//! then runs and writes artifacts through a [`RunRecord`] (exit 2 on failure).

mod align;
mod eval;
mod gradcheck;
mod superres;
mod synth;
mod train;

use std::path::Path;

pub use align::{align, AlignOutcome};
pub use eval::{eval, EvalOutcome, ImageMetrics, METRICS_HEADER};
pub use gradcheck::gradcheck;
pub use superres::superres;
pub use synth::synth;
pub use train::{train, TrainOutcome};

use refsr_core::data_io::{apply_noise, decode_checkpoint, encode_image, make_lr, synth_pair, SynthPair};
use refsr_core::model::Model;
use refsr_core::Tensor;

use crate::config::RunConfig;
use crate::run::RunRecord;
use crate::CliError;

/// Super-resolution factor between the LR input and the reference.
pub const SR_FACTOR: usize = 4;

/// Rejects configurations the library would refuse, before any output is
/// written.
pub(crate) fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.model_config().align.validate().map_err(CliError::invalid)?;
    let spec = cfg.synth_spec(cfg.scenario, cfg.seed);
    spec.validate().map_err(CliError::invalid)?;
    apply_noise(&Tensor::zeros(&[1, cfg.size, cfg.size]), &spec.noise).map_err(CliError::invalid)?;
    Ok(())
}

pub(crate) struct Scene {
    pub seed: u64,
    pub pair: SynthPair,
    pub lr: Tensor,
}

impl Scene {
    pub fn id(&self, cfg: &RunConfig) -> String {
        format!("{}-{}", cfg.scenario.label(), self.seed)
    }
}

/// The configured synthetic pair for `seed` and its LR target.
pub(crate) fn scene(cfg: &RunConfig, seed: u64) -> Result<Scene, CliError> {
    let pair = synth_pair(&cfg.synth_spec(cfg.scenario, seed))?;
    let lr = make_lr(&pair.t2, SR_FACTOR)?;
    Ok(Scene { seed, pair, lr })
}

/// Parameters from a checkpoint, or a fresh model drawn from the run seed.
pub(crate) fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>, rec: &mut RunRecord) -> Result<Model, CliError> {
    match checkpoint {
        Some(path) => {
            let bytes = rec.read_input(path)?;
            let records = decode_checkpoint(&bytes).map_err(CliError::invalid)?;
            let model = Model::from_named(cfg.model_config(), records).map_err(CliError::invalid)?;
            rec.log(format!("loaded {} parameters from {}", model.num_parameters(), path.display()));
            Ok(model)
        }
        None => {
            rec.log(format!("untrained model from seed {}", cfg.seed));
            Ok(Model::new(cfg.model_config(), cfg.seed))
        }
    }
}

pub(crate) fn pgm(img: &Tensor) -> Result<Vec<u8>, CliError> {
    Ok(encode_image(img)?)
}

/// Maps a `[0, 1]` map onto the `[−1, 1]` image range for export.
pub(crate) fn unit_to_image(map: &Tensor) -> Tensor {
    map.map(|v| 2.0 * v - 1.0)
}
