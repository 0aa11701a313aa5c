use std::fmt::Write;

use refsr_core::alignment::{is_hit, score_matches, AlignmentPlan, MatchAccuracy, MatchMethod};
use refsr_core::extractor::build_inputs;
use refsr_core::model::Model;
use refsr_core::Tensor;

use super::{pgm, scene, validate, Scene};
use crate::config::RunConfig;
use crate::run::RunRecord;
use crate::CliError;

/// Per-scene accuracies, in scene order.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignOutcome {
    pub scenes: Vec<(u64, MatchAccuracy)>,
}

impl AlignOutcome {
    pub fn mean(&self, m: MatchMethod) -> f64 {
        self.scenes.iter().map(|(_, a)| a.get(m)).sum::<f64>() / self.scenes.len() as f64
    }

    /// Scenes on which `a` scores at least as well as `b`.
    pub fn at_least(&self, a: MatchMethod, b: MatchMethod) -> usize {
        self.scenes.iter().filter(|(_, s)| s.get(a) >= s.get(b)).count()
    }
}

/// Scores CA, SA, MA and FA matching on `scenes` synthetic pairs seeded
/// consecutively from the run seed. A match is correct when the matched
/// patch centre lies within one patch width of the true correspondent.
pub fn align(cfg: &RunConfig, scenes: usize, quiet: bool) -> Result<AlignOutcome, CliError> {
    validate(cfg)?;
    if scenes == 0 {
        return Err(CliError::Invalid("--scenes must be >= 1".into()));
    }
    if cfg.stride != 1 || 2 * cfg.pad + 1 != cfg.patch {
        return Err(CliError::Invalid(format!(
            "align scores one query per pixel and needs stride=1 and pad=(patch-1)/2, got patch={} stride={} pad={}",
            cfg.patch, cfg.stride, cfg.pad
        )));
    }
    let tol = cfg.patch as f64;
    let mut rec = RunRecord::start("align", cfg, quiet)?;
    let mut csv = String::from("scene_seed,method,accuracy,queries\n");
    let mut out = AlignOutcome { scenes: Vec::with_capacity(scenes) };
    for k in 0..scenes as u64 {
        let seed = cfg.seed + k;
        let sc = scene(cfg, seed)?;
        let model = Model::new(cfg.model_config(), seed);
        let plan = model.plan(&build_inputs(&sc.lr, &sc.pair.pd)?)?;
        let acc = score_matches(&plan, &sc.pair.correspondence.positions, cfg.size, cfg.size, tol)?;
        for m in MatchMethod::ALL {
            writeln!(csv, "{seed},{},{},{}", m.label(), acc.get(m), acc.queries).expect("string write");
        }
        rec.log(format!(
            "{}: CA {:.4} SA {:.4} MA {:.4} FA {:.4} over {} queries",
            sc.id(cfg),
            acc.ca,
            acc.sa,
            acc.ma,
            acc.fa,
            acc.queries
        ));
        if k == 0 {
            write_maps(&mut rec, cfg, &sc, &plan, tol)?;
        }
        out.scenes.push((seed, acc));
    }
    rec.write("accuracy.csv", csv.as_bytes())?;

    let mut summary = String::from("method,mean_accuracy,scenes_at_least_ca\n");
    for m in MatchMethod::ALL {
        let (mean, ge) = (out.mean(m), out.at_least(m, MatchMethod::Ca));
        writeln!(summary, "{},{mean},{ge}", m.label()).expect("string write");
        rec.log(format!("mean {} {mean:.4} (>= CA on {ge}/{scenes})", m.label()));
    }
    rec.write("accuracy_summary.csv", summary.as_bytes())?;
    rec.finish()?;
    Ok(out)
}

/// For each method, the reference sampled at every query's match and a
/// hit map (white correct, grey wrong, black unscored).
fn write_maps(rec: &mut RunRecord, cfg: &RunConfig, sc: &Scene, plan: &AlignmentPlan, tol: f64) -> Result<(), CliError> {
    let n = cfg.size;
    let truth = &sc.pair.correspondence.positions;
    let pd = &sc.pair.pd;
    let pixel = |v: f64| (v.round().max(0.0) as usize).min(n - 1);
    for m in MatchMethod::ALL {
        let mut warped = Vec::with_capacity(n * n);
        let mut hits = Vec::with_capacity(n * n);
        for (i, t) in truth.iter().enumerate() {
            let (y, x) = plan.key_position(plan.pick(m, i), n, n);
            warped.push(pd.get(&[0, pixel(y), pixel(x)]));
            hits.push(match t {
                Some(t) if is_hit((y, x), *t, tol) => 1.0,
                Some(_) => 0.0,
                None => -1.0,
            });
        }
        let label = m.label().to_lowercase();
        rec.write(&format!("match_{label}.pgm"), &pgm(&Tensor::new(&[1, n, n], warped)?)?)?;
        rec.write(&format!("hits_{label}.pgm"), &pgm(&Tensor::new(&[1, n, n], hits)?)?)?;
    }
    Ok(())
}
