//! `key=value` run configuration. Blank lines and `#` comments are ignored;
//! every key may appear at most once and unknown keys are rejected.

use std::fmt;
use std::str::FromStr;

use refsr_core::alignment::AlignConfig;
use refsr_core::autodiff::AdamConfig;
use refsr_core::data_io::{NoiseSpec, SynthPairSpec};
use refsr_core::extractor::ExtractorConfig;
use refsr_core::losses::LossWeights;
use refsr_core::model::{ModelConfig, Toggles, TrainConfig};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line number, 0 when the problem is not tied to a line.
    pub line: usize,
    pub key: String,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "config key `{}`: {}", self.key, self.msg)
        } else {
            write!(f, "config line {}, key `{}`: {}", self.line, self.key, self.msg)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    /// Target and reference share anatomy scale.
    Aligned,
    /// Reference foreground twice the target's.
    ScaleMismatch,
}

impl Scenario {
    pub fn label(self) -> &'static str {
        match self {
            Scenario::Aligned => "aligned",
            Scenario::ScaleMismatch => "scale-mismatch",
        }
    }
}

impl FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "aligned" => Ok(Scenario::Aligned),
            "scale-mismatch" => Ok(Scenario::ScaleMismatch),
            _ => Err(format!("expected `aligned` or `scale-mismatch`, got `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    Motion,
    Rf,
}

impl NoiseKind {
    fn label(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Motion => "motion",
            NoiseKind::Rf => "rf",
        }
    }
}

impl FromStr for NoiseKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(NoiseKind::None),
            "motion" => Ok(NoiseKind::Motion),
            "rf" => Ok(NoiseKind::Rf),
            _ => Err(format!("expected `none`, `motion` or `rf`, got `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub size: usize,
    pub scenario: Scenario,
    pub texture_freq: f64,
    pub clutter: f64,
    pub noise: NoiseKind,
    pub motion_length: usize,
    pub motion_angle: f64,
    pub rf_frequency: usize,
    pub rf_amplitude: f64,
    pub rf_row_start: usize,
    pub rf_rows: usize,
    pub c4: usize,
    pub c2: usize,
    pub c1: usize,
    pub decoder_width: usize,
    pub patch: usize,
    pub stride: usize,
    pub pad: usize,
    pub temperature: f64,
    pub ridge: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub realign_every: usize,
    pub use_sa: bool,
    pub use_ma: bool,
    pub use_chpf: bool,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthPairSpec::default();
        let ext = ExtractorConfig::default();
        let model = ModelConfig::default();
        let align = AlignConfig::default();
        let loss = LossWeights::default();
        let adam = AdamConfig::default();
        let train = TrainConfig::default();
        let toggles = Toggles::default();
        Self {
            seed: 0,
            size: synth.size,
            scenario: Scenario::Aligned,
            texture_freq: synth.texture_freq,
            clutter: synth.clutter,
            noise: NoiseKind::None,
            motion_length: 5,
            motion_angle: 0.0,
            rf_frequency: 8,
            rf_amplitude: 0.05,
            rf_row_start: 0,
            rf_rows: synth.size,
            c4: ext.c4,
            c2: ext.c2,
            c1: ext.c1,
            decoder_width: model.decoder_width,
            patch: align.patch,
            stride: align.stride,
            pad: align.pad,
            temperature: align.temperature,
            ridge: align.ridge,
            lambda1: loss.lambda1,
            lambda2: loss.lambda2,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            steps: 500,
            realign_every: train.realign_every,
            use_sa: toggles.use_sa,
            use_ma: toggles.use_ma,
            use_chpf: toggles.use_chpf,
            out_dir: "out".to_string(),
        }
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}` as {}", std::any::type_name::<T>()))
}

fn positive_usize(v: &str) -> Result<usize, String> {
    match num::<usize>(v)? {
        0 => Err("must be >= 1".to_string()),
        n => Ok(n),
    }
}

fn finite(v: &str) -> Result<f64, String> {
    let x: f64 = num(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("must be finite, got `{v}`"))
    }
}

fn positive(v: &str) -> Result<f64, String> {
    let x = finite(v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(format!("must be > 0, got `{v}`"))
    }
}

fn non_negative(v: &str) -> Result<f64, String> {
    let x = finite(v)?;
    if x >= 0.0 {
        Ok(x)
    } else {
        Err(format!("must be >= 0, got `{v}`"))
    }
}

fn unit_interval(v: &str) -> Result<f64, String> {
    let x = finite(v)?;
    if (0.0..1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("must lie in [0, 1), got `{v}`"))
    }
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(format!("expected `true` or `false`, got `{v}`")),
    }
}

impl RunConfig {
    /// Every recognized key, in the order used when echoing.
    pub const KEYS: [&'static str; 33] = [
        "seed",
        "size",
        "scenario",
        "texture_freq",
        "clutter",
        "noise",
        "motion_length",
        "motion_angle",
        "rf_frequency",
        "rf_amplitude",
        "rf_row_start",
        "rf_rows",
        "c4",
        "c2",
        "c1",
        "decoder_width",
        "patch",
        "stride",
        "pad",
        "temperature",
        "ridge",
        "lambda1",
        "lambda2",
        "lr",
        "beta1",
        "beta2",
        "eps",
        "steps",
        "realign_every",
        "use_sa",
        "use_ma",
        "use_chpf",
        "out_dir",
    ];

    /// Assigns one key; the error message omits the key and line.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "seed" => self.seed = num(v)?,
            "size" => {
                let n: usize = num(v)?;
                if n < 16 || n % 4 != 0 {
                    return Err(format!("must be a multiple of 4 and at least 16, got {n}"));
                }
                self.size = n;
            }
            "scenario" => self.scenario = v.parse()?,
            "texture_freq" => self.texture_freq = non_negative(v)?,
            "clutter" => self.clutter = non_negative(v)?,
            "noise" => self.noise = v.parse()?,
            "motion_length" => self.motion_length = positive_usize(v)?,
            "motion_angle" => self.motion_angle = finite(v)?,
            "rf_frequency" => self.rf_frequency = positive_usize(v)?,
            "rf_amplitude" => self.rf_amplitude = finite(v)?,
            "rf_row_start" => self.rf_row_start = num(v)?,
            "rf_rows" => self.rf_rows = num(v)?,
            "c4" => self.c4 = positive_usize(v)?,
            "c2" => self.c2 = positive_usize(v)?,
            "c1" => self.c1 = positive_usize(v)?,
            "decoder_width" => self.decoder_width = positive_usize(v)?,
            "patch" => self.patch = positive_usize(v)?,
            "stride" => self.stride = positive_usize(v)?,
            "pad" => self.pad = num(v)?,
            "temperature" => self.temperature = positive(v)?,
            "ridge" => self.ridge = positive(v)?,
            "lambda1" => self.lambda1 = non_negative(v)?,
            "lambda2" => self.lambda2 = non_negative(v)?,
            "lr" => self.lr = positive(v)?,
            "beta1" => self.beta1 = unit_interval(v)?,
            "beta2" => self.beta2 = unit_interval(v)?,
            "eps" => self.eps = positive(v)?,
            "steps" => self.steps = num(v)?,
            "realign_every" => self.realign_every = positive_usize(v)?,
            "use_sa" => self.use_sa = boolean(v)?,
            "use_ma" => self.use_ma = boolean(v)?,
            "use_chpf" => self.use_chpf = boolean(v)?,
            "out_dir" => {
                if v.is_empty() {
                    return Err("must not be empty".to_string());
                }
                self.out_dir = v.to_string();
            }
            _ => return Err("unknown key".to_string()),
        }
        Ok(())
    }

    /// Current value of a key, formatted so that `set` reads it back exactly.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "size" => self.size.to_string(),
            "scenario" => self.scenario.label().to_string(),
            "texture_freq" => self.texture_freq.to_string(),
            "clutter" => self.clutter.to_string(),
            "noise" => self.noise.label().to_string(),
            "motion_length" => self.motion_length.to_string(),
            "motion_angle" => self.motion_angle.to_string(),
            "rf_frequency" => self.rf_frequency.to_string(),
            "rf_amplitude" => self.rf_amplitude.to_string(),
            "rf_row_start" => self.rf_row_start.to_string(),
            "rf_rows" => self.rf_rows.to_string(),
            "c4" => self.c4.to_string(),
            "c2" => self.c2.to_string(),
            "c1" => self.c1.to_string(),
            "decoder_width" => self.decoder_width.to_string(),
            "patch" => self.patch.to_string(),
            "stride" => self.stride.to_string(),
            "pad" => self.pad.to_string(),
            "temperature" => self.temperature.to_string(),
            "ridge" => self.ridge.to_string(),
            "lambda1" => self.lambda1.to_string(),
            "lambda2" => self.lambda2.to_string(),
            "lr" => self.lr.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "eps" => self.eps.to_string(),
            "steps" => self.steps.to_string(),
            "realign_every" => self.realign_every.to_string(),
            "use_sa" => self.use_sa.to_string(),
            "use_ma" => self.use_ma.to_string(),
            "use_chpf" => self.use_chpf.to_string(),
            "out_dir" => self.out_dir.clone(),
            _ => return None,
        })
    }

    /// Resolved `key=value` lines for every key.
    pub fn echo(&self) -> Vec<String> {
        Self::KEYS.iter().map(|k| format!("{k}={}", self.get(k).expect("known key"))).collect()
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut align = AlignConfig::default();
        align.patch = self.patch;
        align.stride = self.stride;
        align.pad = self.pad;
        align.temperature = self.temperature;
        align.ridge = self.ridge;
        ModelConfig {
            extractor: ExtractorConfig { c4: self.c4, c2: self.c2, c1: self.c1, ..ExtractorConfig::default() },
            align,
            decoder_width: self.decoder_width,
            toggles: Toggles { use_sa: self.use_sa, use_ma: self.use_ma, use_chpf: self.use_chpf },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps },
            loss: LossWeights { lambda1: self.lambda1, lambda2: self.lambda2 },
            realign_every: self.realign_every,
        }
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        match self.noise {
            NoiseKind::None => NoiseSpec::None,
            NoiseKind::Motion => NoiseSpec::Motion { length: self.motion_length, angle_deg: self.motion_angle },
            NoiseKind::Rf => NoiseSpec::Rf {
                frequency: self.rf_frequency,
                amplitude: self.rf_amplitude,
                row_start: self.rf_row_start,
                rows: self.rf_rows,
            },
        }
    }

    /// Synthetic pair for `scenario` drawn from `seed`.
    pub fn synth_spec(&self, scenario: Scenario, seed: u64) -> SynthPairSpec {
        let base = match scenario {
            Scenario::Aligned => SynthPairSpec { seed, ..SynthPairSpec::default() },
            Scenario::ScaleMismatch => SynthPairSpec::scale_mismatch(seed),
        };
        SynthPairSpec {
            size: self.size,
            texture_freq: self.texture_freq,
            clutter: self.clutter,
            noise: self.noise_spec(),
            ..base
        }
    }
}

/// Parses config text on top of the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut seen: Vec<&str> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError { line, key: content.to_string(), msg: "expected `key=value`".to_string() });
        };
        let (key, value) = (key.trim(), value.trim());
        if seen.contains(&key) {
            return Err(ConfigError { line, key: key.to_string(), msg: "key given more than once".to_string() });
        }
        cfg.set(key, value).map_err(|msg| ConfigError { line, key: key.to_string(), msg })?;
        seen.push(key);
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
        assert_eq!(parse_config("\n  # only a comment\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn lambda1_is_assigned() {
        let cfg = parse_config("lambda1=0.1").unwrap();
        assert_eq!(cfg.lambda1, 0.1);
        assert_eq!(cfg.train_config().loss.lambda1, 0.1);
        let cfg = parse_config("lambda1 = 0.25  # trailing comment").unwrap();
        assert_eq!(cfg.lambda1, 0.25);
    }

    #[test]
    fn bad_value_cites_key_and_line() {
        let err = parse_config("lambda1=frog").unwrap_err();
        assert_eq!((err.line, err.key.as_str()), (1, "lambda1"));
        assert!(err.to_string().contains("line 1") && err.to_string().contains("lambda1"));
        let err = parse_config("seed=3\n\nsize=30\n").unwrap_err();
        assert_eq!((err.line, err.key.as_str()), (3, "size"));
    }

    #[test]
    fn unknown_duplicate_and_malformed_lines_are_rejected() {
        let err = parse_config("seed=1\nfrobnicate=2").unwrap_err();
        assert_eq!((err.line, err.key.as_str()), (2, "frobnicate"));
        let err = parse_config("seed=1\nseed=2").unwrap_err();
        assert_eq!(err.line, 2);
        let err = parse_config("just words").unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.seed = 17;
        cfg.temperature = 0.07;
        cfg.scenario = Scenario::ScaleMismatch;
        cfg.noise = NoiseKind::Rf;
        cfg.use_ma = false;
        cfg.out_dir = "some/dir".into();
        let text = cfg.echo().join("\n");
        assert_eq!(parse_config(&text).unwrap(), cfg);
        assert_eq!(cfg.echo().len(), RunConfig::KEYS.len());
    }

    #[test]
    fn defaults_match_library_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.model_config(), ModelConfig::default());
        assert_eq!(cfg.train_config(), TrainConfig::default());
        assert_eq!(cfg.synth_spec(Scenario::Aligned, 0), SynthPairSpec::default());
        assert_eq!(cfg.synth_spec(Scenario::ScaleMismatch, 4), SynthPairSpec::scale_mismatch(4));
    }
}
