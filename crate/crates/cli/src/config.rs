//! Flat `[section]` / `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ecg_delineation::dataset::{PreprocessConfig, SplitMode};
use ecg_delineation::delineate::PostprocessConfig;
use ecg_delineation::eval::FScoreMode;
use ecg_delineation::nn::ArchConfig;
use ecg_delineation::train::{SearchSpace, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preprocess: PreprocessConfig,
    pub split_mode: SplitMode,
    pub split_seed: u64,
    pub folds: usize,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub search: SearchSpace,
    pub postprocess: PostprocessConfig,
    pub tolerance_ms: f64,
    pub beta: f64,
    pub f_mode: FScoreMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            split_mode: SplitMode::QTDB_84_21,
            split_seed: 0,
            folds: 5,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            search: SearchSpace::default(),
            postprocess: PostprocessConfig::default(),
            tolerance_ms: 150.0,
            beta: 1.0,
            f_mode: FScoreMode::AsWritten,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| anyhow!("{key}: cannot parse {v:?}: {e}"))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn parse_split_mode(v: &str) -> Result<SplitMode> {
    if let Some(r) = v.strip_prefix("ratio:") {
        return Ok(SplitMode::Ratio(parse("split.mode", r)?));
    }
    let (a, b) = v
        .split_once('/')
        .ok_or_else(|| anyhow!("split.mode: expected TRAIN/TEST counts or ratio:R, got {v:?}"))?;
    Ok(SplitMode::Counts {
        train: parse("split.mode", a.trim())?,
        test: parse("split.mode", b.trim())?,
    })
}

fn split_mode_text(m: &SplitMode) -> String {
    match m {
        SplitMode::Counts { train, test } => format!("{train}/{test}"),
        SplitMode::Ratio(r) => format!("ratio:{r}"),
    }
}

impl RunConfig {
    /// Applies one `section.key` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let p = &mut self.preprocess;
        let a = &mut self.train.adam;
        let s = &mut self.search;
        match key {
            "preprocess.channel" => p.channel = parse(key, v)?,
            "preprocess.annotators" => {
                p.annotators = v.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
            }
            "preprocess.annotated_span_only" => p.annotated_span_only = parse(key, v)?,
            "preprocess.zscore" => p.zscore = parse(key, v)?,
            "preprocess.target_fs" => {
                p.target_fs = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "filter.order" => p.filter.order = parse(key, v)?,
            "filter.low_cut" => p.filter.low_cut = parse(key, v)?,
            "filter.high_cut" => p.filter.high_cut = parse(key, v)?,
            "split.mode" => self.split_mode = parse_split_mode(v)?,
            "split.seed" => self.split_seed = parse(key, v)?,
            "split.folds" => self.folds = parse(key, v)?,
            "arch.conv_filters" => self.arch.conv_filters = parse_list(key, v)?,
            "arch.kernel_size" => self.arch.kernel_size = parse(key, v)?,
            "arch.lstm_units" => self.arch.lstm_units = parse_list(key, v)?,
            "arch.dropout" => self.arch.dropout = parse(key, v)?,
            "train.alpha" => a.alpha = parse(key, v)?,
            "train.beta1" => a.beta1 = parse(key, v)?,
            "train.beta2" => a.beta2 = parse(key, v)?,
            "train.epsilon" => a.epsilon = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.max_epochs" => self.train.max_epochs = parse(key, v)?,
            "train.patience" => self.train.patience = parse(key, v)?,
            "train.min_delta" => self.train.min_delta = parse(key, v)?,
            "train.seed" => self.train.seed = parse(key, v)?,
            "train.target_val_acc" => {
                self.train.target_val_acc = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "search.n_trials" => s.n_trials = parse(key, v)?,
            "search.seed" => s.seed = parse(key, v)?,
            "search.max_epochs" => s.max_epochs = parse(key, v)?,
            "search.alpha_min" => s.alpha.0 = parse(key, v)?,
            "search.alpha_max" => s.alpha.1 = parse(key, v)?,
            "search.beta1_min" => s.beta1.0 = parse(key, v)?,
            "search.beta1_max" => s.beta1.1 = parse(key, v)?,
            "search.beta2_min" => s.beta2.0 = parse(key, v)?,
            "search.beta2_max" => s.beta2.1 = parse(key, v)?,
            "search.epsilon_min" => s.epsilon.0 = parse(key, v)?,
            "search.epsilon_max" => s.epsilon.1 = parse(key, v)?,
            "postprocess.min_duration_ms" => self.postprocess.min_duration_ms = parse(key, v)?,
            "postprocess.merge_gap_ms" => self.postprocess.merge_gap_ms = parse(key, v)?,
            "eval.tolerance_ms" => self.tolerance_ms = parse(key, v)?,
            "eval.beta" => self.beta = parse(key, v)?,
            "eval.f_mode" => {
                self.f_mode = match v {
                    "as_written" => FScoreMode::AsWritten,
                    "standard" => FScoreMode::Standard,
                    _ => bail!("{key}: expected as_written or standard, got {v:?}"),
                }
            }
            _ => bail!("unknown configuration key {key:?}"),
        }
        Ok(())
    }

    /// Applies the text of a config file.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut section = String::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected key = value", i + 1))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            self.set(&key, v).with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    /// Defaults, then the file, then `section.key=value` overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects section.key=value, got {o:?}"))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        self.search.validate()?;
        let mut f = self.preprocess.filter;
        f.sampling_frequency = self.preprocess.target_fs.unwrap_or(250.0);
        f.validate()?;
        if self.folds < 2 {
            bail!("split.folds must be at least 2");
        }
        if !(self.tolerance_ms > 0.0) {
            bail!("eval.tolerance_ms must be positive");
        }
        if self.preprocess.annotators.is_empty() {
            bail!("preprocess.annotators must name at least one annotator");
        }
        Ok(())
    }

    /// Canonical text form; parsing it back gives the same config.
    pub fn to_text(&self) -> String {
        let p = &self.preprocess;
        let a = &self.train.adam;
        let s = &self.search;
        let mut out = String::new();
        let mut sec = |name: &str, kv: &[(&str, String)]| {
            let _ = writeln!(out, "[{name}]");
            for (k, v) in kv {
                let _ = writeln!(out, "{k} = {v}");
            }
            out.push('\n');
        };
        sec(
            "preprocess",
            &[
                ("channel", p.channel.to_string()),
                ("annotators", p.annotators.join(",")),
                ("annotated_span_only", p.annotated_span_only.to_string()),
                ("zscore", p.zscore.to_string()),
                ("target_fs", p.target_fs.map_or("none".into(), |f| f.to_string())),
            ],
        );
        sec(
            "filter",
            &[
                ("order", p.filter.order.to_string()),
                ("low_cut", p.filter.low_cut.to_string()),
                ("high_cut", p.filter.high_cut.to_string()),
            ],
        );
        sec(
            "split",
            &[
                ("mode", split_mode_text(&self.split_mode)),
                ("seed", self.split_seed.to_string()),
                ("folds", self.folds.to_string()),
            ],
        );
        sec(
            "arch",
            &[
                ("conv_filters", join(&self.arch.conv_filters)),
                ("kernel_size", self.arch.kernel_size.to_string()),
                ("lstm_units", join(&self.arch.lstm_units)),
                ("dropout", self.arch.dropout.to_string()),
            ],
        );
        sec(
            "train",
            &[
                ("alpha", a.alpha.to_string()),
                ("beta1", a.beta1.to_string()),
                ("beta2", a.beta2.to_string()),
                ("epsilon", a.epsilon.to_string()),
                ("batch_size", self.train.batch_size.to_string()),
                ("max_epochs", self.train.max_epochs.to_string()),
                ("patience", self.train.patience.to_string()),
                ("min_delta", self.train.min_delta.to_string()),
                ("seed", self.train.seed.to_string()),
                ("target_val_acc", self.train.target_val_acc.map_or("none".into(), |a| a.to_string())),
            ],
        );
        sec(
            "search",
            &[
                ("n_trials", s.n_trials.to_string()),
                ("seed", s.seed.to_string()),
                ("max_epochs", s.max_epochs.to_string()),
                ("alpha_min", s.alpha.0.to_string()),
                ("alpha_max", s.alpha.1.to_string()),
                ("beta1_min", s.beta1.0.to_string()),
                ("beta1_max", s.beta1.1.to_string()),
                ("beta2_min", s.beta2.0.to_string()),
                ("beta2_max", s.beta2.1.to_string()),
                ("epsilon_min", s.epsilon.0.to_string()),
                ("epsilon_max", s.epsilon.1.to_string()),
            ],
        );
        sec(
            "postprocess",
            &[
                ("min_duration_ms", self.postprocess.min_duration_ms.to_string()),
                ("merge_gap_ms", self.postprocess.merge_gap_ms.to_string()),
            ],
        );
        sec(
            "eval",
            &[
                ("tolerance_ms", self.tolerance_ms.to_string()),
                ("beta", self.beta.to_string()),
                (
                    "f_mode",
                    match self.f_mode {
                        FScoreMode::AsWritten => "as_written".into(),
                        FScoreMode::Standard => "standard".into(),
                    },
                ),
            ],
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("train.alpha", "0.0025").unwrap();
        cfg.set("arch.conv_filters", "8,16").unwrap();
        cfg.set("split.mode", "ratio:0.75").unwrap();
        cfg.set("preprocess.target_fs", "none").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), "mem").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "[train]\nalpha = 0.01\nbatch_size = 8 # small\n[split]\nmode = 79/26\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &["train.alpha=0.02".into()]).unwrap();
        assert_eq!(cfg.train.adam.alpha, 0.02);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.split_mode, SplitMode::QTDB_79_26);
        assert_eq!(cfg.train.adam.beta1, 0.9);
    }

    #[test]
    fn errors_are_reported_before_work() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("train.nope", "1").is_err());
        assert!(cfg.apply_text("[train]\nalpha 3\n", "f").is_err());
        assert!(RunConfig::load(None, &["train.alpha=-1".into()]).is_err());
        assert!(RunConfig::load(None, &["arch.dropout=1.5".into()]).is_err());
    }
}
