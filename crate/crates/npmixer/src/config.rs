//! Sectioned key-value run configuration.
//!
//! Files look like:
//!
//! ```text
//! [model]
//! lookback = 96
//! wavelet = db2
//! [train]
//! lr = 1.51e-3
//! [data]
//! csv = ETTh1.csv
//! train = 8545
//! val = 2881
//! test = 2881
//! [ablation]
//! variant = full
//! ```
//!
//! `#` starts a comment. Unknown sections or keys are rejected with the line
//! number. Command-line `--set section.key=value` overrides win over the
//! file. A relative `csv` path is resolved against `NPMIXER_DATA_DIR` when
//! that variable is set, else against the current directory.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::filters::WaveletInit;
use crate::model::{AblationFlags, ModelConfig};
use crate::tensor::Real;
use crate::train::TrainConfig;

#[derive(Clone, Debug)]
pub struct DataConfig {
    pub csv: String,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl DataConfig {
    pub fn resolved_csv(&self) -> PathBuf {
        let p = Path::new(&self.csv);
        if p.is_absolute() {
            return p.to_path_buf();
        }
        match std::env::var_os("NPMIXER_DATA_DIR") {
            Some(dir) => Path::new(&dir).join(p),
            None => p.to_path_buf(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::base(),
            train: TrainConfig::base(),
            data: DataConfig { csv: "ETTh1.csv".into(), train: 8545, val: 2881, test: 2881 },
        }
    }
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| {
        Error::config(format!("[{section}] {key}: cannot parse '{v}'"))
    })
}

impl RunConfig {
    /// Applies one `section.key = value` assignment.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match section {
            "model" => {
                let m = &mut self.model;
                match key {
                    "lookback" => m.lookback = parse_num(section, key, v)?,
                    "horizon" => m.horizon = parse_num(section, key, v)?,
                    "channels" => m.channels = parse_num(section, key, v)?,
                    "patch" => m.patch = parse_num(section, key, v)?,
                    "levels" | "j" => m.levels = parse_num(section, key, v)?,
                    "wavelet" => m.wavelet = WaveletInit::parse(v)?,
                    "d_model" => m.d_model = parse_num(section, key, v)?,
                    "d_ff" => m.d_ff = parse_num(section, key, v)?,
                    "e_layers" => m.e_layers = parse_num(section, key, v)?,
                    "n_heads" => m.n_heads = parse_num(section, key, v)?,
                    "dropout" => m.dropout = parse_num::<Real>(section, key, v)?,
                    "mp_depth" => m.mp_depth = parse_num(section, key, v)?,
                    "seed" => m.seed = parse_num(section, key, v)?,
                    _ => return Err(Error::config(format!("[model] unknown key '{key}'"))),
                }
            }
            "train" => {
                let t = &mut self.train;
                match key {
                    "lr" => t.lr = parse_num::<Real>(section, key, v)?,
                    "batch" => t.batch = parse_num(section, key, v)?,
                    "max_epochs" => t.max_epochs = parse_num(section, key, v)?,
                    "patience" => t.patience = parse_num(section, key, v)?,
                    "seed" => t.seed = parse_num(section, key, v)?,
                    "eval_batch" => t.eval_batch = parse_num(section, key, v)?,
                    _ => return Err(Error::config(format!("[train] unknown key '{key}'"))),
                }
            }
            "data" => {
                let d = &mut self.data;
                match key {
                    "csv" => d.csv = v.to_string(),
                    "train" => d.train = parse_num(section, key, v)?,
                    "val" => d.val = parse_num(section, key, v)?,
                    "test" => d.test = parse_num(section, key, v)?,
                    _ => return Err(Error::config(format!("[data] unknown key '{key}'"))),
                }
            }
            "ablation" => match key {
                "variant" => self.model.ablation = AblationFlags::parse_variant(v)?,
                _ => return Err(Error::config(format!("[ablation] unknown key '{key}'"))),
            },
            _ => return Err(Error::config(format!("unknown section '[{section}]'"))),
        }
        Ok(())
    }

    /// Applies a `--set section.key=value` override string.
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set '{assignment}': expected section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::config(format!("--set '{assignment}': expected section.key=value")))?;
        self.set(section.trim(), key.trim(), value)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.split_once('#') {
                Some((before, _)) => before.trim(),
                None => raw.trim(),
            };
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = Some(name.trim().to_string());
                if !matches!(name.trim(), "model" | "train" | "data" | "ablation") {
                    return Err(Error::config(format!(
                        "line {line_no}: unknown section '[{}]'",
                        name.trim()
                    )));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {line_no}: expected 'key = value', got '{line}'"))
            })?;
            let section = section.as_deref().ok_or_else(|| {
                Error::config(format!("line {line_no}: key before any [section] header"))
            })?;
            cfg.set(section, key.trim(), value)
                .map_err(|e| Error::config(format!("line {line_no}: {e}")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Full echo of the effective configuration, suitable for logging.
    pub fn effective(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let d = &self.data;
        let variant = if m.ablation.no_swt {
            "no_swt"
        } else if m.ablation.fixed_swt {
            "fixed_swt"
        } else if m.ablation.no_neighboring_mixer {
            "no_neighboring_mixer"
        } else if m.ablation.no_channel_encoder {
            "no_channel_encoder"
        } else {
            "full"
        };
        format!(
            "[model]\nlookback = {}\nhorizon = {}\nchannels = {}\npatch = {}\n\
             levels = {}\nwavelet = {}\nd_model = {}\nd_ff = {}\ne_layers = {}\n\
             n_heads = {}\ndropout = {}\nmp_depth = {}\nseed = {}\n\
             [train]\nlr = {}\nbatch = {}\nmax_epochs = {}\npatience = {}\n\
             seed = {}\neval_batch = {}\n\
             [data]\ncsv = {}\ntrain = {}\nval = {}\ntest = {}\n\
             [ablation]\nvariant = {}\n",
            m.lookback, m.horizon, m.channels, m.patch, m.levels, m.wavelet.name(),
            m.d_model, m.d_ff, m.e_layers, m.n_heads, m.dropout, m.mp_depth, m.seed,
            t.lr, t.batch, t.max_epochs, t.patience, t.seed, t.eval_batch,
            d.csv, d.train, d.val, d.test, variant
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# ETTh1, horizon 96
[model]
lookback = 96
horizon = 96
channels = 7
patch = 24
levels = 1
wavelet = db2
d_model = 64
d_ff = 1024
e_layers = 1
dropout = 0.28
[train]
lr = 1.51e-3
batch = 256
[data]
csv = ETTh1.csv
train = 8545
val = 2881
test = 2881
";

    #[test]
    fn parses_sample() {
        let cfg = RunConfig::parse_str(SAMPLE).unwrap();
        assert_eq!(cfg.model.d_ff, 1024);
        assert_eq!(cfg.model.wavelet.name(), "db2");
        assert!((cfg.train.lr - 1.51e-3).abs() < 1e-12);
        assert_eq!(cfg.data.train, 8545);
        // default survives when unset
        assert_eq!(cfg.train.max_epochs, TrainConfig::base().max_epochs);
    }

    #[test]
    fn rejects_unknown_keys_and_sections_with_line_numbers() {
        let err = RunConfig::parse_str("[model]\nnope = 3\n").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("nope"), "{err}");
        let err = RunConfig::parse_str("[bogus]\n").unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        let err = RunConfig::parse_str("stray = 1\n").unwrap_err().to_string();
        assert!(err.contains("before any"), "{err}");
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::parse_str(SAMPLE).unwrap();
        cfg.set_override("model.d_ff=32").unwrap();
        cfg.set_override("train.lr = 0.01").unwrap();
        cfg.set_override("ablation.variant=no_swt").unwrap();
        assert_eq!(cfg.model.d_ff, 32);
        assert!((cfg.train.lr - 0.01).abs() < 1e-12);
        assert!(cfg.model.ablation.no_swt);
        assert!(cfg.set_override("model.d_ff").is_err());
        assert!(cfg.set_override("d_ff=1").is_err());
    }

    #[test]
    fn effective_echo_round_trips() {
        let mut cfg = RunConfig::parse_str(SAMPLE).unwrap();
        cfg.set_override("ablation.variant=fixed_swt").unwrap();
        let echoed = RunConfig::parse_str(&cfg.effective()).unwrap();
        assert_eq!(echoed.model.d_ff, cfg.model.d_ff);
        assert_eq!(echoed.model.ablation, cfg.model.ablation);
        assert_eq!(echoed.data.test, cfg.data.test);
    }
}
