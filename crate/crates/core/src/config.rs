//! Run configuration from flat `key = value` files.
//!
//! Command-line flags are applied afterwards through [`RunConfig::set`], so
//! they win over file values. The seed defaults to `NBEST_SEED` when set.

use std::path::{Path, PathBuf};

use crate::classifier::{Architecture, Hyperparams, TrainConfig};
use crate::error::{Error, Result};
use crate::integration::{Granularity, LabelKind, ScoreSource, StrategyConfig, StrategyKind, DEFAULT_HYPOTHESES};
use crate::nn::OptimizerKind;

pub const SEED_ENV: &str = "NBEST_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub strategy: StrategyKind,
    pub label: LabelKind,
    pub n: usize,
    pub merges: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub mlp_hidden: Option<usize>,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub granularity: Granularity,
    pub score_source: ScoreSource,
    /// Restricts training and evaluation to one domain (intent models).
    pub domain: Option<String>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        let hyper = Hyperparams::default();
        RunConfig {
            strategy: StrategyKind::Baseline,
            label: LabelKind::Domain,
            n: DEFAULT_HYPOTHESES,
            merges: hyper.merges,
            embed_dim: arch.embed_dim,
            hidden_dim: arch.hidden_dim,
            mlp_hidden: arch.mlp_hidden,
            optimizer: hyper.optimizer,
            lr: hyper.lr,
            epochs: hyper.epochs,
            batch_size: hyper.batch_size,
            seed: hyper.seed,
            granularity: Granularity::default(),
            score_source: ScoreSource::default(),
            domain: None,
            train: None,
            test: None,
            checkpoint: None,
            vocab: None,
            output: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {value:?}")))
}

fn positive(key: &str, value: &str) -> Result<usize> {
    let v: usize = parse_num(key, value)?;
    if v == 0 {
        return Err(Error::invalid(format!("{key} must be positive")));
    }
    Ok(v)
}

impl RunConfig {
    /// Defaults, with the seed taken from `NBEST_SEED` if it is set.
    pub fn from_env() -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.set("seed", &seed)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "strategy" => self.strategy = value.parse()?,
            "label" => self.label = value.parse()?,
            "n" => self.n = positive(key, value)?,
            "merges" => self.merges = parse_num(key, value)?,
            "embed_dim" | "d_e" => self.embed_dim = positive(key, value)?,
            "hidden_dim" | "d_h" => self.hidden_dim = positive(key, value)?,
            "mlp_hidden" => {
                self.mlp_hidden = match value {
                    "" | "none" => None,
                    v => Some(positive(key, v)?),
                }
            }
            "optimizer" => self.optimizer = value.parse()?,
            "lr" => {
                let lr: f64 = parse_num(key, value)?;
                if !(lr >= 0.0 && lr.is_finite()) {
                    return Err(Error::invalid("lr must be a finite non-negative number"));
                }
                self.lr = lr;
            }
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = positive(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "granularity" => self.granularity = value.parse()?,
            "score_source" => self.score_source = value.parse()?,
            "domain" => self.domain = Some(value.to_string()),
            "train" => self.train = Some(value.into()),
            "test" => self.test = Some(value.into()),
            "checkpoint" => self.checkpoint = Some(value.into()),
            "vocab" => self.vocab = Some(value.into()),
            "output" => self.output = Some(value.into()),
            other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_string(),
                line: idx + 1,
                message,
            };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            self.set(key.trim(), value).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig {
            kind: self.strategy,
            n: self.n,
            score_source: self.score_source,
            granularity: self.granularity,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            strategy: self.strategy_config(),
            label: self.label,
            arch: Architecture {
                embed_dim: self.embed_dim,
                hidden_dim: self.hidden_dim,
                mlp_hidden: self.mlp_hidden,
            },
            hyper: Hyperparams {
                optimizer: self.optimizer,
                lr: self.lr,
                epochs: self.epochs,
                batch_size: self.batch_size,
                seed: self.seed,
                merges: self.merges,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# run\nstrategy = pooling-avg\nd_e = 16\nd_h=32 # small\nlr = 0.01\nepochs = 3\n",
            "run.cfg",
        )
        .unwrap();
        cfg.set("epochs", "5").unwrap();
        assert_eq!(cfg.strategy, StrategyKind::PoolingAvg);
        assert_eq!(cfg.embed_dim, 16);
        assert_eq!(cfg.hidden_dim, 32);
        assert_eq!(cfg.epochs, 5);
        let t = cfg.train_config();
        assert_eq!(t.hyper.lr, 0.01);
        assert_eq!(t.strategy.kind, StrategyKind::PoolingAvg);
    }

    #[test]
    fn errors_carry_line() {
        let mut cfg = RunConfig::default();
        match cfg.apply_text("n = 5\nbogus = 1\n", "run.cfg") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(cfg.apply_text("n = 0", "c").is_err());
        assert!(cfg.apply_text("strategy = nope", "c").is_err());
        assert!(cfg.apply_text("no equals sign", "c").is_err());
        assert!(cfg.set("lr", "-1").is_err());
    }
}
