//! End-to-end protocol on a generated corpus: train the single-text model
//! and the integration models, evaluate every strategy against the
//! baseline, split by first-best agreement, and sweep the hypothesis budget.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::asr_sim::{generate_synthetic_corpus, NoiseProfile, TemplateSet};
use crate::classifier::{train_model, Architecture, Hyperparams, Model, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, hypothesis_count_sweep, nbest_quality_stats, partition_by_agreement, relative_error_reduction,
    EvalReport, QualityStats, SweepRow,
};
use crate::exec::Execution;
use crate::integration::{predict_all, Granularity, LabelKind, NBestList, StrategyConfig, StrategyKind};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train_size: usize,
    pub test_size: usize,
    pub n: usize,
    pub seed: u64,
    pub noise: NoiseProfile,
    pub label: LabelKind,
    pub arch: Architecture,
    pub hyper: Hyperparams,
    pub granularity: Granularity,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train_size: 5000,
            test_size: 1000,
            n: 5,
            seed: 7,
            noise: NoiseProfile::moderate(7),
            label: LabelKind::Domain,
            arch: Architecture {
                embed_dim: 16,
                hidden_dim: 32,
                mlp_hidden: None,
            },
            hyper: Hyperparams {
                lr: 0.01,
                epochs: 4,
                batch_size: 32,
                merges: 150,
                seed: 7,
                ..Hyperparams::default()
            },
            granularity: Granularity::Token,
        }
    }
}

impl ExperimentConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.noise.seed = seed;
        self.hyper.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub strategy: StrategyKind,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub rerr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetOutcome {
    pub strategy: StrategyKind,
    pub agree_records: usize,
    pub disagree_records: usize,
    /// `None` when the baseline is perfect on the partition or it is empty.
    pub agree_rerr: Option<f64>,
    pub disagree_rerr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub train_records: usize,
    pub test_records: usize,
    /// Share of test records whose first-best differs from the transcription.
    pub disagree_rate: f64,
    pub quality: QualityStats,
    pub baseline: EvalReport,
    pub strategies: Vec<StrategyOutcome>,
    pub subsets: Vec<SubsetOutcome>,
    pub pooling_avg_sweep: Vec<SweepRow>,
    /// Whether the pooling-avg model at budget 1 predicts exactly what its
    /// own single-text path predicts on hypothesis 1.
    pub n1_matches_single_text: bool,
    pub training_seconds: f64,
    pub total_seconds: f64,
}

impl ExperimentReport {
    pub fn outcome(&self, kind: StrategyKind) -> Option<&StrategyOutcome> {
        self.strategies.iter().find(|s| s.strategy == kind)
    }

    pub fn subset(&self, kind: StrategyKind) -> Option<&SubsetOutcome> {
        self.subsets.iter().find(|s| s.strategy == kind)
    }
}

/// Train and test corpora with disjoint id prefixes.
pub fn generate_split(cfg: &ExperimentConfig, exec: Execution) -> Result<(Vec<NBestList>, Vec<NBestList>)> {
    let templates = TemplateSet::builtin();
    let train = generate_synthetic_corpus(&templates, cfg.train_size, cfg.n, &cfg.noise, "train-", exec)?;
    let test = generate_synthetic_corpus(&templates, cfg.test_size, cfg.n, &cfg.noise, "test-", exec)?;
    Ok((train, test))
}

fn train_for(corpus: &[NBestList], cfg: &ExperimentConfig, kind: StrategyKind) -> Result<Model> {
    let mut strategy = StrategyConfig::new(kind).with_n(cfg.n);
    strategy.granularity = cfg.granularity;
    let tc = TrainConfig {
        strategy,
        label: cfg.label,
        arch: cfg.arch,
        hyper: cfg.hyper.clone(),
    };
    Ok(train_model(corpus, &tc, None, None)?.0)
}

fn subset_rerr(base: &EvalReport, model: &EvalReport) -> Option<f64> {
    relative_error_reduction(100.0 * base.micro_f1, 100.0 * model.micro_f1).ok()
}

pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentReport> {
    let start = Instant::now();
    let (train, test) = generate_split(cfg, exec)?;

    let t0 = Instant::now();
    let single = train_for(&train, cfg, StrategyKind::Baseline)?;
    let models: Vec<(StrategyKind, Model)> = [
        StrategyKind::CombinedSentence,
        StrategyKind::PoolingAvg,
        StrategyKind::PoolingMax,
    ]
    .into_iter()
    .map(|k| Ok((k, train_for(&train, cfg, k)?)))
    .collect::<Result<_>>()?;
    let training_seconds = t0.elapsed().as_secs_f64();

    let model_for = |kind: StrategyKind| -> &Model {
        models
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, m)| m)
            .unwrap_or(&single)
    };
    let strategy_cfg = |kind: StrategyKind| {
        let mut s = StrategyConfig::new(kind).with_n(cfg.n);
        s.granularity = cfg.granularity;
        s
    };

    let baseline = evaluate(&single, &test, &strategy_cfg(StrategyKind::Baseline), exec)?;
    if baseline.micro_f1 >= 1.0 {
        return Err(Error::Degenerate(format!(
            "baseline micro F1 is 100% for seed {}; relative error reduction is undefined, choose another seed or more noise",
            cfg.seed
        )));
    }

    let mut strategies = Vec::new();
    for kind in StrategyKind::ALL {
        let mut report = evaluate(model_for(kind), &test, &strategy_cfg(kind), exec)?;
        let rerr = report.compare_to(&baseline)?;
        strategies.push(StrategyOutcome {
            strategy: kind,
            micro_f1: report.micro_f1,
            macro_f1: report.macro_f1,
            rerr,
        });
    }

    let (agree, disagree) = partition_by_agreement(&test)?;
    let part_eval = |model: &Model, part: &[NBestList], kind: StrategyKind| -> Result<Option<EvalReport>> {
        if part.is_empty() {
            Ok(None)
        } else {
            evaluate(model, part, &strategy_cfg(kind), exec).map(Some)
        }
    };
    let base_agree = part_eval(&single, &agree, StrategyKind::Baseline)?;
    let base_disagree = part_eval(&single, &disagree, StrategyKind::Baseline)?;
    let mut subsets = Vec::new();
    for kind in StrategyKind::ALL {
        if kind == StrategyKind::Baseline {
            continue;
        }
        let a = part_eval(model_for(kind), &agree, kind)?;
        let d = part_eval(model_for(kind), &disagree, kind)?;
        subsets.push(SubsetOutcome {
            strategy: kind,
            agree_records: agree.len(),
            disagree_records: disagree.len(),
            agree_rerr: base_agree.as_ref().zip(a.as_ref()).and_then(|(b, m)| subset_rerr(b, m)),
            disagree_rerr: base_disagree
                .as_ref()
                .zip(d.as_ref())
                .and_then(|(b, m)| subset_rerr(b, m)),
        });
    }

    let pooling = model_for(StrategyKind::PoolingAvg);
    let ns: Vec<usize> = (1..=cfg.n).collect();
    let pooling_avg_sweep = hypothesis_count_sweep(pooling, &test, &strategy_cfg(StrategyKind::PoolingAvg), &ns, exec)?;
    let at_one = predict_all(pooling, &test, &strategy_cfg(StrategyKind::PoolingAvg).with_n(1), exec)?;
    let single_text = predict_all(pooling, &test, &strategy_cfg(StrategyKind::Baseline), exec)?;

    Ok(ExperimentReport {
        seed: cfg.seed,
        train_records: train.len(),
        test_records: test.len(),
        disagree_rate: disagree.len() as f64 / test.len() as f64,
        quality: nbest_quality_stats(&test, cfg.n, cfg.granularity)?,
        baseline,
        strategies,
        subsets,
        pooling_avg_sweep,
        n1_matches_single_text: at_one == single_text,
        training_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}
