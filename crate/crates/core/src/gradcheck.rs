//! Finite-difference checks of the analytic gradients of whole models.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bpe::{BpeVocabulary, DELIMITER_ID};
use crate::classifier::{example_gradient, Architecture, Hyperparams, Model, ModelInput, TagSet};
use crate::error::Result;
use crate::integration::{LabelKind, StrategyKind};
use crate::nn::PoolMode;

/// Central-difference step.
pub const STEP: f64 = 1e-4;
/// Floor on the relative-error denominator, so coordinates whose gradient
/// is essentially zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pipeline {
    /// One text through encoder and head.
    Single,
    /// Hypotheses joined by the delimiter into one sequence.
    Combined,
    /// Per-hypothesis embeddings stacked, padded and pooled.
    Pooling(PoolMode),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub pipeline: Pipeline,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub mlp_hidden: Option<usize>,
    pub num_tags: usize,
    /// Hypothesis budget; the list itself may be shorter.
    pub n: usize,
    /// Coordinates checked per tensor, spread evenly; 0 checks them all.
    pub coords_per_tensor: usize,
}

impl GradCheckConfig {
    /// Random configuration with every width at most `max_dim`.
    pub fn random<R: Rng>(rng: &mut R, pipeline: Pipeline, max_dim: usize) -> Self {
        GradCheckConfig {
            pipeline,
            embed_dim: rng.gen_range(1..=max_dim),
            hidden_dim: rng.gen_range(1..=max_dim),
            mlp_hidden: rng.gen_bool(0.5).then(|| rng.gen_range(1..=max_dim)),
            num_tags: rng.gen_range(2..=5),
            n: rng.gen_range(1..=5),
            coords_per_tensor: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn random_ids<R: Rng>(rng: &mut R, vocab_len: usize) -> Vec<u32> {
    let len = rng.gen_range(1..=4);
    (0..len).map(|_| rng.gen_range(3..vocab_len as u32)).collect()
}

fn random_input<R: Rng>(rng: &mut R, cfg: &GradCheckConfig, vocab_len: usize) -> ModelInput {
    let r = rng.gen_range(1..=cfg.n);
    let hyps: Vec<Vec<u32>> = (0..r).map(|_| random_ids(rng, vocab_len)).collect();
    match cfg.pipeline {
        Pipeline::Single => ModelInput::Sequence(hyps.into_iter().next().unwrap()),
        Pipeline::Combined => {
            let mut ids = Vec::new();
            for (i, h) in hyps.into_iter().enumerate() {
                if i > 0 {
                    ids.push(DELIMITER_ID);
                }
                ids.extend(h);
            }
            ModelInput::Sequence(ids)
        }
        Pipeline::Pooling(mode) => ModelInput::Pooled {
            hypotheses: hyps,
            n: cfg.n,
            mode,
        },
    }
}

/// Builds a random model and input from `seed` and compares every analytic
/// parameter gradient it samples against central differences of the loss.
pub fn gradient_check(cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = BpeVocabulary::train(&["abc bcd", "cab dab ee"], 4)?;
    let tags = TagSet::new((0..cfg.num_tags).map(|i| format!("t{i}")).collect())?;
    let strategy = match cfg.pipeline {
        Pipeline::Single => StrategyKind::Baseline,
        Pipeline::Combined => StrategyKind::CombinedSentence,
        Pipeline::Pooling(PoolMode::Avg) => StrategyKind::PoolingAvg,
        Pipeline::Pooling(PoolMode::Max) => StrategyKind::PoolingMax,
    };
    let arch = Architecture {
        embed_dim: cfg.embed_dim,
        hidden_dim: cfg.hidden_dim,
        mlp_hidden: cfg.mlp_hidden,
    };
    let mut model = Model::init(
        &mut rng,
        strategy,
        LabelKind::Domain,
        cfg.n,
        arch,
        Hyperparams::default(),
        vocab,
        tags,
    )?;
    // The default init is small; larger weights exercise the nonlinearities.
    for t in model.tensors_mut() {
        for x in t.data_mut() {
            *x = rng.gen_range(-0.8..0.8);
        }
    }
    let input = random_input(&mut rng, cfg, model.vocab().len());
    let target = rng.gen_range(0..cfg.num_tags);
    let (_, grads) = example_gradient(&model, &input, target)?;
    let example = [(input, target)];

    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        checked: 0,
    };
    for (ti, name) in names.iter().enumerate() {
        let len = grads[ti].len();
        let stride = match cfg.coords_per_tensor {
            0 => 1,
            k => len.div_ceil(k).max(1),
        };
        for ci in (0..len).step_by(stride) {
            let original = model.tensors_mut()[ti].data()[ci];
            model.tensors_mut()[ti].data_mut()[ci] = original + STEP;
            let plus = model.mean_loss(&example)?;
            model.tensors_mut()[ti].data_mut()[ci] = original - STEP;
            let minus = model.mean_loss(&example)?;
            model.tensors_mut()[ti].data_mut()[ci] = original;
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(grads[ti].data()[ci], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_tensor = format!("{name}[{ci}]");
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn each_pipeline_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for pipeline in [
            Pipeline::Single,
            Pipeline::Combined,
            Pipeline::Pooling(PoolMode::Avg),
            Pipeline::Pooling(PoolMode::Max),
        ] {
            let cfg = GradCheckConfig::random(&mut rng, pipeline, 4);
            let r = gradient_check(&cfg, 17).unwrap();
            assert!(r.checked > 0);
            assert!(r.max_rel_error < 1e-3, "{pipeline:?} {r:?}");
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-5).abs() < 1e-15);
    }
}
