//! Strategies for turning an n-best list into one tag prediction.
//!
//! Direct strategies run a single-text classifier on individual hypotheses
//! and combine the per-hypothesis predictions. Integration strategies feed
//! the whole list to a model trained on n-best input: either the hypotheses
//! joined by a delimiter, or per-hypothesis embeddings stacked and pooled.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bpe::DELIMITER;
use crate::classifier::{Model, TagDistribution};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::nn::{PoolMode, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Hypothesis {
    pub fn new(text: impl Into<String>) -> Self {
        Hypothesis {
            text: text.into(),
            score: None,
        }
    }

    pub fn scored(text: impl Into<String>, score: f64) -> Self {
        Hypothesis {
            text: text.into(),
            score: Some(score),
        }
    }
}

/// One utterance: gold labels, optional transcription, and ranked ASR
/// hypotheses (index 0 is rank 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestList {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcription: Option<String>,
    pub domain: String,
    pub intent: String,
    pub nbest: Vec<Hypothesis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    #[default]
    Domain,
    Intent,
}

impl FromStr for LabelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "domain" => Ok(LabelKind::Domain),
            "intent" => Ok(LabelKind::Intent),
            other => Err(Error::invalid(format!("unknown label kind {other:?}"))),
        }
    }
}

impl NBestList {
    /// Checks list invariants: at least one hypothesis; scores either all
    /// present and non-increasing, or all absent.
    pub fn validate(&self) -> Result<()> {
        if self.nbest.is_empty() {
            return Err(Error::invalid(format!("record {:?} has an empty nbest list", self.id)));
        }
        let with_score = self.nbest.iter().filter(|h| h.score.is_some()).count();
        if with_score != 0 && with_score != self.nbest.len() {
            return Err(Error::invalid(format!(
                "record {:?} mixes scored and unscored hypotheses",
                self.id
            )));
        }
        for pair in self.nbest.windows(2) {
            if let (Some(a), Some(b)) = (pair[0].score, pair[1].score) {
                if !a.is_finite() || !b.is_finite() || b > a {
                    return Err(Error::invalid(format!(
                        "record {:?} has scores that increase with rank",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nbest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nbest.is_empty()
    }

    pub fn label(&self, kind: LabelKind) -> &str {
        match kind {
            LabelKind::Domain => &self.domain,
            LabelKind::Intent => &self.intent,
        }
    }

    pub fn transcription(&self) -> Result<&str> {
        self.transcription
            .as_deref()
            .ok_or_else(|| Error::MissingTranscription { id: self.id.clone() })
    }

    /// Hypothesis texts in rank order, at most `n` of them.
    pub fn top(&self, n: usize) -> impl Iterator<Item = &str> {
        self.nbest.iter().take(n).map(|h| h.text.as_str())
    }

    pub fn first_best(&self) -> &str {
        &self.nbest[0].text
    }

    /// Whether hypothesis 1 equals the transcription exactly.
    pub fn first_best_agrees(&self) -> Result<bool> {
        Ok(self.transcription()? == self.first_best())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Baseline,
    Oracle,
    MajorityVote,
    SortByScore,
    RerankOracle,
    CombinedSentence,
    PoolingAvg,
    PoolingMax,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::Baseline,
        StrategyKind::Oracle,
        StrategyKind::MajorityVote,
        StrategyKind::SortByScore,
        StrategyKind::RerankOracle,
        StrategyKind::CombinedSentence,
        StrategyKind::PoolingAvg,
        StrategyKind::PoolingMax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Baseline => "baseline",
            StrategyKind::Oracle => "oracle",
            StrategyKind::MajorityVote => "majority-vote",
            StrategyKind::SortByScore => "sort-by-score",
            StrategyKind::RerankOracle => "rerank-oracle",
            StrategyKind::CombinedSentence => "combined-sentence",
            StrategyKind::PoolingAvg => "pooling-avg",
            StrategyKind::PoolingMax => "pooling-max",
        }
    }

    pub fn pool_mode(self) -> Option<PoolMode> {
        match self {
            StrategyKind::PoolingAvg => Some(PoolMode::Avg),
            StrategyKind::PoolingMax => Some(PoolMode::Max),
            _ => None,
        }
    }

    /// True for strategies whose model is trained on n-best input rather
    /// than on transcriptions.
    pub fn trains_on_nbest(self) -> bool {
        matches!(
            self,
            StrategyKind::CombinedSentence | StrategyKind::PoolingAvg | StrategyKind::PoolingMax
        )
    }

    pub fn needs_transcription(self) -> bool {
        matches!(self, StrategyKind::Oracle | StrategyKind::RerankOracle)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy {s:?}")))
    }
}

/// Where Sort-by-Score takes its per-hypothesis confidence from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    #[default]
    Classifier,
    Asr,
}

impl FromStr for ScoreSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classifier" => Ok(ScoreSource::Classifier),
            "asr" => Ok(ScoreSource::Asr),
            other => Err(Error::invalid(format!("unknown score source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Token,
    Char,
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(Granularity::Token),
            "char" => Ok(Granularity::Char),
            other => Err(Error::invalid(format!("unknown granularity {other:?}"))),
        }
    }
}

pub const DEFAULT_HYPOTHESES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub n: usize,
    pub score_source: ScoreSource,
    pub granularity: Granularity,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        StrategyConfig {
            kind,
            n: DEFAULT_HYPOTHESES,
            score_source: ScoreSource::default(),
            granularity: Granularity::default(),
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("hypothesis budget n must be at least 1"));
        }
        Ok(())
    }

    /// Integration strategies need a model trained the same way; direct
    /// strategies only need the single-text path, which every model has.
    pub fn check_model(&self, model: &Model) -> Result<()> {
        self.validate()?;
        if self.kind.trains_on_nbest() && model.strategy() != self.kind {
            return Err(Error::invalid(format!(
                "strategy {} needs a model trained with it, checkpoint was trained with {}",
                self.kind,
                model.strategy()
            )));
        }
        Ok(())
    }
}

/// Unit-cost Levenshtein distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn text_distance(a: &str, b: &str, granularity: Granularity) -> usize {
    match granularity {
        Granularity::Token => {
            let ta: Vec<&str> = a.split_whitespace().collect();
            let tb: Vec<&str> = b.split_whitespace().collect();
            edit_distance(&ta, &tb)
        }
        Granularity::Char => {
            let ca: Vec<char> = a.chars().collect();
            let cb: Vec<char> = b.chars().collect();
            edit_distance(&ca, &cb)
        }
    }
}

/// Most frequent tag; ties go to the tag that appears first in rank order.
pub fn majority_vote<T: PartialEq + Clone>(tags: &[T]) -> Result<T> {
    let mut best: Option<(usize, &T)> = None;
    for t in tags {
        let count = tags.iter().filter(|u| *u == t).count();
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, t));
        }
    }
    best.map(|(_, t)| t.clone()).ok_or(Error::Empty("majority_vote"))
}

/// Tag with the highest confidence; ties go to the lowest rank.
pub fn sort_by_score<T: Clone>(predictions: &[(T, f64)]) -> Result<T> {
    let mut best: Option<&(T, f64)> = None;
    for p in predictions {
        if !p.1.is_finite() {
            return Err(Error::NonFinite("sort_by_score confidence"));
        }
        if best.is_none_or(|b| p.1 > b.1) {
            best = Some(p);
        }
    }
    best.map(|p| p.0.clone()).ok_or(Error::Empty("sort_by_score"))
}

/// 1-based rank and text of the hypothesis (within the top `n`) closest to
/// the transcription; ties go to the lowest rank.
pub fn rerank_oracle_select(record: &NBestList, granularity: Granularity, n: usize) -> Result<(usize, &str)> {
    let trans = record.transcription()?;
    let mut best: Option<(usize, usize, &str)> = None;
    for (i, text) in record.top(n.max(1)).enumerate() {
        let d = text_distance(text, trans, granularity);
        if best.is_none_or(|(bd, _, _)| d < bd) {
            best = Some((d, i + 1, text));
        }
    }
    best.map(|(_, rank, text)| (rank, text))
        .ok_or(Error::Empty("rerank_oracle_select"))
}

/// The top `min(r, n)` hypotheses joined by ` <SEP> `.
pub fn build_combined_text(record: &NBestList, n: usize) -> String {
    record.top(n.max(1)).collect::<Vec<_>>().join(&format!(" {DELIMITER} "))
}

/// Exactly `n` rows: the top `n` when `r >= n`, otherwise all `r` followed
/// by `n - r` copies of the first.
pub fn stack_and_pad<T: Clone>(rows: &[T], n: usize) -> Result<Vec<T>> {
    let first = rows.first().ok_or(Error::Empty("stack_and_pad"))?;
    if n == 0 {
        return Err(Error::invalid("stack_and_pad needs n >= 1"));
    }
    let mut out: Vec<T> = rows.iter().take(n).cloned().collect();
    out.resize(n, first.clone());
    Ok(out)
}

/// `n × 2·d_h` matrix of per-hypothesis output vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedEmbeddings {
    pub rows: Vec<Vec<f64>>,
}

/// One `2·d_h` summary of a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledEmbedding(pub Vec<f64>);

impl StackedEmbeddings {
    pub fn new(embeddings: &[Vec<f64>], n: usize) -> Result<Self> {
        Ok(StackedEmbeddings {
            rows: stack_and_pad(embeddings, n)?,
        })
    }

    /// Coordinate-wise mean or max over the rows.
    pub fn pool(&self, mode: PoolMode) -> Result<PooledEmbedding> {
        let mut tape = Tape::new();
        let vars = self
            .rows
            .iter()
            .map(|r| crate::nn::Tensor::vector(r.clone()).map(|t| tape.leaf(t)))
            .collect::<Result<Vec<_>>>()?;
        let pooled = tape.pool(&vars, mode)?;
        Ok(PooledEmbedding(tape.value(pooled).data().to_vec()))
    }
}

/// Output distribution of a pooling model over the top `n` hypotheses.
pub fn pooling_predict(model: &Model, record: &NBestList, mode: PoolMode, n: usize) -> Result<TagDistribution> {
    let texts: Vec<&str> = record.top(n.max(1)).collect();
    model.pooled_distribution(&texts, mode, n)
}

/// Tag index chosen by `cfg.kind` for one record.
pub fn predict(model: &Model, record: &NBestList, cfg: &StrategyConfig) -> Result<usize> {
    let n = cfg.n.max(1);
    match cfg.kind {
        StrategyKind::Baseline => Ok(model.text_distribution(record.first_best())?.argmax()),
        StrategyKind::Oracle => Ok(model.text_distribution(record.transcription()?)?.argmax()),
        StrategyKind::MajorityVote => {
            let tags = record
                .top(n)
                .map(|t| model.text_distribution(t).map(|d| d.argmax()))
                .collect::<Result<Vec<_>>>()?;
            majority_vote(&tags)
        }
        StrategyKind::SortByScore => {
            let preds = record
                .nbest
                .iter()
                .take(n)
                .map(|h| {
                    let d = model.text_distribution(&h.text)?;
                    let score = match cfg.score_source {
                        ScoreSource::Classifier => d.confidence(),
                        ScoreSource::Asr => h.score.ok_or_else(|| {
                            Error::invalid(format!("record {:?} has no ASR scores for sort-by-score", record.id))
                        })?,
                    };
                    Ok((d.argmax(), score))
                })
                .collect::<Result<Vec<_>>>()?;
            sort_by_score(&preds)
        }
        StrategyKind::RerankOracle => {
            let (_, text) = rerank_oracle_select(record, cfg.granularity, n)?;
            Ok(model.text_distribution(text)?.argmax())
        }
        StrategyKind::CombinedSentence => Ok(model.text_distribution(&build_combined_text(record, n))?.argmax()),
        StrategyKind::PoolingAvg => Ok(pooling_predict(model, record, PoolMode::Avg, n)?.argmax()),
        StrategyKind::PoolingMax => Ok(pooling_predict(model, record, PoolMode::Max, n)?.argmax()),
    }
}

/// Predictions for every record, in corpus order.
pub fn predict_all(model: &Model, corpus: &[NBestList], cfg: &StrategyConfig, exec: Execution) -> Result<Vec<usize>> {
    cfg.check_model(model)?;
    exec.map(corpus, |r| predict(model, r, cfg)).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(trans: &str, hyps: &[&str]) -> NBestList {
        NBestList {
            id: "u".into(),
            transcription: Some(trans.into()),
            domain: "D".into(),
            intent: "I".into(),
            nbest: hyps.iter().map(|h| Hypothesis::new(*h)).collect(),
        }
    }

    fn tokens(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    /// Exponential-time recursive definition of Levenshtein distance.
    fn brute_force(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = brute_force(ra, rb) + usize::from(x != y);
                sub.min(brute_force(ra, b) + 1).min(brute_force(a, rb) + 1)
            }
        }
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance(&tokens("play muse"), &tokens("play muse")), 0);
        let empty: [&str; 0] = [];
        assert_eq!(edit_distance(&empty, &["a", "b", "c"]), 3);
        assert_eq!(edit_distance(&tokens("track on bose"), &tokens("check on bowls")), 2);
        assert_eq!(text_distance("play muse", "play news", Granularity::Char), 4);
    }

    proptest! {
        #[test]
        fn edit_distance_is_a_metric(
            a in prop::collection::vec(0u8..3, 0..=6),
            b in prop::collection::vec(0u8..3, 0..=6),
            c in prop::collection::vec(0u8..3, 0..=6),
        ) {
            let ab = edit_distance(&a, &b);
            prop_assert_eq!(ab, brute_force(&a, &b));
            prop_assert_eq!(ab, edit_distance(&b, &a));
            prop_assert!(edit_distance(&a, &c) <= ab + edit_distance(&b, &c));
        }

        #[test]
        fn votes_ignore_non_winning_appends(tags in prop::collection::vec(0u8..3, 1..8)) {
            let winner = majority_vote(&tags).unwrap();
            let loser = (0u8..4).find(|t| !tags.contains(t)).unwrap();
            let mut more = tags.clone();
            more.push(loser);
            let winner_count = tags.iter().filter(|&&t| t == winner).count();
            if winner_count > 1 {
                prop_assert_eq!(majority_vote(&more).unwrap(), winner);
            }
            let scored: Vec<(u8, f64)> =
                tags.iter().enumerate().map(|(i, &t)| (t, 1.0 / (1.0 + i as f64))).collect();
            let best = sort_by_score(&scored).unwrap();
            let mut appended = scored.clone();
            appended.push((loser, 0.0));
            prop_assert_eq!(sort_by_score(&appended).unwrap(), best);
        }
    }

    #[test]
    fn majority_vote_cases() {
        assert_eq!(majority_vote(&["Music", "Music", "Video"]).unwrap(), "Music");
        assert_eq!(majority_vote(&["A", "B"]).unwrap(), "A");
        assert_eq!(majority_vote(&["B", "A", "A", "B"]).unwrap(), "B");
        assert_eq!(majority_vote(&["X"]).unwrap(), "X");
        let empty: [&str; 0] = [];
        assert!(majority_vote(&empty).is_err());
    }

    #[test]
    fn sort_by_score_cases() {
        let preds = [("Music", 0.6), ("Video", 0.9), ("Music", 0.7)];
        assert_eq!(sort_by_score(&preds).unwrap(), "Video");
        assert_eq!(sort_by_score(&[("A", 0.5), ("B", 0.5)]).unwrap(), "A");
        assert_eq!(sort_by_score(&[("A", 0.1)]).unwrap(), "A");
        let empty: [(&str, f64); 0] = [];
        assert!(sort_by_score(&empty).is_err());
    }

    #[test]
    fn rerank_cases() {
        let r = record("play muse", &["play news", "play muse", "play mus"]);
        assert_eq!(
            rerank_oracle_select(&r, Granularity::Token, 5).unwrap(),
            (2, "play muse")
        );
        let r = record("track on bose", &["check on bowls", "check on bose", "track on bose"]);
        assert_eq!(rerank_oracle_select(&r, Granularity::Token, 5).unwrap().0, 3);
        let r = record("x y", &["a b", "a b", "a b"]);
        assert_eq!(rerank_oracle_select(&r, Granularity::Token, 5).unwrap().0, 1);
        let r = record("a b", &["a b", "a b c"]);
        assert_eq!(rerank_oracle_select(&r, Granularity::Char, 5).unwrap().0, 1);
        let mut r = record("a", &["a"]);
        r.transcription = None;
        assert!(matches!(
            rerank_oracle_select(&r, Granularity::Token, 5),
            Err(Error::MissingTranscription { .. })
        ));
    }

    #[test]
    fn combined_text_cases() {
        let r = record("", &["play news", "play muse"]);
        assert_eq!(build_combined_text(&r, 5), "play news <SEP> play muse");
        let r = record("", &["only one"]);
        assert_eq!(build_combined_text(&r, 5), "only one");
        let hyps: Vec<String> = (1..=7).map(|i| format!("h{i}")).collect();
        let refs: Vec<&str> = hyps.iter().map(String::as_str).collect();
        let r = record("", &refs);
        assert_eq!(build_combined_text(&r, 5), "h1 <SEP> h2 <SEP> h3 <SEP> h4 <SEP> h5");
    }

    #[test]
    fn stack_and_pad_cases() {
        assert_eq!(stack_and_pad(&[1, 2, 3], 5).unwrap(), vec![1, 2, 3, 1, 1]);
        assert_eq!(stack_and_pad(&[1, 2, 3], 3).unwrap(), vec![1, 2, 3]);
        assert_eq!(stack_and_pad(&[1, 2, 3, 4, 5, 6, 7], 5).unwrap(), vec![1, 2, 3, 4, 5]);
        let empty: [i32; 0] = [];
        assert!(stack_and_pad(&empty, 5).is_err());
        for r in 1..5usize {
            let rows: Vec<usize> = (1..=r).collect();
            let stacked = stack_and_pad(&rows, 5).unwrap();
            assert_eq!(stacked.iter().filter(|&&x| x == 1).count(), 5 - r + 1);
        }
    }

    #[test]
    fn pool_cases() {
        let s = StackedEmbeddings {
            rows: vec![vec![1.0, 3.0], vec![3.0, 1.0]],
        };
        assert_eq!(s.pool(PoolMode::Avg).unwrap().0, vec![2.0, 2.0]);
        let s = StackedEmbeddings {
            rows: vec![vec![1.0, 4.0], vec![3.0, 2.0]],
        };
        assert_eq!(s.pool(PoolMode::Max).unwrap().0, vec![3.0, 4.0]);
        let row = vec![0.1, -2.0 / 3.0, 7.0];
        let s = StackedEmbeddings::new(std::slice::from_ref(&row), 5).unwrap();
        assert_eq!(s.rows.len(), 5);
        assert_eq!(s.pool(PoolMode::Avg).unwrap().0, row);
        assert_eq!(s.pool(PoolMode::Max).unwrap().0, row);
    }

    #[test]
    fn record_validation() {
        let mut r = record("a", &["a", "b"]);
        assert!(r.validate().is_ok());
        r.nbest[0].score = Some(0.2);
        assert!(r.validate().is_err());
        r.nbest[1].score = Some(0.5);
        assert!(r.validate().is_err());
        r.nbest[1].score = Some(0.1);
        assert!(r.validate().is_ok());
        r.nbest.clear();
        assert!(r.validate().is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!("best-guess".parse::<StrategyKind>().is_err());
    }
}
