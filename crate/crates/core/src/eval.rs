//! Metrics, subset analyses, n-best quality statistics and budget sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::{Model, TagSet};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::integration::{predict_all, text_distance, Granularity, LabelKind, NBestList, StrategyConfig};

/// Tags absent from both gold and predictions are left out of the macro mean.
pub const MACRO_CONVENTION: &str = "macro F1 averages tags present in gold or predictions";

fn check_lengths(gold: &[usize], pred: &[usize], num_tags: usize) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Dimension {
            op: "gold/prediction",
            left: vec![gold.len()],
            right: vec![pred.len()],
        });
    }
    if let Some(&bad) = gold.iter().chain(pred).find(|&&t| t >= num_tags) {
        return Err(Error::IndexOutOfRange {
            what: "tag",
            index: bad,
            len: num_tags,
        });
    }
    Ok(())
}

/// `confusion[g][p]` counts records with gold `g` predicted as `p`.
pub fn confusion_matrix(gold: &[usize], pred: &[usize], num_tags: usize) -> Result<Vec<Vec<usize>>> {
    check_lengths(gold, pred, num_tags)?;
    let mut m = vec![vec![0usize; num_tags]; num_tags];
    for (&g, &p) in gold.iter().zip(pred) {
        m[g][p] += 1;
    }
    Ok(m)
}

/// Micro and macro F1 as fractions in [0, 1].
pub fn micro_macro_f1(gold: &[usize], pred: &[usize], num_tags: usize) -> Result<(f64, f64)> {
    let m = confusion_matrix(gold, pred, num_tags)?;
    if gold.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let correct: usize = (0..num_tags).map(|t| m[t][t]).sum();
    let micro = correct as f64 / gold.len() as f64;
    let mut f1s = Vec::new();
    for t in 0..num_tags {
        let tp = m[t][t];
        let fn_ = m[t].iter().sum::<usize>() - tp;
        let fp = m.iter().map(|row| row[t]).sum::<usize>() - tp;
        if tp + fn_ + fp == 0 {
            continue;
        }
        f1s.push(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
    }
    let macro_ = f1s.iter().sum::<f64>() / f1s.len() as f64;
    Ok((micro, macro_))
}

/// Relative error reduction in percent, from micro F1 values in percent.
pub fn relative_error_reduction(baseline_micro: f64, model_micro: f64) -> Result<f64> {
    if baseline_micro.is_nan() || baseline_micro >= 100.0 {
        return Err(Error::Degenerate(format!(
            "relative error reduction is undefined for baseline micro F1 {baseline_micro}"
        )));
    }
    let base_err = 100.0 - baseline_micro;
    Ok(100.0 * (base_err - (100.0 - model_micro)) / base_err)
}

/// Accuracy per tag over records whose gold tag is that tag; `None` when
/// the tag never occurs in gold.
pub fn per_domain_report(gold: &[usize], pred: &[usize], tags: &TagSet) -> Result<BTreeMap<String, Option<f64>>> {
    let m = confusion_matrix(gold, pred, tags.len())?;
    Ok((0..tags.len())
        .map(|t| {
            let total: usize = m[t].iter().sum();
            let acc = (total > 0).then(|| m[t][t] as f64 / total as f64);
            (tags.name(t).to_string(), acc)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: String,
    pub label: LabelKind,
    pub records: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub macro_convention: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub baseline: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rerr: Option<f64>,
    pub per_tag_accuracy: BTreeMap<String, Option<f64>>,
    pub tags: Vec<String>,
    pub confusion: Vec<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub agree: Option<Box<EvalReport>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub disagree: Option<Box<EvalReport>>,
}

impl EvalReport {
    pub fn from_predictions(
        strategy: &str,
        label: LabelKind,
        gold: &[usize],
        pred: &[usize],
        tags: &TagSet,
    ) -> Result<Self> {
        let (micro_f1, macro_f1) = micro_macro_f1(gold, pred, tags.len())?;
        Ok(EvalReport {
            strategy: strategy.to_string(),
            label,
            records: gold.len(),
            micro_f1,
            macro_f1,
            macro_convention: MACRO_CONVENTION.to_string(),
            baseline: None,
            rerr: None,
            per_tag_accuracy: per_domain_report(gold, pred, tags)?,
            tags: tags.names().to_vec(),
            confusion: confusion_matrix(gold, pred, tags.len())?,
            agree: None,
            disagree: None,
        })
    }

    /// Records RErr against `baseline`, which must cover the same records.
    pub fn compare_to(&mut self, baseline: &EvalReport) -> Result<f64> {
        if baseline.records != self.records {
            return Err(Error::invalid("baseline report covers a different record set"));
        }
        let rerr = relative_error_reduction(100.0 * baseline.micro_f1, 100.0 * self.micro_f1)?;
        self.baseline = Some(baseline.strategy.clone());
        self.rerr = Some(rerr);
        Ok(rerr)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Gold tag indices for `corpus`; unknown labels are errors.
pub fn gold_tags(corpus: &[NBestList], label: LabelKind, tags: &TagSet) -> Result<Vec<usize>> {
    corpus.iter().map(|r| tags.index(r.label(label))).collect()
}

/// Evaluates `cfg` with `model` on `corpus`.
pub fn evaluate(model: &Model, corpus: &[NBestList], cfg: &StrategyConfig, exec: Execution) -> Result<EvalReport> {
    let gold = gold_tags(corpus, model.label(), model.tags())?;
    let pred = predict_all(model, corpus, cfg, exec)?;
    EvalReport::from_predictions(cfg.kind.name(), model.label(), &gold, &pred, model.tags())
}

/// Splits by exact equality of hypothesis 1 and the transcription.
pub fn partition_by_agreement(corpus: &[NBestList]) -> Result<(Vec<NBestList>, Vec<NBestList>)> {
    let mut agree = Vec::new();
    let mut disagree = Vec::new();
    for r in corpus {
        if r.first_best_agrees()? {
            agree.push(r.clone());
        } else {
            disagree.push(r.clone());
        }
    }
    Ok((agree, disagree))
}

/// Reports for the agree and disagree partitions; an empty partition
/// yields `None`.
pub fn subset_split_eval(
    model: &Model,
    corpus: &[NBestList],
    cfg: &StrategyConfig,
    exec: Execution,
) -> Result<(Option<EvalReport>, Option<EvalReport>)> {
    let (agree, disagree) = partition_by_agreement(corpus)?;
    let run = |part: &[NBestList]| -> Result<Option<EvalReport>> {
        if part.is_empty() {
            Ok(None)
        } else {
            evaluate(model, part, cfg, exec).map(Some)
        }
    };
    Ok((run(&agree)?, run(&disagree)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

/// Evaluates the same model with hypothesis budget `n` for each entry of
/// `ns`. Records with fewer hypotheses use all they have.
pub fn hypothesis_count_sweep(
    model: &Model,
    corpus: &[NBestList],
    cfg: &StrategyConfig,
    ns: &[usize],
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    ns.iter()
        .map(|&n| {
            let report = evaluate(model, corpus, &(*cfg).with_n(n), exec)?;
            Ok(SweepRow {
                n,
                micro_f1: report.micro_f1,
                macro_f1: report.macro_f1,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("n,micro_f1,macro_f1\n");
    for r in rows {
        writeln!(out, "{},{:.6},{:.6}", r.n, r.micro_f1, r.macro_f1).unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub rank: usize,
    pub match_count: usize,
    pub match_pct: f64,
    pub better_count: usize,
    /// Records with at least `rank` hypotheses.
    pub better_denominator: usize,
    pub better_pct: f64,
}

/// Where exact transcription matches sit in the n-best lists, and how often
/// a lower rank is closer to the transcription than rank 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityStats {
    pub n: usize,
    pub granularity: Granularity,
    pub considered: usize,
    pub skipped: usize,
    /// Records with an exact match anywhere in the top `n`; the denominator
    /// of every `match_pct`.
    pub matched: usize,
    pub first_match_count: usize,
    pub rows: Vec<QualityRow>,
}

fn pct(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

pub fn nbest_quality_stats(corpus: &[NBestList], n: usize, granularity: Granularity) -> Result<QualityStats> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let mut first_match = vec![0usize; n + 1];
    let mut better = vec![0usize; n + 1];
    let mut has_rank = vec![0usize; n + 1];
    let mut skipped = 0;
    let mut considered = 0;
    for r in corpus {
        let Some(trans) = r.transcription.as_deref() else {
            skipped += 1;
            continue;
        };
        considered += 1;
        let hyps: Vec<&str> = r.top(n).collect();
        if let Some(k) = hyps.iter().position(|h| *h == trans) {
            first_match[k + 1] += 1;
        }
        let d1 = text_distance(hyps[0], trans, granularity);
        for (k, h) in hyps.iter().enumerate().skip(1) {
            has_rank[k + 1] += 1;
            if text_distance(h, trans, granularity) < d1 {
                better[k + 1] += 1;
            }
        }
    }
    let matched: usize = first_match.iter().sum();
    let rows = (2..=n)
        .map(|k| QualityRow {
            rank: k,
            match_count: first_match[k],
            match_pct: pct(first_match[k], matched),
            better_count: better[k],
            better_denominator: has_rank[k],
            better_pct: pct(better[k], has_rank[k]),
        })
        .collect();
    Ok(QualityStats {
        n,
        granularity,
        considered,
        skipped,
        matched,
        first_match_count: first_match[1],
        rows,
    })
}

impl QualityStats {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,match_count,match_pct,better_count,better_denominator,better_pct\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.3},{},{},{:.3}",
                r.rank, r.match_count, r.match_pct, r.better_count, r.better_denominator, r.better_pct
            )
            .unwrap();
        }
        out
    }

    pub fn match_total_pct(&self) -> f64 {
        self.rows.iter().map(|r| r.match_pct).sum()
    }
}

/// Intent evaluation is per domain: the records of one domain only.
pub fn domain_records(corpus: &[NBestList], domain: &str) -> Vec<NBestList> {
    corpus.iter().filter(|r| r.domain == domain).cloned().collect()
}

pub fn domains(corpus: &[NBestList]) -> Vec<String> {
    let mut names: Vec<String> = corpus.iter().map(|r| r.domain.clone()).collect();
    names.sort();
    names.dedup();
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integration::Hypothesis;
    use proptest::prelude::*;

    fn record(trans: Option<&str>, hyps: &[&str]) -> NBestList {
        NBestList {
            id: "r".into(),
            transcription: trans.map(String::from),
            domain: "D".into(),
            intent: "I".into(),
            nbest: hyps.iter().map(|h| Hypothesis::new(*h)).collect(),
        }
    }

    #[test]
    fn f1_examples() {
        assert_eq!(micro_macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), (1.0, 1.0));
        let (micro, macro_) = micro_macro_f1(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        // A: tp 1, fn 1, fp 0 -> 2/3; B: tp 1, fn 0, fp 1 -> 2/3
        assert!((micro - 2.0 / 3.0).abs() < 1e-12);
        assert!((macro_ - 2.0 / 3.0).abs() < 1e-12);
        // tag 2 never appears and does not drag the mean down
        let (_, macro3) = micro_macro_f1(&[0, 0, 1], &[0, 1, 1], 3).unwrap();
        assert_eq!(macro3, macro_);
        assert!(micro_macro_f1(&[0], &[0, 1], 2).is_err());
        assert!(micro_macro_f1(&[0], &[5], 2).is_err());
    }

    #[test]
    fn rerr_examples() {
        assert!((relative_error_reduction(90.0, 91.429).unwrap() - 14.29).abs() < 0.01);
        assert!((relative_error_reduction(90.0, 92.704).unwrap() - 27.04).abs() < 0.01);
        assert_eq!(relative_error_reduction(90.0, 90.0).unwrap(), 0.0);
        assert!(relative_error_reduction(100.0, 100.0).is_err());
    }

    proptest! {
        #[test]
        fn rerr_increases_with_model(b in 0.0f64..99.9, m1 in 0.0f64..100.0, m2 in 0.0f64..100.0) {
            prop_assume!(m1 < m2);
            prop_assert!(relative_error_reduction(b, m1).unwrap() < relative_error_reduction(b, m2).unwrap());
            prop_assert_eq!(relative_error_reduction(b, b).unwrap(), 0.0);
        }

        #[test]
        fn micro_equals_accuracy(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..40)) {
            let gold: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let acc = pairs.iter().filter(|p| p.0 == p.1).count() as f64 / pairs.len() as f64;
            let (micro, macro_) = micro_macro_f1(&gold, &pred, 4).unwrap();
            prop_assert!((micro - acc).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&macro_));
        }
    }

    #[test]
    fn per_tag_accuracy_by_hand() {
        let tags = TagSet::new(vec!["Music".into(), "Video".into(), "Weather".into(), "Other".into()]).unwrap();
        let gold = [0, 0, 0, 1, 1, 2];
        let pred = [0, 1, 0, 1, 0, 2];
        let acc = per_domain_report(&gold, &pred, &tags).unwrap();
        assert_eq!(acc["Music"], Some(2.0 / 3.0));
        assert_eq!(acc["Video"], Some(0.5));
        assert_eq!(acc["Weather"], Some(1.0));
        assert_eq!(acc["Other"], None);
        let all = per_domain_report(&gold, &gold, &tags).unwrap();
        assert!(all.values().flatten().all(|&a| a == 1.0));
    }

    #[test]
    fn quality_stats_hand_count() {
        let corpus = vec![
            record(Some("a b"), &["a b", "x", "y"]),
            record(Some("a b"), &["a c", "a b", "y"]),
            record(Some("a b"), &["x y", "a b", "a b z"]),
            record(Some("a b"), &["q", "r", "s"]),
            record(None, &["a b"]),
        ];
        let s = nbest_quality_stats(&corpus, 3, Granularity::Token).unwrap();
        assert_eq!(s.skipped, 1);
        assert_eq!(s.considered, 4);
        assert_eq!(s.matched, 3);
        assert!((s.rows[0].match_pct - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(s.rows[1].match_count, 0);
        assert!(s.match_total_pct() <= 100.0);
        // rank 2 beats rank 1 in records 2 and 3
        assert_eq!(s.rows[0].better_count, 2);
        assert_eq!(s.rows[0].better_denominator, 4);
    }

    #[test]
    fn quality_stats_clean_lists() {
        let corpus = vec![record(Some("a"), &["a", "b", "c"]), record(Some("d"), &["d", "e"])];
        let s = nbest_quality_stats(&corpus, 3, Granularity::Char).unwrap();
        assert!(s.rows.iter().all(|r| r.match_count == 0 && r.better_count == 0));
        assert_eq!(s.first_match_count, 2);
        assert_eq!(s.rows[1].better_denominator, 1);
    }

    #[test]
    fn partitions_are_exhaustive() {
        let corpus = vec![
            record(Some("a"), &["a"]),
            record(Some("a"), &["b", "a"]),
            record(Some("c"), &["c"]),
        ];
        let (agree, disagree) = partition_by_agreement(&corpus).unwrap();
        assert_eq!(agree.len() + disagree.len(), corpus.len());
        assert_eq!(disagree.len(), 1);
        assert!(partition_by_agreement(&[record(None, &["a"])]).is_err());
    }

    #[test]
    fn sweep_csv_has_one_row_per_n() {
        let rows: Vec<SweepRow> = [1, 3, 5]
            .iter()
            .map(|&n| SweepRow {
                n,
                micro_f1: 0.5,
                macro_f1: 0.25,
            })
            .collect();
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("1,0.5"));
    }
}
