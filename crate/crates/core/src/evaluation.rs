//! Temporal IoU metrics, split reports and result tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::Split;
use crate::error::{Error, Result};
use crate::model::{BranchScores, Model, Sample};
use crate::nn::Params;
use crate::par::{self, Execution};
use crate::predictor::{decode_span, snippet_span_to_seconds};

/// Thresholds reported by default.
pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.5, 0.7];

/// Grid used by the α sweep.
pub const ALPHA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// `|a ∩ b| / |a ∪ b|` for half-open intervals in seconds.
pub fn temporal_iou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    for &(s, e) in [&a, &b] {
        if !(s < e) || !s.is_finite() || !e.is_finite() {
            return Err(Error::validation(format!("degenerate interval ({s}, {e})")));
        }
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = a.1.max(b.1) - a.0.min(b.0);
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Top-1 prediction for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub query_id: String,
    pub tau_s_hat: f64,
    pub tau_e_hat: f64,
}

/// Ground truth in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video_id: String,
    pub query_id: String,
    pub tau_s: f64,
    pub tau_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleIou {
    pub video_id: String,
    pub query_id: String,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split_name: String,
    /// `(m, percentage of samples with IoU > m)`.
    pub iou_at: Vec<(f64, f64)>,
    pub miou: f64,
    pub n: usize,
    pub per_sample: Vec<SampleIou>,
}

impl EvalReport {
    pub fn iou_at(&self, m: f64) -> Option<f64> {
        self.iou_at.iter().find(|(t, _)| *t == m).map(|&(_, p)| p)
    }
}

fn key(video_id: &str, query_id: &str) -> (String, String) {
    (video_id.to_owned(), query_id.to_owned())
}

/// Scores per-sample IoUs into a report.
pub fn report_from_ious(split_name: &str, per_sample: Vec<SampleIou>, thresholds: &[f64]) -> Result<EvalReport> {
    if per_sample.is_empty() {
        return Err(Error::validation("no predictions to evaluate"));
    }
    let n = per_sample.len();
    let iou_at = thresholds
        .iter()
        .map(|&m| (m, 100.0 * per_sample.iter().filter(|s| s.iou > m).count() as f64 / n as f64))
        .collect();
    let miou = 100.0 * per_sample.iter().map(|s| s.iou).sum::<f64>() / n as f64;
    Ok(EvalReport { split_name: split_name.to_owned(), iou_at, miou, n, per_sample })
}

/// Matches predictions to annotations by `(video_id, query_id)`.
pub fn evaluate(
    split_name: &str,
    predictions: &[Prediction],
    annotations: &[GroundTruth],
    thresholds: &[f64],
) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(Error::validation("no predictions to evaluate"));
    }
    let mut gts = BTreeMap::new();
    for a in annotations {
        if gts.insert(key(&a.video_id, &a.query_id), a).is_some() {
            return Err(Error::validation(format!("duplicate annotation {}/{}", a.video_id, a.query_id)));
        }
    }
    let mut seen = BTreeSet::new();
    let mut unmatched = Vec::new();
    let mut per_sample = Vec::with_capacity(predictions.len());
    for p in predictions {
        let k = key(&p.video_id, &p.query_id);
        match gts.get(&k) {
            Some(gt) if seen.insert(k.clone()) => per_sample.push(SampleIou {
                video_id: p.video_id.clone(),
                query_id: p.query_id.clone(),
                iou: temporal_iou((p.tau_s_hat, p.tau_e_hat), (gt.tau_s, gt.tau_e))?,
            }),
            Some(_) => return Err(Error::validation(format!("duplicate prediction {}/{}", k.0, k.1))),
            None => unmatched.push(format!("prediction {}/{}", k.0, k.1)),
        }
    }
    unmatched.extend(gts.keys().filter(|k| !seen.contains(*k)).map(|k| format!("annotation {}/{}", k.0, k.1)));
    if !unmatched.is_empty() {
        return Err(Error::validation(format!("unmatched ids: {}", unmatched.join(", "))));
    }
    report_from_ious(split_name, per_sample, thresholds)
}

/// Decodes a sample's fused scores into seconds.
pub fn predict_from_scores(sample: &Sample, p_start: &[f64], p_end: &[f64]) -> Result<Prediction> {
    let (i, j) = decode_span(p_start, p_end);
    let (tau_s_hat, tau_e_hat) = snippet_span_to_seconds(i, j, &sample.video.periods)?;
    Ok(Prediction { video_id: sample.video.video_id.clone(), query_id: sample.query.query_id.clone(), tau_s_hat, tau_e_hat })
}

pub fn ground_truth(sample: &Sample) -> GroundTruth {
    GroundTruth {
        video_id: sample.video.video_id.clone(),
        query_id: sample.query.query_id.clone(),
        tau_s: sample.annotation.tau_s,
        tau_e: sample.annotation.tau_e,
    }
}

/// Branch scores of every sample, in input order. The paragraph branch is
/// included when the model has one and `with_paragraph` is set.
pub fn collect_scores(
    model: &Model,
    params: &Params,
    samples: &[Sample],
    with_paragraph: bool,
    execution: Execution,
) -> Result<Vec<BranchScores>> {
    par::map(execution, samples, |s| model.scores(params, s, with_paragraph)).into_iter().collect()
}

fn ious_at_alpha(samples: &[&Sample], scores: &[BranchScores], alpha: f64) -> Result<Vec<SampleIou>> {
    samples
        .iter()
        .zip(scores)
        .map(|(sample, sc)| {
            let (ps, pe) = sc.fused(alpha);
            let p = predict_from_scores(sample, &ps, &pe)?;
            let gt = ground_truth(sample);
            Ok(SampleIou { video_id: p.video_id, query_id: p.query_id, iou: temporal_iou((p.tau_s_hat, p.tau_e_hat), (gt.tau_s, gt.tau_e))? })
        })
        .collect()
}

/// Evaluates `samples[indices]` at `alpha`.
pub fn evaluate_samples(
    model: &Model,
    params: &Params,
    samples: &[Sample],
    indices: &[usize],
    alpha: f64,
    execution: Execution,
) -> Result<EvalReport> {
    let picked: Vec<&Sample> = indices.iter().map(|&i| &samples[i]).collect();
    let scores: Vec<BranchScores> = par::map(execution, &picked, |s| model.scores(params, s, alpha != 0.0))
        .into_iter()
        .collect::<Result<_>>()?;
    report_from_ious("train", ious_at_alpha(&picked, &scores, alpha)?, &DEFAULT_THRESHOLDS)
}

/// Predictions and a report for a whole split.
pub fn evaluate_split(
    model: &Model,
    params: &Params,
    split: &str,
    samples: &[Sample],
    alpha: f64,
    execution: Execution,
) -> Result<(Vec<PredictionRecord>, EvalReport)> {
    let scores = collect_scores(model, params, samples, alpha != 0.0, execution)?;
    let records = prediction_records(samples, &scores, alpha)?;
    let preds: Vec<Prediction> = records.iter().map(|r| r.prediction.clone()).collect();
    let gts: Vec<GroundTruth> = samples.iter().map(ground_truth).collect();
    let report = evaluate(split, &preds, &gts, &DEFAULT_THRESHOLDS)?;
    Ok((records, report))
}

/// Evaluates every split that has samples; missing splits are skipped with a
/// warning.
pub fn evaluate_splits(
    model: &Model,
    params: &Params,
    splits: &[(Split, Option<Vec<Sample>>)],
    alpha: f64,
    execution: Execution,
) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for (split, samples) in splits {
        match samples {
            Some(samples) => reports.push(evaluate_split(model, params, split.as_str(), samples, alpha, execution)?.1),
            None => log::warn!("split {} has no manifest; skipped", split.as_str()),
        }
    }
    Ok(reports)
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(flatten)]
    pub prediction: Prediction,
    pub start_idx: usize,
    pub end_idx: usize,
    pub video_p_start: Vec<f64>,
    pub video_p_end: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub paragraph_p_start: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub paragraph_p_end: Option<Vec<f64>>,
}

pub fn prediction_records(samples: &[Sample], scores: &[BranchScores], alpha: f64) -> Result<Vec<PredictionRecord>> {
    samples
        .iter()
        .zip(scores)
        .map(|(sample, sc)| {
            let (ps, pe) = sc.fused(alpha);
            let (start_idx, end_idx) = decode_span(&ps, &pe);
            Ok(PredictionRecord {
                prediction: predict_from_scores(sample, &ps, &pe)?,
                start_idx,
                end_idx,
                video_p_start: sc.video.p_start.clone(),
                video_p_end: sc.video.p_end.clone(),
                paragraph_p_start: sc.paragraph.as_ref().map(|p| p.p_start.clone()),
                paragraph_p_end: sc.paragraph.as_ref().map(|p| p.p_end.clone()),
            })
        })
        .collect()
}

/// Writes any serialisable records as JSON lines.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Split-by-column table with two decimals.
pub fn format_table(reports: &[EvalReport]) -> String {
    let thresholds: Vec<f64> = reports.first().map(|r| r.iou_at.iter().map(|&(m, _)| m).collect()).unwrap_or_default();
    let mut header = String::from("| Split |");
    let mut rule = String::from("|---|");
    for &m in &thresholds {
        let _ = write!(header, " IoU@{m} |");
        rule.push_str("---:|");
    }
    header.push_str(" mIoU | n |");
    rule.push_str("---:|---:|");
    let mut out = format!("{header}\n{rule}\n");
    for r in reports {
        let title = r.split_name.parse::<Split>().map(|s| s.title().to_owned()).unwrap_or_else(|_| r.split_name.clone());
        let _ = write!(out, "| {title} |");
        for &(_, p) in &r.iou_at {
            let _ = write!(out, " {p:.2} |");
        }
        let _ = writeln!(out, " {:.2} | {} |", r.miou, r.n);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub iou_05: f64,
    pub iou_07: f64,
    pub miou: f64,
}

/// Evaluates every α from one set of cached branch scores.
pub fn alpha_sweep(samples: &[Sample], scores: &[BranchScores], alphas: &[f64]) -> Result<Vec<SweepRow>> {
    if scores.len() != samples.len() {
        return Err(Error::Shape(format!("{} score sets for {} samples", scores.len(), samples.len())));
    }
    if alphas.iter().any(|&a| a != 0.0) && scores.iter().any(|s| s.paragraph.is_none()) {
        return Err(Error::validation("sweep needs paragraph-branch scores"));
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    alphas
        .iter()
        .map(|&alpha| {
            let r = report_from_ious("sweep", ious_at_alpha(&refs, scores, alpha)?, &DEFAULT_THRESHOLDS)?;
            Ok(SweepRow { alpha, iou_05: r.iou_at(0.5).unwrap_or(0.0), iou_07: r.iou_at(0.7).unwrap_or(0.0), miou: r.miou })
        })
        .collect()
}

/// Tab-separated sweep table with a header line.
pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha\tIoU@0.5\tIoU@0.7\tmIoU\n");
    for r in rows {
        let _ = writeln!(out, "{:.2}\t{:.2}\t{:.2}\t{:.2}", r.alpha, r.iou_05, r.iou_07, r.miou);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(q: &str, s: f64, e: f64) -> Prediction {
        Prediction { video_id: "v".into(), query_id: q.into(), tau_s_hat: s, tau_e_hat: e }
    }

    fn gt(q: &str, s: f64, e: f64) -> GroundTruth {
        GroundTruth { video_id: "v".into(), query_id: q.into(), tau_s: s, tau_e: e }
    }

    #[test]
    fn iou_examples() {
        assert_eq!(temporal_iou((4.0, 8.0), (4.0, 8.0)).unwrap(), 1.0);
        assert!((temporal_iou((2.0, 6.0), (4.0, 8.0)).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(temporal_iou((0.0, 1.0), (2.0, 3.0)).unwrap(), 0.0);
        assert_eq!(temporal_iou((1.0, 3.0), (0.0, 8.0)).unwrap(), 0.25);
        assert!(temporal_iou((3.0, 3.0), (0.0, 1.0)).is_err());
        assert!(temporal_iou((0.0, 1.0), (2.0, 1.0)).is_err());
    }

    #[test]
    fn report_examples() {
        let preds = [pred("a", 0.0, 10.0), pred("b", 0.0, 6.0), pred("c", 0.0, 2.0)];
        let gts = [gt("a", 0.0, 10.0), gt("b", 0.0, 10.0), gt("c", 0.0, 10.0)];
        let r = evaluate("cd-test-ood", &preds, &gts, &DEFAULT_THRESHOLDS).unwrap();
        assert!((r.iou_at(0.5).unwrap() - 200.0 / 3.0).abs() < 1e-12);
        assert!((r.iou_at(0.7).unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert!((r.miou - 60.0).abs() < 1e-12);
        assert_eq!(
            format_table(&[r]),
            "| Split | IoU@0.5 | IoU@0.7 | mIoU | n |\n|---|---:|---:|---:|---:|\n| CD-Test-ood | 66.67 | 33.33 | 60.00 | 3 |\n"
        );

        let exact = evaluate("x", &preds[..1], &gts[..1], &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!((exact.iou_at(0.5), exact.iou_at(0.7), exact.miou), (Some(100.0), Some(100.0), 100.0));
    }

    #[test]
    fn threshold_is_strict() {
        let r = evaluate("x", &[pred("a", 0.0, 5.0)], &[gt("a", 0.0, 10.0)], &[0.5]).unwrap();
        assert_eq!(r.iou_at(0.5), Some(0.0));
    }

    #[test]
    fn mismatches_are_reported() {
        assert!(evaluate("x", &[], &[gt("a", 0.0, 1.0)], &DEFAULT_THRESHOLDS).is_err());
        let err = evaluate("x", &[pred("a", 0.0, 1.0)], &[gt("b", 0.0, 1.0)], &DEFAULT_THRESHOLDS).unwrap_err().to_string();
        assert!(err.contains("prediction v/a") && err.contains("annotation v/b"), "{err}");
    }

    #[test]
    fn sweep_format() {
        let rows = [SweepRow { alpha: 0.25, iou_05: 50.0, iou_07: 12.5, miou: 40.123 }];
        assert_eq!(format_sweep(&rows), "alpha\tIoU@0.5\tIoU@0.7\tmIoU\n0.25\t50.00\t12.50\t40.12\n");
    }
}
