//! Span-based endpoint prediction: context-query attention, highlighting,
//! a bidirectional recurrent scorer and constrained span decoding.

use ndarray::Array2;

use crate::datamodel::Period;
use crate::error::{Error, Result};
use crate::nn::{BiLstm, Linear, ParamBuilder, Session, Var};

/// Per-snippet endpoint distributions and highlight scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanDistributions {
    pub p_start: Vec<f64>,
    pub p_end: Vec<f64>,
    pub highlight: Vec<f64>,
}

impl SpanDistributions {
    pub fn len(&self) -> usize {
        self.p_start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_start.is_empty()
    }
}

/// Graph handles for one predictor pass.
#[derive(Debug, Clone, Copy)]
pub struct PredictorOutput {
    /// `[1 × L]`.
    pub p_start: Var,
    /// `[1 × L]`.
    pub p_end: Var,
    /// `[L × 1]`.
    pub highlight: Var,
    /// `[1 × L^q]` word pooling weights.
    pub pool_weights: Var,
    /// `[L × L^q]` row-wise softmax of the context-query similarity.
    pub row_attention: Var,
    /// `[L × L^q]` column-wise softmax of the context-query similarity.
    pub col_attention: Var,
}

impl PredictorOutput {
    pub fn distributions(&self, s: &Session<'_>) -> SpanDistributions {
        SpanDistributions {
            p_start: s.g.value(self.p_start).iter().copied().collect(),
            p_end: s.g.value(self.p_end).iter().copied().collect(),
            highlight: s.g.value(self.highlight).iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Predictor {
    pub pool_score: Linear,
    pub cqa_video: Linear,
    pub cqa_query: Linear,
    pub cqa_out: Linear,
    pub highlight_conv: Linear,
    pub scorer: BiLstm,
    pub endpoint_out: Linear,
}

impl Predictor {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, d: usize) -> Self {
        let mut sub = b.sub(name);
        Predictor {
            pool_score: Linear::new(&mut sub, "pool_score", d, 1),
            cqa_video: Linear::new(&mut sub, "cqa_video", d, d),
            cqa_query: Linear::new(&mut sub, "cqa_query", d, d),
            cqa_out: Linear::new(&mut sub, "cqa_out", 4 * d, d),
            highlight_conv: Linear::new(&mut sub, "highlight_conv", 2 * d, 1),
            scorer: BiLstm::new(&mut sub, "scorer", d, d),
            endpoint_out: Linear::new(&mut sub, "endpoint_out", 2 * d, 2),
        }
    }

    /// Attention-pooled sentence feature `[1 × d]` and its word weights.
    pub fn sentence_pool(&self, s: &mut Session<'_>, q: Var, q_mask: &[bool]) -> Result<(Var, Var)> {
        if !q_mask.iter().any(|&m| m) {
            return Err(Error::validation("query has no unmasked words"));
        }
        let scores = self.pool_score.forward(s, q);
        let scores = s.g.transpose(scores);
        let weights = s.g.masked_softmax_rows(scores, q_mask);
        Ok((s.g.matmul(weights, q), weights))
    }

    /// `fc(V ‖ X_v2q ‖ V⊙X_v2q ‖ V⊙X_q2v)` with its two attention maps.
    pub fn context_query_attention(
        &self,
        s: &mut Session<'_>,
        v: Var,
        v_mask: &[bool],
        q: Var,
        q_mask: &[bool],
    ) -> Result<(Var, Var, Var)> {
        let (lv, dv) = s.g.shape(v);
        let (lq, dq) = s.g.shape(q);
        if dv != dq || v_mask.len() != lv || q_mask.len() != lq {
            return Err(Error::Shape(format!("context-query attention: video [{lv} × {dv}], query [{lq} × {dq}]")));
        }
        let fv = self.cqa_video.forward(s, v);
        let fq = self.cqa_query.forward(s, q);
        let fqt = s.g.transpose(fq);
        let sim = s.g.matmul(fv, fqt);
        let sim = s.g.scale(sim, 1.0 / (dv as f64).sqrt());
        let row = s.g.masked_softmax_rows(sim, q_mask);
        let col = s.g.masked_softmax_cols(sim, v_mask);
        let v2q = s.g.matmul(row, q);
        let col_t = s.g.transpose(col);
        let rc = s.g.matmul(row, col_t);
        let q2v = s.g.matmul(rc, v);
        let a = s.g.mul(v, v2q);
        let b = s.g.mul(v, q2v);
        let cat = s.g.concat_cols(&[v, v2q, a, b]);
        let out = self.cqa_out.forward(s, cat);
        Ok((s.g.mask_rows(out, v_mask), row, col))
    }

    /// `sigmoid(conv1d(V̄ ‖ q))` as an `[L × 1]` column, zero on masked snippets.
    pub fn highlight(&self, s: &mut Session<'_>, v_bar: Var, q: Var, v_mask: &[bool]) -> Var {
        let l = s.g.shape(v_bar).0;
        let qb = s.g.broadcast_rows(q, l);
        let cat = s.g.concat_cols(&[v_bar, qb]);
        let logits = self.highlight_conv.forward(s, cat);
        let h = s.g.sigmoid(logits);
        s.g.mask_rows(h, v_mask)
    }

    /// Raw start/end logits `[2 × L]` from the recurrent scorer, zero at
    /// masked snippets. The recurrence only visits real snippets.
    pub fn endpoint_logits(&self, s: &mut Session<'_>, v_bar: Var, h: Var, v_mask: &[bool]) -> Var {
        let l = s.g.shape(v_bar).0;
        let scaled = s.g.mul_col_broadcast(v_bar, h);
        let real: Vec<usize> = (0..l).filter(|&i| v_mask[i]).collect();
        let rows: Vec<Var> = real.iter().map(|&i| s.g.row(scaled, i)).collect();
        let seq = if real.len() == l { scaled } else { s.g.concat_rows(&rows) };
        let hidden = self.scorer.forward(s, seq);
        let logits = self.endpoint_out.forward(s, hidden);
        let full = if real.len() == l {
            logits
        } else {
            let zero = s.input(Array2::zeros((1, 2)));
            let mut next = 0;
            let parts: Vec<Var> = (0..l)
                .map(|i| {
                    if v_mask[i] {
                        next += 1;
                        s.g.row(logits, next - 1)
                    } else {
                        zero
                    }
                })
                .collect();
            s.g.concat_rows(&parts)
        };
        s.g.transpose(full)
    }

    /// Independent softmaxes of the start and end logits over real snippets.
    pub fn span_scores(&self, s: &mut Session<'_>, v_bar: Var, h: Var, v_mask: &[bool]) -> (Var, Var) {
        let logits = self.endpoint_logits(s, v_bar, h, v_mask);
        let start = s.g.row(logits, 0);
        let end = s.g.row(logits, 1);
        (s.g.masked_softmax_rows(start, v_mask), s.g.masked_softmax_rows(end, v_mask))
    }

    pub fn forward(&self, s: &mut Session<'_>, v: Var, v_mask: &[bool], q: Var, q_mask: &[bool]) -> Result<PredictorOutput> {
        if !v_mask.iter().any(|&m| m) {
            return Err(Error::validation("video has no real snippets"));
        }
        let (sentence, pool_weights) = self.sentence_pool(s, q, q_mask)?;
        let (v_bar, row_attention, col_attention) = self.context_query_attention(s, v, v_mask, q, q_mask)?;
        let highlight = self.highlight(s, v_bar, sentence, v_mask);
        let (p_start, p_end) = self.span_scores(s, v_bar, highlight, v_mask);
        Ok(PredictorOutput { p_start, p_end, highlight, pool_weights, row_attention, col_attention })
    }
}

/// Joint argmax of `p_start[i] * p_end[j]` over `i <= j`; ties go to the
/// smaller `i`, then the smaller `j`.
///
/// Scans `j` once while tracking the first maximum of `p_start[..=j]`.
pub fn decode_span(p_start: &[f64], p_end: &[f64]) -> (usize, usize) {
    assert_eq!(p_start.len(), p_end.len(), "distribution lengths differ");
    assert!(!p_start.is_empty(), "empty distributions");
    let mut best_i = 0;
    let mut best = (0, 0);
    let mut best_score = f64::NEG_INFINITY;
    for j in 0..p_start.len() {
        if p_start[j] > p_start[best_i] {
            best_i = j;
        }
        let score = p_start[best_i] * p_end[j];
        if score > best_score {
            best_score = score;
            best = (best_i, j);
        }
    }
    best
}

/// Seconds spanned by snippets `start..=end`.
pub fn snippet_span_to_seconds(start: usize, end: usize, periods: &[Period]) -> Result<(f64, f64)> {
    if end >= periods.len() {
        return Err(Error::IndexOutOfRange { index: end, len: periods.len() });
    }
    if start > end {
        return Err(Error::validation(format!("span start {start} after end {end}")));
    }
    Ok((periods[start].start, periods[end].end))
}
