//! Video-narrative knowledge enhancement: merging snippet and narrative
//! features, the guided forward/backward aggregation, and the stacked
//! self/cross attention block.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, ParamBuilder, ParamId, Session, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    /// Concatenate snippet and narrative rows, then a two-layer perceptron.
    ConcatMlp,
    /// Sum of separately projected snippet and narrative rows.
    Add,
    /// Projected snippets attend to projected narratives.
    Attention,
}

impl std::str::FromStr for MergeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat_mlp" => Ok(MergeMode::ConcatMlp),
            "add" => Ok(MergeMode::Add),
            "attention" => Ok(MergeMode::Attention),
            other => Err(Error::validation(format!("unknown merge mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d: usize,
    pub heads: usize,
    pub dropout: f64,
    pub merge_mode: MergeMode,
    /// Layer normalisation after every attention unit.
    pub layer_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { d: 128, heads: 8, dropout: 0.2, merge_mode: MergeMode::ConcatMlp, layer_norm: true }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::validation(format!("hidden size {} must be a positive multiple of heads {}", self.d, self.heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Attention unit with four fully connected layers:
/// `fc_out(target + softmax(fc_q(target) fc_k(reference)ᵀ / sqrt(d_h)) fc_v(reference))`,
/// split over heads, then layer norm and dropout. Masked target rows are zero.
#[derive(Debug, Clone, Copy)]
pub struct AttentionUnit {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    norm: Option<LayerNorm>,
    heads: usize,
    dropout: f64,
}

impl AttentionUnit {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, cfg: &EncoderConfig) -> Self {
        let mut sub = b.sub(name);
        let d = cfg.d;
        AttentionUnit {
            query: Linear::new(&mut sub, "query", d, d),
            key: Linear::new(&mut sub, "key", d, d),
            value: Linear::new(&mut sub, "value", d, d),
            output: Linear::new(&mut sub, "output", d, d),
            norm: cfg.layer_norm.then(|| LayerNorm::new(&mut sub, "norm", d)),
            heads: cfg.heads,
            dropout: cfg.dropout,
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, target: Var, target_mask: &[bool], reference: Var, reference_mask: &[bool]) -> Var {
        self.forward_with_weights(s, target, target_mask, reference, reference_mask).0
    }

    /// Also returns the per-head attention matrices `[L^t × L^r]`.
    pub fn forward_with_weights(
        &self,
        s: &mut Session<'_>,
        target: Var,
        target_mask: &[bool],
        reference: Var,
        reference_mask: &[bool],
    ) -> (Var, Vec<Var>) {
        let d = s.g.shape(target).1;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.query.forward(s, target);
        let k = self.key.forward(s, reference);
        let v = self.value.forward(s, reference);
        let mut weights = Vec::with_capacity(self.heads);
        let mut contexts = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (s.g.slice_cols(q, h * dh, dh), s.g.slice_cols(k, h * dh, dh), s.g.slice_cols(v, h * dh, dh))
            };
            let kt = s.g.transpose(kh);
            let scores = s.g.matmul(qh, kt);
            let scores = s.g.scale(scores, scale);
            let r = s.g.masked_softmax_rows(scores, reference_mask);
            contexts.push(s.g.matmul(r, vh));
            weights.push(r);
        }
        let context = if self.heads == 1 { contexts[0] } else { s.g.concat_cols(&contexts) };
        let residual = s.g.add(target, context);
        let mut out = self.output.forward(s, residual);
        if let Some(norm) = &self.norm {
            out = norm.forward(s, out);
        }
        out = s.dropout(out, self.dropout);
        (s.g.mask_rows(out, target_mask), weights)
    }

    /// Layers become identities (weights `I`, biases zero).
    pub fn set_identity(&self, params: &mut crate::nn::Params) {
        for l in [self.query, self.key, self.value, self.output] {
            l.set_identity(params);
        }
    }
}

/// Snippet/narrative merge in one of the [`MergeMode`] variants.
#[derive(Debug, Clone, Copy)]
pub enum Merge {
    ConcatMlp { hidden: Linear, out: Linear },
    Add { video: Linear, paragraph: Linear },
    Attention { video: Linear, paragraph: Linear, attend: AttentionUnit },
}

impl Merge {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, cfg: &EncoderConfig, d_v: usize, d_c: usize) -> Self {
        let mut sub = b.sub(name);
        let d = cfg.d;
        match cfg.merge_mode {
            MergeMode::ConcatMlp => Merge::ConcatMlp {
                hidden: Linear::new(&mut sub, "hidden", d_v + d_c, d),
                out: Linear::new(&mut sub, "out", d, d),
            },
            MergeMode::Add => Merge::Add {
                video: Linear::new(&mut sub, "video", d_v, d),
                paragraph: Linear::new(&mut sub, "paragraph", d_c, d),
            },
            MergeMode::Attention => Merge::Attention {
                video: Linear::new(&mut sub, "video", d_v, d),
                paragraph: Linear::new(&mut sub, "paragraph", d_c, d),
                attend: AttentionUnit::new(&mut sub, "attend", cfg),
            },
        }
    }

    /// `[L^v × d]`; rows outside `mask` are zero.
    pub fn forward(&self, s: &mut Session<'_>, video: Var, paragraph: Var, mask: &[bool]) -> Result<Var> {
        let (lv, _) = s.g.shape(video);
        let (lc, _) = s.g.shape(paragraph);
        if lv != lc || mask.len() != lv {
            return Err(Error::Shape(format!("merge: {lv} snippet rows, {lc} paragraph rows, {} mask entries", mask.len())));
        }
        let merged = match *self {
            Merge::ConcatMlp { hidden, out } => {
                let cat = s.g.concat_cols(&[video, paragraph]);
                let h = hidden.forward(s, cat);
                let h = s.g.relu(h);
                out.forward(s, h)
            }
            Merge::Add { video: pv, paragraph: pc } => {
                let a = pv.forward(s, video);
                let b = pc.forward(s, paragraph);
                s.g.add(a, b)
            }
            Merge::Attention { video: pv, paragraph: pc, attend } => {
                let a = pv.forward(s, video);
                let b = pc.forward(s, paragraph);
                attend.forward(s, a, mask, b, mask)
            }
        };
        Ok(s.g.mask_rows(merged, mask))
    }
}

/// Running-mean operators over the real rows: row `t` of the forward matrix
/// averages rows `..=t`, row `t` of the backward matrix averages rows `t..`.
/// Rows for masked positions are zero.
pub fn running_mean_operators(mask: &[bool]) -> (Array2<f64>, Array2<f64>) {
    let l = mask.len();
    let mut fwd = Array2::zeros((l, l));
    let mut bwd = Array2::zeros((l, l));
    for t in 0..l {
        if !mask[t] {
            continue;
        }
        let before: Vec<usize> = (0..=t).filter(|&j| mask[j]).collect();
        let after: Vec<usize> = (t..l).filter(|&j| mask[j]).collect();
        for &j in &before {
            fwd[[t, j]] = 1.0 / before.len() as f64;
        }
        for &j in &after {
            bwd[[t, j]] = 1.0 / after.len() as f64;
        }
    }
    (fwd, bwd)
}

/// Stacks the merged sequence with its forward and backward running means
/// as three channels and mixes them with a 1×1 convolution.
#[derive(Debug, Clone, Copy)]
pub struct GuidedAggregation {
    /// `[1 × 3]` channel weights (identity, forward, backward).
    pub weights: ParamId,
    /// `[1 × 1]`.
    pub bias: ParamId,
}

impl GuidedAggregation {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str) -> Self {
        let mut sub = b.sub(name);
        GuidedAggregation { weights: sub.uniform_fan_in("weights", 1, 3, 3), bias: sub.constant("bias", 1, 1, 0.0) }
    }

    pub fn forward(&self, s: &mut Session<'_>, merged: Var, mask: &[bool]) -> Var {
        let (l, d) = s.g.shape(merged);
        let (fwd, bwd) = running_mean_operators(mask);
        let fwd = s.input(fwd);
        let bwd = s.input(bwd);
        let forward = s.g.matmul(fwd, merged);
        let backward = s.g.matmul(bwd, merged);
        let w = s.param(self.weights);
        let mut acc = None;
        for (c, channel) in [merged, forward, backward].into_iter().enumerate() {
            let wc = s.g.slice_cols(w, c, 1);
            let term = s.g.scale_var(channel, wc);
            acc = Some(match acc {
                None => term,
                Some(a) => s.g.add(a, term),
            });
        }
        let bias = s.param(self.bias);
        let ones = s.input(Array2::ones((l, d)));
        let bias = s.g.scale_var(ones, bias);
        let out = s.g.add(acc.unwrap(), bias);
        s.g.mask_rows(out, mask)
    }
}

/// `X ← A(X, X); X ← A(X, Y); Y ← A(Y, Y); Y ← A(Y, X)`, each with its own
/// attention unit. The query side attends the already updated video side.
#[derive(Debug, Clone, Copy)]
pub struct AttnBlock {
    pub video_self: AttentionUnit,
    pub video_cross: AttentionUnit,
    pub query_self: AttentionUnit,
    pub query_cross: AttentionUnit,
}

impl AttnBlock {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, cfg: &EncoderConfig) -> Self {
        let mut sub = b.sub(name);
        AttnBlock {
            video_self: AttentionUnit::new(&mut sub, "video_self", cfg),
            video_cross: AttentionUnit::new(&mut sub, "video_cross", cfg),
            query_self: AttentionUnit::new(&mut sub, "query_self", cfg),
            query_cross: AttentionUnit::new(&mut sub, "query_cross", cfg),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, v: Var, v_mask: &[bool], q: Var, q_mask: &[bool]) -> Result<(Var, Var)> {
        let (lv, dv) = s.g.shape(v);
        let (lq, dq) = s.g.shape(q);
        if dv != dq || v_mask.len() != lv || q_mask.len() != lq {
            return Err(Error::Shape(format!("attention block: video [{lv} × {dv}], query [{lq} × {dq}]")));
        }
        let v = self.video_self.forward(s, v, v_mask, v, v_mask);
        let v = self.video_cross.forward(s, v, v_mask, q, q_mask);
        let q = self.query_self.forward(s, q, q_mask, q, q_mask);
        let q = self.query_cross.forward(s, q, q_mask, v, v_mask);
        Ok((v, q))
    }

    pub fn units(&self) -> [AttentionUnit; 4] {
        [self.video_self, self.video_cross, self.query_self, self.query_cross]
    }

    pub fn set_identity(&self, params: &mut crate::nn::Params) {
        for u in self.units() {
            u.set_identity(params);
        }
    }
}

/// Enhanced video and query features.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedPair {
    pub v_e: Array2<f64>,
    pub q_e: Array2<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Params;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(d: usize, heads: usize) -> EncoderConfig {
        EncoderConfig { d, heads, dropout: 0.0, merge_mode: MergeMode::ConcatMlp, layer_norm: false }
    }

    fn build<T>(f: impl FnOnce(&mut ParamBuilder<'_>) -> T) -> (Params, T) {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = f(&mut ParamBuilder::new(&mut params, &mut rng));
        (params, m)
    }

    #[test]
    fn single_element_unit_doubles_input() {
        let (mut params, unit) = build(|b| AttentionUnit::new(b, "a", &cfg(3, 1)));
        unit.set_identity(&mut params);
        let mut s = Session::eval(&params);
        let x = s.input(array![[0.5, -1.0, 2.0]]);
        let (out, w) = unit.forward_with_weights(&mut s, x, &[true], x, &[true]);
        assert_eq!(s.g.value(w[0]), &array![[1.0]]);
        assert_eq!(s.g.value(out), &array![[1.0, -2.0, 4.0]]);
    }

    #[test]
    fn identical_references_split_attention_evenly() {
        let (mut params, unit) = build(|b| AttentionUnit::new(b, "a", &cfg(2, 1)));
        unit.set_identity(&mut params);
        let mut s = Session::eval(&params);
        let x = s.input(array![[0.3, 0.7]]);
        let r = s.input(array![[0.3, 0.7], [0.3, 0.7]]);
        let (out, w) = unit.forward_with_weights(&mut s, x, &[true], r, &[true, true]);
        assert_eq!(s.g.value(w[0]), &array![[0.5, 0.5]]);
        assert_eq!(s.g.value(out), &array![[0.6, 1.4]]);
    }

    #[test]
    fn fully_masked_reference_leaves_projected_target() {
        let (params, unit) = build(|b| AttentionUnit::new(b, "a", &cfg(4, 2)));
        let mut s = Session::eval(&params);
        let t = s.input(array![[0.1, 0.2, 0.3, 0.4]]);
        let r = s.input(array![[1.0, 1.0, 1.0, 1.0]]);
        let out = unit.forward(&mut s, t, &[true], r, &[false]);
        let expected = unit.output.forward(&mut s, t);
        assert_eq!(s.g.value(out), s.g.value(expected));
    }

    #[test]
    fn attention_rows_are_distributions_and_masks_hold() {
        let mut c = cfg(8, 4);
        c.layer_norm = true;
        let (params, unit) = build(|b| AttentionUnit::new(b, "a", &c));
        let mut s = Session::eval(&params);
        let t = s.input(Array2::from_shape_fn((5, 8), |(i, j)| ((i * 3 + j) as f64).sin()));
        let r = s.input(Array2::from_shape_fn((6, 8), |(i, j)| ((i + 2 * j) as f64).cos()));
        let t_mask = [true, true, true, false, false];
        let r_mask = [true, true, false, true, false, false];
        let (out, weights) = unit.forward_with_weights(&mut s, t, &t_mask, r, &r_mask);
        for w in weights {
            for row in s.g.value(w).rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert_eq!(row[2], 0.0);
                assert_eq!(row[4], 0.0);
            }
        }
        let o = s.g.value(out);
        assert!(o.row(3).iter().chain(o.row(4).iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn merge_contracts() {
        let c = cfg(3, 1);
        let (mut params, merge) = build(|b| Merge::new(b, "m", &c, 2, 2));
        let Merge::ConcatMlp { out, .. } = merge else { unreachable!() };
        params.get_mut(out.weight).fill(0.0);
        *params.get_mut(out.bias) = array![[0.5, -1.0, 2.0]];
        let mut s = Session::eval(&params);
        let v = s.input(array![[1.0, 2.0], [3.0, 4.0], [0.0, 0.0]]);
        let p = s.input(array![[0.1, 0.2], [0.3, 0.4], [0.0, 0.0]]);
        let m = merge.forward(&mut s, v, p, &[true, true, false]).unwrap();
        assert_eq!(s.g.value(m), &array![[0.5, -1.0, 2.0], [0.5, -1.0, 2.0], [0.0, 0.0, 0.0]]);

        let mut c_add = cfg(2, 1);
        c_add.merge_mode = MergeMode::Add;
        let (mut params, merge) = build(|b| Merge::new(b, "m", &c_add, 2, 2));
        let Merge::Add { video, paragraph } = merge else { unreachable!() };
        video.set_identity(&mut params);
        paragraph.set_identity(&mut params);
        let mut s = Session::eval(&params);
        let v = s.input(array![[1.0, 2.0]]);
        let p = s.input(array![[0.5, -3.0]]);
        let m = merge.forward(&mut s, v, p, &[true]).unwrap();
        assert_eq!(s.g.value(m), &array![[1.5, -1.0]]);
        let two_rows = s.input(Array2::zeros((2, 2)));
        assert!(matches!(merge.forward(&mut s, v, two_rows, &[true]), Err(Error::Shape(_))));
    }

    #[test]
    fn all_merge_modes_share_output_shape() {
        for mode in [MergeMode::ConcatMlp, MergeMode::Add, MergeMode::Attention] {
            let mut c = cfg(8, 2);
            c.merge_mode = mode;
            let (params, merge) = build(|b| Merge::new(b, "m", &c, 5, 3));
            let mut s = Session::eval(&params);
            let v = s.input(Array2::ones((4, 5)));
            let p = s.input(Array2::ones((4, 3)));
            let m = merge.forward(&mut s, v, p, &[true, true, true, false]).unwrap();
            assert_eq!(s.g.shape(m), (4, 8));
            assert!(s.g.value(m).row(3).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn running_means() {
        let (f, b) = running_mean_operators(&[true, true, true]);
        let x = array![[1.0], [2.0], [6.0]];
        assert_eq!(f.dot(&x), array![[1.0], [1.5], [3.0]]);
        assert_eq!(b.dot(&x), array![[3.0], [4.0], [6.0]]);
        let (f, b) = running_mean_operators(&[true, true, false]);
        assert_eq!(f.row(2).sum(), 0.0);
        assert_eq!(b.row(1), array![0.0, 1.0, 0.0]);
    }

    #[test]
    fn guided_aggregation_channel_selector() {
        let (mut params, agg) = build(|b| GuidedAggregation::new(b, "g"));
        *params.get_mut(agg.weights) = array![[1.0, 0.0, 0.0]];
        let mut s = Session::eval(&params);
        let x = array![[1.0, 2.0], [3.0, 4.0], [0.0, 0.0]];
        let v = s.input(x.clone());
        let out = agg.forward(&mut s, v, &[true, true, false]);
        assert_eq!(s.g.value(out), &x);

        *params.get_mut(agg.weights) = array![[0.0, 1.0, 0.0]];
        *params.get_mut(agg.bias) = array![[0.25]];
        let mut s = Session::eval(&params);
        let v = s.input(x);
        let out = agg.forward(&mut s, v, &[true, true, false]);
        assert_eq!(s.g.value(out), &array![[1.25, 2.25], [2.25, 3.25], [0.0, 0.0]]);
    }

    #[test]
    fn block_single_element_closed_form() {
        let (mut params, block) = build(|b| AttnBlock::new(b, "blk", &cfg(2, 1)));
        block.set_identity(&mut params);
        let mut s = Session::eval(&params);
        let v = s.input(array![[1.0, -2.0]]);
        let q = s.input(array![[0.5, 3.0]]);
        let (ve, qe) = block.forward(&mut s, v, &[true], q, &[true]).unwrap();
        // v: 2v, then 2v + q; q: 2q, then 2q + (2v + q) = 3q + 2v.
        assert_eq!(s.g.value(ve), &array![[2.5, -1.0]]);
        assert_eq!(s.g.value(qe), &array![[3.5, 5.0]]);
    }

    #[test]
    fn block_shapes_and_masks() {
        let (params, block) = build(|b| AttnBlock::new(b, "blk", &EncoderConfig { dropout: 0.0, ..cfg(8, 2) }));
        let mut s = Session::eval(&params);
        let v = s.input(Array2::from_shape_fn((6, 8), |(i, j)| if i < 4 { (i + j) as f64 * 0.1 } else { 0.0 }));
        let q = s.input(Array2::from_shape_fn((3, 8), |(i, j)| (i * j) as f64 * 0.05));
        let vm = [true, true, true, true, false, false];
        let (ve, qe) = block.forward(&mut s, v, &vm, q, &[true; 3]).unwrap();
        assert_eq!(s.g.shape(ve), (6, 8));
        assert_eq!(s.g.shape(qe), (3, 8));
        assert!(s.g.value(ve).rows().into_iter().skip(4).all(|r| r.iter().all(|&x| x == 0.0)));
        let bad = s.input(Array2::zeros((3, 4)));
        assert!(block.forward(&mut s, v, &vm, bad, &[true; 3]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        assert!(EncoderConfig { heads: 3, ..Default::default() }.validate().is_err());
        assert!(EncoderConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
    }
}
