//! Paragraph-query interaction and the α-weighted fusion of both branches.

use serde::{Deserialize, Serialize};

use crate::enhancement::{AttnBlock, EncoderConfig};
use crate::error::{Error, Result};
use crate::nn::{Linear, ParamBuilder, Session, Var};
use crate::predictor::{Predictor, PredictorOutput, SpanDistributions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub alpha: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { alpha: 0.5 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::validation(format!("alpha {} must be a non-negative number", self.alpha)));
        }
        Ok(())
    }
}

/// Text-only branch: the aligned paragraph and the query attend each other
/// through their own attention block, then feed their own predictor.
#[derive(Debug, Clone, Copy)]
pub struct ParagraphBranch {
    pub paragraph_proj: Linear,
    pub query_proj: Linear,
    pub block: AttnBlock,
    pub predictor: Predictor,
}

impl ParagraphBranch {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, cfg: &EncoderConfig, d_c: usize, d_w: usize) -> Self {
        let mut sub = b.sub(name);
        ParagraphBranch {
            paragraph_proj: Linear::new(&mut sub, "paragraph_proj", d_c, cfg.d),
            query_proj: Linear::new(&mut sub, "query_proj", d_w, cfg.d),
            block: AttnBlock::new(&mut sub, "attn", cfg),
            predictor: Predictor::new(&mut sub, "predictor", cfg.d),
        }
    }

    /// Projects both inputs to the hidden size and runs the attention block.
    pub fn attend(&self, s: &mut Session<'_>, c: Var, c_mask: &[bool], q: Var, q_mask: &[bool]) -> Result<(Var, Var)> {
        let c = self.paragraph_proj.forward(s, c);
        let c = s.g.mask_rows(c, c_mask);
        let q = self.query_proj.forward(s, q);
        let q = s.g.mask_rows(q, q_mask);
        self.block.forward(s, c, c_mask, q, q_mask)
    }

    pub fn forward(&self, s: &mut Session<'_>, c: Var, c_mask: &[bool], q: Var, q_mask: &[bool]) -> Result<PredictorOutput> {
        let (c, q) = self.attend(s, c, c_mask, q, q_mask)?;
        self.predictor.forward(s, c, c_mask, q, q_mask)
    }
}

/// `p = p_video + α p_paragraph` for both endpoints; no renormalisation.
pub fn fuse(video: &SpanDistributions, paragraph: &SpanDistributions, alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if video.len() != paragraph.len() || video.p_end.len() != paragraph.p_end.len() {
        return Err(Error::Shape(format!("fusing {} video scores with {} paragraph scores", video.len(), paragraph.len())));
    }
    let mix = |v: &[f64], c: &[f64]| v.iter().zip(c).map(|(&v, &c)| v + alpha * c).collect::<Vec<_>>();
    Ok((mix(&video.p_start, &paragraph.p_start), mix(&video.p_end, &paragraph.p_end)))
}

/// In-graph version of [`fuse`] for one endpoint vector.
pub fn fuse_vars(s: &mut Session<'_>, video: Var, paragraph: Option<Var>, alpha: f64) -> Var {
    match paragraph {
        Some(p) if alpha != 0.0 => {
            let scaled = s.g.scale(p, alpha);
            s.g.add(video, scaled)
        }
        _ => video,
    }
}
