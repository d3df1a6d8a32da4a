//! The full two-branch retrieval model.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::{MomentAnnotation, Query, VideoFeatureSequence};
use crate::enhancement::{AttnBlock, EncoderConfig, GuidedAggregation, Merge};
use crate::error::{Error, Result};
use crate::narration::StructuredParagraph;
use crate::nn::{Linear, ParamBuilder, Params, Session, Var};
use crate::paragraph_branch::{fuse_vars, ParagraphBranch};
use crate::predictor::{Predictor, PredictorOutput, SpanDistributions};

/// Architecture: everything that determines parameter shapes and the
/// forward computation. Its fingerprint guards checkpoint loading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Visual feature width.
    pub d_v: usize,
    /// Word (and narrative sentence) embedding width.
    pub d_w: usize,
    /// When false the merge sees an all-zero paragraph (component ablation).
    #[serde(default = "yes")]
    pub narrative_merge: bool,
    /// When false the paragraph branch is never built or evaluated.
    #[serde(default = "yes")]
    pub paragraph_branch: bool,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, d_v: usize, d_w: usize) -> Self {
        ModelConfig { encoder, d_v, d_w, narrative_merge: true, paragraph_branch: true }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.d_v == 0 || self.d_w == 0 {
            return Err(Error::validation("feature widths must be positive"));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }
}

/// One training or evaluation example.
#[derive(Debug, Clone)]
pub struct Sample {
    pub video: VideoFeatureSequence,
    pub paragraph: StructuredParagraph,
    pub query: Query,
    pub annotation: MomentAnnotation,
}

impl Sample {
    pub fn id(&self) -> String {
        format!("{}/{}", self.video.video_id, self.query.query_id)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VideoBranch {
    pub merge: Merge,
    pub guided: GuidedAggregation,
    pub query_proj: Linear,
    pub block: AttnBlock,
    pub predictor: Predictor,
}

impl VideoBranch {
    fn new(b: &mut ParamBuilder<'_>, cfg: &ModelConfig) -> Self {
        let mut sub = b.sub("video");
        VideoBranch {
            merge: Merge::new(&mut sub, "merge", &cfg.encoder, cfg.d_v, cfg.d_w),
            guided: GuidedAggregation::new(&mut sub, "guided"),
            query_proj: Linear::new(&mut sub, "query_proj", cfg.d_w, cfg.encoder.d),
            block: AttnBlock::new(&mut sub, "attn", &cfg.encoder),
            predictor: Predictor::new(&mut sub, "predictor", cfg.encoder.d),
        }
    }

    /// Enhanced `(V^e, Q^e)`.
    pub fn encode(&self, s: &mut Session<'_>, v: Var, c: Var, v_mask: &[bool], q: Var, q_mask: &[bool]) -> Result<(Var, Var)> {
        let merged = self.merge.forward(s, v, c, v_mask)?;
        let guided = self.guided.forward(s, merged, v_mask);
        let q = self.query_proj.forward(s, q);
        let q = s.g.mask_rows(q, q_mask);
        self.block.forward(s, guided, v_mask, q, q_mask)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Model {
    pub config: ModelConfig,
    pub video: VideoBranch,
    pub paragraph: Option<ParagraphBranch>,
}

/// Graph handles of a full forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ModelOutput {
    pub video: PredictorOutput,
    pub paragraph: Option<PredictorOutput>,
    /// Fused `[1 × L]` start scores.
    pub p_start: Var,
    /// Fused `[1 × L]` end scores.
    pub p_end: Var,
}

/// Branch and fused scores as plain vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchScores {
    pub video: SpanDistributions,
    pub paragraph: Option<SpanDistributions>,
}

impl BranchScores {
    /// Fused start/end scores at `alpha`; the video branch alone at `alpha = 0`
    /// or when there is no paragraph branch.
    pub fn fused(&self, alpha: f64) -> (Vec<f64>, Vec<f64>) {
        match &self.paragraph {
            Some(p) if alpha != 0.0 => crate::paragraph_branch::fuse(&self.video, p, alpha).expect("branch lengths agree"),
            _ => (self.video.p_start.clone(), self.video.p_end.clone()),
        }
    }
}

impl Model {
    /// Builds the layout and draws initial parameters from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<(Model, Params)> {
        config.validate()?;
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::new(&mut params, &mut rng);
        let video = VideoBranch::new(&mut b, &config);
        let paragraph = config
            .paragraph_branch
            .then(|| ParagraphBranch::new(&mut b, "paragraph", &config.encoder, config.d_w, config.d_w));
        Ok((Model { config, video, paragraph }, params))
    }

    /// Checks that the sample's widths agree with the configuration.
    pub fn check_sample(&self, sample: &Sample) -> Result<()> {
        let (dv, dw) = (self.config.d_v, self.config.d_w);
        if sample.video.dim() != dv {
            return Err(Error::Shape(format!("{}: video width {} != {dv}", sample.id(), sample.video.dim())));
        }
        if sample.paragraph.aligned.ncols() != dw || sample.paragraph.aligned.nrows() != sample.video.len() {
            return Err(Error::Shape(format!("{}: paragraph is {:?}", sample.id(), sample.paragraph.aligned.dim())));
        }
        if sample.query.embeddings.ncols() != dw {
            return Err(Error::Shape(format!("{}: query width {} != {dw}", sample.id(), sample.query.embeddings.ncols())));
        }
        Ok(())
    }

    /// Forward pass. The paragraph branch is skipped when `alpha` is zero
    /// unless `need_paragraph` asks for its scores anyway.
    pub fn forward(&self, s: &mut Session<'_>, sample: &Sample, alpha: f64, need_paragraph: bool) -> Result<ModelOutput> {
        self.check_sample(sample)?;
        let v_mask = &sample.video.mask;
        let q_mask = &sample.query.mask;
        let v = s.input(sample.video.snippets.clone());
        let c_value = if self.config.narrative_merge {
            sample.paragraph.aligned.clone()
        } else {
            Array2::zeros(sample.paragraph.aligned.raw_dim())
        };
        let c_merge = s.input(c_value);
        let q = s.input(sample.query.embeddings.clone());
        let (ve, qe) = self.video.encode(s, v, c_merge, v_mask, q, q_mask)?;
        let video = self.video.predictor.forward(s, ve, v_mask, qe, q_mask)?;

        let paragraph = match &self.paragraph {
            Some(branch) if alpha != 0.0 || need_paragraph => {
                let c = s.input(sample.paragraph.aligned.clone());
                Some(branch.forward(s, c, v_mask, q, q_mask)?)
            }
            _ => None,
        };
        let p_start = fuse_vars(s, video.p_start, paragraph.map(|p| p.p_start), alpha);
        let p_end = fuse_vars(s, video.p_end, paragraph.map(|p| p.p_end), alpha);
        Ok(ModelOutput { video, paragraph, p_start, p_end })
    }

    /// Evaluation-mode branch scores for one sample.
    pub fn scores(&self, params: &Params, sample: &Sample, need_paragraph: bool) -> Result<BranchScores> {
        let mut s = Session::eval(params);
        let out = self.forward(&mut s, sample, if need_paragraph { 1.0 } else { 0.0 }, need_paragraph)?;
        Ok(BranchScores { video: out.video.distributions(&s), paragraph: out.paragraph.map(|p| p.distributions(&s)) })
    }
}
