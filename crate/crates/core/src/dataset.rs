//! Assembles model-ready samples from manifests, features and narratives.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    build_snippet_grid_with, read_features, uniform_periods, DatasetManifest, ManifestEntry, MomentAnnotation, MAX_SNIPPETS,
};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::Sample;
use crate::narration::{align_paragraph, NarrativeEntry};
use crate::training::apply_expansion;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Snippets per video after pooling or padding.
    pub snippets: usize,
    /// Seconds between sampled frames.
    pub frame_interval: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { snippets: MAX_SNIPPETS, frame_interval: crate::narration::DEFAULT_FRAME_INTERVAL }
    }
}

/// Builds one sample; candidate endpoints are expanded at `threshold`.
pub fn build_sample(
    entry: &ManifestEntry,
    raw: &Array2<f64>,
    narratives: &[NarrativeEntry],
    table: &EmbeddingTable,
    grid: &GridConfig,
    threshold: f64,
) -> Result<Sample> {
    let raw_periods = entry.periods().unwrap_or_else(|| uniform_periods(raw.nrows(), entry.duration));
    let video = build_snippet_grid_with(&entry.video_id, raw, &raw_periods, grid.snippets)?;
    let paragraph = align_paragraph(narratives, &video, table)?;
    let query = table.embed_query(&entry.query_id, &entry.query)?;
    let real = &video.periods[..video.real_len()];
    let mut annotation = MomentAnnotation::new(entry.tau_s, entry.tau_e, real)?;
    apply_expansion(&mut annotation, real, threshold);
    Ok(Sample { video, paragraph, query, annotation })
}

/// Builds every sample of a manifest, reading each feature file once.
pub fn load_samples(
    manifest: &DatasetManifest,
    narratives: &BTreeMap<String, Vec<NarrativeEntry>>,
    table: &EmbeddingTable,
    grid: &GridConfig,
    threshold: f64,
) -> Result<Vec<Sample>> {
    let mut features: BTreeMap<&str, Array2<f64>> = BTreeMap::new();
    let mut out = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        if !features.contains_key(entry.video_id.as_str()) {
            features.insert(&entry.video_id, read_features(&manifest.feature_path(entry))?);
        }
        let entries = narratives
            .get(&entry.video_id)
            .ok_or_else(|| Error::validation(format!("no narratives for video {}", entry.video_id)))?;
        out.push(build_sample(entry, &features[entry.video_id.as_str()], entries, table, grid, threshold)?);
    }
    Ok(out)
}

/// Distinct `(video_id, duration)` pairs in manifest order.
pub fn videos(manifest: &DatasetManifest) -> Vec<(String, f64)> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for e in &manifest.entries {
        if seen.insert(e.video_id.clone(), ()).is_none() {
            out.push((e.video_id.clone(), e.duration));
        }
    }
    out
}
