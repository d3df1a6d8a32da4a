//! Small generated datasets with a planted, learnable moment.
//!
//! Every video holds a target action and a distractor action on disjoint
//! snippet spans. Each action has its own feature motif added to the noisy
//! snippets it covers, its own word in the query and its own word in the
//! frame captions. With `narrative_only_fraction > 0` a share of the videos
//! lose the target motif from their features, so the moment is only
//! recoverable from the captions.

use std::ops::Range;
use std::path::Path;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{write_features, write_manifest, DatasetManifest, FeatureDtype, ManifestEntry, Split};
use crate::dataset::{build_sample, GridConfig};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::Sample;
use crate::narration::{sample_frame_timestamps, FixtureNarrator, NarrativeEntry};

const ACTIONS: [&str; 6] = ["opens", "closes", "pours", "washes", "holds", "throws"];
const OBJECTS: [&str; 4] = ["door", "cup", "towel", "book"];
const FILLER: [&str; 8] = ["a", "person", "the", "room", "is", "quiet", "someone", "nearby"];
const IDLE_CAPTION: &str = "the room is quiet";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub pairs: usize,
    pub d_v: usize,
    pub d_w: usize,
    /// Snippets per video; each lasts one second.
    pub snippets: usize,
    pub seed: u64,
    /// Share of videos whose target motif is removed from the features.
    pub narrative_only_fraction: f64,
    /// Amplitude of the uniform feature noise.
    pub noise: f64,
    pub min_span: usize,
    pub max_span: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pairs: 48,
            d_v: 32,
            d_w: 16,
            snippets: 16,
            seed: 0,
            narrative_only_fraction: 0.0,
            noise: 0.5,
            min_span: 3,
            max_span: 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthItem {
    pub entry: ManifestEntry,
    pub features: Array2<f64>,
    pub narrative_only: bool,
}

#[derive(Debug)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub items: Vec<SynthItem>,
    pub table: EmbeddingTable,
    pub fixtures: FixtureNarrator,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| scale * x / norm).collect()
}

fn caption(action: &str, object: &str) -> String {
    format!("a person {action} the {object}")
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    let n = config.snippets;
    if config.pairs == 0 || config.d_v == 0 || config.d_w == 0 {
        return Err(Error::validation("pairs and widths must be positive"));
    }
    if config.min_span == 0 || config.min_span > config.max_span || 2 * config.max_span > n {
        return Err(Error::validation("spans must fit twice into the video"));
    }
    if !(0.0..=1.0).contains(&config.narrative_only_fraction) {
        return Err(Error::validation("narrative_only_fraction must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut table = EmbeddingTable::new(config.d_w);
    for w in ACTIONS.iter().chain(&OBJECTS).chain(&FILLER) {
        table.insert(w, unit_vector(&mut rng, config.d_w, 1.0))?;
    }
    let motifs: Vec<Vec<f64>> = ACTIONS.iter().map(|_| unit_vector(&mut rng, config.d_v, 2.0)).collect();

    let n_text_only = (config.pairs as f64 * config.narrative_only_fraction).round() as usize;
    let mut text_only = vec![false; config.pairs];
    text_only[..n_text_only].iter_mut().for_each(|f| *f = true);
    text_only.shuffle(&mut rng);

    let duration = n as f64;
    let mut fixtures = FixtureNarrator::new(format!("synth-{}", config.seed));
    let mut items = Vec::with_capacity(config.pairs);
    for (k, &narrative_only) in text_only.iter().enumerate() {
        let video_id = format!("syn{k:03}");
        let picks: Vec<usize> = (0..ACTIONS.len()).collect::<Vec<_>>().choose_multiple(&mut rng, 2).copied().collect();
        let (target, distractor) = (picks[0], picks[1]);
        let objects: Vec<&str> = OBJECTS.choose_multiple(&mut rng, 2).copied().collect();

        let len_t = rng.random_range(config.min_span..=config.max_span);
        let len_d = rng.random_range(config.min_span..=config.max_span);
        // Place the two spans in random order with random gaps.
        let slack = n - len_t - len_d;
        let lead = rng.random_range(0..=slack);
        let gap = rng.random_range(0..=slack - lead);
        let target_first = rng.random_bool(0.5);
        let (t0, d0) = if target_first { (lead, lead + len_t + gap) } else { (lead + len_d + gap, lead) };

        let mut features = Array2::from_shape_fn((n, config.d_v), |_| rng.random_range(-config.noise..config.noise));
        let mut plant = |start: usize, len: usize, motif: &[f64]| {
            for i in start..start + len {
                for (x, &m) in features.row_mut(i).iter_mut().zip(motif) {
                    *x += m;
                }
            }
        };
        if !narrative_only {
            plant(t0, len_t, &motifs[target]);
        }
        plant(d0, len_d, &motifs[distractor]);

        for t in sample_frame_timestamps(duration, 1.0)? {
            let i = t.floor() as usize;
            let text = if (t0..t0 + len_t).contains(&i) {
                caption(ACTIONS[target], objects[0])
            } else if (d0..d0 + len_d).contains(&i) {
                caption(ACTIONS[distractor], objects[1])
            } else {
                IDLE_CAPTION.to_owned()
            };
            fixtures.insert(&video_id, t, text);
        }

        let entry = ManifestEntry {
            video_id: video_id.clone(),
            features: format!("features/{video_id}.vfea").into(),
            duration,
            periods: None,
            query_id: format!("{video_id}-q0"),
            query: caption(ACTIONS[target], objects[0]),
            tau_s: t0 as f64,
            tau_e: (t0 + len_t) as f64,
        };
        items.push(SynthItem { entry, features, narrative_only });
    }
    Ok(SynthDataset { config: *config, items, table, fixtures })
}

impl SynthDataset {
    /// The narratives the fixture narrator would return for one video.
    pub fn narratives(&self, video_id: &str) -> Result<Vec<NarrativeEntry>> {
        use crate::narration::{CaptionRequest, NarratorClient};
        let req = CaptionRequest { image_ref: String::new(), prompt: String::new() };
        sample_frame_timestamps(self.config.snippets as f64, 1.0)?
            .into_iter()
            .map(|t| {
                let text = self
                    .fixtures
                    .caption(video_id, t, &req)
                    .map_err(|f| Error::Narration { video_id: video_id.into(), timestamp: t, message: f.message, remote: f.remote })?;
                Ok(NarrativeEntry { timestamp: t, text })
            })
            .collect()
    }

    /// Model-ready samples on a grid as long as the videos.
    pub fn samples(&self, threshold: f64) -> Result<Vec<Sample>> {
        let grid = GridConfig { snippets: self.config.snippets, frame_interval: 1.0 };
        self.items
            .iter()
            .map(|it| build_sample(&it.entry, &it.features, &self.narratives(&it.entry.video_id)?, &self.table, &grid, threshold))
            .collect()
    }

    pub fn manifest(&self, split: Split, base_dir: &Path, items: Range<usize>) -> DatasetManifest {
        DatasetManifest {
            split,
            entries: self.items[items].iter().map(|it| it.entry.clone()).collect(),
            base_dir: base_dir.to_path_buf(),
        }
    }

    /// Writes `features/`, `embeddings.txt` and `fixtures.jsonl` under `dir`.
    pub fn write_assets(&self, dir: &Path) -> Result<()> {
        let feat_dir = dir.join("features");
        std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
        for it in &self.items {
            write_features(&dir.join(&it.entry.features), &it.features, FeatureDtype::F64)?;
        }
        self.table.save(&dir.join("embeddings.txt"))?;
        self.fixtures.save(&dir.join("fixtures.jsonl"))
    }

    /// Assets plus one `manifest.jsonl` holding every pair.
    pub fn write(&self, dir: &Path, split: Split) -> Result<()> {
        self.write_assets(dir)?;
        write_manifest(&dir.join("manifest.jsonl"), &self.manifest(split, dir, 0..self.items.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{load_manifest, read_features};

    #[test]
    fn generation_is_seeded() {
        let a = generate(&SynthConfig::default()).unwrap();
        let b = generate(&SynthConfig::default()).unwrap();
        let c = generate(&SynthConfig { seed: 1, ..Default::default() }).unwrap();
        assert_eq!(a.items[5].features, b.items[5].features);
        assert_ne!(a.items[5].features, c.items[5].features);
        assert_eq!(a.items.len(), 48);
    }

    #[test]
    fn samples_match_planted_spans() {
        let cfg = SynthConfig { pairs: 8, narrative_only_fraction: 0.5, ..Default::default() };
        let ds = generate(&cfg).unwrap();
        assert_eq!(ds.items.iter().filter(|i| i.narrative_only).count(), 4);
        let samples = ds.samples(1.0).unwrap();
        for (s, it) in samples.iter().zip(&ds.items) {
            assert_eq!(s.video.len(), 16);
            assert_eq!(s.annotation.start_idx, it.entry.tau_s as usize);
            assert_eq!(s.annotation.end_idx, it.entry.tau_e as usize - 1);
            assert!(s.paragraph.fill_flags.iter().all(|&f| f));
            assert_eq!(s.query.tokens.len(), 5);
        }
    }

    #[test]
    fn written_dataset_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&SynthConfig { pairs: 3, ..Default::default() }).unwrap();
        ds.write(dir.path(), Split::Train).unwrap();
        let m = load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(m.entries.len(), 3);
        let f = read_features(&m.feature_path(&m.entries[0])).unwrap();
        assert_eq!(f.dim(), (16, 32));
        let fx = FixtureNarrator::load(&dir.path().join("fixtures.jsonl")).unwrap();
        assert_eq!(fx.len(), 48);
        assert_eq!(EmbeddingTable::load(&dir.path().join("embeddings.txt")).unwrap().len(), 18);
    }
}
