//! Domain types shared by the whole pipeline and the conversion between
//! seconds and snippet indices.

mod features;
mod manifest;

use std::collections::BTreeSet;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::{read_features, write_features, FeatureDtype, FEATURE_MAGIC};
pub use manifest::{load_manifest, write_manifest, DatasetManifest, ManifestEntry, Split};

/// Canonical snippet count after pooling and padding.
pub const MAX_SNIPPETS: usize = 128;

/// Half-open time interval `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub start: f64,
    pub end: f64,
}

impl Period {
    pub fn new(start: f64, end: f64) -> Self {
        Period { start, end }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// `n` equal periods tiling `[0, duration]`.
pub fn uniform_periods(n: usize, duration: f64) -> Vec<Period> {
    (0..n)
        .map(|i| {
            let start = duration * i as f64 / n as f64;
            let end = if i + 1 == n { duration } else { duration * (i + 1) as f64 / n as f64 };
            Period::new(start, end)
        })
        .collect()
}

/// Checks that periods are non-empty, sorted, contiguous and start at 0.
pub fn validate_periods(periods: &[Period]) -> Result<()> {
    let first = periods.first().ok_or_else(|| Error::validation("empty period list"))?;
    if first.start != 0.0 {
        return Err(Error::validation(format!("first period starts at {} instead of 0", first.start)));
    }
    for (i, p) in periods.iter().enumerate() {
        if p.is_empty() || !p.start.is_finite() || !p.end.is_finite() {
            return Err(Error::validation(format!("period {i} [{}, {}) is empty or non-finite", p.start, p.end)));
        }
        if i > 0 && periods[i - 1].end != p.start {
            return Err(Error::validation(format!("period {i} does not start where period {} ends", i - 1)));
        }
    }
    Ok(())
}

/// Index of the snippet whose half-open period contains `t`. The video's
/// final instant maps to the last snippet.
pub fn seconds_to_snippet_index(t: f64, periods: &[Period]) -> Result<usize> {
    let duration = periods.last().map(|p| p.end).unwrap_or(0.0);
    if periods.is_empty() || !(0.0..=duration).contains(&t) {
        return Err(Error::OutOfRange { t, duration });
    }
    // First period whose end is beyond t.
    let idx = periods.partition_point(|p| p.end <= t);
    Ok(idx.min(periods.len() - 1))
}

/// Snippet index holding the moment end `t`, treating `t` as an exclusive
/// bound: a moment ending exactly on a snippet boundary does not claim the
/// snippet that starts there.
pub fn end_time_to_snippet_index(t: f64, periods: &[Period]) -> Result<usize> {
    let idx = seconds_to_snippet_index(t, periods)?;
    if idx > 0 && periods[idx].start == t {
        Ok(idx - 1)
    } else {
        Ok(idx)
    }
}

/// Per-snippet visual features padded to a fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatureSequence {
    pub video_id: String,
    /// `[len × d_v]`; rows past the real snippets are zero.
    pub snippets: Array2<f64>,
    /// One period per real snippet.
    pub periods: Vec<Period>,
    /// Prefix-true validity mask over all rows.
    pub mask: Vec<bool>,
    pub duration: f64,
}

impl VideoFeatureSequence {
    pub fn len(&self) -> usize {
        self.snippets.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.nrows() == 0
    }

    pub fn real_len(&self) -> usize {
        self.periods.len()
    }

    pub fn dim(&self) -> usize {
        self.snippets.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        validate_periods(&self.periods)?;
        let n = self.real_len();
        if self.mask.len() != self.len() {
            return Err(Error::Shape(format!("mask has {} entries for {} rows", self.mask.len(), self.len())));
        }
        if self.mask.iter().enumerate().any(|(i, &m)| m != (i < n)) {
            return Err(Error::validation("mask is not a prefix of real snippets"));
        }
        if (self.periods[n - 1].end - self.duration).abs() > 1e-9 {
            return Err(Error::validation("periods do not cover the duration"));
        }
        if self.snippets.slice(s![n.., ..]).iter().any(|&x| x != 0.0) {
            return Err(Error::validation("padding rows must be zero"));
        }
        Ok(())
    }
}

/// Pools or pads raw per-frame features onto the canonical [`MAX_SNIPPETS`]
/// grid, assuming the raw rows tile the duration uniformly.
pub fn build_snippet_grid(video_id: &str, raw: &Array2<f64>, duration: f64) -> Result<VideoFeatureSequence> {
    let periods = uniform_periods(raw.nrows().max(1), duration);
    build_snippet_grid_with(video_id, raw, &periods, MAX_SNIPPETS)
}

/// Grid construction with explicit raw periods and target length.
///
/// More than `len` rows are max-pooled in consecutive groups (group `k`
/// covers raw rows `floor(k N / len) .. floor((k+1) N / len)`); fewer rows
/// are zero-padded with the mask cleared.
pub fn build_snippet_grid_with(
    video_id: &str,
    raw: &Array2<f64>,
    raw_periods: &[Period],
    len: usize,
) -> Result<VideoFeatureSequence> {
    let n = raw.nrows();
    if n == 0 || raw.ncols() == 0 {
        return Err(Error::validation(format!("video {video_id}: empty feature matrix")));
    }
    if len == 0 {
        return Err(Error::validation("target grid length must be positive"));
    }
    if raw_periods.len() != n {
        return Err(Error::Shape(format!("{} periods for {n} feature rows", raw_periods.len())));
    }
    validate_periods(raw_periods)?;
    let duration = raw_periods[n - 1].end;
    let d = raw.ncols();
    let mut snippets = Array2::zeros((len, d));
    let (periods, real) = if n > len {
        let mut periods = Vec::with_capacity(len);
        for k in 0..len {
            let lo = k * n / len;
            let hi = (k + 1) * n / len;
            let mut row = snippets.row_mut(k);
            row.assign(&raw.row(lo));
            for r in lo + 1..hi {
                row.zip_mut_with(&raw.row(r), |a, &b| *a = a.max(b));
            }
            periods.push(Period::new(raw_periods[lo].start, raw_periods[hi - 1].end));
        }
        (periods, len)
    } else {
        snippets.slice_mut(s![..n, ..]).assign(raw);
        (raw_periods.to_vec(), n)
    };
    let mask = (0..len).map(|i| i < real).collect();
    Ok(VideoFeatureSequence { video_id: video_id.to_string(), snippets, periods, mask, duration })
}

/// Tokenised query with word embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub query_id: String,
    pub tokens: Vec<String>,
    /// `[L^q × d_w]`.
    pub embeddings: Array2<f64>,
    pub mask: Vec<bool>,
}

impl Query {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Ground-truth moment with its snippet-level view.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAnnotation {
    pub tau_s: f64,
    pub tau_e: f64,
    pub start_idx: usize,
    pub end_idx: usize,
    pub candidate_starts: BTreeSet<usize>,
    pub candidate_ends: BTreeSet<usize>,
}

impl MomentAnnotation {
    /// Converts `(tau_s, tau_e)` to snippet indices. Candidate sets start out
    /// as the exact endpoints; see `training::expand_labels` to widen them.
    pub fn new(tau_s: f64, tau_e: f64, periods: &[Period]) -> Result<Self> {
        let duration = periods.last().map(|p| p.end).unwrap_or(0.0);
        if !(0.0 <= tau_s && tau_s < tau_e && tau_e <= duration + 1e-9) {
            return Err(Error::validation(format!(
                "moment [{tau_s}, {tau_e}] is not a valid interval within [0, {duration}]"
            )));
        }
        let start_idx = seconds_to_snippet_index(tau_s, periods)?;
        let end_idx = end_time_to_snippet_index(tau_e.min(duration), periods)?.max(start_idx);
        Ok(MomentAnnotation {
            tau_s,
            tau_e,
            start_idx,
            end_idx,
            candidate_starts: BTreeSet::from([start_idx]),
            candidate_ends: BTreeSet::from([end_idx]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn two() -> Vec<Period> {
        vec![Period::new(0.0, 2.0), Period::new(2.0, 4.0)]
    }

    #[test]
    fn snippet_index_boundaries() {
        assert_eq!(seconds_to_snippet_index(0.0, &two()).unwrap(), 0);
        assert_eq!(seconds_to_snippet_index(2.0, &two()).unwrap(), 1);
        assert_eq!(seconds_to_snippet_index(4.0, &two()).unwrap(), 1);
        assert!(matches!(seconds_to_snippet_index(4.1, &two()), Err(Error::OutOfRange { .. })));
        assert!(seconds_to_snippet_index(-0.1, &two()).is_err());
    }

    #[test]
    fn end_index_excludes_boundary_snippet() {
        assert_eq!(end_time_to_snippet_index(2.0, &two()).unwrap(), 0);
        assert_eq!(end_time_to_snippet_index(3.0, &two()).unwrap(), 1);
        let a = MomentAnnotation::new(0.0, 2.0, &two()).unwrap();
        assert_eq!((a.start_idx, a.end_idx), (0, 0));
        assert!(MomentAnnotation::new(3.0, 2.0, &two()).is_err());
        assert!(MomentAnnotation::new(1.0, 5.0, &two()).is_err());
    }

    #[test]
    fn grid_max_pools_pairs() {
        let raw = Array2::from_shape_fn((256, 4), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let grid = build_snippet_grid("v", &raw, 25.6).unwrap();
        assert_eq!(grid.len(), 128);
        assert!(grid.mask.iter().all(|&m| m));
        for k in 0..128 {
            for j in 0..4 {
                assert_eq!(grid.snippets[[k, j]], raw[[2 * k, j]].max(raw[[2 * k + 1, j]]));
            }
        }
        assert!((grid.periods[127].end - 25.6).abs() < 1e-12);
        grid.validate().unwrap();
    }

    #[test]
    fn grid_pads_short_videos() {
        let raw = Array2::from_elem((100, 3), 1.5);
        let grid = build_snippet_grid("v", &raw, 10.0).unwrap();
        assert_eq!(grid.len(), 128);
        assert_eq!(grid.real_len(), 100);
        assert!(grid.mask[..100].iter().all(|&m| m));
        assert!(grid.mask[100..].iter().all(|&m| !m));
        assert!(grid.snippets.slice(s![100.., ..]).iter().all(|&x| x == 0.0));
        grid.validate().unwrap();
    }

    #[test]
    fn grid_identity_at_canonical_length() {
        let raw = Array2::from_shape_fn((128, 2), |(i, j)| (i + j) as f64);
        let grid = build_snippet_grid("v", &raw, 128.0).unwrap();
        assert_eq!(grid.snippets, raw);
        assert!(grid.mask.iter().all(|&m| m));
    }

    #[test]
    fn grid_rejects_empty_input() {
        assert!(build_snippet_grid("v", &Array2::zeros((0, 4)), 1.0).is_err());
    }

    proptest! {
        #[test]
        fn snippet_index_is_monotone(lens in prop::collection::vec(0.1f64..5.0, 1..20), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let mut periods = Vec::new();
            let mut t = 0.0;
            for l in lens {
                periods.push(Period::new(t, t + l));
                t += l;
            }
            let (lo, hi) = if a <= b { (a * t, b * t) } else { (b * t, a * t) };
            prop_assert!(seconds_to_snippet_index(lo, &periods).unwrap() <= seconds_to_snippet_index(hi, &periods).unwrap());
            for (i, p) in periods.iter().enumerate() {
                prop_assert_eq!(seconds_to_snippet_index(p.midpoint(), &periods).unwrap(), i);
            }
        }

        #[test]
        fn grid_shape_and_prefix_mask(n in 1usize..300, d in 1usize..5) {
            let raw = Array2::from_shape_fn((n, d), |(i, j)| (i as f64 - j as f64).sin());
            let grid = build_snippet_grid("v", &raw, n as f64 * 0.5).unwrap();
            prop_assert_eq!(grid.len(), MAX_SNIPPETS);
            prop_assert_eq!(grid.dim(), d);
            let real = grid.mask.iter().take_while(|&&m| m).count();
            prop_assert!(grid.mask[real..].iter().all(|&m| !m));
            prop_assert_eq!(real, n.min(MAX_SNIPPETS));
            prop_assert!(grid.validate().is_ok());
        }
    }
}
