//! Frame narration and construction of the snippet-aligned paragraph.
//!
//! Frames are sampled at bin centres, captioned by a [`NarratorClient`],
//! cached per video, embedded with the shared word table and mean-pooled
//! onto the snippet grid.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::{seconds_to_snippet_index, VideoFeatureSequence};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::par;

/// Instruction sent with every frame unless overridden.
pub const DEFAULT_PROMPT: &str = "This is one image frame sampled from a video. Please caption this frame in two or three sentences, to describe this frame with some details but without any analysis.";

/// Default frame sampling interval in seconds.
pub const DEFAULT_FRAME_INTERVAL: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeEntry {
    pub timestamp: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredParagraph {
    /// Chronological narratives.
    pub entries: Vec<NarrativeEntry>,
    /// `[len × d_c]`, one row per snippet of the video grid.
    pub aligned: Array2<f64>,
    /// True where the snippet period contained at least one narrative.
    pub fill_flags: Vec<bool>,
}

/// Bin-centre timestamps `interval/2, 3 interval/2, ...` below `duration`;
/// a video shorter than half an interval gets one frame at its midpoint.
pub fn sample_frame_timestamps(duration: f64, interval: f64) -> Result<Vec<f64>> {
    if !(duration > 0.0 && duration.is_finite()) || !(interval > 0.0 && interval.is_finite()) {
        return Err(Error::validation(format!("duration {duration} and interval {interval} must be positive")));
    }
    let out: Vec<f64> = (0..)
        .map(|k| (k as f64 + 0.5) * interval)
        .take_while(|&t| t < duration)
        .collect();
    if out.is_empty() {
        Ok(vec![duration / 2.0])
    } else {
        Ok(out)
    }
}

/// Timestamps are compared at millisecond resolution.
fn time_key(t: f64) -> i64 {
    (t * 1000.0).round() as i64
}

/// One captioning request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptionRequest {
    pub image_ref: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NarratorFailure {
    pub message: String,
    /// Failure came from the remote transport or service.
    pub remote: bool,
}

pub trait NarratorClient: Send + Sync {
    /// Stable name of the model or fixture; part of the cache key.
    fn identity(&self) -> String;

    fn caption(&self, video_id: &str, timestamp: f64, request: &CaptionRequest) -> std::result::Result<String, NarratorFailure>;
}

/// Deterministic lookup client keyed by `(video_id, timestamp)`.
#[derive(Debug, Default)]
pub struct FixtureNarrator {
    name: String,
    captions: HashMap<(String, i64), String>,
    calls: AtomicUsize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub video_id: String,
    pub t: f64,
    pub text: String,
}

impl FixtureNarrator {
    pub fn new(name: impl Into<String>) -> Self {
        FixtureNarrator { name: name.into(), ..Default::default() }
    }

    pub fn insert(&mut self, video_id: &str, timestamp: f64, text: impl Into<String>) {
        self.captions.insert((video_id.to_string(), time_key(timestamp)), text.into());
    }

    /// Loads line-delimited `{"video_id", "t", "text"}` records.
    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut fx = FixtureNarrator::new(format!("fixture:{}", path.file_name().unwrap_or_default().to_string_lossy()));
        for (i, line) in body.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: FixtureRecord = serde_json::from_str(line)
                .map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
            fx.insert(&rec.video_id, rec.t, rec.text);
        }
        Ok(fx)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut keys: Vec<_> = self.captions.keys().collect();
        keys.sort();
        let mut out = Vec::new();
        for k in keys {
            let rec = FixtureRecord { video_id: k.0.clone(), t: k.1 as f64 / 1000.0, text: self.captions[k].clone() };
            serde_json::to_writer(&mut out, &rec)?;
            out.push(b'\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }
}

impl NarratorClient for FixtureNarrator {
    fn identity(&self) -> String {
        self.name.clone()
    }

    fn caption(&self, video_id: &str, timestamp: f64, _request: &CaptionRequest) -> std::result::Result<String, NarratorFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.captions
            .get(&(video_id.to_string(), time_key(timestamp)))
            .cloned()
            .ok_or_else(|| NarratorFailure { message: "no fixture caption".into(), remote: false })
    }
}

/// HTTP client for a captioning endpoint.
///
/// Sends `POST {endpoint}` with JSON body `{"image_ref": ..., "prompt": ...}`
/// and expects `{"text": ...}` back. Transport errors and 5xx/429 responses
/// are retried with exponential backoff; other statuses fail immediately.
pub struct RemoteNarrator {
    endpoint: String,
    model: String,
    token: Option<String>,
    max_retries: u32,
    backoff: Duration,
    agent: ureq::Agent,
}

/// Environment variable holding an optional bearer token for the endpoint.
pub const TOKEN_ENV: &str = "VMR_NARRATOR_TOKEN";

#[derive(Deserialize)]
struct CaptionResponse {
    text: String,
}

impl RemoteNarrator {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteNarrator {
            endpoint: endpoint.into(),
            model: model.into(),
            token: std::env::var(TOKEN_ENV).ok(),
            max_retries: 3,
            backoff: Duration::from_millis(500),
            agent,
        }
    }

    pub fn with_retries(mut self, max_retries: u32, backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.backoff = backoff;
        self
    }

    fn attempt(&self, request: &CaptionRequest) -> std::result::Result<String, (bool, String)> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send_json(request).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let retry = status == 429 || status >= 500;
            return Err((retry, format!("HTTP {status}")));
        }
        let body: CaptionResponse = resp.body_mut().read_json().map_err(|e| (false, format!("bad response body: {e}")))?;
        Ok(body.text)
    }
}

impl NarratorClient for RemoteNarrator {
    fn identity(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn caption(&self, _video_id: &str, _timestamp: f64, request: &CaptionRequest) -> std::result::Result<String, NarratorFailure> {
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err((retryable, message)) => {
                    if !retryable || attempt >= self.max_retries {
                        return Err(NarratorFailure {
                            message: format!("{message} after {} attempt(s)", attempt + 1),
                            remote: true,
                        });
                    }
                    log::warn!("narrator request failed ({message}); retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

/// Cache of narrations, one line-delimited file per video.
///
/// Each line of `<dir>/<video_id>.jsonl` is exactly
/// `{"t":<seconds>,"key":"<16 hex>","text":"<caption>"}` followed by `\n`,
/// where `key` is the first 8 bytes of SHA-256 over
/// `<client identity> "\n" <prompt>`, hex encoded. Records are appended in
/// timestamp order; a later record for the same `(t, key)` wins.
#[derive(Debug, Clone)]
pub struct NarrationCache {
    dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheRecord {
    t: f64,
    key: String,
    text: String,
}

pub fn cache_key(client_identity: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(client_identity.as_bytes());
    h.update(b"\n");
    h.update(prompt.as_bytes());
    hex::encode(&h.finalize()[..8])
}

impl NarrationCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        NarrationCache { dir: dir.into() }
    }

    pub fn path_for(&self, video_id: &str) -> PathBuf {
        let safe: String = video_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
            .collect();
        self.dir.join(format!("{safe}.jsonl"))
    }

    /// Cached captions for `key`, by millisecond timestamp.
    pub fn load(&self, video_id: &str, key: &str) -> Result<BTreeMap<i64, String>> {
        let path = self.path_for(video_id);
        let mut out = BTreeMap::new();
        let body = match fs::read_to_string(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(Error::io(&path, e)),
        };
        for (i, line) in body.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let rec: CacheRecord = serde_json::from_str(line)
                .map_err(|e| Error::Parse { path: path.clone(), line: i + 1, message: e.to_string() })?;
            if rec.key == key {
                out.insert(time_key(rec.t), rec.text);
            }
        }
        Ok(out)
    }

    pub fn append(&self, video_id: &str, key: &str, entries: &[NarrativeEntry]) -> Result<()> {
        if entries.is_empty() {
            return Ok(());
        }
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let mut sorted: Vec<&NarrativeEntry> = entries.iter().collect();
        sorted.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let mut out = Vec::new();
        for e in sorted {
            let rec = CacheRecord { t: e.timestamp, key: key.to_string(), text: e.text.clone() };
            serde_json::to_writer(&mut out, &rec)?;
            out.push(b'\n');
        }
        let path = self.path_for(video_id);
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(&out).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone)]
pub struct NarrateOptions {
    pub prompt: String,
    /// Frame reference sent to the narrator; `{video_id}`, `{t}` (seconds,
    /// 3 decimals) and `{ms}` are substituted.
    pub frame_ref_template: String,
    pub parallelism: usize,
}

impl Default for NarrateOptions {
    fn default() -> Self {
        NarrateOptions {
            prompt: DEFAULT_PROMPT.to_string(),
            frame_ref_template: "frames/{video_id}/{ms}.jpg".to_string(),
            parallelism: 4,
        }
    }
}

impl NarrateOptions {
    pub fn frame_ref(&self, video_id: &str, t: f64) -> String {
        self.frame_ref_template
            .replace("{video_id}", video_id)
            .replace("{t}", &format!("{t:.3}"))
            .replace("{ms}", &time_key(t).to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NarrateStats {
    pub hits: usize,
    pub misses: usize,
    pub failures: usize,
}

impl std::ops::AddAssign for NarrateStats {
    fn add_assign(&mut self, o: Self) {
        self.hits += o.hits;
        self.misses += o.misses;
        self.failures += o.failures;
    }
}

/// Narration result for one video: the entries, or the first failure, plus
/// cache statistics in both cases.
pub struct NarrateOutcome {
    pub result: Result<Vec<NarrativeEntry>>,
    pub stats: NarrateStats,
}

/// Captions every timestamp, serving what it can from the cache.
///
/// Misses are fetched with bounded parallelism; successful captions are
/// cached even when other timestamps fail.
pub fn narrate(
    video_id: &str,
    timestamps: &[f64],
    client: &dyn NarratorClient,
    cache: &NarrationCache,
    opts: &NarrateOptions,
) -> NarrateOutcome {
    let key = cache_key(&client.identity(), &opts.prompt);
    let cached = match cache.load(video_id, &key) {
        Ok(c) => c,
        Err(e) => return NarrateOutcome { result: Err(e), stats: NarrateStats::default() },
    };
    let mut stats = NarrateStats::default();
    let mut entries: Vec<Option<NarrativeEntry>> = Vec::with_capacity(timestamps.len());
    let mut missing = Vec::new();
    for (i, &t) in timestamps.iter().enumerate() {
        match cached.get(&time_key(t)) {
            Some(text) => {
                stats.hits += 1;
                entries.push(Some(NarrativeEntry { timestamp: t, text: text.clone() }));
            }
            None => {
                stats.misses += 1;
                entries.push(None);
                missing.push(i);
            }
        }
    }

    let fetched = par::map_bounded(&missing, opts.parallelism, |&i| {
        let t = timestamps[i];
        let request = CaptionRequest { image_ref: opts.frame_ref(video_id, t), prompt: opts.prompt.clone() };
        client.caption(video_id, t, &request).and_then(|text| {
            if text.trim().is_empty() {
                Err(NarratorFailure { message: "empty caption".into(), remote: false })
            } else {
                Ok(text)
            }
        })
    });

    let mut fresh = Vec::new();
    let mut first_failure = None;
    for (&i, res) in missing.iter().zip(fetched) {
        let t = timestamps[i];
        match res {
            Ok(text) => {
                let e = NarrativeEntry { timestamp: t, text };
                fresh.push(e.clone());
                entries[i] = Some(e);
            }
            Err(f) => {
                stats.failures += 1;
                if first_failure.is_none() {
                    first_failure = Some((t, f));
                }
            }
        }
    }
    if let Err(e) = cache.append(video_id, &key, &fresh) {
        return NarrateOutcome { result: Err(e), stats };
    }
    let result = match first_failure {
        Some((timestamp, f)) => Err(Error::Narration {
            video_id: video_id.to_string(),
            timestamp,
            message: f.message,
            remote: f.remote,
        }),
        None => {
            let mut out: Vec<NarrativeEntry> = entries.into_iter().map(|e| e.expect("all timestamps resolved")).collect();
            out.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
            Ok(out)
        }
    };
    NarrateOutcome { result, stats }
}

/// Narrations of many videos.
#[derive(Debug, Default)]
pub struct BatchNarration {
    pub narratives: BTreeMap<String, Vec<NarrativeEntry>>,
    pub stats: NarrateStats,
    /// One error per video that could not be fully narrated.
    pub failures: Vec<Error>,
}

/// Narrates every `(video_id, duration)` at frames `interval` apart.
/// Failures of one video do not stop the others.
pub fn narrate_videos(
    videos: &[(String, f64)],
    interval: f64,
    client: &dyn NarratorClient,
    cache: &NarrationCache,
    opts: &NarrateOptions,
) -> Result<BatchNarration> {
    let mut out = BatchNarration::default();
    for (video_id, duration) in videos {
        let timestamps = sample_frame_timestamps(*duration, interval)?;
        let outcome = narrate(video_id, &timestamps, client, cache, opts);
        out.stats += outcome.stats;
        match outcome.result {
            Ok(entries) => {
                out.narratives.insert(video_id.clone(), entries);
            }
            Err(e) => out.failures.push(e),
        }
    }
    Ok(out)
}

/// Reads narrations for every video from the cache alone; any missing frame
/// is an error naming the video and timestamp.
pub fn cached_narratives(
    videos: &[(String, f64)],
    interval: f64,
    cache: &NarrationCache,
    key: &str,
) -> Result<BTreeMap<String, Vec<NarrativeEntry>>> {
    let mut out = BTreeMap::new();
    for (video_id, duration) in videos {
        let cached = cache.load(video_id, key)?;
        let entries = sample_frame_timestamps(*duration, interval)?
            .into_iter()
            .map(|t| {
                cached.get(&time_key(t)).map(|text| NarrativeEntry { timestamp: t, text: text.clone() }).ok_or_else(|| {
                    Error::Narration {
                        video_id: video_id.clone(),
                        timestamp: t,
                        message: "not in the narration cache".into(),
                        remote: false,
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(video_id.clone(), entries);
    }
    Ok(out)
}

/// Pools sentence embeddings of the narratives falling in each snippet period.
///
/// Occupied bins hold the mean of their narratives; an empty real bin copies
/// the closest preceding occupied bin, and bins before the first occupied one
/// copy that first one. Padded bins stay zero.
pub fn align_paragraph(
    entries: &[NarrativeEntry],
    video: &VideoFeatureSequence,
    table: &EmbeddingTable,
) -> Result<StructuredParagraph> {
    if entries.is_empty() {
        return Err(Error::validation(format!("video {}: no narratives to align", video.video_id)));
    }
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then_with(|| a.text.cmp(&b.text)));

    let len = video.len();
    let d = table.dim();
    let mut aligned = Array2::zeros((len, d));
    let mut counts = vec![0usize; len];
    for e in &sorted {
        if !(0.0..=video.duration).contains(&e.timestamp) {
            return Err(Error::OutOfRange { t: e.timestamp, duration: video.duration });
        }
        let k = seconds_to_snippet_index(e.timestamp, &video.periods)?;
        let emb = table.embed_sentence(&e.text)?;
        let mut row = aligned.row_mut(k);
        row += &emb;
        counts[k] += 1;
    }
    let fill_flags: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
    for (k, &c) in counts.iter().enumerate() {
        if c > 1 {
            aligned.row_mut(k).mapv_inplace(|v| v / c as f64);
        }
    }

    let real = video.real_len();
    let first = fill_flags[..real].iter().position(|&f| f).expect("at least one narrative is binned");
    for k in 0..first {
        let src = aligned.row(first).to_owned();
        aligned.row_mut(k).assign(&src);
    }
    for k in first + 1..real {
        if !fill_flags[k] {
            let src = aligned.row(k - 1).to_owned();
            aligned.row_mut(k).assign(&src);
        }
    }
    Ok(StructuredParagraph { entries: sorted, aligned, fill_flags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{build_snippet_grid_with, Period};
    use ndarray::{array, Array2};

    fn video(periods: &[(f64, f64)], len: usize) -> VideoFeatureSequence {
        let ps: Vec<Period> = periods.iter().map(|&(s, e)| Period::new(s, e)).collect();
        build_snippet_grid_with("v", &Array2::ones((ps.len(), 2)), &ps, len).unwrap()
    }

    fn table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(2);
        t.insert("a", vec![1.0, 0.0]).unwrap();
        t.insert("b", vec![0.0, 2.0]).unwrap();
        t.insert("c", vec![-4.0, 4.0]).unwrap();
        t
    }

    fn entry(t: f64, text: &str) -> NarrativeEntry {
        NarrativeEntry { timestamp: t, text: text.into() }
    }

    #[test]
    fn timestamps_at_bin_centres() {
        assert_eq!(sample_frame_timestamps(4.0, 1.0).unwrap(), vec![0.5, 1.5, 2.5, 3.5]);
        assert_eq!(sample_frame_timestamps(0.4, 1.0).unwrap(), vec![0.2]);
        assert_eq!(sample_frame_timestamps(2.0, 2.0).unwrap(), vec![1.0]);
        assert!(sample_frame_timestamps(0.0, 1.0).is_err());
        assert!(sample_frame_timestamps(3.0, -1.0).is_err());
    }

    #[test]
    fn alignment_pools_and_fills() {
        let v = video(&[(0.0, 2.0), (2.0, 4.0)], 2);
        let p = align_paragraph(&[entry(0.5, "a"), entry(1.5, "b"), entry(2.5, "c")], &v, &table()).unwrap();
        assert_eq!(p.aligned, array![[0.5, 1.0], [-4.0, 4.0]]);
        assert_eq!(p.fill_flags, vec![true, true]);

        let p = align_paragraph(&[entry(0.5, "a")], &v, &table()).unwrap();
        assert_eq!(p.aligned, array![[1.0, 0.0], [1.0, 0.0]]);
        assert_eq!(p.fill_flags, vec![true, false]);

        let p = align_paragraph(&[entry(2.5, "c")], &v, &table()).unwrap();
        assert_eq!(p.aligned, array![[-4.0, 4.0], [-4.0, 4.0]]);
        assert_eq!(p.fill_flags, vec![false, true]);
    }

    #[test]
    fn padded_bins_stay_zero() {
        let v = video(&[(0.0, 2.0), (2.0, 4.0)], 4);
        let p = align_paragraph(&[entry(0.5, "a")], &v, &table()).unwrap();
        assert_eq!(p.aligned.nrows(), 4);
        assert!(p.aligned.row(2).iter().chain(p.aligned.row(3).iter()).all(|&x| x == 0.0));
        assert_eq!(p.fill_flags, vec![true, false, false, false]);
    }

    #[test]
    fn alignment_rejects_bad_input() {
        let v = video(&[(0.0, 2.0), (2.0, 4.0)], 2);
        assert!(align_paragraph(&[], &v, &table()).is_err());
        assert!(align_paragraph(&[entry(5.0, "a")], &v, &table()).is_err());
    }

    #[test]
    fn alignment_is_permutation_invariant() {
        let v = video(&[(0.0, 1.0), (1.0, 3.0), (3.0, 4.0)], 3);
        let es = vec![entry(1.2, "a b"), entry(1.7, "c"), entry(0.1, "b"), entry(2.9, "a c xyz")];
        let base = align_paragraph(&es, &v, &table()).unwrap();
        let mut rev = es.clone();
        rev.reverse();
        assert_eq!(align_paragraph(&rev, &v, &table()).unwrap(), base);
    }

    #[test]
    fn fixture_round_trip_and_warm_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cache = NarrationCache::new(dir.path());
        let mut fx = FixtureNarrator::new("fx");
        fx.insert("v1", 0.5, "a man opens a door");
        let opts = NarrateOptions::default();
        let out = narrate("v1", &[0.5], &fx, &cache, &opts);
        assert_eq!(out.result.unwrap(), vec![entry(0.5, "a man opens a door")]);
        assert_eq!(out.stats, NarrateStats { hits: 0, misses: 1, failures: 0 });
        let bytes = fs::read(cache.path_for("v1")).unwrap();

        let again = narrate("v1", &[0.5], &fx, &cache, &opts);
        assert_eq!(again.result.unwrap(), vec![entry(0.5, "a man opens a door")]);
        assert_eq!(again.stats, NarrateStats { hits: 1, misses: 0, failures: 0 });
        assert_eq!(fx.calls(), 1);
        assert_eq!(fs::read(cache.path_for("v1")).unwrap(), bytes);
    }

    #[test]
    fn partial_failure_caches_successes() {
        let dir = tempfile::tempdir().unwrap();
        let cache = NarrationCache::new(dir.path());
        let mut fx = FixtureNarrator::new("fx");
        fx.insert("v", 0.5, "first");
        fx.insert("v", 2.5, "third");
        let out = narrate("v", &[0.5, 1.5, 2.5], &fx, &cache, &NarrateOptions::default());
        match out.result {
            Err(Error::Narration { timestamp, remote, .. }) => {
                assert_eq!(timestamp, 1.5);
                assert!(!remote);
            }
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
        assert_eq!(out.stats.failures, 1);
        let cached = cache.load("v", &cache_key("fx", DEFAULT_PROMPT)).unwrap();
        assert_eq!(cached.len(), 2);
        assert_eq!(cached[&2500], "third");
    }

    #[test]
    fn cache_key_depends_on_client_and_prompt() {
        assert_ne!(cache_key("a", "p"), cache_key("b", "p"));
        assert_ne!(cache_key("a", "p"), cache_key("a", "q"));
        assert_eq!(cache_key("a", "p").len(), 16);
    }

    #[test]
    fn cache_record_format_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cache = NarrationCache::new(dir.path());
        cache.append("v/1", "00ff", &[entry(1.5, "x \"y\""), entry(0.5, "z")]).unwrap();
        let body = fs::read_to_string(dir.path().join("v_1.jsonl")).unwrap();
        assert_eq!(body, "{\"t\":0.5,\"key\":\"00ff\",\"text\":\"z\"}\n{\"t\":1.5,\"key\":\"00ff\",\"text\":\"x \\\"y\\\"\"}\n");
    }

    #[test]
    fn frame_reference_template() {
        let opts = NarrateOptions { frame_ref_template: "{video_id}/{t}/{ms}".into(), ..Default::default() };
        assert_eq!(opts.frame_ref("abc", 1.5), "abc/1.500/1500");
    }
}
