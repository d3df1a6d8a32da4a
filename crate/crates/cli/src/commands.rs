use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::json;

use vmr_core::checkpoint::{self, CODE_VERSION};
use vmr_core::datamodel::{load_manifest, write_manifest, Split};
use vmr_core::dataset::{load_samples, videos};
use vmr_core::embedding::EmbeddingTable;
use vmr_core::enhancement::EncoderConfig;
use vmr_core::evaluation::{self, format_sweep, format_table, write_jsonl, ALPHA_GRID};
use vmr_core::narration::{cache_key, cached_narratives, narrate_videos, NarrationCache};
use vmr_core::nn::Params;
use vmr_core::synth::{self, SynthConfig};
use vmr_core::training::{fit, Control, TrainState};
use vmr_core::{Error, Execution, Model, Sample};

use crate::config::{DataConfig, ModelSection, NarratorConfig, NarratorMode, RunConfig};

/// Identity of the artifacts a command writes.
#[derive(Debug, Clone, Serialize)]
pub struct Stamp {
    pub config_fingerprint: String,
    pub seed: u64,
    pub code_version: &'static str,
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Resolves `--split` values, or `default` when none were given.
pub fn parse_splits(names: &[String], default: Vec<Split>) -> anyhow::Result<Vec<Split>> {
    if names.is_empty() {
        return Ok(default);
    }
    names.iter().map(|n| Ok(n.parse::<Split>()?)).collect()
}

fn manifest_of(cfg: &RunConfig, split: Split) -> anyhow::Result<vmr_core::datamodel::DatasetManifest> {
    let path = cfg
        .manifest_path(split)
        .ok_or_else(|| Error::Validation(format!("no manifest configured for split {split}")))?;
    Ok(load_manifest(path)?)
}

fn all_videos(cfg: &RunConfig, splits: &[Split]) -> anyhow::Result<Vec<(String, f64)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for &split in splits {
        for (id, duration) in videos(&manifest_of(cfg, split)?) {
            match seen.get(&id) {
                Some(&d) if d != duration => {
                    return Err(Error::Validation(format!("video {id} has durations {d} and {duration}")).into());
                }
                Some(_) => {}
                None => {
                    seen.insert(id.clone(), duration);
                    out.push((id, duration));
                }
            }
        }
    }
    Ok(out)
}

pub fn narrate(cfg: &RunConfig, splits: &[Split]) -> anyhow::Result<()> {
    let client = cfg.client()?;
    let cache = NarrationCache::new(cfg.cache_dir());
    let vids = all_videos(cfg, splits)?;
    let batch = narrate_videos(&vids, cfg.grid.frame_interval, client.as_ref(), &cache, &cfg.narrate_options())?;
    println!(
        "narrated {} videos: {} hits, {} misses, {} failures",
        vids.len(),
        batch.stats.hits,
        batch.stats.misses,
        batch.stats.failures
    );
    for f in &batch.failures {
        eprintln!("  {f}");
    }
    match batch.failures.into_iter().next() {
        Some(first) => Err(first.into()),
        None => Ok(()),
    }
}

/// Everything the model-facing commands share.
struct Prepared {
    table: EmbeddingTable,
    key: String,
    cache: NarrationCache,
}

fn prepare(cfg: &RunConfig) -> anyhow::Result<Prepared> {
    let client = cfg.client()?;
    let key = cache_key(&client.identity(), &cfg.narrate_options().prompt);
    let table = EmbeddingTable::load(&cfg.data.embeddings)?;
    Ok(Prepared { table, key, cache: NarrationCache::new(cfg.cache_dir()) })
}

fn split_samples(cfg: &RunConfig, p: &Prepared, split: Split) -> anyhow::Result<Vec<Sample>> {
    let manifest = manifest_of(cfg, split)?;
    let narratives = cached_narratives(&videos(&manifest), cfg.grid.frame_interval, &p.cache, &p.key)
        .with_context(|| format!("split {split}: run `vmr narrate` first"))?;
    Ok(load_samples(&manifest, &narratives, &p.table, &cfg.grid, cfg.train.expansion_iou_threshold)?)
}

pub fn align(cfg: &RunConfig, splits: &[Split]) -> anyhow::Result<()> {
    let p = prepare(cfg)?;
    let dir = cfg.output_dir.join("aligned");
    create_dir(&dir)?;
    for &split in splits {
        let samples = split_samples(cfg, &p, split)?;
        let mut done = BTreeMap::new();
        let mut records = Vec::new();
        for s in &samples {
            if done.insert(s.video.video_id.clone(), ()).is_some() {
                continue;
            }
            records.push(json!({
                "video_id": s.video.video_id,
                "narratives": s.paragraph.entries.len(),
                "fill_flags": s.paragraph.fill_flags,
                "aligned": s.paragraph.aligned.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
            }));
        }
        let filled: usize = samples
            .iter()
            .map(|s| s.paragraph.fill_flags[..s.video.real_len()].iter().filter(|f| !**f).count())
            .sum();
        write_jsonl(&dir.join(format!("{split}.jsonl")), &records)?;
        println!("{split}: aligned {} videos ({} pairs), {filled} empty snippet bins filled", records.len(), samples.len());
    }
    Ok(())
}

struct Built {
    model: Model,
    init: Params,
    stamp: Stamp,
}

fn build_model(cfg: &RunConfig, samples: &[Sample], d_w: usize) -> anyhow::Result<Built> {
    let first = samples.first().ok_or_else(|| Error::Validation("no samples".into()))?;
    let model_cfg = cfg.model_config(first.video.dim(), d_w);
    let (model, init) = Model::new(model_cfg, cfg.seed)?;
    let stamp = Stamp { config_fingerprint: model_cfg.fingerprint(), seed: cfg.seed, code_version: CODE_VERSION };
    Ok(Built { model, init, stamp })
}

fn checkpoint_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("checkpoints")
}

fn append_line(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    f.write_all(&line).with_context(|| format!("writing {}", path.display()))
}

pub fn train(cfg: &RunConfig, alpha: f64, resume: bool, max_epochs: Option<usize>) -> anyhow::Result<()> {
    let p = prepare(cfg)?;
    let samples = split_samples(cfg, &p, Split::Train)?;
    let built = build_model(cfg, &samples, p.table.dim())?;
    let run_fp = checkpoint::run_fingerprint(&built.model.config, &cfg.train, alpha);
    let ckpt_dir = checkpoint_dir(cfg);
    create_dir(&ckpt_dir)?;
    let last = ckpt_dir.join("last.ckpt");
    let best = ckpt_dir.join("best.ckpt");
    let log_path = cfg.output_dir.join("train_log.jsonl");

    let mut state = if resume {
        if !last.exists() {
            return Err(Error::Validation(format!("--resume: no checkpoint at {}", last.display())).into());
        }
        let ck = checkpoint::load(&last, &built.init, &built.stamp.config_fingerprint)?;
        if ck.header.run_fingerprint != run_fp {
            return Err(Error::Fingerprint { expected: run_fp, found: ck.header.run_fingerprint }.into());
        }
        append_line(&log_path, &json!({ "kind": "resume", "from_epoch": ck.state.epoch }))?;
        println!("resuming from epoch {}", ck.state.epoch);
        ck.state
    } else {
        let _ = fs::remove_file(&log_path);
        append_line(
            &log_path,
            &json!({
                "kind": "run",
                "stamp": built.stamp,
                "run_fingerprint": run_fp,
                "init_fingerprint": built.init.fingerprint(),
                "parameters": built.init.numel(),
                "samples": samples.len(),
                "alpha": alpha,
            }),
        )?;
        println!("init fingerprint {} ({} parameters)", built.init.fingerprint(), built.init.numel());
        TrainState::new(built.init.clone())
    };

    let budget = max_epochs.unwrap_or(usize::MAX);
    let mut ran = 0;
    let stamp = &built.stamp;
    fit(&built.model, &mut state, &samples, &cfg.train, alpha, Execution::default(), |st, log| {
        checkpoint::save(&last, st, &stamp.config_fingerprint, &run_fp, stamp.seed)?;
        if log.best {
            checkpoint::save(&best, st, &stamp.config_fingerprint, &run_fp, stamp.seed)?;
        }
        let mut record = serde_json::to_value(log)?;
        record["kind"] = json!("epoch");
        append_line(&log_path, &record).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ran += 1;
        Ok(if ran >= budget { Control::Stop } else { Control::Continue })
    })?;
    println!(
        "trained to epoch {}; best validation mIoU {:.2} at epoch {}",
        state.epoch,
        state.best_metric.unwrap_or(0.0),
        state.best_epoch.map(|e| e.to_string()).unwrap_or_else(|| "-".into())
    );
    Ok(())
}

struct Loaded {
    model: Model,
    params: Params,
    stamp: Stamp,
    prepared: Prepared,
}

fn load_trained(cfg: &RunConfig, checkpoint_path: Option<&Path>) -> anyhow::Result<Loaded> {
    let path = checkpoint_path.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_dir(cfg).join("best.ckpt"));
    if !path.exists() {
        return Err(Error::Validation(format!("checkpoint {} not found; run `vmr train` first", path.display())).into());
    }
    let prepared = prepare(cfg)?;
    // Widths come from the training data, as they did when training.
    let train = manifest_of(cfg, Split::Train)?;
    let first = train.entries.first().ok_or_else(|| Error::Validation("empty training manifest".into()))?;
    let d_v = vmr_core::datamodel::read_features(&train.feature_path(first))?.ncols();
    let model_cfg = cfg.model_config(d_v, prepared.table.dim());
    let (model, template) = Model::new(model_cfg, cfg.seed)?;
    let ck = checkpoint::load(&path, &template, &model_cfg.fingerprint())?;
    let stamp = Stamp { config_fingerprint: model_cfg.fingerprint(), seed: ck.header.seed, code_version: CODE_VERSION };
    Ok(Loaded { model, params: ck.state.params, stamp, prepared })
}

pub fn eval(cfg: &RunConfig, splits: &[Split], alpha: f64, checkpoint_path: Option<&Path>) -> anyhow::Result<()> {
    let loaded = load_trained(cfg, checkpoint_path)?;
    let mut reports = Vec::new();
    for &split in splits {
        if cfg.manifest_path(split).is_none() {
            log::warn!("split {split} has no manifest; skipped");
            continue;
        }
        let samples = split_samples(cfg, &loaded.prepared, split)?;
        let (_, report) = evaluation::evaluate_split(&loaded.model, &loaded.params, split.as_str(), &samples, alpha, Execution::default())?;
        reports.push(report);
    }
    if reports.is_empty() {
        return Err(Error::Validation("none of the requested splits has a manifest".into()).into());
    }
    let dir = cfg.output_dir.join("eval");
    let table = format_table(&reports);
    let body = json!({ "stamp": loaded.stamp, "alpha": alpha, "reports": reports });
    write_text(&dir.join("report.json"), &serde_json::to_string_pretty(&body)?)?;
    let footer = format!(
        "\nalpha {alpha}; config {}; seed {}; version {}\n",
        loaded.stamp.config_fingerprint, loaded.stamp.seed, loaded.stamp.code_version
    );
    write_text(&dir.join("table.md"), &format!("{table}{footer}"))?;
    print!("{table}");
    Ok(())
}

pub fn predict(cfg: &RunConfig, splits: &[Split], alpha: f64, checkpoint_path: Option<&Path>) -> anyhow::Result<()> {
    let loaded = load_trained(cfg, checkpoint_path)?;
    for &split in splits {
        let samples = split_samples(cfg, &loaded.prepared, split)?;
        let scores = evaluation::collect_scores(&loaded.model, &loaded.params, &samples, alpha != 0.0, Execution::default())?;
        let records = evaluation::prediction_records(&samples, &scores, alpha)?;
        let path = cfg.output_dir.join("predictions").join(format!("{split}.jsonl"));
        create_dir(path.parent().expect("has parent"))?;
        let mut lines = vec![serde_json::to_value(json!({ "stamp": loaded.stamp, "alpha": alpha, "split": split }))?];
        for r in &records {
            lines.push(serde_json::to_value(r)?);
        }
        write_jsonl(&path, &lines)?;
        println!("{split}: {} predictions written to {}", records.len(), path.display());
    }
    Ok(())
}

pub fn sweep(cfg: &RunConfig, splits: &[Split], checkpoint_path: Option<&Path>) -> anyhow::Result<()> {
    let loaded = load_trained(cfg, checkpoint_path)?;
    if loaded.model.paragraph.is_none() {
        return Err(Error::Validation("the alpha sweep needs model.paragraph_branch = true".into()).into());
    }
    for &split in splits {
        let samples = split_samples(cfg, &loaded.prepared, split)?;
        let scores = evaluation::collect_scores(&loaded.model, &loaded.params, &samples, true, Execution::default())?;
        let rows = evaluation::alpha_sweep(&samples, &scores, &ALPHA_GRID)?;
        let table = format_sweep(&rows);
        let header = format!(
            "# split {split}; config {}; seed {}; version {}\n",
            loaded.stamp.config_fingerprint, loaded.stamp.seed, loaded.stamp.code_version
        );
        write_text(&cfg.output_dir.join("sweep").join(format!("{split}.tsv")), &format!("{header}{table}"))?;
        println!("{split}");
        print!("{table}");
    }
    Ok(())
}

/// Writes a synthetic dataset and a ready-to-run config to `out`.
pub fn synth(out: &Path, synth_cfg: &SynthConfig, holdout: usize, epochs: usize) -> anyhow::Result<PathBuf> {
    let total = SynthConfig { pairs: synth_cfg.pairs + holdout, ..*synth_cfg };
    let ds = synth::generate(&total)?;
    let data = out.join("data");
    ds.write_assets(&data)?;
    write_manifest(&data.join("train.jsonl"), &ds.manifest(Split::Train, &data, 0..synth_cfg.pairs))?;
    let mut splits = BTreeMap::new();
    if holdout > 0 {
        write_manifest(&data.join("cd-test-ood.jsonl"), &ds.manifest(Split::CdTestOod, &data, synth_cfg.pairs..total.pairs))?;
        splits.insert(Split::CdTestOod.as_str().to_owned(), PathBuf::from("data/cd-test-ood.jsonl"));
    }
    let cfg = RunConfig {
        seed: synth_cfg.seed,
        output_dir: "run".into(),
        data: DataConfig { embeddings: "data/embeddings.txt".into(), train: "data/train.jsonl".into(), splits },
        grid: vmr_core::dataset::GridConfig { snippets: synth_cfg.snippets, frame_interval: 1.0 },
        narrator: NarratorConfig {
            mode: NarratorMode::Fixture,
            fixtures: Some("data/fixtures.jsonl".into()),
            endpoint: None,
            model: "llava-v1.5-13b".into(),
            prompt: None,
            frame_ref_template: None,
            parallelism: 4,
            retries: 3,
            cache_dir: None,
        },
        model: ModelSection { encoder: EncoderConfig { d: 32, heads: 4, ..Default::default() }, ..Default::default() },
        train: vmr_core::training::TrainConfig { epochs, seed: synth_cfg.seed, val_fraction: 0.0, ..Default::default() },
        fusion: Default::default(),
    };
    let path = out.join("config.toml");
    write_text(&path, &cfg.to_toml()?)?;
    Ok(path)
}
