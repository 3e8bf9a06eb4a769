//! Batch command surface: configuration parsing plus the command bodies
//! behind the `qtrack` binary.
//!
//! Every command reads one flat key = value configuration file (all keys
//! optional, all defaults documented in [`RunConfig::schema`]) plus repeated
//! `--set key=value` overrides. Commands are deterministic given the same
//! configuration and seed and overwrite their outputs in place.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::events::{load_trackml_event, save_trackml_event, synth_event, Event, SynthConfig};
use crate::graphs::{
    aggregate_stats, build_graph, graph_stats, load_graph, save_graph, select_hits, CutConfig,
    EventGraph,
};
use crate::model::{count_params, GnnParams, ModelVariant};
use crate::train::{
    evaluate, summarize, train_kfold, write_metrics_csv, write_summary_json, TrainConfig,
};

/// One configuration key: name, default, documentation.
struct Key {
    name: &'static str,
    default: &'static str,
    doc: &'static str,
}

const SCHEMA: &[Key] = &[
    Key { name: "out_dir", default: "out", doc: "output directory for all artifacts" },
    Key { name: "data_dir", default: "data", doc: "input directory of TrackML CSV triplets (ingest)" },
    Key { name: "variant", default: "upgraded_cgnn", doc: "model variant: original_cgnn | original_qgnn | upgraded_cgnn | upgraded_qgnn | parallel_qgnn" },
    Key { name: "seed", default: "0", doc: "master random seed" },
    Key { name: "events", default: "60", doc: "number of events to generate (synth)" },
    Key { name: "mu", default: "8", doc: "pileup: simultaneous vertices per event (synth)" },
    Key { name: "synth.tracks_min", default: "2", doc: "minimum tracks per vertex" },
    Key { name: "synth.tracks_max", default: "4", doc: "maximum tracks per vertex" },
    Key { name: "synth.vertex_z_spread", default: "35.0", doc: "vertex z standard deviation [mm]" },
    Key { name: "synth.pt_min", default: "1.0", doc: "minimum generated transverse momentum [GeV]" },
    Key { name: "synth.pt_max", default: "5.0", doc: "maximum generated transverse momentum [GeV]" },
    Key { name: "synth.noise_fraction", default: "0.0", doc: "fraction of hits that are noise" },
    Key { name: "synth.field", default: "2.0", doc: "solenoid field [T]" },
    Key { name: "cuts.geometry", default: "synth", doc: "layer table: synth | trackml" },
    Key { name: "cuts.pt_min", default: "1.0", doc: "selection pT cut [GeV]" },
    Key { name: "cuts.phi_slope_max", default: "1.2e-3", doc: "|dphi/dr| cut on segment candidates" },
    Key { name: "cuts.z0_max", default: "100.0", doc: "|z0| cut on segment candidates [mm]" },
    Key { name: "train.learning_rate", default: "0.01", doc: "Adam learning rate" },
    Key { name: "train.epochs", default: "10", doc: "training epochs per fold" },
    Key { name: "train.k_folds", default: "5", doc: "cross-validation folds" },
    Key { name: "train.threshold", default: "0.5", doc: "classification threshold" },
    Key { name: "threads", default: "0", doc: "worker threads; 0 = all available cores" },
];

/// Flat key-value run configuration with validated keys.
#[derive(Clone, Debug)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: SCHEMA
                .iter()
                .map(|k| (k.name.to_string(), k.default.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    /// Render the documented key table (used by `qtrack config`).
    pub fn schema() -> String {
        let mut out = String::new();
        for k in SCHEMA {
            out.push_str(&format!("{:<24} {:<14} {}\n", k.name, k.default, k.doc));
        }
        out
    }

    /// Parse a `key = value` file; '#' starts a comment, blank lines skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut config = RunConfig::default();
        for (lineno, raw) in body.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected 'key = value', got '{line}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Apply one `key=value` override, rejecting unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !SCHEMA.iter().any(|k| k.name == key) {
            return Err(Error::Config(format!("unknown configuration key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{pair}' is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| {
            panic!("key '{key}' missing from schema");
        })
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .parse()
            .map_err(|e| Error::Config(format!("key '{key}': {e}")))
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir"))
    }

    pub fn variant(&self) -> Result<ModelVariant> {
        ModelVariant::parse(self.get("variant"))
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let config = SynthConfig {
            tracks_per_vertex: (self.parse("synth.tracks_min")?, self.parse("synth.tracks_max")?),
            vertex_z_spread: self.parse("synth.vertex_z_spread")?,
            pt_range: (self.parse("synth.pt_min")?, self.parse("synth.pt_max")?),
            noise_hit_fraction: self.parse("synth.noise_fraction")?,
            magnetic_field: self.parse("synth.field")?,
            seed: self.parse("seed")?,
            ..SynthConfig::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn cut_config(&self) -> Result<CutConfig> {
        let base = match self.get("cuts.geometry") {
            "synth" => CutConfig::for_synth(),
            "trackml" => CutConfig::default(),
            other => {
                return Err(Error::Config(format!(
                    "cuts.geometry must be 'synth' or 'trackml', got '{other}'"
                )))
            }
        };
        let cuts = CutConfig {
            pt_min: self.parse("cuts.pt_min")?,
            phi_slope_max: self.parse("cuts.phi_slope_max")?,
            z0_max: self.parse("cuts.z0_max")?,
            ..base
        };
        cuts.validate()?;
        Ok(cuts)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            variant: self.variant()?,
            learning_rate: self.parse("train.learning_rate")?,
            epochs: self.parse("train.epochs")?,
            k_folds: self.parse("train.k_folds")?,
            threshold: self.parse("train.threshold")?,
            seed: self.parse("seed")?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn threads(&self) -> Result<usize> {
        self.parse("threads")
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

/// Enumerate event stems (`event%09d`) under a directory by their hits files.
fn event_stems(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut stems: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_suffix("-hits.csv").map(str::to_string)
        })
        .collect();
    stems.sort();
    Ok(stems)
}

/// Generate `events` synthetic events into `<out_dir>/events`.
pub fn cmd_synth(config: &RunConfig) -> Result<String> {
    let synth = config.synth_config()?;
    let mu: usize = config.parse("mu")?;
    let n_events: usize = config.parse("events")?;
    let dir = config.out_dir().join("events");
    ensure_dir(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(synth.seed);
    let mut n_hits = 0usize;
    for i in 0..n_events {
        let mut event = synth_event(&synth, mu, &mut rng)?;
        event.event_id = i as u64;
        n_hits += event.hits.len();
        save_trackml_event(&event, &dir)?;
    }
    Ok(format!(
        "synth: wrote {n_events} events ({n_hits} hits) to {}",
        dir.display()
    ))
}

/// Re-serialize TrackML CSV triplets from `data_dir` into the canonical
/// schema under `<out_dir>/events`.
pub fn cmd_ingest(config: &RunConfig) -> Result<String> {
    let data_dir = PathBuf::from(config.get("data_dir"));
    let stems = event_stems(&data_dir)?;
    if stems.is_empty() {
        return Err(Error::Ingest(format!(
            "no event hits files found in {}",
            data_dir.display()
        )));
    }
    let dir = config.out_dir().join("events");
    ensure_dir(&dir)?;
    let mut n_hits = 0usize;
    for stem in &stems {
        let event = load_trackml_event(
            data_dir.join(format!("{stem}-hits.csv")),
            data_dir.join(format!("{stem}-truth.csv")),
            data_dir.join(format!("{stem}-particles.csv")),
        )?;
        n_hits += event.hits.len();
        save_trackml_event(&event, &dir)?;
    }
    Ok(format!(
        "ingest: wrote {} events ({n_hits} hits) to {}",
        stems.len(),
        dir.display()
    ))
}

fn load_events(dir: &Path) -> Result<Vec<Event>> {
    let stems = event_stems(dir)?;
    stems
        .iter()
        .map(|stem| {
            let mut event = load_trackml_event(
                dir.join(format!("{stem}-hits.csv")),
                dir.join(format!("{stem}-truth.csv")),
                dir.join(format!("{stem}-particles.csv")),
            )?;
            // Recover the event number from the `event%09d` stem so graph
            // files keep one-to-one names with their source events.
            if let Ok(id) = stem.trim_start_matches("event").parse() {
                event.event_id = id;
            }
            Ok(event)
        })
        .collect()
}

/// Build one graph per event under `<out_dir>/graphs` plus stats JSON.
pub fn cmd_build_graphs(config: &RunConfig) -> Result<String> {
    let events = load_events(&config.out_dir().join("events"))?;
    if events.is_empty() {
        return Err(Error::Config(
            "no events found; run synth or ingest first".into(),
        ));
    }
    let cuts = config.cut_config()?;
    let dir = config.out_dir().join("graphs");
    ensure_dir(&dir)?;
    let graphs: Vec<(String, EventGraph)> = events
        .par_iter()
        .map(|event| {
            let graph = build_graph(&select_hits(event, &cuts), &cuts)?;
            Ok((format!("event{:09}", event.event_id), graph))
        })
        .collect::<Result<_>>()?;
    let stats: Vec<_> = graphs.iter().map(|(_, g)| graph_stats(g)).collect();
    for (stem, graph) in &graphs {
        save_graph(graph, &dir, stem)?;
    }
    let agg = aggregate_stats(&stats);
    let body = serde_json::to_string_pretty(&agg)
        .map_err(|e| Error::Numerical(format!("stats encode: {e}")))?;
    let stats_path = dir.join("stats.json");
    fs::write(&stats_path, &body).map_err(|e| Error::io(stats_path.display().to_string(), e))?;
    Ok(format!(
        "build-graphs: {} graphs to {}\n  nodes {:.1} +- {:.1}, edges {:.1} +- {:.1}, truth fraction {:.3} +- {:.3}",
        graphs.len(),
        dir.display(),
        agg.nodes_mean,
        agg.nodes_std,
        agg.edges_mean,
        agg.edges_std,
        agg.truth_fraction_mean,
        agg.truth_fraction_std,
    ))
}

fn load_graphs(dir: &Path) -> Result<Vec<EventGraph>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut stems: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_suffix("-nodes.csv").map(str::to_string)
        })
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(Error::Config(format!(
            "no graphs found in {}; run build-graphs first",
            dir.display()
        )));
    }
    stems.iter().map(|stem| load_graph(dir, stem)).collect()
}

/// K-fold training: fold checkpoints, metrics CSV, and a summary JSON
/// under `<out_dir>/train-<variant>`.
pub fn cmd_train(config: &RunConfig) -> Result<String> {
    let train_config = config.train_config()?;
    let graphs = load_graphs(&config.out_dir().join("graphs"))?;
    let dir = config
        .out_dir()
        .join(format!("train-{}", train_config.variant.name()));
    ensure_dir(&dir)?;
    let (folds, records) = train_kfold(&graphs, &train_config)?;
    for fold in &folds {
        fold.params.save(dir.join(format!("fold{}.json", fold.fold)))?;
    }
    write_metrics_csv(&records, dir.join("metrics.csv"))?;
    let summary = summarize(train_config.variant, &folds);
    write_summary_json(&summary, dir.join("summary.json"))?;
    Ok(format!(
        "train: {} folds on {} graphs; val accuracy {:.4} +- {:.4}; artifacts in {}",
        folds.len(),
        graphs.len(),
        summary.mean["accuracy"],
        summary.std["accuracy"],
        dir.display()
    ))
}

/// Score a checkpoint against every graph in `<out_dir>/graphs`.
pub fn cmd_evaluate(config: &RunConfig, checkpoint: &Path) -> Result<String> {
    let variant = config.variant()?;
    let params = GnnParams::load(checkpoint)?;
    if params.variant != variant {
        return Err(Error::Config(format!(
            "checkpoint {} holds variant {}, configuration selects {}",
            checkpoint.display(),
            params.variant.name(),
            variant.name()
        )));
    }
    let graphs = load_graphs(&config.out_dir().join("graphs"))?;
    let refs: Vec<&EventGraph> = graphs.iter().collect();
    let threshold: f64 = config.parse("train.threshold")?;
    let (loss, metrics) = evaluate(&refs, &params, threshold)?;
    let doc = serde_json::json!({
        "variant": variant.name(),
        "checkpoint": checkpoint.display().to_string(),
        "events": graphs.len(),
        "loss": loss,
        "accuracy": metrics.accuracy,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "specificity": metrics.specificity,
        "undefined_metrics": metrics.undefined,
    });
    let path = config.out_dir().join("evaluate.json");
    let body = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Numerical(format!("evaluate encode: {e}")))?;
    fs::write(&path, &body).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(format!(
        "evaluate: {} events, loss {loss:.4}, accuracy {:.4}, precision {:.4}, recall {:.4}, specificity {:.4}",
        graphs.len(),
        metrics.accuracy,
        metrics.precision,
        metrics.recall,
        metrics.specificity
    ))
}

/// Merge per-variant training summaries into one comparison table
/// (`<out_dir>/report.csv`): one row per variant, mean +- std columns, plus
/// trainable parameter counts.
pub fn cmd_report(config: &RunConfig) -> Result<String> {
    let out_dir = config.out_dir();
    let mut rows = Vec::new();
    for variant in ModelVariant::ALL {
        let path = out_dir.join(format!("train-{}", variant.name())).join("summary.json");
        if !path.exists() {
            continue;
        }
        let body =
            fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let summary: crate::train::Summary = serde_json::from_str(&body)
            .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
        let (n_classical, n_quantum) = count_params(variant);
        rows.push((variant, summary, n_classical, n_quantum));
    }
    if rows.is_empty() {
        return Err(Error::Config(format!(
            "no training summaries under {}; run train first",
            out_dir.display()
        )));
    }
    let path = out_dir.join("report.csv");
    let mut body = String::from(
        "model,accuracy_mean,accuracy_std,precision_mean,precision_std,recall_mean,recall_std,specificity_mean,specificity_std,n_classical,n_quantum\n",
    );
    for (variant, s, n_classical, n_quantum) in &rows {
        body.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{},{}\n",
            variant.name(),
            s.mean["accuracy"],
            s.std["accuracy"],
            s.mean["precision"],
            s.std["precision"],
            s.mean["recall"],
            s.std["recall"],
            s.mean["specificity"],
            s.std["specificity"],
            n_classical,
            n_quantum,
        ));
    }
    fs::write(&path, &body).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(format!(
        "report: {} variants to {}\n{body}",
        rows.len(),
        path.display()
    ))
}
