//! Command-line driver: `gen`, `train`, `propose`, `eval`, `sweep`.
//!
//! Every command reads a flat `key = value` configuration. Values come from
//! built-in defaults, then an optional `--config` file, then `--key value`
//! flags. The effective configuration is printed before the command runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{recall_with, sweep, write_curve, EvalImage, Strategy, SweepOptions};
use crate::features::{load_features, save_features, FeatureImage};
use crate::geometry::OverlapThresholds;
use crate::io::{write_atomic, write_csv};
use crate::pipeline::{
    dense_baseline, propose, read_boxes_csv, write_proposals, CostCounters, PipelineConfig,
    Proposer, ScoredBox,
};
use crate::scnet::{
    build_training_image, load_model, save_model, train, write_loss_history, LossWeights,
    RoiSampling, ScNetConfig, TrainingImage,
};
use crate::synth::{derive_seed, gen_scene, read_annotations, render_features, write_annotations, Scene, SynthConfig};
use crate::windows::WindowOptions;

/// `(key, default, description)`
const KEYS: &[(&str, &str, &str)] = &[
    ("data-dir", "data", "dataset directory"),
    ("count", "200", "scenes to generate"),
    ("seed", "0", "generation seed"),
    ("width-min", "2400", "image width range"),
    ("width-max", "2400", ""),
    ("height-min", "1800", "image height range"),
    ("height-max", "1800", ""),
    ("clusters-min", "1", "small-object clusters per scene"),
    ("clusters-max", "3", ""),
    ("objects-per-cluster-min", "2", ""),
    ("objects-per-cluster-max", "5", ""),
    ("large-objects-min", "1", ""),
    ("large-objects-max", "2", ""),
    ("small-side-min", "1/64", "longer side as a fraction of the shorter image side"),
    ("small-side-max", "1/16", ""),
    ("large-side-min", "1/8", ""),
    ("large-side-max", "1/3", ""),
    ("context-radius", "0.06", "cluster radius as a fraction of the shorter side"),
    ("noise-sigma", "0.1", "feature noise"),
    ("max-retries", "200", "placement attempts per object"),
    ("channels", "16", "feature channels"),
    ("stride", "16", "image pixels per feature cell"),
    ("model", "run/model.scnt", "model file"),
    ("loss-csv", "run/loss.csv", "training loss history"),
    ("hidden-dim", "64", ""),
    ("learning-rate", "0.01", ""),
    ("momentum", "0.9", ""),
    ("weight-decay", "0.0005", ""),
    ("batch-size", "128", ""),
    ("images-per-batch", "2", ""),
    ("iterations", "2000", ""),
    ("regression-weight", "1", "weight of the box regression loss"),
    ("positive-fraction", "0.25", "minimum share of pattern-labeled RoIs per image draw"),
    ("train-seed", "0", "initialization and sampling seed"),
    ("pool-grid", "4", "RoI pooling grid side"),
    ("jitters-per-object", "4", ""),
    ("jitter", "0.25", ""),
    ("negatives", "320", "unlabeled training windows per image"),
    ("overlap-low", "0.1", ""),
    ("overlap-high", "0.7", ""),
    ("strategy", "zoom", "zoom | dense | external"),
    ("external-proposals", "", "CSV of set A boxes for the external strategy"),
    ("proposals", "run/proposals.csv", "proposal CSV"),
    ("counters", "run/counters.csv", "cost counters CSV"),
    ("zoom-threshold", "0.5", ""),
    ("conf-threshold", "0.001", ""),
    ("max-zoom-regions", "8", ""),
    ("dedupe-iou", "0.95", ""),
    ("recall-csv", "run/recall.csv", "per-image recall"),
    ("iou-min", "0.5", ""),
    ("matching", "existence", "existence | greedy"),
    ("thresholds", "0.9,0.5,0.2,0.1,0.05,0.02,0.01,0.001", "confidence thresholds to sweep"),
    ("strategies", "zoom,scnet-dense,dense-windows", ""),
    ("curve", "run/curve.csv", "sweep output"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS
                .iter()
                .map(|(k, v, _)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

fn normalize_key(key: &str) -> String {
    key.trim().replace('_', "-")
}

fn parse_real(key: &str, raw: &str) -> Result<f64> {
    let bad = || Error::Config(format!("{key}: cannot parse {raw:?} as a number"));
    let v = match raw.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| bad())?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            n / d
        }
        None => raw.trim().parse().map_err(|_| bad())?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        match self.values.get_mut(&key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key {key:?}"))),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format(path, format!("line {}: expected key = value", n + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies `--key value` and `--key=value` pairs.
    pub fn apply_flags(&mut self, flags: &[String]) -> Result<()> {
        let mut it = flags.iter();
        while let Some(flag) = it.next() {
            let Some(body) = flag.strip_prefix("--") else {
                return Err(Error::Config(format!("expected --key, got {flag:?}")));
            };
            match body.split_once('=') {
                Some((k, v)) => self.set(k, v)?,
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| Error::Config(format!("--{body} needs a value")))?;
                    self.set(body, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("undeclared config key {key}"))
    }

    pub fn real(&self, key: &str) -> Result<f64> {
        parse_real(key, self.get(key))
    }

    pub fn uint<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key);
        raw.parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse {raw:?} as a non-negative integer")))
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.get(key))
    }

    /// `key = value` lines in key order.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let cfg = SynthConfig {
            width: (self.uint("width-min")?, self.uint("width-max")?),
            height: (self.uint("height-min")?, self.uint("height-max")?),
            clusters: (self.uint("clusters-min")?, self.uint("clusters-max")?),
            objects_per_cluster: (
                self.uint("objects-per-cluster-min")?,
                self.uint("objects-per-cluster-max")?,
            ),
            large_objects: (self.uint("large-objects-min")?, self.uint("large-objects-max")?),
            small_side: (self.real("small-side-min")?, self.real("small-side-max")?),
            large_side: (self.real("large-side-min")?, self.real("large-side-max")?),
            context_radius: self.real("context-radius")?,
            noise_sigma: self.real("noise-sigma")?,
            max_retries: self.uint("max-retries")?,
            seed: self.uint("seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn thresholds(&self) -> Result<OverlapThresholds> {
        Ok(OverlapThresholds {
            low: self.real("overlap-low")?,
            high: self.real("overlap-high")?,
        })
    }

    pub fn sampling(&self) -> Result<RoiSampling> {
        Ok(RoiSampling {
            jitters_per_object: self.uint("jitters-per-object")?,
            jitter: self.real("jitter")?,
            negatives: self.uint("negatives")?,
            thresholds: self.thresholds()?,
        })
    }

    pub fn scnet(&self, channels: usize) -> Result<ScNetConfig> {
        let g: usize = self.uint("pool-grid")?;
        let cfg = ScNetConfig {
            input_dim: channels * g * g,
            hidden_dim: self.uint("hidden-dim")?,
            learning_rate: self.real("learning-rate")?,
            momentum: self.real("momentum")?,
            weight_decay: self.real("weight-decay")?,
            batch_size: self.uint("batch-size")?,
            images_per_batch: self.uint("images-per-batch")?,
            iterations: self.uint("iterations")?,
            loss_weights: LossWeights {
                regression: self.real("regression-weight")?,
            },
            positive_fraction: self.real("positive-fraction")?,
            seed: self.uint("train-seed")?,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let cfg = PipelineConfig {
            zoom_threshold: self.real("zoom-threshold")?,
            conf_threshold: self.real("conf-threshold")?,
            max_zoom_regions: self.uint("max-zoom-regions")?,
            proposer: Proposer::CoarseSliding,
            pool_grid: self.uint("pool-grid")?,
            dedupe_iou: self.real("dedupe-iou")?,
            zoom_enabled: true,
            windows: WindowOptions::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sweep_options(&self) -> Result<SweepOptions> {
        Ok(SweepOptions {
            iou_min: self.real("iou-min")?,
            matching: self.get("matching").parse()?,
        })
    }

    fn list<T>(&self, key: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse(s).map_err(|e| Error::Config(format!("{key}: {e}"))))
            .collect()
    }
}

/// Contents of `manifest.json` in a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub count: usize,
    pub channels: usize,
    pub stride: f32,
    pub ids: Vec<String>,
}

pub fn feature_path(data_dir: &Path, id: &str) -> PathBuf {
    data_dir.join("features").join(format!("{id}.fimg"))
}

/// Scenes of a dataset directory with their feature images, in annotation order.
pub fn load_dataset(data_dir: &Path) -> Result<Vec<(Scene, FeatureImage)>> {
    let scenes = read_annotations(&data_dir.join("annotations.jsonl"))?;
    scenes
        .into_par_iter()
        .map(|s| {
            let f = load_features(feature_path(data_dir, &s.image_id))?;
            Ok((s, f))
        })
        .collect()
}

fn eval_images(data: Vec<(Scene, FeatureImage)>) -> Vec<EvalImage> {
    data.into_iter()
        .map(|(s, feat)| EvalImage {
            id: s.image_id.clone(),
            frame: s.frame(),
            gts: s.gt_boxes(),
            feat,
        })
        .collect()
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<()> {
    let synth = cfg.synth()?;
    let count: usize = cfg.uint("count")?;
    let channels: usize = cfg.uint("channels")?;
    let stride = cfg.real("stride")? as f32;
    let dir = cfg.path("data-dir");
    let ids: Vec<String> = (0..count).map(|i| format!("scene-{i:05}")).collect();
    let scenes = ids
        .par_iter()
        .enumerate()
        .map(|(i, id)| {
            let scene = gen_scene(&synth, derive_seed(synth.seed, i as u64), id.clone())?;
            let feat = render_features(
                &scene,
                channels,
                stride,
                synth.noise_sigma,
                derive_seed(synth.seed ^ 0x6665_6174, i as u64),
            )?;
            save_features(&feat, feature_path(&dir, id))?;
            Ok(scene)
        })
        .collect::<Result<Vec<_>>>()?;
    write_annotations(&scenes, &dir.join("annotations.jsonl"))?;
    let manifest = Manifest {
        seed: synth.seed,
        count,
        channels,
        stride,
        ids,
    };
    let path = dir.join("manifest.json");
    let mut json = serde_json::to_vec_pretty(&manifest).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    json.push(b'\n');
    write_atomic(&path, &json)?;
    println!("wrote {count} scenes to {}", dir.display());
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(&cfg.path("data-dir"))?;
    let channels = match data.first() {
        Some((_, f)) => f.channels(),
        None => cfg.uint("channels")?,
    };
    let scnet = cfg.scnet(channels)?;
    let sampling = cfg.sampling()?;
    let grid: usize = cfg.uint("pool-grid")?;
    let images = data
        .par_iter()
        .enumerate()
        .map(|(i, (scene, feat))| {
            build_training_image(
                feat,
                &scene.frame(),
                &scene.gt_boxes(),
                grid,
                &sampling,
                derive_seed(scnet.seed, i as u64),
            )
        })
        .collect::<Result<Vec<TrainingImage>>>()?;
    drop(data);
    let out = train(&images, &scnet)?;
    save_model(&out.model, cfg.path("model"))?;
    write_loss_history(&out.loss_history, cfg.path("loss-csv"))?;
    if let (Some(first), Some(last)) = (out.loss_history.first(), out.loss_history.last()) {
        println!("loss {first:.4} -> {last:.4} over {} iterations", out.loss_history.len());
    }
    Ok(())
}

fn write_counters(path: &Path, rows: &[(String, CostCounters)]) -> Result<()> {
    let mut total = CostCounters::default();
    write_csv(path, |w| {
        w.write_record([
            "image_id",
            "windows_generated",
            "rois_pooled",
            "scnet_evaluations",
            "zoom_regions_selected",
        ])?;
        for (id, c) in rows {
            total += *c;
            w.write_record([
                id.clone(),
                c.windows_generated.to_string(),
                c.rois_pooled.to_string(),
                c.scnet_evaluations.to_string(),
                c.zoom_regions_selected.to_string(),
            ])?;
        }
        w.write_record([
            "total".to_string(),
            total.windows_generated.to_string(),
            total.rois_pooled.to_string(),
            total.scnet_evaluations.to_string(),
            total.zoom_regions_selected.to_string(),
        ])?;
        Ok(())
    })
}

pub fn cmd_propose(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(&cfg.path("data-dir"))?;
    let model = load_model(cfg.path("model"))?;
    let base = cfg.pipeline()?;
    let strategy = cfg.get("strategy").to_string();
    let external = match strategy.as_str() {
        "external" => {
            let p = cfg.path("external-proposals");
            if p.as_os_str().is_empty() {
                return Err(Error::Config("external-proposals: required for the external strategy".into()));
            }
            Some(read_boxes_csv(&p)?)
        }
        "zoom" | "dense" => None,
        other => return Err(Error::Config(format!("strategy: unknown value {other:?}"))),
    };
    let results = data
        .par_iter()
        .map(|(scene, feat)| {
            let frame = scene.frame();
            let out = match (&external, strategy.as_str()) {
                (Some(ext), _) => {
                    let boxes = ext.get(&scene.image_id).cloned().unwrap_or_default();
                    let pc = PipelineConfig {
                        proposer: Proposer::External(boxes),
                        ..base.clone()
                    };
                    propose(feat, &frame, &model, &pc)?
                }
                (None, "dense") => dense_baseline(feat, &frame, &model, &base)?,
                _ => propose(feat, &frame, &model, &base)?,
            };
            Ok((scene.image_id.clone(), out.boxes, out.counters))
        })
        .collect::<Result<Vec<(String, Vec<ScoredBox>, CostCounters)>>>()?;
    write_proposals(
        &cfg.path("proposals"),
        results
            .iter()
            .flat_map(|(id, boxes, _)| boxes.iter().map(move |b| (id.as_str(), b))),
    )?;
    let counters: Vec<(String, CostCounters)> =
        results.iter().map(|(id, _, c)| (id.clone(), *c)).collect();
    write_counters(&cfg.path("counters"), &counters)?;
    let n: usize = results.iter().map(|(_, b, _)| b.len()).sum();
    println!("{n} proposals for {} images", results.len());
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let scenes = read_annotations(&cfg.path("data-dir").join("annotations.jsonl"))?;
    let proposals = read_boxes_csv(&cfg.path("proposals"))?;
    let opts = cfg.sweep_options()?;
    let mut rows = Vec::with_capacity(scenes.len());
    for s in &scenes {
        let gts = s.gt_boxes();
        let props = proposals.get(&s.image_id).map(Vec::as_slice).unwrap_or(&[]);
        rows.push((s.image_id.clone(), gts.len(), recall_with(props, &gts, opts.iou_min, opts.matching)));
    }
    write_csv(&cfg.path("recall-csv"), |w| {
        w.write_record(["image_id", "num_gt", "recall"])?;
        for (id, n, r) in &rows {
            w.write_record([id.clone(), n.to_string(), r.to_string()])?;
        }
        Ok(())
    })?;
    let mean = if rows.is_empty() {
        1.0
    } else {
        rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64
    };
    println!("mean recall {mean:.4} over {} images", rows.len());
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    let thresholds = cfg.list("thresholds", |s| parse_real("thresholds", s))?;
    let strategies = cfg.list("strategies", |s| s.parse::<Strategy>())?;
    let base = cfg.pipeline()?;
    let opts = cfg.sweep_options()?;
    let images = eval_images(load_dataset(&cfg.path("data-dir"))?);
    let model = load_model(cfg.path("model"))?;
    let mut points = Vec::new();
    for st in strategies {
        let pts = sweep(&images, &model, &base, st, &thresholds, opts)?;
        for p in &pts {
            println!(
                "{st} threshold {} recall {:.4} rois_pooled {}",
                p.threshold, p.recall, p.cost.rois_pooled
            );
        }
        points.extend(pts);
    }
    write_curve(&points, cfg.path("curve"))
}

#[derive(Parser, Debug)]
#[command(name = "zoomprop", version, about = "Zoom-in object proposals on synthetic scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic scenes and their feature images.
    Gen(CommandArgs),
    /// Train the network on a generated dataset.
    Train(CommandArgs),
    /// Write proposals for every scene of a dataset.
    Propose(CommandArgs),
    /// Per-image recall of a proposal CSV.
    Eval(CommandArgs),
    /// Recall and cost over confidence thresholds.
    Sweep(CommandArgs),
}

#[derive(Args, Debug)]
pub struct CommandArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `--key value` overrides, e.g. `--count 10 --seed 7`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    pub overrides: Vec<String>,
}

impl CommandArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        cfg.apply_flags(&self.overrides)?;
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let (name, args) = match &cli.command {
        Command::Gen(a) => ("gen", a),
        Command::Train(a) => ("train", a),
        Command::Propose(a) => ("propose", a),
        Command::Eval(a) => ("eval", a),
        Command::Sweep(a) => ("sweep", a),
    };
    let cfg = args.resolve()?;
    print!("# zoomprop {name}\n{}", cfg.render());
    match cli.command {
        Command::Gen(_) => cmd_gen(&cfg),
        Command::Train(_) => cmd_train(&cfg),
        Command::Propose(_) => cmd_propose(&cfg),
        Command::Eval(_) => cmd_eval(&cfg),
        Command::Sweep(_) => cmd_sweep(&cfg),
    }
}
