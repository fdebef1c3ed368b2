//! Proposal recall, cost accounting and threshold sweeps.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{roi_pool_into, FeatureImage};
use crate::geometry::{iou, BBox};
use crate::io::write_csv;
use crate::pipeline::{evaluate, predictions, dedupe, CostCounters, PipelineConfig, Proposer};
use crate::scnet::{zoom_label, ScNetModel};
use crate::windows::{cover_regions, dense_windows, Frame};

pub const DEFAULT_IOU_MIN: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matching {
    /// A gt counts when any proposal reaches the overlap.
    #[default]
    Existence,
    /// Each proposal covers at most one gt; pairs are taken by descending IoU.
    Greedy,
}

impl FromStr for Matching {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "existence" => Ok(Matching::Existence),
            "greedy" => Ok(Matching::Greedy),
            other => Err(Error::Config(format!("unknown matching {other:?}"))),
        }
    }
}

impl fmt::Display for Matching {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Matching::Existence => "existence",
            Matching::Greedy => "greedy",
        })
    }
}

/// Fraction of `gts` with a proposal at IoU ≥ `iou_min`; 1.0 when there are no gts.
pub fn recall(proposals: &[BBox], gts: &[BBox], iou_min: f64) -> f64 {
    recall_with(proposals, gts, iou_min, Matching::Existence)
}

pub fn recall_with(proposals: &[BBox], gts: &[BBox], iou_min: f64, matching: Matching) -> f64 {
    if gts.is_empty() {
        return 1.0;
    }
    let hit = match matching {
        Matching::Existence => gts
            .iter()
            .filter(|g| proposals.iter().any(|p| iou(p, g) >= iou_min))
            .count(),
        Matching::Greedy => {
            let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
            for (gi, g) in gts.iter().enumerate() {
                for (pi, p) in proposals.iter().enumerate() {
                    let o = iou(p, g);
                    if o >= iou_min {
                        pairs.push((o, gi, pi));
                    }
                }
            }
            pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut gt_used = vec![false; gts.len()];
            let mut prop_used = vec![false; proposals.len()];
            let mut n = 0;
            for (_, gi, pi) in pairs {
                if !gt_used[gi] && !prop_used[pi] {
                    gt_used[gi] = true;
                    prop_used[pi] = true;
                    n += 1;
                }
            }
            n
        }
    };
    hit as f64 / gts.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Coarse sliding windows plus the zoom branch, with box prediction.
    Zoom,
    /// Dense sliding windows with box prediction, no zoom branch.
    ScNetDense,
    /// Dense sliding windows used directly as proposals.
    DenseWindows,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Zoom, Strategy::ScNetDense, Strategy::DenseWindows];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Zoom => "zoom",
            Strategy::ScNetDense => "scnet-dense",
            Strategy::DenseWindows => "dense-windows",
        }
    }

    /// Pipeline settings for the strategy, keeping thresholds and grid from `base`.
    pub fn pipeline(self, base: &PipelineConfig) -> PipelineConfig {
        match self {
            Strategy::Zoom => PipelineConfig {
                proposer: Proposer::CoarseSliding,
                zoom_enabled: true,
                ..base.clone()
            },
            Strategy::ScNetDense | Strategy::DenseWindows => PipelineConfig {
                proposer: Proposer::DenseSliding,
                zoom_enabled: false,
                ..base.clone()
            },
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// One image of an evaluation set.
#[derive(Clone, Debug)]
pub struct EvalImage {
    pub id: String,
    pub feat: FeatureImage,
    pub frame: Frame,
    pub gts: Vec<BBox>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub strategy: Strategy,
    pub threshold: f64,
    pub recall: f64,
    pub cost: CostCounters,
    pub proposals_emitted: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepOptions {
    pub iou_min: f64,
    pub matching: Matching,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            iou_min: DEFAULT_IOU_MIN,
            matching: Matching::Existence,
        }
    }
}

/// Per-image `(recall, emitted)` for each threshold, plus the image's cost.
fn image_sweep(
    img: &EvalImage,
    model: &ScNetModel,
    cfg: &PipelineConfig,
    strategy: Strategy,
    thresholds: &[f64],
    opts: SweepOptions,
) -> Result<(Vec<(f64, u64)>, CostCounters)> {
    if strategy == Strategy::DenseWindows {
        let windows = dense_windows(&img.frame)?;
        let r = recall_with(&windows, &img.gts, opts.iou_min, opts.matching);
        let cost = CostCounters {
            windows_generated: windows.len() as u64,
            ..Default::default()
        };
        return Ok((vec![(r, windows.len() as u64); thresholds.len()], cost));
    }
    let ev = evaluate(&img.feat, &img.frame, model, &strategy.pipeline(cfg))?;
    let rows = thresholds
        .iter()
        .map(|&t| {
            let boxes: Vec<BBox> = dedupe(predictions(&ev, t), cfg.dedupe_iou)
                .into_iter()
                .map(|b| b.bbox)
                .collect();
            (
                recall_with(&boxes, &img.gts, opts.iou_min, opts.matching),
                boxes.len() as u64,
            )
        })
        .collect();
    Ok((rows, ev.counters))
}

/// Mean recall and summed counters over `images` for each confidence
/// threshold, ordered by descending threshold.
pub fn sweep(
    images: &[EvalImage],
    model: &ScNetModel,
    cfg: &PipelineConfig,
    strategy: Strategy,
    thresholds: &[f64],
    opts: SweepOptions,
) -> Result<Vec<CurvePoint>> {
    if thresholds.is_empty() {
        return Err(Error::Config("sweep needs at least one threshold".into()));
    }
    let mut ts = thresholds.to_vec();
    ts.sort_by(|a, b| b.total_cmp(a));
    let per_image = images
        .par_iter()
        .map(|img| image_sweep(img, model, cfg, strategy, &ts, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut cost = CostCounters::default();
    for (_, c) in &per_image {
        cost += *c;
    }
    let n = images.len().max(1) as f64;
    Ok(ts
        .iter()
        .enumerate()
        .map(|(i, &threshold)| CurvePoint {
            strategy,
            threshold,
            recall: if images.is_empty() {
                1.0
            } else {
                per_image.iter().map(|(rows, _)| rows[i].0).sum::<f64>() / n
            },
            cost,
            proposals_emitted: per_image.iter().map(|(rows, _)| rows[i].1).sum(),
        })
        .collect())
}

/// Cheapest `rois_pooled` among points reaching `target` recall.
pub fn rois_at_recall(points: &[CurvePoint], target: f64) -> Option<u64> {
    points
        .iter()
        .filter(|p| p.recall >= target)
        .map(|p| p.cost.rois_pooled)
        .min()
}

const CURVE_HEADER: [&str; 7] = [
    "strategy",
    "threshold",
    "recall",
    "windows_generated",
    "rois_pooled",
    "scnet_evaluations",
    "proposals_emitted",
];

pub fn write_curve(points: &[CurvePoint], path: impl AsRef<Path>) -> Result<()> {
    write_csv(path.as_ref(), |w| {
        w.write_record(CURVE_HEADER)?;
        for p in points {
            w.write_record([
                p.strategy.to_string(),
                p.threshold.to_string(),
                p.recall.to_string(),
                p.cost.windows_generated.to_string(),
                p.cost.rois_pooled.to_string(),
                p.cost.scnet_evaluations.to_string(),
                p.proposals_emitted.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn read_curve(path: impl AsRef<Path>) -> Result<Vec<CurvePoint>> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    if reader.headers().map_err(csv_err)?.iter().ne(CURVE_HEADER) {
        return Err(Error::format(path, "unexpected curve header"));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |e: String| Error::format(path, format!("row {}: {e}", i + 2));
        let f = |c: usize| rec[c].parse::<f64>().map_err(|e| bad(e.to_string()));
        let u = |c: usize| rec[c].parse::<u64>().map_err(|e| bad(e.to_string()));
        out.push(CurvePoint {
            strategy: rec[0].parse().map_err(|e: Error| bad(e.to_string()))?,
            threshold: f(1)?,
            recall: f(2)?,
            cost: CostCounters {
                windows_generated: u(3)?,
                rois_pooled: u(4)?,
                scnet_evaluations: u(5)?,
                zoom_regions_selected: 0,
            },
            proposals_emitted: u(6)?,
        });
    }
    Ok(out)
}

/// Area under the ROC curve; ties count one half. `None` unless both classes occur.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len().min(labels.len())).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let pos = idx.iter().filter(|&&i| labels[i]).count();
    let neg = idx.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    // rank-sum with average ranks over ties
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let p = pos as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Zoom indicator and zoom label for every cover region of an image.
pub fn zoom_scores(
    img: &EvalImage,
    model: &ScNetModel,
    grid: usize,
) -> Result<Vec<(f64, bool)>> {
    let mut buf = vec![0.0; img.feat.channels() * grid * grid];
    cover_regions(&img.frame)?
        .iter()
        .map(|r| {
            roi_pool_into(&img.feat, r, grid, &mut buf)?;
            Ok((model.forward(&buf)?.zoom(), zoom_label(r, &img.gts)))
        })
        .collect()
}
