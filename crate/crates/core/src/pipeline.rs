//! Zoom-in proposal pipeline.
//!
//! 1. Set A: a proposer over the whole image (coarse or dense sliding
//!    windows, or boxes supplied from a file).
//! 2. Every cover region is pooled and scored by the network; regions whose
//!    zoom indicator clears the threshold are kept, best first, up to a cap.
//! 3. Set B: sliding windows laid out inside each kept region, sized
//!    relative to the region.
//! 4. Every RoI of A ∪ B is scored; each pattern whose confidence clears the
//!    threshold yields a predicted box (set C), clipped to the image.
//! 5. Near-identical predictions are collapsed, keeping the higher score.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::{roi_pool_into, FeatureImage};
use crate::geometry::{apply_deltas, iou, BBox, PatternIndex};
use crate::io::write_csv;
use crate::scnet::{ScNetModel, ScNetOutput};
use crate::windows::{sliding_windows_with, Frame, WindowOptions, WindowSpec};

#[derive(Clone, Debug, PartialEq)]
pub enum Proposer {
    CoarseSliding,
    DenseSliding,
    /// Precomputed boxes for set A; set B falls back to coarse windows.
    External(Vec<BBox>),
}

impl Proposer {
    fn spec(&self) -> WindowSpec {
        match self {
            Proposer::DenseSliding => WindowSpec::dense(),
            _ => WindowSpec::coarse(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub zoom_threshold: f64,
    pub conf_threshold: f64,
    pub max_zoom_regions: usize,
    pub proposer: Proposer,
    pub pool_grid: usize,
    pub dedupe_iou: f64,
    pub zoom_enabled: bool,
    pub windows: WindowOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            zoom_threshold: 0.5,
            conf_threshold: 0.001,
            max_zoom_regions: 8,
            proposer: Proposer::CoarseSliding,
            pool_grid: 4,
            dedupe_iou: 0.95,
            zoom_enabled: true,
            windows: WindowOptions::default(),
        }
    }
}

impl PipelineConfig {
    /// Dense sliding windows with prediction and no zoom branch.
    pub fn dense() -> Self {
        PipelineConfig {
            proposer: Proposer::DenseSliding,
            zoom_enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("zoom threshold", self.zoom_threshold),
            ("confidence threshold", self.conf_threshold),
            ("dedupe iou", self.dedupe_iou),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("{name} {t} outside [0, 1]")));
            }
        }
        if self.pool_grid == 0 {
            return Err(Error::Config("pooling grid must be positive".into()));
        }
        Ok(())
    }
}

/// Which input set the RoI behind a proposal came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Coarse,
    Zoom,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Coarse => "A-coarse",
            Provenance::Zoom => "B-zoom",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A-coarse" => Ok(Provenance::Coarse),
            "B-zoom" => Ok(Provenance::Zoom),
            other => Err(Error::Config(format!("unknown provenance {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
    pub provenance: Provenance,
    pub pattern: PatternIndex,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CostCounters {
    pub windows_generated: u64,
    pub rois_pooled: u64,
    pub scnet_evaluations: u64,
    pub zoom_regions_selected: u64,
}

impl std::ops::AddAssign for CostCounters {
    fn add_assign(&mut self, o: Self) {
        self.windows_generated += o.windows_generated;
        self.rois_pooled += o.rois_pooled;
        self.scnet_evaluations += o.scnet_evaluations;
        self.zoom_regions_selected += o.zoom_regions_selected;
    }
}

/// Network outputs for every RoI of A ∪ B; thresholds are applied later.
#[derive(Clone, Debug)]
pub struct Evaluated {
    pub image: BBox,
    pub rois: Vec<(BBox, Provenance, ScNetOutput)>,
    /// Selected zoom regions with their zoom indicator, best first.
    pub zoom_regions: Vec<(BBox, f64)>,
    pub counters: CostCounters,
}

#[derive(Clone, Debug)]
pub struct Proposals {
    pub boxes: Vec<ScoredBox>,
    pub counters: CostCounters,
    pub zoom_regions: Vec<(BBox, f64)>,
}

/// `p` mapped to logit space, so that `sigmoid(z) >= p` iff `z >= logit(p)`.
fn logit(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        (p / (1.0 - p)).ln()
    }
}

struct Scorer<'a> {
    feat: &'a FeatureImage,
    model: &'a ScNetModel,
    grid: usize,
    buf: Vec<f32>,
    counters: CostCounters,
}

impl Scorer<'_> {
    fn score(&mut self, roi: &BBox) -> Result<ScNetOutput> {
        roi_pool_into(self.feat, roi, self.grid, &mut self.buf)?;
        self.counters.rois_pooled += 1;
        let out = self.model.forward(&self.buf)?;
        self.counters.scnet_evaluations += 1;
        Ok(out)
    }
}

/// Runs the network over cover regions and A ∪ B.
pub fn evaluate(
    feat: &FeatureImage,
    image: &Frame,
    model: &ScNetModel,
    cfg: &PipelineConfig,
) -> Result<Evaluated> {
    cfg.validate()?;
    let pooled = feat.channels() * cfg.pool_grid * cfg.pool_grid;
    if model.input_dim() != pooled {
        return Err(Error::ModelMismatch {
            model: model.input_dim(),
            pooled,
        });
    }
    let bounds = image.bbox();
    let mut scorer = Scorer {
        feat,
        model,
        grid: cfg.pool_grid,
        buf: vec![0.0; pooled],
        counters: CostCounters::default(),
    };

    let set_a: Vec<BBox> = match &cfg.proposer {
        Proposer::External(boxes) => boxes.iter().filter_map(|b| b.clip_to(&bounds)).collect(),
        p => {
            let w = sliding_windows_with(image, &p.spec(), &cfg.windows)?;
            scorer.counters.windows_generated += w.len() as u64;
            w
        }
    };

    let mut zoom_regions = Vec::new();
    if cfg.zoom_enabled {
        let cover = sliding_windows_with(image, &WindowSpec::cover(), &cfg.windows)?;
        scorer.counters.windows_generated += cover.len() as u64;
        let gate = logit(cfg.zoom_threshold);
        let mut scored = Vec::with_capacity(cover.len());
        for region in &cover {
            let z = scorer.score(region)?.zoom_logit;
            if z >= gate {
                scored.push((*region, z));
            }
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(cfg.max_zoom_regions);
        zoom_regions = scored
            .into_iter()
            .map(|(r, z)| (r, crate::scnet::sigmoid(z)))
            .collect();
    }
    scorer.counters.zoom_regions_selected = zoom_regions.len() as u64;

    let mut inputs: Vec<(BBox, Provenance)> =
        set_a.into_iter().map(|b| (b, Provenance::Coarse)).collect();
    let spec = cfg.proposer.spec();
    for (region, _) in &zoom_regions {
        // regions too small for any window contribute nothing
        if let Ok(w) = sliding_windows_with(&Frame::from_box(region), &spec, &cfg.windows) {
            scorer.counters.windows_generated += w.len() as u64;
            inputs.extend(w.into_iter().map(|b| (b, Provenance::Zoom)));
        }
    }
    // A ∪ B as a set, first occurrence wins
    let mut seen = std::collections::HashSet::with_capacity(inputs.len());
    inputs.retain(|(b, _)| seen.insert(b.corners().map(f64::to_bits)));

    let mut rois = Vec::with_capacity(inputs.len());
    for (roi, prov) in inputs {
        let out = scorer.score(&roi)?;
        rois.push((roi, prov, out));
    }
    Ok(Evaluated {
        image: bounds,
        rois,
        zoom_regions,
        counters: scorer.counters,
    })
}

/// Every prediction whose confidence reaches `conf_threshold`, before dedupe.
pub fn predictions(ev: &Evaluated, conf_threshold: f64) -> Vec<ScoredBox> {
    let gate = logit(conf_threshold);
    let mut out = Vec::new();
    for (roi, prov, net) in &ev.rois {
        for (k, &z) in net.conf_logits.iter().enumerate() {
            if z < gate {
                continue;
            }
            let Ok(pred) = apply_deltas(roi, &net.corner_deltas(k)) else {
                continue;
            };
            if let Some(bbox) = pred.clip_to(&ev.image) {
                out.push(ScoredBox {
                    bbox,
                    score: net.confidence(k),
                    provenance: *prov,
                    pattern: PatternIndex::new(k).unwrap_or(PatternIndex::IDEAL),
                });
            }
        }
    }
    out
}

/// Greedy suppression of boxes overlapping a higher-scored box by more than
/// `max_iou`. Ties keep emission order.
pub fn dedupe(mut boxes: Vec<ScoredBox>, max_iou: f64) -> Vec<ScoredBox> {
    boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
    if max_iou >= 1.0 {
        return boxes;
    }
    // iou > t forces |center offset| < (1 - t) / t * side of either box
    let reach = if max_iou > 0.0 {
        (1.0 - max_iou) / max_iou
    } else {
        f64::INFINITY
    };
    const CELL: f64 = 32.0;
    let cell = |v: f64| (v / CELL).floor() as i64;
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut kept: Vec<ScoredBox> = Vec::new();
    for b in boxes {
        let (cx, cy) = b.bbox.center();
        let (rx, ry) = (reach * b.bbox.width() + 1e-6, reach * b.bbox.height() + 1e-6);
        let cells = (2.0 * rx / CELL + 2.0) * (2.0 * ry / CELL + 2.0);
        let suppressed = if !(cells <= kept.len() as f64) {
            kept.iter().any(|k| iou(&k.bbox, &b.bbox) > max_iou)
        } else {
            let (gx0, gx1, gy0, gy1) = (cell(cx - rx), cell(cx + rx), cell(cy - ry), cell(cy + ry));
            (gy0..=gy1).any(|gy| {
                (gx0..=gx1).any(|gx| {
                    grid.get(&(gx, gy))
                        .is_some_and(|ids| ids.iter().any(|&i| iou(&kept[i].bbox, &b.bbox) > max_iou))
                })
            })
        };
        if !suppressed {
            grid.entry((cell(cx), cell(cy))).or_default().push(kept.len());
            kept.push(b);
        }
    }
    kept
}

pub fn emit(ev: &Evaluated, conf_threshold: f64, dedupe_iou: f64) -> Vec<ScoredBox> {
    dedupe(predictions(ev, conf_threshold), dedupe_iou)
}

pub fn propose(
    feat: &FeatureImage,
    image: &Frame,
    model: &ScNetModel,
    cfg: &PipelineConfig,
) -> Result<Proposals> {
    let ev = evaluate(feat, image, model, cfg)?;
    Ok(Proposals {
        boxes: emit(&ev, cfg.conf_threshold, cfg.dedupe_iou),
        counters: ev.counters,
        zoom_regions: ev.zoom_regions,
    })
}

/// Box prediction over dense sliding windows of the whole image, no zoom branch.
pub fn dense_baseline(
    feat: &FeatureImage,
    image: &Frame,
    model: &ScNetModel,
    cfg: &PipelineConfig,
) -> Result<Proposals> {
    let cfg = PipelineConfig {
        proposer: Proposer::DenseSliding,
        zoom_enabled: false,
        ..cfg.clone()
    };
    propose(feat, image, model, &cfg)
}

/// `image_id,x1,y1,x2,y2,score,provenance`
pub fn write_proposals<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = (&'a str, &'a ScoredBox)>,
) -> Result<()> {
    write_csv(path, |w| {
        w.write_record(["image_id", "x1", "y1", "x2", "y2", "score", "provenance"])?;
        for (id, b) in rows {
            let [x1, y1, x2, y2] = b.bbox.corners();
            w.write_record([
                id.to_string(),
                x1.to_string(),
                y1.to_string(),
                x2.to_string(),
                y2.to_string(),
                b.score.to_string(),
                b.provenance.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Reads `image_id,x1,y1,x2,y2[,...]` rows grouped by image. Extra columns
/// such as score and provenance are ignored.
pub fn read_boxes_csv(path: &Path) -> Result<BTreeMap<String, Vec<BBox>>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(path, format!("missing column {name}")))
    };
    let cols = [col("image_id")?, col("x1")?, col("y1")?, col("x2")?, col("y2")?];
    let mut out: BTreeMap<String, Vec<BBox>> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let num = |i: usize| -> Result<f64> {
            record[cols[i]]
                .trim()
                .parse()
                .map_err(|e| Error::format(path, format!("row {}: {e}", line + 2)))
        };
        let b = BBox::new(num(1)?, num(2)?, num(3)?, num(4)?)
            .map_err(|e| Error::format(path, format!("row {}: {e}", line + 2)))?;
        out.entry(record[cols[0]].to_string()).or_default().push(b);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sb(x1: f64, y1: f64, x2: f64, y2: f64, score: f64) -> ScoredBox {
        ScoredBox {
            bbox: BBox::new(x1, y1, x2, y2).unwrap(),
            score,
            provenance: Provenance::Coarse,
            pattern: PatternIndex::IDEAL,
        }
    }

    fn brute_dedupe(mut boxes: Vec<ScoredBox>, t: f64) -> Vec<ScoredBox> {
        boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
        let mut kept: Vec<ScoredBox> = Vec::new();
        for b in boxes {
            if kept.iter().all(|k| iou(&k.bbox, &b.bbox) <= t) {
                kept.push(b);
            }
        }
        kept
    }

    #[test]
    fn dedupe_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for t in [0.3, 0.5, 0.8, 0.95, 0.0, 1.0] {
            let mut boxes = Vec::new();
            for _ in 0..300 {
                let x = rng.random_range(0.0..400.0);
                let y = rng.random_range(0.0..400.0);
                let w = rng.random_range(5.0..120.0);
                let h = rng.random_range(5.0..120.0);
                boxes.push(sb(x, y, x + w, y + h, rng.random_range(0.0..1.0)));
                // near-duplicates
                let j = rng.random_range(-2.0..2.0);
                boxes.push(sb(x + j, y, x + w + j, y + h, rng.random_range(0.0..1.0)));
            }
            assert_eq!(dedupe(boxes.clone(), t), brute_dedupe(boxes, t), "t = {t}");
        }
    }

    #[test]
    fn dedupe_keeps_higher_score() {
        let out = dedupe(
            vec![sb(0.0, 0.0, 100.0, 100.0, 0.2), sb(0.0, 0.0, 100.0, 101.0, 0.9)],
            0.95,
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);
    }

    #[test]
    fn logit_gate() {
        assert_eq!(logit(1.0), f64::INFINITY);
        assert_eq!(logit(0.0), f64::NEG_INFINITY);
        assert!((crate::scnet::sigmoid(logit(0.3)) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn provenance_text() {
        for p in [Provenance::Coarse, Provenance::Zoom] {
            assert_eq!(p.to_string().parse::<Provenance>().unwrap(), p);
        }
    }
}
