use crate::geometry::{
    classify_overlap_pattern, iou, roi_relative_corners, BBox, CornerDeltas, OverlapThresholds,
    PatternIndex,
};

/// A RoI is worth zooming when it contains an object smaller than this
/// fraction of its area.
pub const ZOOM_AREA_FRACTION: f64 = 0.1;

/// Training targets for one RoI.
#[derive(Clone, Debug, PartialEq)]
pub struct ScNetLabels {
    pub zoom_label: bool,
    pub conf_labels: Vec<bool>,
    pub delta_targets: Vec<CornerDeltas>,
    /// 1 for the assigned pattern, 0 elsewhere.
    pub delta_weights: Vec<f64>,
}

impl ScNetLabels {
    pub fn empty(patterns: usize) -> Self {
        ScNetLabels {
            zoom_label: false,
            conf_labels: vec![false; patterns],
            delta_targets: vec![CornerDeltas::default(); patterns],
            delta_weights: vec![0.0; patterns],
        }
    }

    pub fn assigned_pattern(&self) -> Option<PatternIndex> {
        self.delta_weights
            .iter()
            .position(|&w| w > 0.0)
            .and_then(PatternIndex::new)
    }
}

/// True when some object lies inside `roi` and covers less than a tenth of it.
pub fn zoom_label(roi: &BBox, gts: &[BBox]) -> bool {
    gts.iter()
        .any(|g| roi.contains(g) && g.area() < ZOOM_AREA_FRACTION * roi.area())
}

/// Labels `roi` against its best-overlapping object.
pub fn make_labels(roi: &BBox, gts: &[BBox], thresholds: OverlapThresholds) -> ScNetLabels {
    let mut labels = ScNetLabels::empty(PatternIndex::COUNT);
    labels.zoom_label = zoom_label(roi, gts);

    let best = gts
        .iter()
        .map(|g| (iou(roi, g), g))
        .fold(None::<(f64, &BBox)>, |acc, cur| match acc {
            Some(a) if a.0 >= cur.0 => Some(a),
            _ => Some(cur),
        });
    if let Some((_, gt)) = best {
        if let Some(p) = classify_overlap_pattern(roi, gt, thresholds) {
            let k = p.value();
            labels.conf_labels[k] = true;
            labels.delta_targets[k] = roi_relative_corners(roi, gt);
            labels.delta_weights[k] = 1.0;
        }
    }
    labels
}
