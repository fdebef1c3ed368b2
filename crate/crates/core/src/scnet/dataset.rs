//! Training RoIs for one image: sliding windows at every scale the pipeline
//! evaluates, windows inside zoom candidates, and jittered object boxes.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::labels::make_labels;
use super::train::{TrainingImage, TrainingSample};
use crate::error::Result;
use crate::features::{roi_pool, FeatureImage};
use crate::geometry::{BBox, OverlapThresholds};
use crate::windows::{
    coarse_windows, cover_regions, dense_windows, sliding_windows, Frame, WindowSpec,
};

#[derive(Clone, Debug, PartialEq)]
pub struct RoiSampling {
    /// Jittered copies per object box.
    pub jitters_per_object: usize,
    /// Each corner moves by up to this fraction of the box side.
    pub jitter: f64,
    /// Unlabeled windows kept per image; labeled windows are always kept.
    pub negatives: usize,
    pub thresholds: OverlapThresholds,
}

impl Default for RoiSampling {
    fn default() -> Self {
        RoiSampling {
            jitters_per_object: 4,
            jitter: 0.25,
            negatives: 320,
            thresholds: OverlapThresholds::default(),
        }
    }
}

fn jittered(rng: &mut ChaCha8Rng, gt: &BBox, amount: f64, image: &BBox) -> Option<BBox> {
    let (w, h) = (gt.width(), gt.height());
    let mut j = |v: f64, side: f64| v + rng.random_range(-amount..=amount) * side;
    let b = BBox::new(j(gt.x1(), w), j(gt.y1(), h), j(gt.x2(), w), j(gt.y2(), h)).ok()?;
    b.clip_to(image)
}

/// Candidate RoIs for an image, before labeling.
pub fn training_rois(
    image: &Frame,
    gts: &[BBox],
    sampling: &RoiSampling,
    seed: u64,
) -> Result<Vec<BBox>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = image.bbox();
    let mut candidates = coarse_windows(image)?;
    let cover = cover_regions(image)?;
    candidates.extend(cover.iter().copied());
    // windows the zoom branch would evaluate inside each cover region
    for region in &cover {
        if let Ok(w) = sliding_windows(&Frame::from_box(region), &WindowSpec::coarse()) {
            candidates.extend(w);
        }
    }
    candidates.extend(dense_windows(image)?);

    let (labeled, unlabeled): (Vec<BBox>, Vec<BBox>) = candidates.into_iter().partition(|roi| {
        let l = make_labels(roi, gts, sampling.thresholds);
        l.zoom_label || l.assigned_pattern().is_some()
    });
    let mut rois = labeled;
    let keep = sampling.negatives.min(unlabeled.len());
    let mut picked: Vec<usize> = sample(&mut rng, unlabeled.len(), keep).into_vec();
    picked.sort_unstable();
    rois.extend(picked.into_iter().map(|i| unlabeled[i]));

    for gt in gts {
        rois.push(*gt);
        for _ in 0..sampling.jitters_per_object {
            if let Some(b) = jittered(&mut rng, gt, sampling.jitter, &bounds) {
                rois.push(b);
            }
        }
    }
    Ok(rois)
}

/// Pools and labels every training RoI of one image.
pub fn build_training_image(
    feat: &FeatureImage,
    image: &Frame,
    gts: &[BBox],
    grid: usize,
    sampling: &RoiSampling,
    seed: u64,
) -> Result<TrainingImage> {
    let rois = training_rois(image, gts, sampling, seed)?;
    let samples = rois
        .iter()
        .map(|roi| {
            Ok(TrainingSample {
                pooled: roi_pool(feat, roi, grid)?.0,
                labels: make_labels(roi, gts, sampling.thresholds),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingImage { samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_scene, render_features, SynthConfig};

    #[test]
    fn rois_cover_labels_and_are_deterministic() {
        let cfg = SynthConfig::default();
        let scene = gen_scene(&cfg, 2, "t").unwrap();
        let frame = scene.frame();
        let gts = scene.gt_boxes();
        let a = training_rois(&frame, &gts, &RoiSampling::default(), 9).unwrap();
        let b = training_rois(&frame, &gts, &RoiSampling::default(), 9).unwrap();
        assert_eq!(a, b);
        let bounds = frame.bbox();
        assert!(a.iter().all(|r| bounds.contains(r)));
        let th = OverlapThresholds::default();
        let labeled = a
            .iter()
            .filter(|r| make_labels(r, &gts, th).assigned_pattern().is_some())
            .count();
        assert!(labeled > gts.len());
        assert!(a.iter().any(|r| make_labels(r, &gts, th).zoom_label));

        let feat = render_features(&scene, 16, 16.0, 0.1, 1).unwrap();
        let img = build_training_image(&feat, &frame, &gts, 4, &RoiSampling::default(), 9).unwrap();
        assert_eq!(img.samples.len(), a.len());
        assert!(img.samples.iter().all(|s| s.pooled.len() == 256));
    }
}
