//! Synthetic high-resolution scenes and a deterministic stand-in for the
//! convolutional backbone.
//!
//! Scenes hold clusters of small objects (the kind that vanish at low
//! resolution) plus a few large ones. The renderer writes, around every
//! object, an objectness map, the offsets from each cell center to the
//! object's corners and its log-scale, so that both box prediction and zoom
//! indication are learnable from pooled features.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureImage;
use crate::geometry::{iou, BBox};
use crate::io::write_atomic;

/// Channels carrying object information; the rest are noise.
pub const INFORMATIVE_CHANNELS: usize = 6;
/// Features are written for cells within this many object sides of the object center.
pub const NEIGHBORHOOD_SIDES: f64 = 1.5;
const MIN_OBJECT_SIDE: f64 = 8.0;
const MAX_OVERLAP: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Car,
    Person,
}

impl ObjectClass {
    /// Width / height range of the class.
    fn aspect_range(self) -> (f64, f64) {
        match self {
            ObjectClass::Car => (1.3, 1.8),
            ObjectClass::Person => (0.55, 0.8),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Car => "car",
            ObjectClass::Person => "person",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    #[serde(flatten)]
    pub bbox: BBox,
    pub class: ObjectClass,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<SceneObject>,
    pub cluster_centers: Vec<(f64, f64)>,
}

impl Scene {
    pub fn gt_boxes(&self) -> Vec<BBox> {
        self.objects.iter().map(|o| o.bbox).collect()
    }

    pub fn frame(&self) -> crate::windows::Frame {
        crate::windows::Frame::image(self.width as f64, self.height as f64)
            .expect("scene dimensions are positive")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub width: (u32, u32),
    pub height: (u32, u32),
    pub clusters: (usize, usize),
    pub objects_per_cluster: (usize, usize),
    pub large_objects: (usize, usize),
    /// Longer object side as a fraction of the image's shorter side; the
    /// squared side is drawn uniformly.
    pub small_side: (f64, f64),
    pub large_side: (f64, f64),
    /// Radius around a cluster center, as a fraction of the shorter side, in
    /// which the cluster's object centers fall.
    pub context_radius: f64,
    pub noise_sigma: f64,
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: (2400, 2400),
            height: (1800, 1800),
            clusters: (1, 3),
            objects_per_cluster: (2, 5),
            large_objects: (1, 2),
            small_side: (1.0 / 64.0, 1.0 / 16.0),
            large_side: (1.0 / 8.0, 1.0 / 3.0),
            context_radius: 0.06,
            noise_sigma: 0.1,
            max_retries: 200,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("synth: {what}")));
        if self.width.0 == 0 || self.width.0 > self.width.1 {
            return bad("width range is empty");
        }
        if self.height.0 == 0 || self.height.0 > self.height.1 {
            return bad("height range is empty");
        }
        for (name, (lo, hi)) in [
            ("clusters", self.clusters),
            ("objects per cluster", self.objects_per_cluster),
            ("large objects", self.large_objects),
        ] {
            if lo > hi {
                return bad(&format!("{name} range is empty"));
            }
        }
        for (name, (lo, hi)) in [("small side", self.small_side), ("large side", self.large_side)] {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return bad(&format!("{name} range must satisfy 0 < lo <= hi <= 1"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be finite and non-negative");
        }
        if !(self.context_radius >= 0.0) {
            return bad("context radius must be non-negative");
        }
        Ok(())
    }
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Side drawn so that its square is uniform over `[lo^2, hi^2]`.
fn area_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo * lo..=hi * hi).sqrt()
}

fn sample_box(
    rng: &mut ChaCha8Rng,
    center: (f64, f64),
    long_side: f64,
    class: ObjectClass,
) -> Option<BBox> {
    let (lo, hi) = class.aspect_range();
    let aspect = rng.random_range(lo..=hi);
    let (w, h) = if aspect >= 1.0 {
        (long_side, long_side / aspect)
    } else {
        (long_side * aspect, long_side)
    };
    if w < MIN_OBJECT_SIDE || h < MIN_OBJECT_SIDE {
        return None;
    }
    let (x1, y1) = ((center.0 - w / 2.0).round(), (center.1 - h / 2.0).round());
    BBox::new(x1, y1, x1 + w.round(), y1 + h.round()).ok()
}

fn place(
    rng: &mut ChaCha8Rng,
    objects: &mut Vec<SceneObject>,
    image: &BBox,
    retries: usize,
    mut propose: impl FnMut(&mut ChaCha8Rng) -> Option<(BBox, ObjectClass)>,
) -> Result<()> {
    for _ in 0..retries.max(1) {
        let Some((bbox, class)) = propose(rng) else {
            continue;
        };
        if !image.contains(&bbox) || objects.iter().any(|o| iou(&o.bbox, &bbox) > MAX_OVERLAP) {
            continue;
        }
        objects.push(SceneObject { bbox, class });
        return Ok(());
    }
    Err(Error::GenerationFailure(format!(
        "no valid placement after {retries} attempts"
    )))
}

pub fn gen_scene(config: &SynthConfig, seed: u64, image_id: impl Into<String>) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = rng.random_range(config.width.0..=config.width.1);
    let height = rng.random_range(config.height.0..=config.height.1);
    let shorter = width.min(height) as f64;
    let image = BBox::new(0.0, 0.0, width as f64, height as f64)?;
    let class = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.5) {
            ObjectClass::Car
        } else {
            ObjectClass::Person
        }
    };

    let mut objects = Vec::new();
    let mut cluster_centers = Vec::new();
    let n_clusters = rng.random_range(config.clusters.0..=config.clusters.1);
    let radius = config.context_radius * shorter;
    let margin = radius + config.small_side.1 * shorter;
    for _ in 0..n_clusters {
        let cx = rng.random_range(margin.min(width as f64 / 2.0)..=(width as f64 - margin).max(width as f64 / 2.0));
        let cy = rng.random_range(margin.min(height as f64 / 2.0)..=(height as f64 - margin).max(height as f64 / 2.0));
        cluster_centers.push((cx, cy));
        let n = rng.random_range(config.objects_per_cluster.0..=config.objects_per_cluster.1);
        for _ in 0..n {
            place(&mut rng, &mut objects, &image, config.max_retries, |rng| {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let dist = radius * rng.random_range(0.0f64..=1.0).sqrt();
                let side = shorter * area_uniform(rng, config.small_side);
                let cls = class(rng);
                sample_box(rng, (cx + dist * angle.cos(), cy + dist * angle.sin()), side, cls)
                    .map(|b| (b, cls))
            })?;
        }
    }
    let n_large = rng.random_range(config.large_objects.0..=config.large_objects.1);
    for _ in 0..n_large {
        place(&mut rng, &mut objects, &image, config.max_retries, |rng| {
            let side = shorter * area_uniform(rng, config.large_side);
            let center = (
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
            );
            let cls = class(rng);
            sample_box(rng, center, side, cls).map(|b| (b, cls))
        })?;
    }
    Ok(Scene {
        image_id: image_id.into(),
        width,
        height,
        objects,
        cluster_centers,
    })
}

/// Renders the feature image of `scene` at `stride` pixels per cell.
///
/// Every cell whose center lies within [`NEIGHBORHOOD_SIDES`] object sides of
/// an object center (per axis) describes the closest such object:
///
/// - channel 0: objectness, 1 inside the box, `exp(-2 d / side)` at distance `d` outside
/// - channels 1-4: `(corner - cell center) / side` for `x1, y1, x2, y2`, clipped to `[-2, 2]`
/// - channel 5: `ln(side / stride)`
///
/// Gaussian noise of standard deviation `sigma` is added to every value; the
/// noise stream depends only on `seed` and the grid size.
pub fn render_features(
    scene: &Scene,
    channels: usize,
    stride: f32,
    sigma: f64,
    seed: u64,
) -> Result<FeatureImage> {
    if channels < INFORMATIVE_CHANNELS {
        return Err(Error::DimensionMismatch {
            what: "rendered channels",
            expected: INFORMATIVE_CHANNELS,
            actual: channels,
        });
    }
    if !(stride.is_finite() && stride > 0.0) {
        return Err(Error::NonFinite("render stride"));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::NonFinite("render noise sigma"));
    }
    let s = stride as f64;
    let width = (scene.width as f64 / s).ceil() as usize;
    let height = (scene.height as f64 / s).ceil() as usize;
    let mut feat = FeatureImage::zeros(channels, height, width, stride)?;

    // per cell: (distance to box, area, object index) of the closest object
    let mut owner: Vec<Option<(f64, f64, usize)>> = vec![None; width * height];
    for (idx, obj) in scene.objects.iter().enumerate() {
        let b = &obj.bbox;
        let side = b.side();
        let (bx, by) = b.center();
        let reach = NEIGHBORHOOD_SIDES * side;
        let cells = |lo: f64, hi: f64, n: usize| {
            let a = ((lo / s - 0.5).ceil().max(0.0)) as usize;
            let z = ((hi / s - 0.5).floor() + 1.0).clamp(0.0, n as f64) as usize;
            a..z.max(a)
        };
        for y in cells(by - reach, by + reach, height) {
            for x in cells(bx - reach, bx + reach, width) {
                let (cx, cy) = ((x as f64 + 0.5) * s, (y as f64 + 0.5) * s);
                if (cx - bx).abs() > reach || (cy - by).abs() > reach {
                    continue;
                }
                let dx = (b.x1() - cx).max(cx - b.x2()).max(0.0);
                let dy = (b.y1() - cy).max(cy - b.y2()).max(0.0);
                let key = (dx.hypot(dy), b.area(), idx);
                let slot = &mut owner[y * width + x];
                let closer = match slot {
                    None => true,
                    Some(cur) => (key.0, key.1, key.2) < (cur.0, cur.1, cur.2),
                };
                if closer {
                    *slot = Some(key);
                }
            }
        }
    }

    for y in 0..height {
        for x in 0..width {
            let Some((dist, _, idx)) = owner[y * width + x] else {
                continue;
            };
            let b = &scene.objects[idx].bbox;
            let side = b.side();
            let (cx, cy) = ((x as f64 + 0.5) * s, (y as f64 + 0.5) * s);
            let objectness = if dist == 0.0 {
                1.0
            } else {
                (-2.0 * dist / side).exp()
            };
            let off = |v: f64| (v / side).clamp(-2.0, 2.0);
            let values = [
                objectness,
                off(b.x1() - cx),
                off(b.y1() - cy),
                off(b.x2() - cx),
                off(b.y2() - cy),
                (side / s).ln(),
            ];
            for (c, v) in values.into_iter().enumerate() {
                feat.set(c, y, x, v as f32);
            }
        }
    }

    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).map_err(|_| Error::NonFinite("noise sigma"))?;
        for v in feat.data_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    Ok(feat)
}

#[derive(Serialize, Deserialize)]
struct AnnotationLine {
    image_id: String,
    width: u32,
    height: u32,
    boxes: Vec<SceneObject>,
}

/// One JSON object per scene per line.
pub fn write_annotations(scenes: &[Scene], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for scene in scenes {
        let line = AnnotationLine {
            image_id: scene.image_id.clone(),
            width: scene.width,
            height: scene.height,
            boxes: scene.objects.clone(),
        };
        serde_json::to_writer(&mut buf, &line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        buf.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    write_atomic(path, &buf)
}

/// Reads scenes back; cluster bookkeeping is not stored and comes back empty.
pub fn read_annotations(path: &Path) -> Result<Vec<Scene>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut scenes = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: AnnotationLine = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        scenes.push(Scene {
            image_id: parsed.image_id,
            width: parsed.width,
            height: parsed.height,
            objects: parsed.boxes,
            cluster_centers: Vec::new(),
        });
    }
    Ok(scenes)
}
