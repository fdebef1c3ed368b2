//! Content-independent square sliding windows.
//!
//! Window sides are fractions of the shorter side of a reference frame (the
//! whole image, or a region selected for zooming). Sides are rounded to whole
//! pixels, grid offsets to the nearest pixel.

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSpec {
    /// Window side as a fraction of the frame's shorter side.
    pub side_ratios: Vec<f64>,
    /// Stride as a fraction of the window side.
    pub step_fraction: f64,
}

impl WindowSpec {
    pub fn new(side_ratios: Vec<f64>, step_fraction: f64) -> Result<Self> {
        let spec = WindowSpec {
            side_ratios,
            step_fraction,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn coarse() -> Self {
        WindowSpec {
            side_ratios: vec![1.0 / 2.0, 1.0 / 4.0],
            step_fraction: 1.0 / 4.0,
        }
    }

    pub fn dense() -> Self {
        WindowSpec {
            side_ratios: vec![1.0 / 2.0, 1.0 / 4.0, 1.0 / 8.0, 1.0 / 16.0],
            step_fraction: 1.0 / 4.0,
        }
    }

    pub fn cover() -> Self {
        WindowSpec {
            side_ratios: vec![1.0 / 4.0],
            step_fraction: 1.0 / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.side_ratios.is_empty() {
            return Err(Error::InvalidWindowSpec("no side ratios".into()));
        }
        let in_unit = |r: f64| r > 0.0 && r <= 1.0;
        if let Some(r) = self.side_ratios.iter().find(|r| !in_unit(**r)) {
            return Err(Error::InvalidWindowSpec(format!(
                "side ratio {r} outside (0, 1]"
            )));
        }
        if !in_unit(self.step_fraction) {
            return Err(Error::InvalidWindowSpec(format!(
                "step fraction {} outside (0, 1]",
                self.step_fraction
            )));
        }
        Ok(())
    }
}

/// Rectangle in which windows are laid out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Frame {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Result<Self> {
        BBox::from_origin(x, y, width, height)?;
        Ok(Frame {
            x,
            y,
            width,
            height,
        })
    }

    pub fn image(width: f64, height: f64) -> Result<Self> {
        Frame::new(0.0, 0.0, width, height)
    }

    pub fn from_box(b: &BBox) -> Self {
        Frame {
            x: b.x1(),
            y: b.y1(),
            width: b.width(),
            height: b.height(),
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox::from_origin(self.x, self.y, self.width, self.height)
            .expect("frame has positive extent")
    }

    pub fn shorter_side(&self) -> f64 {
        self.width.min(self.height)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowOptions {
    /// Add a window flush against the far edge when the grid stops short of it.
    pub flush_edges: bool,
    /// Windows smaller than this many pixels are not emitted.
    pub min_side: f64,
}

impl Default for WindowOptions {
    fn default() -> Self {
        WindowOptions {
            flush_edges: true,
            min_side: 8.0,
        }
    }
}

/// Integer window side for `ratio` in `frame`, or `None` when below the minimum.
pub fn window_side(frame: &Frame, ratio: f64, opts: &WindowOptions) -> Option<f64> {
    let shorter = frame.shorter_side();
    let side = (ratio * shorter).round().min(shorter.floor());
    (side >= opts.min_side && side >= 1.0).then_some(side)
}

/// Offsets (relative to the frame origin) of windows of `side` along an axis of
/// `length` pixels.
fn axis_offsets(length: f64, side: f64, stride: f64, flush: bool) -> Vec<f64> {
    let last = length - side;
    let mut offsets = Vec::new();
    let mut i = 0usize;
    loop {
        let raw = i as f64 * stride;
        if raw > last + 1e-9 {
            break;
        }
        let off = raw.round().min(last);
        if offsets.last() != Some(&off) {
            offsets.push(off);
        }
        i += 1;
    }
    if flush && offsets.last().is_some_and(|&o| o < last) {
        offsets.push(last);
    }
    offsets
}

pub fn sliding_windows(frame: &Frame, spec: &WindowSpec) -> Result<Vec<BBox>> {
    sliding_windows_with(frame, spec, &WindowOptions::default())
}

/// Windows for every ratio of `spec`, ordered by ratio (descending), then row,
/// then column. Duplicate boxes are emitted once.
pub fn sliding_windows_with(
    frame: &Frame,
    spec: &WindowSpec,
    opts: &WindowOptions,
) -> Result<Vec<BBox>> {
    spec.validate()?;
    let mut ratios = spec.side_ratios.clone();
    ratios.sort_by(|a, b| b.total_cmp(a));
    ratios.dedup();

    let mut windows: Vec<BBox> = Vec::new();
    let mut seen_sides: Vec<f64> = Vec::new();
    for ratio in ratios {
        let Some(side) = window_side(frame, ratio, opts) else {
            continue;
        };
        // distinct ratios can round to one side; those grids coincide
        if seen_sides.contains(&side) {
            continue;
        }
        seen_sides.push(side);
        let stride = spec.step_fraction * side;
        let xs = axis_offsets(frame.width, side, stride, opts.flush_edges);
        let ys = axis_offsets(frame.height, side, stride, opts.flush_edges);
        for &oy in &ys {
            for &ox in &xs {
                let (x, y) = (frame.x + ox, frame.y + oy);
                windows.push(BBox::new(x, y, x + side, y + side)?);
            }
        }
    }
    if windows.is_empty() {
        return Err(Error::EmptyResult {
            width: frame.width,
            height: frame.height,
            min_side: opts.min_side,
        });
    }
    Ok(windows)
}

/// Squares of 1/2 and 1/4 of the shorter side, stride 1/4 of the side.
pub fn coarse_windows(image: &Frame) -> Result<Vec<BBox>> {
    sliding_windows(image, &WindowSpec::coarse())
}

/// Coarse windows supplemented by 1/8 and 1/16 squares.
pub fn dense_windows(image: &Frame) -> Result<Vec<BBox>> {
    sliding_windows(image, &WindowSpec::dense())
}

/// Zoom candidates: squares of 1/4 of the shorter side, stride half the side.
pub fn cover_regions(image: &Frame) -> Result<Vec<BBox>> {
    sliding_windows(image, &WindowSpec::cover())
}
