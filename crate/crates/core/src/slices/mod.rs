//! Montage segmentation and per-slice geometry.

pub mod contour;
pub mod dbscan;
pub mod mask;

use serde::{Deserialize, Serialize};

pub use contour::{detect_contours, ventricle_region, Contour};
pub use dbscan::{cluster_activations, Cluster, DbscanParams};
pub use mask::PixelMask;

use crate::error::{Error, Result};
use crate::raster::{Grid, RgbImage};

/// Luminance above which a montage pixel counts as brain rather than background.
pub const FOREGROUND_LUMA: f64 = 12.0;
/// Minimum foreground fraction for a tile to be kept as a slice.
pub const MIN_FOREGROUND_FRACTION: f64 = 0.05;
/// Components smaller than this fraction of the largest one are ignored by
/// automatic segmentation.
const MIN_COMPONENT_RATIO: f64 = 0.2;
const SUPPRESS_WINDOW: usize = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct BrainSlice {
    /// Montage position, row-major, 0-based.
    pub index: usize,
    pub pixels: RgbImage,
    pub gray: Grid<f64>,
    /// Top-left corner in the montage.
    pub origin: (usize, usize),
}

impl BrainSlice {
    pub fn new(index: usize, pixels: RgbImage, origin: (usize, usize)) -> Self {
        let gray = pixels.luminance();
        Self {
            index,
            pixels,
            gray,
            origin,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dims()
    }

    pub fn foreground_fraction(&self) -> f64 {
        foreground_fraction(&self.gray)
    }
}

/// Which end of the montage holds the slices near the base of the brain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasalEnd {
    #[default]
    Last,
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SliceConfig {
    /// Red-dominance margin on the unit intensity scale.
    pub activation_delta: f64,
    pub dbscan: DbscanParams,
    pub basal_end: BasalEnd,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            activation_delta: 40.0 / 255.0,
            dbscan: DbscanParams::default(),
            basal_end: BasalEnd::Last,
        }
    }
}

impl SliceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.activation_delta) {
            return Err(Error::arg(format!(
                "activation delta must lie in [0, 1), got {}",
                self.activation_delta
            )));
        }
        self.dbscan.validate()
    }
}

fn foreground_fraction(gray: &Grid<f64>) -> f64 {
    if gray.data.is_empty() {
        return 0.0;
    }
    let n = gray.data.iter().filter(|&&v| v > FOREGROUND_LUMA).count();
    n as f64 / gray.data.len() as f64
}

/// Splits a montage into brain slices.
///
/// With a `(rows, cols)` layout the image is tiled exactly (any remainder
/// pixels on the right and bottom edges are dropped). Without one, slices are
/// found from connected foreground regions. Tiles with too little foreground
/// are skipped in both modes.
pub fn extract_slices(image: &RgbImage, layout: Option<(usize, usize)>) -> Result<Vec<BrainSlice>> {
    let (h, w) = image.dims();
    if h == 0 || w == 0 {
        return Err(Error::arg("cannot extract slices from an empty image"));
    }
    let boxes = match layout {
        Some((rows, cols)) => grid_boxes(h, w, rows, cols)?,
        None => auto_boxes(&image.luminance()),
    };
    Ok(boxes
        .into_iter()
        .enumerate()
        .map(|(i, (r0, c0, bh, bw))| BrainSlice::new(i, image.crop((r0, c0), bh, bw), (r0, c0)))
        .filter(|s| s.foreground_fraction() > MIN_FOREGROUND_FRACTION)
        .collect())
}

type BBox = (usize, usize, usize, usize);

fn grid_boxes(h: usize, w: usize, rows: usize, cols: usize) -> Result<Vec<BBox>> {
    if rows == 0 || cols == 0 || rows > h || cols > w {
        return Err(Error::arg(format!(
            "montage layout {rows}x{cols} does not fit a {h}x{w} image"
        )));
    }
    let (th, tw) = (h / rows, w / cols);
    Ok((0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r * th, c * tw, th, tw)))
        .collect())
}

/// Inclusive bounding boxes `(r0, c0, r1, c1)` of 8-connected foreground regions.
fn foreground_components(gray: &Grid<f64>) -> Vec<((usize, usize, usize, usize), usize)> {
    let (h, w) = (gray.height, gray.width);
    let fg: Vec<bool> = gray.data.iter().map(|&v| v > FOREGROUND_LUMA).collect();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !fg[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        let mut size = 0;
        while let Some(p) = stack.pop() {
            let (r, c) = (p / w, p % w);
            size += 1;
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let q = rr * w + cc;
                    if fg[q] && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        out.push(((r0, c0, r1, c1), size));
    }
    out
}

/// Midpoints between consecutive `[lo, hi]` extents, with the outer edges at
/// `0` and `limit`.
fn split_points(extents: &[(usize, usize)], limit: usize) -> Vec<(usize, usize)> {
    let n = extents.len();
    (0..n)
        .map(|i| {
            let lo = if i == 0 {
                0
            } else {
                (extents[i - 1].1 + 1 + extents[i].0).div_ceil(2)
            };
            let hi = if i + 1 == n {
                limit
            } else {
                (extents[i].1 + 1 + extents[i + 1].0).div_ceil(2)
            };
            (lo, hi.max(lo + 1).min(limit))
        })
        .collect()
}

fn auto_boxes(gray: &Grid<f64>) -> Vec<BBox> {
    let comps = foreground_components(gray);
    let Some(largest) = comps.iter().map(|c| c.1).max() else {
        return Vec::new();
    };
    let mut boxes: Vec<(usize, usize, usize, usize)> = comps
        .into_iter()
        .filter(|c| c.1 as f64 >= MIN_COMPONENT_RATIO * largest as f64)
        .map(|c| c.0)
        .collect();
    boxes.sort_by_key(|b| (b.0, b.1));

    // Rows are runs of boxes whose vertical extents overlap.
    let mut rows: Vec<(usize, usize, Vec<(usize, usize, usize, usize)>)> = Vec::new();
    for b in boxes {
        match rows.last_mut() {
            Some(row) if b.0 <= row.1 => {
                row.1 = row.1.max(b.2);
                row.2.push(b);
            }
            _ => rows.push((b.0, b.2, vec![b])),
        }
    }
    let row_spans = split_points(
        &rows.iter().map(|r| (r.0, r.1)).collect::<Vec<_>>(),
        gray.height,
    );
    let mut out = Vec::new();
    for ((_, _, mut members), (top, bottom)) in rows.into_iter().zip(row_spans) {
        members.sort_by_key(|b| b.1);
        let cols = split_points(
            &members.iter().map(|b| (b.1, b.3)).collect::<Vec<_>>(),
            gray.width,
        );
        for (left, right) in cols {
            out.push((top, left, bottom - top, right - left));
        }
    }
    out
}

/// Margin on the 8-bit scale, snapped so that e.g. `40/255` maps to exactly 40.
fn delta_8bit(delta: f64) -> f64 {
    (delta * 255.0 * 1e6).round() / 1e6
}

/// Pixels where the overlay colour dominates: `R > G + δ` and `R > B + δ`.
pub fn activation_mask(slice: &BrainSlice, delta: f64) -> PixelMask {
    let d = delta_8bit(delta);
    let (h, w) = slice.dims();
    PixelMask::from_fn(h, w, |r, c| {
        let [red, g, b] = slice.pixels.get(r, c).map(f64::from);
        red > g + d && red > b + d
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Luminance with activation pixels replaced by the median of the
/// non-activation pixels in their 11x11 window.
///
/// When a window holds no non-activation pixel the global median of the
/// non-activation pixels is used, or of all pixels if the whole slice is
/// activation.
pub fn suppress_activation(slice: &BrainSlice, activation: &PixelMask) -> Grid<f64> {
    let gray = &slice.gray;
    let (h, w) = (gray.height, gray.width);
    let mut out = gray.clone();
    if activation.is_empty() {
        return out;
    }
    let mut background: Vec<f64> = (0..h * w)
        .filter(|&p| !activation.bits()[p])
        .map(|p| gray.data[p])
        .collect();
    let fallback = if background.is_empty() {
        median(&mut gray.data.clone())
    } else {
        median(&mut background)
    };
    let half = SUPPRESS_WINDOW / 2;
    let mut window = Vec::with_capacity(SUPPRESS_WINDOW * SUPPRESS_WINDOW);
    for (r, c) in activation.points() {
        window.clear();
        for rr in r.saturating_sub(half)..=(r + half).min(h - 1) {
            for cc in c.saturating_sub(half)..=(c + half).min(w - 1) {
                if !activation.contains(rr, cc) {
                    window.push(gray.get(rr, cc));
                }
            }
        }
        let v = if window.is_empty() {
            fallback
        } else {
            median(&mut window)
        };
        out.set(r, c, v);
    }
    out
}

/// Flags the last (or first) `ceil(n / 3)` of `n` slices as basal.
pub fn basal_flags(n: usize, end: BasalEnd) -> Vec<bool> {
    let k = n.div_ceil(3);
    (0..n)
        .map(|i| match end {
            BasalEnd::Last => i >= n - k,
            BasalEnd::First => i < k,
        })
        .collect()
}

/// Everything the feature extractor needs from one slice.
#[derive(Debug, Clone)]
pub struct SliceGeometry {
    pub index: usize,
    pub activation: PixelMask,
    pub contours: Vec<Contour>,
    pub ventricle: PixelMask,
    pub clusters: Vec<Cluster>,
}

pub fn analyze_slice(slice: &BrainSlice, basal: bool, cfg: &SliceConfig) -> Result<SliceGeometry> {
    let activation = activation_mask(slice, cfg.activation_delta);
    let contours = detect_contours(&suppress_activation(slice, &activation));
    let ventricle = ventricle_region(slice.dims(), &contours, basal);
    let mut clusters = cluster_activations(&activation, cfg.dbscan)?;
    for c in &mut clusters {
        c.slice_index = slice.index;
    }
    Ok(SliceGeometry {
        index: slice.index,
        activation,
        contours,
        ventricle,
        clusters,
    })
}

/// Debug rendering: grayscale slice with activation in red, contours in
/// green and the ventricle region in blue.
pub fn render_overlay(slice: &BrainSlice, geom: &SliceGeometry) -> RgbImage {
    let (h, w) = slice.dims();
    let mut img = RgbImage::new(h, w);
    for r in 0..h {
        for c in 0..w {
            let v = slice.gray.get(r, c).round().clamp(0.0, 255.0) as u8;
            img.put(r, c, [v, v, v]);
        }
    }
    for (r, c) in geom.ventricle.points() {
        img.put(r, c, [0, 0, 255]);
    }
    for (r, c) in geom.activation.points() {
        img.put(r, c, [255, 0, 0]);
    }
    for contour in &geom.contours {
        for &(r, c) in &contour.points {
            img.put(r, c, [0, 255, 0]);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_montage(rows: usize, cols: usize, th: usize, tw: usize) -> RgbImage {
        let mut img = RgbImage::new(rows * th, cols * tw);
        for i in 0..rows {
            for j in 0..cols {
                let (cy, cx) = ((i * th) as f64 + th as f64 / 2.0, (j * tw) as f64 + tw as f64 / 2.0);
                for r in i * th..(i + 1) * th {
                    for c in j * tw..(j + 1) * tw {
                        let dy = (r as f64 + 0.5 - cy) / (0.42 * th as f64);
                        let dx = (c as f64 + 0.5 - cx) / (0.42 * tw as f64);
                        if dy * dy + dx * dx <= 1.0 {
                            img.put(r, c, [90, 90, 90]);
                        }
                    }
                }
            }
        }
        img
    }

    #[test]
    fn grid_tiling_is_row_major() {
        let img = disk_montage(5, 6, 45, 47);
        let s = extract_slices(&img, Some((5, 6))).unwrap();
        assert_eq!(s.len(), 30);
        assert_eq!(s[7].index, 7);
        assert_eq!(s[7].origin, (45, 47));
        assert_eq!(s[7].dims(), (45, 47));
    }

    #[test]
    fn black_image_has_no_slices() {
        let img = RgbImage::new(60, 60);
        assert!(extract_slices(&img, None).unwrap().is_empty());
    }

    #[test]
    fn auto_segmentation_recovers_grid() {
        let img = disk_montage(3, 4, 40, 50);
        let auto = extract_slices(&img, None).unwrap();
        let grid = extract_slices(&img, Some((3, 4))).unwrap();
        assert_eq!(auto.len(), 12);
        for (a, g) in auto.iter().zip(&grid) {
            assert!(a.origin.0.abs_diff(g.origin.0) <= 1 && a.origin.1.abs_diff(g.origin.1) <= 1);
        }
    }

    #[test]
    fn oversized_layout_rejected() {
        let img = RgbImage::new(10, 10);
        assert!(extract_slices(&img, Some((11, 1))).is_err());
        assert!(extract_slices(&img, Some((0, 2))).is_err());
    }

    #[test]
    fn grayscale_has_no_activation() {
        let s = BrainSlice::new(0, RgbImage::filled(20, 20, [200, 200, 200]), (0, 0));
        assert!(activation_mask(&s, 40.0 / 255.0).is_empty());
        let red = BrainSlice::new(0, RgbImage::filled(20, 20, [255, 0, 0]), (0, 0));
        assert_eq!(activation_mask(&red, 40.0 / 255.0).count(), 400);
    }

    #[test]
    fn delta_is_strict() {
        let s = BrainSlice::new(0, RgbImage::filled(2, 2, [140, 100, 100]), (0, 0));
        assert!(activation_mask(&s, 40.0 / 255.0).is_empty());
        let s = BrainSlice::new(0, RgbImage::filled(2, 2, [141, 100, 100]), (0, 0));
        assert_eq!(activation_mask(&s, 40.0 / 255.0).count(), 4);
    }

    #[test]
    fn suppression_without_activation_is_identity() {
        let s = BrainSlice::new(0, disk_montage(1, 1, 30, 30), (0, 0));
        let m = PixelMask::empty(30, 30);
        assert_eq!(suppress_activation(&s, &m), s.gray);
    }

    #[test]
    fn all_activation_uses_global_median() {
        let mut img = RgbImage::filled(5, 5, [255, 0, 0]);
        img.put(0, 0, [255, 100, 0]);
        let s = BrainSlice::new(0, img, (0, 0));
        let m = PixelMask::from_fn(5, 5, |_, _| true);
        let out = suppress_activation(&s, &m);
        let mut all = s.gray.data.clone();
        let med = median(&mut all);
        assert!(out.data.iter().all(|&v| v == med));
    }

    #[test]
    fn suppression_fills_from_neighbourhood() {
        let mut img = RgbImage::filled(15, 15, [80, 80, 80]);
        for r in 6..9 {
            for c in 6..9 {
                img.put(r, c, [255, 40, 0]);
            }
        }
        let s = BrainSlice::new(0, img, (0, 0));
        let m = activation_mask(&s, 40.0 / 255.0);
        assert_eq!(m.count(), 9);
        let out = suppress_activation(&s, &m);
        assert!(out.data.iter().all(|&v| (v - 80.0).abs() < 1e-9));
    }

    #[test]
    fn basal_tail() {
        assert_eq!(
            basal_flags(7, BasalEnd::Last),
            [false, false, false, false, true, true, true]
        );
        assert_eq!(basal_flags(3, BasalEnd::First), [true, false, false]);
        assert!(basal_flags(0, BasalEnd::Last).is_empty());
    }
}
