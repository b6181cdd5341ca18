//! Edge contours: Sobel magnitude, Otsu threshold, 3x3 closing, and
//! Suzuki–Abe border following.

use serde::{Deserialize, Serialize};

use super::mask::PixelMask;
use crate::raster::Grid;

/// Closed 8-connected border chain in slice coordinates `(row, col)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<(usize, usize)>,
    /// True for the border of a hole inside an edge component.
    pub is_hole: bool,
    /// Pixels inside or on the chain.
    pub enclosed_area: usize,
}

impl Contour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_mask(&self, height: usize, width: usize) -> PixelMask {
        PixelMask::from_points(height, width, &self.points)
    }
}

/// Directions counter-clockwise on screen (rows grow downward), starting east.
const DIRS: [(isize, isize); 8] = [
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn dir_index(from: (usize, usize), to: (usize, usize)) -> usize {
    let d = (
        to.0 as isize - from.0 as isize,
        to.1 as isize - from.1 as isize,
    );
    DIRS.iter()
        .position(|&x| x == d)
        .expect("border following only steps between 8-neighbours")
}

/// Rounding to a fixed grid keeps magnitudes bit-identical under a global
/// luminance offset.
#[inline]
fn snap(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Sobel gradient magnitude with replicated borders.
pub fn sobel_magnitude(gray: &Grid<f64>) -> Grid<f64> {
    let (h, w) = (gray.height, gray.width);
    let mut out = Grid::filled(h, w, 0.0);
    if h == 0 || w == 0 {
        return out;
    }
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        gray.get(r, c)
    };
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = (at(r - 1, c + 1) - at(r - 1, c - 1))
                + 2.0 * (at(r, c + 1) - at(r, c - 1))
                + (at(r + 1, c + 1) - at(r + 1, c - 1));
            let gy = (at(r + 1, c - 1) - at(r - 1, c - 1))
                + 2.0 * (at(r + 1, c) - at(r - 1, c))
                + (at(r + 1, c + 1) - at(r - 1, c + 1));
            let (gx, gy) = (snap(gx), snap(gy));
            out.set(r as usize, c as usize, (gx * gx + gy * gy).sqrt());
        }
    }
    out
}

const OTSU_BINS: usize = 256;

/// Otsu split over the nonzero magnitudes; returns the edge mask.
pub fn otsu_edges(magnitude: &Grid<f64>) -> PixelMask {
    let nonzero: Vec<f64> = magnitude.data.iter().copied().filter(|&m| m > 0.0).collect();
    let (h, w) = (magnitude.height, magnitude.width);
    if nonzero.is_empty() {
        return PixelMask::empty(h, w);
    }
    let lo = nonzero.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = nonzero.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return PixelMask::from_fn(h, w, |r, c| magnitude.get(r, c) > 0.0);
    }
    let bin = |m: f64| (((m - lo) / (hi - lo) * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1);

    let mut hist = [0usize; OTSU_BINS];
    for &m in &nonzero {
        hist[bin(m)] += 1;
    }
    let total = nonzero.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &n)| i as f64 * n as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best_k, mut best_var) = (0usize, -1.0);
    for (k, &n) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += n as f64;
        sum0 += k as f64 * n as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best_var {
            best_var = between;
            best_k = k;
        }
    }
    PixelMask::from_fn(h, w, |r, c| {
        let m = magnitude.get(r, c);
        m > 0.0 && bin(m) > best_k
    })
}

/// Suzuki–Abe topological border following over an 8-connected foreground.
pub fn follow_borders(mask: &PixelMask) -> Vec<Contour> {
    let (h, w) = mask.dims();
    let pw = w + 2;
    let mut f = vec![0i32; (h + 2) * pw];
    for (r, c) in mask.points() {
        f[(r + 1) * pw + c + 1] = 1;
    }
    let idx = |p: (usize, usize)| p.0 * pw + p.1;
    let step = |p: (usize, usize), d: usize| {
        (
            (p.0 as isize + DIRS[d].0) as usize,
            (p.1 as isize + DIRS[d].1) as usize,
        )
    };

    let mut contours = Vec::new();
    let mut nbd: i32 = 1;
    for i in 1..=h {
        for j in 1..=w {
            let v = f[idx((i, j))];
            if v == 0 {
                continue;
            }
            let start = (i, j);
            let (from, is_hole) = if v == 1 && f[idx((i, j - 1))] == 0 {
                ((i, j - 1), false)
            } else if v >= 1 && f[idx((i, j + 1))] == 0 {
                ((i, j + 1), true)
            } else {
                continue;
            };
            nbd += 1;

            // Clockwise search for the first foreground neighbour.
            let d0 = dir_index(start, from);
            let first = (0..8)
                .map(|k| (d0 + 8 - k) % 8)
                .map(|d| step(start, d))
                .find(|&p| f[idx(p)] != 0);
            let Some(p1) = first else {
                f[idx(start)] = -nbd;
                contours.push(make_contour(vec![(i - 1, j - 1)], is_hole));
                continue;
            };

            let mut points = Vec::new();
            let mut prev = p1;
            let mut cur = start;
            loop {
                let d = dir_index(cur, prev);
                let mut east_zero = false;
                let mut next = prev;
                for k in 1..=8 {
                    let dd = (d + k) % 8;
                    let p = step(cur, dd);
                    if f[idx(p)] != 0 {
                        next = p;
                        break;
                    }
                    if dd == 0 {
                        east_zero = true;
                    }
                }
                if east_zero {
                    f[idx(cur)] = -nbd;
                } else if f[idx(cur)] == 1 {
                    f[idx(cur)] = nbd;
                }
                points.push((cur.0 - 1, cur.1 - 1));
                if next == start && cur == p1 {
                    break;
                }
                prev = cur;
                cur = next;
            }
            contours.push(make_contour(points, is_hole));
        }
    }
    contours
}

fn make_contour(points: Vec<(usize, usize)>, is_hole: bool) -> Contour {
    let n = points.len();
    let mut twice_area: i64 = 0;
    for k in 0..n {
        let (r0, c0) = points[k];
        let (r1, c1) = points[(k + 1) % n];
        twice_area += c0 as i64 * r1 as i64 - c1 as i64 * r0 as i64;
    }
    let mut distinct = points.clone();
    distinct.sort_unstable();
    distinct.dedup();
    // Pick's theorem: interior + boundary = A + B/2 + 1.
    let area = twice_area.unsigned_abs() as f64 / 2.0;
    let enclosed = (area + distinct.len() as f64 / 2.0 + 1.0).round() as usize;
    Contour {
        points,
        is_hole,
        enclosed_area: enclosed.max(distinct.len()),
    }
}

/// Full contour pipeline on a luminance raster, largest enclosed area first.
pub fn detect_contours(gray: &Grid<f64>) -> Vec<Contour> {
    let edges = otsu_edges(&sobel_magnitude(gray)).close(1);
    let mut contours = follow_borders(&edges);
    contours.sort_by(|a, b| {
        b.enclosed_area
            .cmp(&a.enclosed_area)
            .then(a.is_hole.cmp(&b.is_hole))
            .then(a.points[0].cmp(&b.points[0]))
    });
    contours
}

/// Convex hull (counter-clockwise, no collinear points) of `(row, col)` points.
pub fn convex_hull(points: &[(usize, usize)]) -> Vec<(i64, i64)> {
    let mut pts: Vec<(i64, i64)> = points
        .iter()
        .map(|&(r, c)| (c as i64, r as i64))
        .collect();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Inclusive point-in-convex-polygon test; `hull` as returned by [`convex_hull`].
pub fn hull_contains(hull: &[(i64, i64)], row: usize, col: usize) -> bool {
    if hull.len() < 3 {
        return false;
    }
    let p = (col as i64, row as i64);
    (0..hull.len()).all(|k| {
        let a = hull[k];
        let b = hull[(k + 1) % hull.len()];
        (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= 0
    })
}

/// The chain plus every pixel it encloses, i.e. everything not reachable
/// from outside the image by 4-connected steps that avoid the chain.
pub fn fill_contour(contour: &Contour, height: usize, width: usize) -> PixelMask {
    let (ph, pw) = (height + 2, width + 2);
    let mut wall = vec![false; ph * pw];
    for &(r, c) in &contour.points {
        wall[(r + 1) * pw + c + 1] = true;
    }
    let mut outside = vec![false; ph * pw];
    let mut stack = vec![0usize];
    outside[0] = true;
    while let Some(p) = stack.pop() {
        let (r, c) = (p / pw, p % pw);
        let mut visit = |q: usize| {
            if !wall[q] && !outside[q] {
                outside[q] = true;
                stack.push(q);
            }
        };
        if r > 0 {
            visit(p - pw);
        }
        if r + 1 < ph {
            visit(p + pw);
        }
        if c > 0 {
            visit(p - 1);
        }
        if c + 1 < pw {
            visit(p + 1);
        }
    }
    PixelMask::from_fn(height, width, |r, c| !outside[(r + 1) * pw + c + 1])
}

/// Interior cavity proxy: inside the convex hull of all contour points, but
/// off every contour and everything a contour encloses, widened by one pixel.
/// Empty for non-basal slices.
pub fn ventricle_region(
    dims: (usize, usize),
    contours: &[Contour],
    basal: bool,
) -> PixelMask {
    let (h, w) = dims;
    if !basal || contours.is_empty() {
        return PixelMask::empty(h, w);
    }
    let all: Vec<(usize, usize)> = contours.iter().flat_map(|c| c.points.iter().copied()).collect();
    let hull = convex_hull(&all);
    let mut covered = PixelMask::empty(h, w);
    for c in contours.iter().filter(|c| !c.is_hole) {
        covered.union_with(&fill_contour(c, h, w));
    }
    let band = covered.dilate(1);
    PixelMask::from_fn(h, w, |r, c| !band.contains(r, c) && hull_contains(&hull, r, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_closed_chain(c: &Contour) -> bool {
        let n = c.points.len();
        (0..n).all(|k| {
            let a = c.points[k];
            let b = c.points[(k + 1) % n];
            a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1
        })
    }

    fn ring(h: usize, w: usize, r_in: f64, r_out: f64) -> PixelMask {
        let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
        PixelMask::from_fn(h, w, |r, c| {
            let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
            d >= r_in && d <= r_out
        })
    }

    #[test]
    fn square_has_one_outer_border() {
        let m = PixelMask::from_fn(8, 8, |r, c| (2..6).contains(&r) && (2..6).contains(&c));
        let cs = follow_borders(&m);
        assert_eq!(cs.len(), 1);
        assert!(!cs[0].is_hole);
        assert_eq!(cs[0].points.len(), 12);
        assert_eq!(cs[0].enclosed_area, 16);
        assert!(is_closed_chain(&cs[0]));
    }

    #[test]
    fn annulus_has_outer_and_hole_border() {
        let cs = follow_borders(&ring(30, 30, 6.0, 10.0));
        assert_eq!(cs.len(), 2);
        assert_eq!(cs.iter().filter(|c| c.is_hole).count(), 1);
        assert!(cs.iter().all(is_closed_chain));
    }

    #[test]
    fn isolated_pixel_is_a_single_point_contour() {
        let mut m = PixelMask::empty(5, 5);
        m.insert(2, 2);
        let cs = follow_borders(&m);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].points, [(2, 2)]);
    }

    #[test]
    fn constant_image_has_no_contours() {
        let g = Grid::filled(20, 20, 123.0);
        assert!(detect_contours(&g).is_empty());
    }

    #[test]
    fn nested_rings_order_outer_first() {
        let (h, w) = (60, 60);
        let outer = ring(h, w, 20.0, 24.0);
        let inner = ring(h, w, 6.0, 9.0);
        let g = Grid {
            height: h,
            width: w,
            data: (0..h * w)
                .map(|i| {
                    let (r, c) = (i / w, i % w);
                    if outer.contains(r, c) || inner.contains(r, c) {
                        200.0
                    } else {
                        20.0
                    }
                })
                .collect(),
        };
        let cs = detect_contours(&g);
        assert!(cs.len() >= 2);
        let radius = |c: &Contour| {
            let (sr, sc) = c
                .points
                .iter()
                .fold((0.0, 0.0), |(a, b), &(r, cc)| (a + r as f64, b + cc as f64));
            let n = c.points.len() as f64;
            let (cy, cx) = (sr / n, sc / n);
            c.points
                .iter()
                .map(|&(r, cc)| ((r as f64 - cy).powi(2) + (cc as f64 - cx).powi(2)).sqrt())
                .sum::<f64>()
                / n
        };
        assert!(radius(&cs[0]) > 20.0, "outer ring first");
        assert!(cs[0].enclosed_area >= cs[1].enclosed_area);
        assert!(cs.iter().any(|c| radius(c) < 12.0), "inner ring found");
    }

    #[test]
    fn hull_of_square_contains_interior() {
        let hull = convex_hull(&[(0, 0), (0, 4), (4, 4), (4, 0), (2, 2)]);
        assert_eq!(hull.len(), 4);
        assert!(hull_contains(&hull, 2, 2));
        assert!(hull_contains(&hull, 0, 4));
        assert!(!hull_contains(&hull, 5, 2));
    }

    fn horseshoe(h: usize, w: usize) -> PixelMask {
        let mut m = ring(h, w, 6.0, 10.0);
        for r in 0..h / 2 {
            for c in w / 2 - 3..w / 2 + 3 {
                m.remove(r, c);
            }
        }
        m
    }

    #[test]
    fn non_basal_ventricle_is_empty() {
        let cs = follow_borders(&horseshoe(30, 30));
        assert!(ventricle_region((30, 30), &cs, false).is_empty());
        assert!(!ventricle_region((30, 30), &cs, true).is_empty());
    }

    #[test]
    fn enclosed_interior_is_not_ventricle() {
        let cs = follow_borders(&ring(30, 30, 6.0, 10.0));
        assert!(ventricle_region((30, 30), &cs, true).is_empty());
    }

    #[test]
    fn open_ring_exposes_its_interior() {
        let cs = follow_borders(&horseshoe(30, 30));
        let v = ventricle_region((30, 30), &cs, true);
        assert!(v.contains(15, 15));
        for c in &cs {
            assert!(c.points.iter().all(|&(r, col)| !v.contains(r, col)));
        }
    }

    #[test]
    fn fill_covers_square_interior() {
        let m = PixelMask::from_fn(8, 8, |r, c| (2..6).contains(&r) && (2..6).contains(&c));
        let cs = follow_borders(&m);
        let f = fill_contour(&cs[0], 8, 8);
        assert_eq!(f, m);
    }
}
