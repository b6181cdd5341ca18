use serde::{Deserialize, Serialize};

/// Binary pixel set over a slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn from_points(height: usize, width: usize, points: &[(usize, usize)]) -> Self {
        let mut m = Self::empty(height, width);
        for &(r, c) in points {
            m.insert(r, c);
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn insert(&mut self, row: usize, col: usize) {
        self.bits[row * self.width + col] = true;
    }

    #[inline]
    pub fn remove(&mut self, row: usize, col: usize) {
        self.bits[row * self.width + col] = false;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Set pixels in raster order.
    pub fn points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub fn intersects(&self, other: &PixelMask) -> bool {
        debug_assert_eq!(self.dims(), other.dims());
        self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    pub fn intersection_count(&self, other: &PixelMask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn union_with(&mut self, other: &PixelMask) {
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    /// Dilation by a `(2r+1)x(2r+1)` square.
    pub fn dilate(&self, radius: usize) -> PixelMask {
        let mut out = PixelMask::empty(self.height, self.width);
        for (r, c) in self.points() {
            let r0 = r.saturating_sub(radius);
            let r1 = (r + radius).min(self.height - 1);
            let c0 = c.saturating_sub(radius);
            let c1 = (c + radius).min(self.width - 1);
            for rr in r0..=r1 {
                for cc in c0..=c1 {
                    out.insert(rr, cc);
                }
            }
        }
        out
    }

    /// Erosion by a `(2r+1)x(2r+1)` square; out-of-image neighbours are ignored.
    pub fn erode(&self, radius: usize) -> PixelMask {
        PixelMask::from_fn(self.height, self.width, |r, c| {
            if !self.contains(r, c) {
                return false;
            }
            let r0 = r.saturating_sub(radius);
            let r1 = (r + radius).min(self.height - 1);
            let c0 = c.saturating_sub(radius);
            let c1 = (c + radius).min(self.width - 1);
            (r0..=r1).all(|rr| (c0..=c1).all(|cc| self.contains(rr, cc)))
        })
    }

    pub fn close(&self, radius: usize) -> PixelMask {
        self.dilate(radius).erode(radius)
    }

    /// Mean `(row, col)` of the set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
        for (r, c) in self.points() {
            sr += r as f64;
            sc += c as f64;
            n += 1;
        }
        (n > 0).then(|| (sr / n as f64, sc / n as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_tracks_inserts() {
        let mut m = PixelMask::empty(4, 4);
        m.insert(1, 1);
        m.insert(1, 1);
        m.insert(3, 2);
        assert_eq!(m.count(), 2);
        assert_eq!(m.points().collect::<Vec<_>>(), [(1, 1), (3, 2)]);
    }

    #[test]
    fn closing_fills_single_pixel_gap() {
        let m = PixelMask::from_fn(5, 7, |r, c| r == 2 && c != 3);
        let closed = m.close(1);
        assert!(closed.contains(2, 3));
    }
}
