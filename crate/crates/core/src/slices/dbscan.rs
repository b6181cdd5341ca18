//! DBSCAN over the set pixels of a mask.
//!
//! A pixel is a core point when at least `v_min` mask pixels, itself included,
//! lie within Euclidean distance `eps`. Cores within `eps` of each other share
//! a cluster. Non-core pixels within `eps` of a core are border points and
//! join the cluster of their nearest core. Everything else is noise.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::mask::PixelMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    pub v_min: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self { eps: 2.0, v_min: 4 }
    }
}

impl DbscanParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::arg(format!("DBSCAN eps must be positive, got {}", self.eps)));
        }
        if self.v_min == 0 {
            return Err(Error::arg("DBSCAN v_min must be at least 1"));
        }
        Ok(())
    }

    /// Neighbourhood offsets ordered by distance, then lexicographically.
    fn offsets(&self) -> Vec<(isize, isize)> {
        let reach = self.eps.floor() as isize;
        let eps2 = self.eps * self.eps + 1e-9;
        let mut out: Vec<(isize, isize)> = (-reach..=reach)
            .flat_map(|dr| (-reach..=reach).map(move |dc| (dr, dc)))
            .filter(|&(dr, dc)| (dr * dr + dc * dc) as f64 <= eps2)
            .collect();
        out.sort_by_key(|&(dr, dc)| (dr * dr + dc * dc, dr, dc));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub members: PixelMask,
    pub size: usize,
    /// Mean `(row, col)` in slice coordinates.
    pub centroid: (f64, f64),
    pub slice_index: usize,
}

/// Clusters sorted by size, largest first; ties by first pixel in raster order.
pub fn cluster_activations(mask: &PixelMask, params: DbscanParams) -> Result<Vec<Cluster>> {
    params.validate()?;
    let (h, w) = mask.dims();
    let offsets = params.offsets();
    let neighbours = |p: usize| {
        let (r, c) = ((p / w) as isize, (p % w) as isize);
        offsets.iter().filter_map(move |&(dr, dc)| {
            let (rr, cc) = (r + dr, c + dc);
            (rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w)
                .then(|| rr as usize * w + cc as usize)
        })
    };
    let bits = mask.bits();

    let core: Vec<bool> = (0..h * w)
        .map(|p| bits[p] && neighbours(p).filter(|&q| bits[q]).count() >= params.v_min)
        .collect();

    const NONE: usize = usize::MAX;
    let mut label = vec![NONE; h * w];
    let mut n_clusters = 0;
    let mut queue = VecDeque::new();
    for p in 0..h * w {
        if !core[p] || label[p] != NONE {
            continue;
        }
        label[p] = n_clusters;
        queue.push_back(p);
        while let Some(q) = queue.pop_front() {
            for n in neighbours(q) {
                if core[n] && label[n] == NONE {
                    label[n] = n_clusters;
                    queue.push_back(n);
                }
            }
        }
        n_clusters += 1;
    }

    // Border points: nearest core wins; offsets are distance-ordered.
    let mut border = Vec::new();
    for p in 0..h * w {
        if bits[p] && !core[p] {
            if let Some(q) = neighbours(p).find(|&q| core[q]) {
                border.push((p, label[q]));
            }
        }
    }
    for (p, l) in border {
        label[p] = l;
    }

    let mut members = vec![PixelMask::empty(h, w); n_clusters];
    let mut first = vec![NONE; n_clusters];
    for p in 0..h * w {
        let l = label[p];
        if l != NONE {
            members[l].insert(p / w, p % w);
            if first[l] == NONE {
                first[l] = p;
            }
        }
    }
    let mut clusters: Vec<(usize, Cluster)> = members
        .into_iter()
        .zip(first)
        .map(|(m, f)| {
            let size = m.count();
            let centroid = m.centroid().expect("cluster has members");
            (
                f,
                Cluster {
                    members: m,
                    size,
                    centroid,
                    slice_index: 0,
                },
            )
        })
        .collect();
    clusters.sort_by(|a, b| b.1.size.cmp(&a.1.size).then(a.0.cmp(&b.0)));
    Ok(clusters.into_iter().map(|(_, c)| c).collect())
}
