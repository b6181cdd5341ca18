//! The four expert features of an IC: cluster count, white-matter to
//! ventricle extension, activelet-domain sparsity and sine-domain sparsity.
//!
//! The activelet transform is approximated by B3-spline à-trous details; the
//! feature only consumes a sparsity statistic of the coefficients.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::IcRecord;
use crate::error::{Error, Result};
use crate::raster::RgbImage;
use crate::slices::{
    analyze_slice, basal_flags, extract_slices, Cluster, Contour, PixelMask, SliceConfig,
    SliceGeometry,
};

pub const N_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    ClusterCount,
    WmVentricle,
    ActiveletGini,
    SineGini,
}

impl Feature {
    pub const ALL: [Feature; N_FEATURES] = [
        Feature::ClusterCount,
        Feature::WmVentricle,
        Feature::ActiveletGini,
        Feature::SineGini,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::ClusterCount => "cluster_count",
            Feature::WmVentricle => "wm_ventricle",
            Feature::ActiveletGini => "activelet_gini",
            Feature::SineGini => "sine_gini",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown feature {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub f1_cluster_count: f64,
    pub f2_wm_ventricle: f64,
    pub f3_activelet_gini: f64,
    pub f4_sine_gini: f64,
}

impl FeatureVector {
    pub fn from_array(a: [f64; N_FEATURES]) -> Self {
        Self {
            f1_cluster_count: a[0],
            f2_wm_ventricle: a[1],
            f3_activelet_gini: a[2],
            f4_sine_gini: a[3],
        }
    }

    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.f1_cluster_count,
            self.f2_wm_ventricle,
            self.f3_activelet_gini,
            self.f4_sine_gini,
        ]
    }

    pub fn get(&self, f: Feature) -> f64 {
        self.to_array()[f.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparsityConfig {
    pub window_len: usize,
    pub wavelet_levels: usize,
    pub band_hz: (f64, f64),
    pub tr_seconds: f64,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        Self {
            window_len: 256,
            wavelet_levels: 4,
            band_hz: (0.01, 0.1),
            tr_seconds: 2.0,
        }
    }
}

impl SparsityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 16 || !self.window_len.is_power_of_two() {
            return Err(Error::arg(format!(
                "window length must be a power of two >= 16, got {}",
                self.window_len
            )));
        }
        if self.wavelet_levels == 0 {
            return Err(Error::arg("wavelet levels must be at least 1"));
        }
        if !(self.tr_seconds > 0.0 && self.tr_seconds.is_finite()) {
            return Err(Error::arg(format!("TR must be positive, got {}", self.tr_seconds)));
        }
        let nyquist = 1.0 / (2.0 * self.tr_seconds);
        let (lo, hi) = self.band_hz;
        if !(lo > 0.0 && lo < hi && hi <= nyquist) {
            return Err(Error::arg(format!(
                "band [{lo}, {hi}] Hz must satisfy 0 < lo < hi <= Nyquist ({nyquist} Hz)"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub slices: SliceConfig,
    pub sparsity: SparsityConfig,
    /// Clusters must be strictly larger than this many pixels to count.
    pub min_cluster_size: usize,
    /// Radius of the square used to widen the most prominent contour into a
    /// white-matter band.
    pub wm_band_radius: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            slices: SliceConfig::default(),
            sparsity: SparsityConfig::default(),
            min_cluster_size: 135,
            wm_band_radius: 1,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        self.slices.validate()?;
        self.sparsity.validate()
    }
}

/// Gini sparsity of the magnitudes of `v`: 0 for a flat vector, `1 - 1/N`
/// for a one-hot one, 0 for all zeros.
pub fn gini_index(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::arg("Gini index of an empty vector is undefined"));
    }
    let mut a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let l1: f64 = a.iter().sum();
    if l1 == 0.0 {
        return Ok(0.0);
    }
    if !l1.is_finite() {
        return Err(Error::Numeric("Gini index of a non-finite vector".into()));
    }
    a.sort_by(f64::total_cmp);
    let n = a.len() as f64;
    let s: f64 = a
        .iter()
        .enumerate()
        .map(|(i, &x)| (x / l1) * ((n - (i + 1) as f64 + 0.5) / n))
        .sum();
    Ok((1.0 - 2.0 * s).clamp(0.0, 1.0))
}

/// Undecimated B3-spline decomposition: `levels` detail bands plus the final
/// smooth. The input equals the smooth plus the sum of the details.
#[derive(Debug, Clone, PartialEq)]
pub struct Atrous {
    pub details: Vec<Vec<f64>>,
    pub smooth: Vec<f64>,
}

impl Atrous {
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = self.smooth.clone();
        for d in &self.details {
            for (o, x) in out.iter_mut().zip(d) {
                *o += x;
            }
        }
        out
    }

    pub fn concatenated_details(&self) -> Vec<f64> {
        self.details.concat()
    }
}

const B3: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Whole-sample symmetric reflection of `i` into `0..n`.
fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

fn atrous(window: &[f64], levels: usize) -> Atrous {
    let n = window.len();
    let mut smooth = window.to_vec();
    let mut details = Vec::with_capacity(levels);
    for j in 0..levels {
        let step = 1isize << j;
        let next: Vec<f64> = (0..n as isize)
            .map(|i| {
                B3.iter()
                    .enumerate()
                    .map(|(k, &h)| h * smooth[mirror(i + (k as isize - 2) * step, n)])
                    .sum()
            })
            .collect();
        details.push(smooth.iter().zip(&next).map(|(a, b)| a - b).collect());
        smooth = next;
    }
    Atrous { details, smooth }
}

/// À-trous transform of one analysis window. The first level uses taps one
/// sample apart, and the spacing doubles with every level.
pub fn atrous_transform(window: &[f64], cfg: &SparsityConfig) -> Result<Atrous> {
    if window.len() != cfg.window_len {
        return Err(Error::arg(format!(
            "window has {} samples, expected {}",
            window.len(),
            cfg.window_len
        )));
    }
    if cfg.wavelet_levels == 0 {
        return Err(Error::arg("wavelet levels must be at least 1"));
    }
    Ok(atrous(window, cfg.wavelet_levels))
}

/// Inclusive DFT bin range covering `band_hz` for a window of `n` samples.
pub fn band_bins(n: usize, cfg: &SparsityConfig) -> (usize, usize) {
    let span = n as f64 * cfg.tr_seconds;
    let lo = (cfg.band_hz.0 * span - 1e-9).ceil().max(0.0) as usize;
    let hi = ((cfg.band_hz.1 * span + 1e-9).floor() as usize).min(n / 2);
    (lo, hi)
}

/// Magnitudes of the DFT coefficients whose frequency lies in the band.
pub fn band_sine_coefficients(window: &[f64], cfg: &SparsityConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    Ok(band_magnitudes(window, cfg))
}

fn band_magnitudes(window: &[f64], cfg: &SparsityConfig) -> Vec<f64> {
    let n = window.len();
    let (lo, hi) = band_bins(n, cfg);
    (lo..=hi)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in window.iter().enumerate() {
                let phase = 2.0 * PI * ((k * t) % n) as f64 / n as f64;
                re += x * phase.cos();
                im -= x * phase.sin();
            }
            re.hypot(im)
        })
        .collect()
}

/// Non-overlapping analysis windows; a series shorter than one window is
/// used whole, and a partial tail is dropped.
fn windows<'a>(series: &'a [f64], len: usize) -> Vec<&'a [f64]> {
    if series.len() < len {
        vec![series]
    } else {
        series.chunks_exact(len).collect()
    }
}

/// Mean activelet and sine Gini over the windows of a time course.
pub fn temporal_features(series: &[f64], cfg: &SparsityConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    let ws = windows(series, cfg.window_len);
    let (mut g3, mut g4) = (0.0, 0.0);
    for w in &ws {
        if w.is_empty() {
            return Err(Error::arg("empty time course"));
        }
        g3 += gini_index(&atrous(w, cfg.wavelet_levels).concatenated_details())?;
        let band = band_magnitudes(w, cfg);
        if !band.is_empty() {
            g4 += gini_index(&band)?;
        }
    }
    let n = ws.len() as f64;
    Ok((g3 / n, g4 / n))
}

/// Whether a large cluster touches both the white-matter band (the most
/// prominent contour, widened) and the ventricle region.
pub fn wm_ventricle_extension(
    clusters: &[Cluster],
    contours: &[Contour],
    ventricle: &PixelMask,
    min_cluster_size: usize,
    band_radius: usize,
) -> bool {
    let Some(wm) = contours.first() else {
        return false;
    };
    if ventricle.is_empty() {
        return false;
    }
    let (h, w) = ventricle.dims();
    let band = wm.to_mask(h, w).dilate(band_radius);
    clusters
        .iter()
        .filter(|c| c.size > min_cluster_size)
        .any(|c| c.members.intersects(&band) && c.members.intersects(ventricle))
}

/// Per-slice geometry of an IC image, with the basal flag of each slice.
pub fn analyze_image(
    image: &RgbImage,
    layout: Option<(usize, usize)>,
    cfg: &SliceConfig,
) -> Result<Vec<(SliceGeometry, bool)>> {
    let slices = extract_slices(image, layout)?;
    let basal = basal_flags(slices.len(), cfg.basal_end);
    slices
        .iter()
        .zip(basal)
        .map(|(s, b)| analyze_slice(s, b, cfg).map(|g| (g, b)))
        .collect()
}

/// Spatial features `(f1, f2)` from analyzed slices.
pub fn spatial_features(geometry: &[(SliceGeometry, bool)], cfg: &FeatureConfig) -> (f64, f64) {
    let f1 = geometry
        .iter()
        .flat_map(|(g, _)| &g.clusters)
        .filter(|c| c.size > cfg.min_cluster_size)
        .count() as f64;
    let basal: Vec<&SliceGeometry> = geometry.iter().filter(|(_, b)| *b).map(|(g, _)| g).collect();
    let f2 = if basal.is_empty() {
        0.0
    } else {
        let hits = basal
            .iter()
            .filter(|g| {
                wm_ventricle_extension(
                    &g.clusters,
                    &g.contours,
                    &g.ventricle,
                    cfg.min_cluster_size,
                    cfg.wm_band_radius,
                )
            })
            .count();
        hits as f64 / basal.len() as f64
    };
    (f1, f2)
}

pub fn extract_features(
    ic: &IcRecord,
    layout: Option<(usize, usize)>,
    cfg: &FeatureConfig,
) -> Result<FeatureVector> {
    cfg.validate()?;
    let geometry = analyze_image(&ic.image, layout, &cfg.slices)?;
    let (f1, f2) = spatial_features(&geometry, cfg);
    let (f3, f4) = temporal_features(&ic.timecourse, &cfg.sparsity)?;
    Ok(FeatureVector::from_array([f1, f2, f3, f4]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_known_values() {
        assert_eq!(gini_index(&[3.0; 7]).unwrap(), 0.0);
        assert!((gini_index(&[0.0, 0.0, 5.0, 0.0]).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(gini_index(&[0.0; 3]).unwrap(), 0.0);
        assert!(gini_index(&[]).is_err());
    }

    #[test]
    fn gini_uses_magnitudes() {
        let a = gini_index(&[1.0, -2.0, 3.0]).unwrap();
        let b = gini_index(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mirror_reflects_without_repeating_edges() {
        assert_eq!(mirror(-1, 5), 1);
        assert_eq!(mirror(-2, 5), 2);
        assert_eq!(mirror(5, 5), 3);
        assert_eq!(mirror(9, 5), 1);
        assert_eq!(mirror(-20, 5), 4);
        assert_eq!(mirror(3, 1), 0);
    }

    #[test]
    fn constant_window_has_zero_details() {
        let cfg = SparsityConfig::default();
        let t = atrous_transform(&[2.5; 256], &cfg).unwrap();
        assert_eq!(t.details.len(), 4);
        assert!(t.details.iter().flatten().all(|&d| d.abs() < 1e-12));
    }

    #[test]
    fn wrong_window_length_rejected() {
        assert!(atrous_transform(&[0.0; 100], &SparsityConfig::default()).is_err());
    }

    #[test]
    fn default_band_is_bins_6_to_51() {
        assert_eq!(band_bins(256, &SparsityConfig::default()), (6, 51));
        assert_eq!(band_sine_coefficients(&[0.0; 256], &SparsityConfig::default()).unwrap().len(), 46);
    }

    #[test]
    fn band_beyond_nyquist_rejected() {
        let cfg = SparsityConfig {
            band_hz: (0.01, 0.3),
            ..Default::default()
        };
        assert!(band_sine_coefficients(&[0.0; 256], &cfg).is_err());
    }

    #[test]
    fn short_series_uses_one_window() {
        let s: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin()).collect();
        let (g3, g4) = temporal_features(&s, &SparsityConfig::default()).unwrap();
        assert!((0.0..=1.0).contains(&g3) && (0.0..=1.0).contains(&g4));
    }

    #[test]
    fn partial_tail_window_dropped() {
        let cfg = SparsityConfig::default();
        let mut s: Vec<f64> = (0..256).map(|i| (i as f64 * 0.7).cos()).collect();
        let full = temporal_features(&s, &cfg).unwrap();
        s.extend(std::iter::repeat_n(9.0, 100));
        assert_eq!(temporal_features(&s, &cfg).unwrap(), full);
    }

    #[test]
    fn feature_names_round_trip() {
        for f in Feature::ALL {
            assert_eq!(f.name().parse::<Feature>().unwrap(), f);
        }
        assert!("nope".parse::<Feature>().is_err());
    }
}
