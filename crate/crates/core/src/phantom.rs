//! Synthetic IC datasets with known ground truth.
//!
//! Every slice is a dim elliptical brain with a thin bright white-matter ring
//! that is open at the top. Basal slices get a dark cavity inside the ring. Activation is painted as a
//! red-to-yellow overlay:
//!
//! * SOZ: one radially elongated blob per active slice, on one side, running
//!   from gray matter through the ring into the cavity, mostly in basal
//!   slices. Some slices carry a small contralateral satellite.
//! * RSN: mirror-symmetric pairs of tangential blobs in gray matter.
//! * NOISE: arcs on the brain rim plus speckles in the background.
//!
//! Time courses: RSN is a sum of slow sinusoids, SOZ adds sparse spikes to
//! the same kind of background, NOISE is white noise.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, IcRecord, Label, PatientRecord, Sex};
use crate::error::{Error, Result};
use crate::raster::RgbImage;
use crate::slices::BasalEnd;

/// Blobs that must survive the cluster-size threshold are grown to at least
/// this many pixels.
pub const LARGE_BLOB_PIXELS: usize = 150;
/// Satellites stay below the cluster-size threshold.
const SATELLITE_MAX_PIXELS: usize = 100;
const MIN_SLICE_SIDE: usize = 40;

const GRAY_MATTER: u8 = 60;
const WHITE_MATTER: u8 = 225;
const CAVITY: u8 = 22;
const RING_INNER: f64 = 0.50;
const RING_OUTER: f64 = 0.62;
/// Half-width in radians of the opening at the top of the white-matter ring.
const RING_GAP: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub n_patients: usize,
    pub ics_per_patient: usize,
    /// `(p_noise, p_rsn, p_soz)`.
    pub class_mix: (f64, f64, f64),
    /// `(rows, cols, slice_h, slice_w)`.
    pub montage: (usize, usize, usize, usize),
    pub timecourse_len: usize,
    pub tr_seconds: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            n_patients: 52,
            ics_per_patient: 40,
            class_mix: (0.511, 0.433, 0.056),
            montage: (5, 6, 45, 47),
            timecourse_len: 512,
            tr_seconds: 2.0,
            seed: 7,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let (pn, pr, ps) = self.class_mix;
        if [pn, pr, ps].iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::arg("class probabilities must lie in [0, 1]"));
        }
        if (pn + pr + ps - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!(
                "class probabilities sum to {}, expected 1",
                pn + pr + ps
            )));
        }
        if ps == 0.0 {
            return Err(Error::arg(
                "p_soz is 0 but every patient must receive at least one SOZ IC",
            ));
        }
        if self.n_patients == 0 {
            return Err(Error::arg("need at least one patient"));
        }
        if self.ics_per_patient < 3 {
            return Err(Error::arg("need at least 3 ICs per patient"));
        }
        let (rows, cols, sh, sw) = self.montage;
        if rows == 0 || cols == 0 {
            return Err(Error::arg("montage needs at least one row and column"));
        }
        if sh < MIN_SLICE_SIDE || sw < MIN_SLICE_SIDE {
            return Err(Error::arg(format!(
                "slices of {sh}x{sw} px are too small for {LARGE_BLOB_PIXELS}-px blobs \
                 (need at least {MIN_SLICE_SIDE}x{MIN_SLICE_SIDE})"
            )));
        }
        if rows * cols < 3 {
            return Err(Error::arg("montage needs at least 3 slices"));
        }
        if self.timecourse_len < 2 {
            return Err(Error::arg("time courses need at least 2 samples"));
        }
        if !(self.tr_seconds > 0.0 && self.tr_seconds.is_finite()) {
            return Err(Error::arg("TR must be positive"));
        }
        Ok(())
    }

    pub fn n_slices(&self) -> usize {
        self.montage.0 * self.montage.1
    }

    /// Slices rendered with a cavity; matches the default basal rule.
    pub fn basal_range(&self) -> std::ops::Range<usize> {
        let n = self.n_slices();
        n - n.div_ceil(3)..n
    }
}

/// Geometry of one brain slice in slice-local pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceAnatomy {
    pub height: usize,
    pub width: usize,
    pub cy: f64,
    pub cx: f64,
    /// Brain semi-axes in pixels.
    pub ay: f64,
    pub ax: f64,
    pub has_cavity: bool,
}

impl SliceAnatomy {
    pub fn new(height: usize, width: usize, scale: f64, has_cavity: bool) -> Self {
        Self {
            height,
            width,
            cy: (height as f64 - 1.0) / 2.0,
            cx: (width as f64 - 1.0) / 2.0,
            ay: 0.44 * scale * height as f64,
            ax: 0.44 * scale * width as f64,
            has_cavity,
        }
    }

    /// Normalized elliptical radius and polar angle (0 = right, counter-clockwise
    /// on screen).
    pub fn polar(&self, row: usize, col: usize) -> (f64, f64) {
        let dy = (self.cy - row as f64) / self.ay;
        let dx = (col as f64 - self.cx) / self.ax;
        (dx.hypot(dy), dy.atan2(dx))
    }

    pub fn base_value(&self, row: usize, col: usize) -> u8 {
        let (rho, phi) = self.polar(row, col);
        if rho > 1.0 {
            0
        } else if (RING_INNER..=RING_OUTER).contains(&rho)
            && wrap_angle(phi - PI / 2.0).abs() > RING_GAP
        {
            WHITE_MATTER
        } else if rho < RING_INNER && self.has_cavity {
            CAVITY
        } else {
            GRAY_MATTER
        }
    }

    pub fn is_cavity(&self, row: usize, col: usize) -> bool {
        self.has_cavity && self.polar(row, col).0 < RING_INNER
    }

    pub fn is_brain(&self, row: usize, col: usize) -> bool {
        self.polar(row, col).0 <= 1.0
    }

    pub fn cavity_area(&self) -> usize {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&(r, c)| self.is_cavity(r, c))
            .count()
    }

    pub fn render(&self) -> RgbImage {
        let mut img = RgbImage::new(self.height, self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                let v = self.base_value(r, c);
                img.put(r, c, [v, v, v]);
            }
        }
        img
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlobKind {
    SozFocus,
    SozSatellite,
    Rsn,
    NoiseArc,
    NoiseSpeckle,
}

/// Activation patch in polar slice coordinates: pixels with
/// `((rho - rho0) / drho)^2 + ((phi - phi0) / dphi)^2 <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub kind: BlobKind,
    pub slice: usize,
    pub rho0: f64,
    pub drho: f64,
    pub phi0: f64,
    pub dphi: f64,
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

impl Blob {
    /// `(row, col, intensity)` for every covered pixel of the slice;
    /// intensity is 1 at the centre and falls to 0 at the rim.
    pub fn pixels(&self, anatomy: &SliceAnatomy) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for r in 0..anatomy.height {
            for c in 0..anatomy.width {
                let (rho, phi) = anatomy.polar(r, c);
                let q = ((rho - self.rho0) / self.drho).powi(2)
                    + (wrap_angle(phi - self.phi0) / self.dphi).powi(2);
                if q <= 1.0 {
                    out.push((r, c, 1.0 - q));
                }
            }
        }
        out
    }

    pub fn mirrored(&self) -> Blob {
        Blob {
            phi0: wrap_angle(PI - self.phi0),
            ..*self
        }
    }
}

pub fn overlay_color(t: f64) -> [u8; 3] {
    [255, (40.0 + 150.0 * t.clamp(0.0, 1.0)).round() as u8, 0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobTruth {
    pub kind: BlobKind,
    pub slice_index: usize,
    pub pixel_count: usize,
    /// Inclusive `(row0, col0, row1, col1)` in slice coordinates.
    pub bbox: (usize, usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcTruth {
    pub patient_id: String,
    pub ic_id: String,
    pub label: Label,
    pub blobs: Vec<BlobTruth>,
}

#[derive(Debug, Clone)]
pub struct PhantomDataset {
    pub dataset: Dataset,
    pub truth: Vec<IcTruth>,
    pub spec: PhantomSpec,
}

impl PhantomDataset {
    pub fn truth_for(&self, patient_id: &str, ic_id: &str) -> Option<&IcTruth> {
        self.truth
            .iter()
            .find(|t| t.patient_id == patient_id && t.ic_id == ic_id)
    }
}

/// One patient's brain: a fixed anatomy per slice.
#[derive(Debug, Clone)]
pub struct PhantomBrain {
    pub spec_montage: (usize, usize, usize, usize),
    pub slices: Vec<SliceAnatomy>,
}

impl PhantomBrain {
    pub fn new(spec: &PhantomSpec, scale: f64) -> Self {
        let (rows, cols, sh, sw) = spec.montage;
        let n = rows * cols;
        let basal = spec.basal_range();
        let slices = (0..n)
            .map(|i| {
                let s = scale * (0.9 + 0.1 * (PI * (i as f64 + 0.5) / n as f64).sin());
                SliceAnatomy::new(sh, sw, s, basal.contains(&i))
            })
            .collect();
        Self {
            spec_montage: spec.montage,
            slices,
        }
    }

    pub fn slice_origin(&self, index: usize) -> (usize, usize) {
        let (_, cols, sh, sw) = self.spec_montage;
        ((index / cols) * sh, (index % cols) * sw)
    }

    /// Renders the montage; with `overlay = false` only anatomy is drawn.
    pub fn render(&self, blobs: &[Blob], overlay: bool) -> (RgbImage, Vec<BlobTruth>) {
        let (rows, cols, sh, sw) = self.spec_montage;
        let mut img = RgbImage::new(rows * sh, cols * sw);
        for (i, a) in self.slices.iter().enumerate() {
            img.paste(self.slice_origin(i), &a.render());
        }
        let mut heat = vec![-1.0f64; img.height() * img.width()];
        let mut truth = Vec::with_capacity(blobs.len());
        for b in blobs {
            let a = &self.slices[b.slice];
            let (r0, c0) = self.slice_origin(b.slice);
            let px = b.pixels(a);
            let mut bbox = (usize::MAX, usize::MAX, 0, 0);
            for &(r, c, t) in &px {
                bbox = (bbox.0.min(r), bbox.1.min(c), bbox.2.max(r), bbox.3.max(c));
                let k = (r0 + r) * img.width() + c0 + c;
                heat[k] = heat[k].max(t);
            }
            truth.push(BlobTruth {
                kind: b.kind,
                slice_index: b.slice,
                pixel_count: px.len(),
                bbox,
            });
        }
        if overlay {
            let w = img.width();
            for (k, &t) in heat.iter().enumerate() {
                if t >= 0.0 {
                    img.put(k / w, k % w, overlay_color(t));
                }
            }
        }
        (img, truth)
    }
}

/// Widens `blob` until it covers at least `min_pixels`.
fn grow(mut blob: Blob, anatomy: &SliceAnatomy, min_pixels: usize, radial: bool) -> Result<Blob> {
    for _ in 0..40 {
        if blob.pixels(anatomy).len() >= min_pixels {
            return Ok(blob);
        }
        blob.dphi *= 1.08;
        if radial {
            blob.drho *= 1.03;
        }
    }
    Err(Error::arg(format!(
        "cannot fit a {min_pixels}-px blob into a {}x{} slice",
        anatomy.height, anatomy.width
    )))
}

/// Like [`grow`], but stops widening in angle before the blob could touch its
/// mirror image and thickens it within the gray-matter rim instead.
fn grow_rsn(mut blob: Blob, anatomy: &SliceAnatomy, min_pixels: usize) -> Result<Blob> {
    let max_dphi = (PI - 2.0 * blob.phi0.abs()) / 2.0 - 0.12;
    let max_drho = (blob.rho0 - RING_OUTER - 0.02).min(1.0 - blob.rho0);
    for _ in 0..60 {
        if blob.pixels(anatomy).len() >= min_pixels {
            return Ok(blob);
        }
        if blob.dphi * 1.05 <= max_dphi {
            blob.dphi *= 1.05;
        } else if blob.drho * 1.03 <= max_drho {
            blob.drho *= 1.03;
        } else {
            break;
        }
    }
    Err(Error::arg(format!(
        "cannot fit a {min_pixels}-px bilateral blob into a {}x{} slice",
        anatomy.height, anatomy.width
    )))
}

fn shrink(mut blob: Blob, anatomy: &SliceAnatomy, max_pixels: usize) -> Blob {
    while blob.pixels(anatomy).len() > max_pixels {
        blob.dphi *= 0.9;
        blob.drho *= 0.95;
    }
    blob
}

fn soz_blobs(spec: &PhantomSpec, brain: &PhantomBrain, rng: &mut ChaCha8Rng) -> Result<Vec<Blob>> {
    let basal = spec.basal_range();
    let n_basal = basal.len();
    let k = rng.random_range((n_basal / 2 + 1).min(n_basal)..=n_basal);
    let start = basal.start + rng.random_range(0..=n_basal - k);
    let extra = rng.random_range(0..=2usize).min(start);
    let right = rng.random_bool(0.5);
    let base_phi = rng.random_range(-0.5..0.5);
    let mut blobs = Vec::new();
    for s in start - extra..start + k {
        let a = &brain.slices[s];
        let jitter = rng.random_range(-0.15..0.15);
        let phi = if right { base_phi + jitter } else { PI - base_phi - jitter };
        let focus = Blob {
            kind: BlobKind::SozFocus,
            slice: s,
            rho0: rng.random_range(0.50..0.58),
            drho: rng.random_range(0.40..0.46),
            phi0: wrap_angle(phi),
            dphi: rng.random_range(0.30..0.40),
        };
        blobs.push(grow(focus, a, LARGE_BLOB_PIXELS + rng.random_range(0..40), true)?);
        if rng.random_bool(0.5) {
            let sat = Blob {
                kind: BlobKind::SozSatellite,
                slice: s,
                rho0: rng.random_range(0.76..0.84),
                drho: 0.14,
                phi0: wrap_angle(PI - phi + rng.random_range(-0.3..0.3)),
                dphi: rng.random_range(0.3..0.6),
            };
            blobs.push(shrink(sat, a, SATELLITE_MAX_PIXELS));
        }
    }
    Ok(blobs)
}

fn rsn_blobs(spec: &PhantomSpec, brain: &PhantomBrain, rng: &mut ChaCha8Rng) -> Result<Vec<Blob>> {
    let n = spec.n_slices();
    let k = rng.random_range(4..=7usize).min(n);
    let start = rng.random_range(0..=n - k);
    let phi = rng.random_range(-0.15..0.15);
    let rho0 = rng.random_range(0.81..0.83);
    let mut blobs = Vec::new();
    for s in start..start + k {
        let a = &brain.slices[s];
        let b = Blob {
            kind: BlobKind::Rsn,
            slice: s,
            rho0,
            drho: 0.15,
            phi0: phi + rng.random_range(-0.1..0.1),
            dphi: rng.random_range(0.7..0.85),
        };
        let b = grow_rsn(b, a, LARGE_BLOB_PIXELS + rng.random_range(0..10))?;
        blobs.push(b);
        blobs.push(b.mirrored());
    }
    Ok(blobs)
}

fn noise_blobs(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Vec<Blob> {
    let n = spec.n_slices();
    let k = rng.random_range(6..=12usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut blobs = Vec::new();
    for &s in &idx[..k] {
        for _ in 0..rng.random_range(1..=3) {
            blobs.push(Blob {
                kind: BlobKind::NoiseArc,
                slice: s,
                rho0: rng.random_range(0.98..1.04),
                drho: rng.random_range(0.06..0.10),
                phi0: rng.random_range(-PI..PI),
                dphi: rng.random_range(0.3..1.2),
            });
        }
    }
    for _ in 0..rng.random_range(15..40) {
        blobs.push(Blob {
            kind: BlobKind::NoiseSpeckle,
            slice: rng.random_range(0..n),
            rho0: rng.random_range(1.05..1.12),
            drho: 0.03,
            phi0: rng.random_range(-PI..PI),
            dphi: 0.06,
        });
    }
    blobs
}

fn slow_background(len: usize, tr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = (0..rng.random_range(1..=4))
        .map(|_| {
            (
                rng.random_range(0.01..0.08),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.5..1.5),
            )
        })
        .collect();
    let noise = Normal::new(0.0, 0.2).expect("valid sigma");
    (0..len)
        .map(|i| {
            let t = i as f64 * tr;
            comps
                .iter()
                .map(|&(f, p, a)| a * (2.0 * PI * f * t + p).sin())
                .sum::<f64>()
                + noise.sample(rng)
        })
        .collect()
}

fn timecourse(label: Label, len: usize, tr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match label {
        Label::Noise => {
            let n = Normal::new(0.0, 1.0).expect("valid sigma");
            (0..len).map(|_| n.sample(rng)).collect()
        }
        Label::Rsn => slow_background(len, tr, rng),
        Label::Soz => {
            let mut x = slow_background(len, tr, rng);
            let spikes = (len / 64).max(1) * rng.random_range(1..=2);
            for _ in 0..spikes {
                let at = rng.random_range(1..len.max(3) - 1);
                let amp = rng.random_range(1.0..2.0);
                x[at] += amp;
                x[at - 1] -= 0.5 * amp;
                x[at + 1] -= 0.5 * amp;
            }
            x
        }
    }
}

/// Class counts for one patient by stochastic rounding, with at least one SOZ.
fn class_counts(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> [usize; 3] {
    let n = spec.ics_per_patient;
    let p = [spec.class_mix.0, spec.class_mix.1, spec.class_mix.2];
    let mut counts = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for k in 0..3 {
        let e = p[k] * n as f64;
        counts[k] = e.floor() as usize;
        frac[k] = e - e.floor();
    }
    let mut left = n - counts.iter().sum::<usize>();
    while left > 0 {
        let total: f64 = frac.iter().sum();
        let k = if total <= 0.0 {
            rng.random_range(0..3)
        } else {
            let mut u = rng.random_range(0.0..total);
            let mut pick = 2;
            for (k, &f) in frac.iter().enumerate() {
                if u < f {
                    pick = k;
                    break;
                }
                u -= f;
            }
            pick
        };
        counts[k] += 1;
        frac[k] = 0.0;
        left -= 1;
    }
    if counts[2] == 0 {
        let donor = if counts[0] >= counts[1] { 0 } else { 1 };
        counts[donor] -= 1;
        counts[2] = 1;
    }
    counts
}

fn generate_patient(spec: &PhantomSpec, index: usize) -> Result<(PatientRecord, Vec<IcTruth>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let patient_id = format!("P{:03}", index + 1);
    let brain = PhantomBrain::new(spec, rng.random_range(0.95..1.02));
    let counts = class_counts(spec, &mut rng);
    let mut labels: Vec<Label> = Label::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&l, n)| std::iter::repeat_n(l, n))
        .collect();
    labels.shuffle(&mut rng);

    let mut ics = Vec::with_capacity(labels.len());
    let mut truth = Vec::with_capacity(labels.len());
    for (j, &label) in labels.iter().enumerate() {
        let ic_id = format!("IC{:03}", j + 1);
        let blobs = match label {
            Label::Soz => soz_blobs(spec, &brain, &mut rng)?,
            Label::Rsn => rsn_blobs(spec, &brain, &mut rng)?,
            Label::Noise => noise_blobs(spec, &mut rng),
        };
        let (image, blob_truth) = brain.render(&blobs, true);
        let tc = timecourse(label, spec.timecourse_len, spec.tr_seconds, &mut rng);
        ics.push(IcRecord {
            ic_id: ic_id.clone(),
            patient_id: patient_id.clone(),
            image,
            timecourse: tc,
            label: Some(label),
            binary_label: None,
        });
        truth.push(IcTruth {
            patient_id: patient_id.clone(),
            ic_id,
            label,
            blobs: blob_truth,
        });
    }
    let patient = PatientRecord {
        patient_id,
        age_years: (rng.random_range(1.0..18.0f64) * 10.0).round() / 10.0,
        sex: if rng.random_bool(0.5) { Sex::M } else { Sex::F },
        ics,
    };
    Ok((patient, truth))
}

/// Deterministic for a fixed spec; patients are generated in parallel from
/// per-patient streams of the seed.
pub fn generate_phantom_dataset(spec: &PhantomSpec) -> Result<PhantomDataset> {
    spec.validate()?;
    let parts: Vec<(PatientRecord, Vec<IcTruth>)> = (0..spec.n_patients)
        .into_par_iter()
        .map(|i| generate_patient(spec, i))
        .collect::<Result<_>>()?;
    let (patients, truth): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    let dataset = Dataset::new(
        patients,
        spec.tr_seconds,
        Some((spec.montage.0, spec.montage.1)),
    )?;
    Ok(PhantomDataset {
        dataset,
        truth: truth.into_iter().flatten().collect(),
        spec: spec.clone(),
    })
}

/// The basal end the phantom renders cavities at.
pub const PHANTOM_BASAL_END: BasalEnd = BasalEnd::Last;

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomSpec {
        PhantomSpec {
            n_patients: 3,
            ics_per_patient: 6,
            class_mix: (0.4, 0.4, 0.2),
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_phantom_dataset(&small()).unwrap();
        let b = generate_phantom_dataset(&small()).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_phantom_dataset(&small()).unwrap();
        let b = generate_phantom_dataset(&PhantomSpec { seed: 8, ..small() }).unwrap();
        assert!(a.dataset.ics().zip(b.dataset.ics()).any(|(x, y)| x.image != y.image));
    }

    #[test]
    fn zero_soz_probability_rejected() {
        let spec = PhantomSpec {
            class_mix: (0.5, 0.5, 0.0),
            ..small()
        };
        assert!(generate_phantom_dataset(&spec).is_err());
    }

    #[test]
    fn tiny_slices_rejected() {
        let spec = PhantomSpec {
            montage: (5, 6, 20, 20),
            ..small()
        };
        assert!(generate_phantom_dataset(&spec).is_err());
    }

    #[test]
    fn probabilities_must_sum_to_one() {
        let spec = PhantomSpec {
            class_mix: (0.5, 0.4, 0.2),
            ..small()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn every_patient_has_soz() {
        let spec = PhantomSpec {
            n_patients: 8,
            ics_per_patient: 5,
            class_mix: (0.6, 0.39, 0.01),
            ..Default::default()
        };
        let p = generate_phantom_dataset(&spec).unwrap();
        for patient in &p.dataset.patients {
            assert_eq!(patient.ics.len(), 5);
            assert!(patient.ics.iter().any(|ic| ic.label == Some(Label::Soz)));
        }
    }

    #[test]
    fn large_blobs_exceed_threshold() {
        let p = generate_phantom_dataset(&small()).unwrap();
        for t in &p.truth {
            for b in &t.blobs {
                match b.kind {
                    BlobKind::SozFocus | BlobKind::Rsn => assert!(b.pixel_count > 135),
                    BlobKind::SozSatellite => assert!(b.pixel_count <= SATELLITE_MAX_PIXELS),
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn truth_matches_labels() {
        let p = generate_phantom_dataset(&small()).unwrap();
        for ic in p.dataset.ics() {
            let t = p.truth_for(&ic.patient_id, &ic.ic_id).unwrap();
            assert_eq!(Some(t.label), ic.label);
        }
    }

    #[test]
    fn mirrored_rsn_pairs_are_symmetric() {
        let a = SliceAnatomy::new(45, 47, 1.0, false);
        let b = Blob {
            kind: BlobKind::Rsn,
            slice: 0,
            rho0: 0.8,
            drho: 0.16,
            phi0: 0.2,
            dphi: 0.9,
        };
        let mut left: Vec<(usize, usize)> = b.pixels(&a).iter().map(|p| (p.0, p.1)).collect();
        let mut right: Vec<(usize, usize)> = b
            .mirrored()
            .pixels(&a)
            .iter()
            .map(|p| (p.0, 46 - p.1))
            .collect();
        left.sort_unstable();
        right.sort_unstable();
        assert_eq!(left, right);
    }
}
