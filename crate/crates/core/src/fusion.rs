//! Final three-way labels from the noise gate and the expert model, with an
//! explanation and a SOZ area for every SOZ call.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{BinaryLabel, IcRecord, Label};
use crate::eki::{EkiLabel, EkiModel};
use crate::error::{Error, Result};
use crate::features::{
    analyze_image, spatial_features, temporal_features, Feature, FeatureConfig, FeatureVector,
};
use crate::io::write_atomic;
use crate::slices::Cluster;

pub const REPORT_FORMAT: &str = "sozloc-classification";
pub const REPORT_VERSION: u32 = 1;

/// NOT_NOISE defers to the expert label; NOISE is overridden to SOZ only when
/// `rho > override_threshold`.
pub fn fuse_labels(dl: BinaryLabel, eki: EkiLabel, rho: f64, override_threshold: f64) -> Label {
    match dl {
        BinaryLabel::NotNoise => eki.into(),
        BinaryLabel::Noise if rho > override_threshold => Label::Soz,
        BinaryLabel::Noise => Label::Noise,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub feature: Feature,
    pub contribution: f64,
}

/// Largest `omega[j] * f[j]`; ties go to the lower index.
pub fn explain_weights(omega: &[f64], f: &[f64]) -> Explanation {
    let mut best = 0;
    let mut best_c = f64::NEG_INFINITY;
    for (j, (w, x)) in omega.iter().zip(f).enumerate() {
        let c = w * x;
        if c > best_c {
            best = j;
            best_c = c;
        }
    }
    Explanation {
        feature: Feature::ALL[best],
        contribution: best_c,
    }
}

/// Contribution of each feature in the model's input space (after masking
/// and standardization, where `omega` applies).
pub fn explain_selection(model: &EkiModel, f: &FeatureVector) -> Explanation {
    explain_weights(&model.omega, &model.transform(f))
}

/// Largest cluster of one IC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SozArea {
    pub slice_index: usize,
    pub size: usize,
    /// `(row, col)` within the slice.
    pub centroid: (f64, f64),
    /// `(row, col)` within the montage.
    pub image_centroid: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Localization {
    Localized(SozArea),
    Unlocalized,
}

impl Localization {
    pub fn area(&self) -> Option<&SozArea> {
        match self {
            Localization::Localized(a) => Some(a),
            Localization::Unlocalized => None,
        }
    }
}

fn cluster_order(a: &Cluster, b: &Cluster) -> Ordering {
    b.size
        .cmp(&a.size)
        .then(a.slice_index.cmp(&b.slice_index))
        .then(a.centroid.0.total_cmp(&b.centroid.0))
        .then(a.centroid.1.total_cmp(&b.centroid.1))
}

/// The largest cluster over all slices; ties by lower slice index, then by
/// lexicographically smaller centroid.
pub fn largest_cluster(clusters: &[Cluster]) -> Option<&Cluster> {
    clusters.iter().min_by(|a, b| cluster_order(a, b))
}

/// `origins[i]` is the montage position of slice `i`.
pub fn localize_soz(clusters: &[Cluster], origins: &[(usize, usize)]) -> Localization {
    match largest_cluster(clusters) {
        None => Localization::Unlocalized,
        Some(c) => {
            let (r0, c0) = origins.get(c.slice_index).copied().unwrap_or((0, 0));
            Localization::Localized(SozArea {
                slice_index: c.slice_index,
                size: c.size,
                centroid: c.centroid,
                image_centroid: (r0 as f64 + c.centroid.0, c0 as f64 + c.centroid.1),
            })
        }
    }
}

/// Features and the would-be SOZ area of one IC from a single pass over its
/// slices at full resolution.
pub fn analyze_ic(
    ic: &IcRecord,
    layout: Option<(usize, usize)>,
    cfg: &FeatureConfig,
) -> Result<(FeatureVector, Localization)> {
    cfg.validate()?;
    let geometry = analyze_image(&ic.image, layout, &cfg.slices)?;
    let (f1, f2) = spatial_features(&geometry, cfg);
    let (f3, f4) = temporal_features(&ic.timecourse, &cfg.sparsity)?;
    let origins = slice_origins(ic, layout)?;
    let clusters: Vec<Cluster> = geometry.into_iter().flat_map(|(g, _)| g.clusters).collect();
    Ok((
        FeatureVector::from_array([f1, f2, f3, f4]),
        localize_soz(&clusters, &origins),
    ))
}

fn slice_origins(ic: &IcRecord, layout: Option<(usize, usize)>) -> Result<Vec<(usize, usize)>> {
    Ok(crate::slices::extract_slices(&ic.image, layout)?
        .into_iter()
        .map(|s| s.origin)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub patient_id: String,
    pub ic_id: String,
    pub dl_label: BinaryLabel,
    pub eki_label: EkiLabel,
    pub rho: f64,
    pub final_label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<Explanation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soz_cluster: Option<Localization>,
}

impl ClassificationResult {
    /// Enforces that explanation and localization accompany SOZ calls only.
    pub fn is_consistent(&self) -> bool {
        let soz = self.final_label == Label::Soz;
        soz == self.explanation.is_some() && soz == self.soz_cluster.is_some()
    }
}

/// Labels one IC from a gate decision, its features and its precomputed
/// localization.
pub fn classify(
    patient_id: &str,
    ic_id: &str,
    dl_label: BinaryLabel,
    features: &FeatureVector,
    localization: Localization,
    model: &EkiModel,
) -> ClassificationResult {
    let rho = model.score(features);
    let eki_label = model.label(rho);
    let final_label = fuse_labels(dl_label, eki_label, rho, model.thresholds.override_);
    let soz = final_label == Label::Soz;
    ClassificationResult {
        patient_id: patient_id.to_owned(),
        ic_id: ic_id.to_owned(),
        dl_label,
        eki_label,
        rho,
        final_label,
        explanation: soz.then(|| explain_selection(model, features)),
        soz_cluster: soz.then_some(localization),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSummary {
    pub patient_id: String,
    pub soz_ics: Vec<String>,
    /// SOZ IC with the largest localized cluster, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_ic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_area: Option<SozArea>,
    pub unlocalized: usize,
}

pub fn summarize_patients(results: &[ClassificationResult]) -> Vec<PatientSummary> {
    let mut by_patient: BTreeMap<&str, Vec<&ClassificationResult>> = BTreeMap::new();
    for r in results {
        by_patient.entry(&r.patient_id).or_default().push(r);
    }
    by_patient
        .into_iter()
        .map(|(pid, rs)| {
            let soz: Vec<&&ClassificationResult> =
                rs.iter().filter(|r| r.final_label == Label::Soz).collect();
            let mut primary: Option<(&str, SozArea)> = None;
            let mut unlocalized = 0;
            for r in &soz {
                match r.soz_cluster.as_ref().and_then(Localization::area) {
                    Some(a) => {
                        if primary.is_none_or(|(_, p)| a.size > p.size) {
                            primary = Some((&r.ic_id, *a));
                        }
                    }
                    None => unlocalized += 1,
                }
            }
            PatientSummary {
                patient_id: pid.to_owned(),
                soz_ics: soz.iter().map(|r| r.ic_id.clone()).collect(),
                primary_ic: primary.map(|(id, _)| id.to_owned()),
                primary_area: primary.map(|(_, a)| a),
                unlocalized,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport<C> {
    pub format: String,
    pub version: u32,
    pub config: C,
    pub results: Vec<ClassificationResult>,
    pub patients: Vec<PatientSummary>,
}

impl<C: Serialize> ClassificationReport<C> {
    pub fn new(config: C, results: Vec<ClassificationResult>) -> Self {
        let patients = summarize_patients(&results);
        Self {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            config,
            results,
            patients,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Numeric(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slices::PixelMask;

    fn cluster(slice: usize, size: usize, centroid: (f64, f64)) -> Cluster {
        Cluster {
            members: PixelMask::empty(4, 4),
            size,
            centroid,
            slice_index: slice,
        }
    }

    #[test]
    fn paper_conditions() {
        use BinaryLabel::*;
        assert_eq!(fuse_labels(NotNoise, EkiLabel::Soz, 0.2, 0.9), Label::Soz);
        assert_eq!(fuse_labels(Noise, EkiLabel::Soz, 0.95, 0.9), Label::Soz);
        assert_eq!(fuse_labels(Noise, EkiLabel::Soz, 0.5, 0.9), Label::Noise);
        assert_eq!(fuse_labels(Noise, EkiLabel::Soz, 0.9, 0.9), Label::Noise);
        assert_eq!(fuse_labels(NotNoise, EkiLabel::Rsn, -0.3, 0.9), Label::Rsn);
    }

    #[test]
    fn explanation_argmax_and_ties() {
        let e = explain_weights(&[0.7, 0.1, 0.1, 0.1], &[1.0; 4]);
        assert_eq!(e.feature, Feature::ClusterCount);
        let e = explain_weights(&[0.25; 4], &[0.0, 2.0, 0.0, 0.0]);
        assert_eq!(e.feature, Feature::WmVentricle);
        assert_eq!(e.contribution, 0.5);
        let e = explain_weights(&[0.0, 0.5, 0.5, 0.0], &[1.0; 4]);
        assert_eq!(e.feature, Feature::WmVentricle);
    }

    #[test]
    fn largest_cluster_wins() {
        let cs = vec![
            cluster(0, 200, (1.0, 1.0)),
            cluster(1, 500, (1.0, 1.0)),
            cluster(2, 350, (1.0, 1.0)),
        ];
        assert_eq!(largest_cluster(&cs).unwrap().size, 500);
    }

    #[test]
    fn ties_prefer_lower_slice_then_centroid() {
        let cs = vec![cluster(7, 400, (0.0, 0.0)), cluster(3, 400, (9.0, 9.0))];
        assert_eq!(largest_cluster(&cs).unwrap().slice_index, 3);
        let cs = vec![cluster(3, 400, (5.0, 2.0)), cluster(3, 400, (5.0, 1.0))];
        assert_eq!(largest_cluster(&cs).unwrap().centroid, (5.0, 1.0));
    }

    #[test]
    fn no_clusters_is_unlocalized() {
        assert_eq!(localize_soz(&[], &[]), Localization::Unlocalized);
    }

    #[test]
    fn image_centroid_adds_origin() {
        let cs = vec![cluster(1, 10, (2.0, 3.0))];
        let Localization::Localized(a) = localize_soz(&cs, &[(0, 0), (0, 47)]) else {
            panic!("expected an area");
        };
        assert_eq!(a.image_centroid, (2.0, 50.0));
    }

    #[test]
    fn summary_picks_largest_area() {
        let area = |size| {
            Some(Localization::Localized(SozArea {
                slice_index: 0,
                size,
                centroid: (0.0, 0.0),
                image_centroid: (0.0, 0.0),
            }))
        };
        let mk = |ic: &str, label, loc| ClassificationResult {
            patient_id: "P1".into(),
            ic_id: ic.into(),
            dl_label: BinaryLabel::NotNoise,
            eki_label: EkiLabel::Soz,
            rho: 0.5,
            final_label: label,
            explanation: None,
            soz_cluster: loc,
        };
        let rs = vec![
            mk("IC1", Label::Soz, area(10)),
            mk("IC2", Label::Soz, area(30)),
            mk("IC3", Label::Soz, Some(Localization::Unlocalized)),
            mk("IC4", Label::Rsn, None),
        ];
        let s = summarize_patients(&rs);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].soz_ics, vec!["IC1", "IC2", "IC3"]);
        assert_eq!(s[0].primary_ic.as_deref(), Some("IC2"));
        assert_eq!(s[0].unlocalized, 1);
    }
}
