//! IC datasets: labels, patient grouping, and the JSON manifest on disk.
//!
//! A manifest is a single JSON document. Image and time-course paths are
//! relative to the manifest's directory:
//!
//! ```json
//! {
//!   "format": "sozloc-manifest",
//!   "version": 1,
//!   "tr_seconds": 2.0,
//!   "montage_layout": [5, 6],
//!   "patients": [
//!     {
//!       "patient_id": "P001", "age_years": 8.5, "sex": "F",
//!       "ics": [
//!         { "ic_id": "IC001", "image": "P001/IC001.png",
//!           "timecourse": "P001/IC001.txt", "label": "SOZ" }
//!       ]
//!     }
//!   ]
//! }
//! ```
//!
//! Images are 8-bit RGB PNG. Time courses are plain text with one sample per
//! line.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::raster::RgbImage;

pub const MANIFEST_FORMAT: &str = "sozloc-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_TR_SECONDS: f64 = 2.0;
pub const MIN_IMAGE_SIDE: usize = 32;

/// Expert IC category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Noise,
    Rsn,
    Soz,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Noise, Label::Rsn, Label::Soz];

    pub fn index(self) -> usize {
        match self {
            Label::Noise => 0,
            Label::Rsn => 1,
            Label::Soz => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn binary(self) -> BinaryLabel {
        match self {
            Label::Noise => BinaryLabel::Noise,
            Label::Rsn | Label::Soz => BinaryLabel::NotNoise,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Noise => "NOISE",
            Label::Rsn => "RSN",
            Label::Soz => "SOZ",
        })
    }
}

/// Label space of the noise gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BinaryLabel {
    Noise,
    NotNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcRecord {
    pub ic_id: String,
    pub patient_id: String,
    pub image: RgbImage,
    pub timecourse: Vec<f64>,
    pub label: Option<Label>,
    /// Set by [`relabel_binary`]; `label` is kept alongside it.
    pub binary_label: Option<BinaryLabel>,
}

impl IcRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        let (h, w) = self.image.dims();
        if h < MIN_IMAGE_SIDE || w < MIN_IMAGE_SIDE {
            return Err(format!(
                "image is {h}x{w}, smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
            ));
        }
        if self.timecourse.len() < 2 {
            return Err(format!(
                "time course has {} samples, need at least 2",
                self.timecourse.len()
            ));
        }
        if let Some(i) = self.timecourse.iter().position(|v| !v.is_finite()) {
            return Err(format!("time course sample {i} is not finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub age_years: f64,
    pub sex: Sex,
    pub ics: Vec<IcRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub noise: usize,
    pub rsn: usize,
    pub soz: usize,
    pub unlabeled: usize,
}

impl ClassCounts {
    pub fn labeled(&self) -> usize {
        self.noise + self.rsn + self.soz
    }

    /// Class fractions over labeled ICs, ordered NOISE, RSN, SOZ.
    pub fn fractions(&self) -> [f64; 3] {
        let n = self.labeled().max(1) as f64;
        [
            self.noise as f64 / n,
            self.rsn as f64 / n,
            self.soz as f64 / n,
        ]
    }
}

/// Loaded dataset, ordered by `(patient_id, ic_id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub patients: Vec<PatientRecord>,
    pub tr_seconds: f64,
    pub montage_layout: Option<(usize, usize)>,
}

impl Dataset {
    /// Builds a dataset from in-memory records, enforcing the same invariants
    /// as [`load_manifest`].
    pub fn new(
        mut patients: Vec<PatientRecord>,
        tr_seconds: f64,
        montage_layout: Option<(usize, usize)>,
    ) -> Result<Self> {
        if !(tr_seconds > 0.0 && tr_seconds.is_finite()) {
            return Err(Error::arg(format!("TR must be positive, got {tr_seconds}")));
        }
        let mut seen = BTreeMap::new();
        for p in &mut patients {
            if seen.insert(p.patient_id.clone(), ()).is_some() {
                return Err(Error::arg(format!("duplicate patient id {}", p.patient_id)));
            }
            let mut ic_ids = BTreeMap::new();
            for ic in &p.ics {
                if ic.patient_id != p.patient_id {
                    return Err(Error::arg(format!(
                        "IC {} claims patient {} but is listed under {}",
                        ic.ic_id, ic.patient_id, p.patient_id
                    )));
                }
                if ic_ids.insert(ic.ic_id.clone(), ()).is_some() {
                    return Err(Error::arg(format!(
                        "duplicate IC id {} in patient {}",
                        ic.ic_id, p.patient_id
                    )));
                }
                ic.validate()
                    .map_err(|e| Error::arg(format!("IC {}/{}: {e}", p.patient_id, ic.ic_id)))?;
            }
            p.ics.sort_by(|a, b| a.ic_id.cmp(&b.ic_id));
        }
        patients.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        Ok(Self {
            patients,
            tr_seconds,
            montage_layout,
        })
    }

    pub fn ics(&self) -> impl Iterator<Item = &IcRecord> {
        self.patients.iter().flat_map(|p| p.ics.iter())
    }

    pub fn len(&self) -> usize {
        self.patients.iter().map(|p| p.ics.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_counts(&self) -> ClassCounts {
        let mut counts = ClassCounts::default();
        for ic in self.ics() {
            match ic.label {
                Some(Label::Noise) => counts.noise += 1,
                Some(Label::Rsn) => counts.rsn += 1,
                Some(Label::Soz) => counts.soz += 1,
                None => counts.unlabeled += 1,
            }
        }
        counts
    }

    pub fn patient(&self, id: &str) -> Option<&PatientRecord> {
        self.patients.iter().find(|p| p.patient_id == id)
    }
}

/// Maps RSN and SOZ to NOT_NOISE, keeping the original labels.
pub fn relabel_binary(dataset: &Dataset) -> Result<Dataset> {
    let mut out = dataset.clone();
    for p in &mut out.patients {
        for ic in &mut p.ics {
            let label = ic.label.ok_or_else(|| {
                Error::arg(format!(
                    "IC {}/{} has no label to relabel",
                    ic.patient_id, ic.ic_id
                ))
            })?;
            ic.binary_label = Some(label.binary());
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestDoc {
    format: String,
    version: u32,
    #[serde(default = "default_tr")]
    tr_seconds: f64,
    #[serde(default)]
    montage_layout: Option<(usize, usize)>,
    patients: Vec<ManifestPatient>,
}

fn default_tr() -> f64 {
    DEFAULT_TR_SECONDS
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestPatient {
    patient_id: String,
    age_years: f64,
    sex: Sex,
    ics: Vec<ManifestIc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestIc {
    ic_id: String,
    image: PathBuf,
    timecourse: PathBuf,
    #[serde(default)]
    label: Option<Label>,
}

/// Reads a manifest and every file it references.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    let doc: ManifestDoc =
        serde_json::from_str(&text).map_err(|e| Error::load(path, format!("malformed manifest: {e}")))?;
    if doc.format != MANIFEST_FORMAT {
        return Err(Error::load(
            path,
            format!("unexpected format tag {:?}", doc.format),
        ));
    }
    if doc.version != MANIFEST_VERSION {
        return Err(Error::load(
            path,
            format!("unsupported manifest version {}", doc.version),
        ));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let patients = doc
        .patients
        .par_iter()
        .map(|p| load_patient(base, p))
        .collect::<Result<Vec<_>>>()?;

    Dataset::new(patients, doc.tr_seconds, doc.montage_layout)
        .map_err(|e| Error::load(path, e.to_string()))
}

fn load_patient(base: &Path, p: &ManifestPatient) -> Result<PatientRecord> {
    if !(p.age_years >= 0.0) {
        return Err(Error::load(
            base,
            format!("patient {} has invalid age {}", p.patient_id, p.age_years),
        ));
    }
    let ics = p
        .ics
        .iter()
        .map(|ic| {
            let image_path = base.join(&ic.image);
            let image = read_png(&image_path)?;
            let tc_path = base.join(&ic.timecourse);
            let timecourse = read_timecourse(&tc_path)?;
            let record = IcRecord {
                ic_id: ic.ic_id.clone(),
                patient_id: p.patient_id.clone(),
                image,
                timecourse,
                label: ic.label,
                binary_label: None,
            };
            record.validate().map_err(|e| {
                Error::load(
                    &image_path,
                    format!("IC {}/{}: {e}", p.patient_id, ic.ic_id),
                )
            })?;
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatientRecord {
        patient_id: p.patient_id.clone(),
        age_years: p.age_years,
        sex: p.sex,
        ics,
    })
}

/// Writes `dataset` under `dir` as `manifest.json` plus one PNG and one
/// time-course file per IC. Returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut patients = Vec::with_capacity(dataset.patients.len());
    for p in &dataset.patients {
        let pdir = dir.join(&p.patient_id);
        std::fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
        let mut ics = Vec::with_capacity(p.ics.len());
        for ic in &p.ics {
            let image = PathBuf::from(&p.patient_id).join(format!("{}.png", ic.ic_id));
            let timecourse = PathBuf::from(&p.patient_id).join(format!("{}.txt", ic.ic_id));
            write_png(&dir.join(&image), &ic.image)?;
            write_timecourse(&dir.join(&timecourse), &ic.timecourse)?;
            ics.push(ManifestIc {
                ic_id: ic.ic_id.clone(),
                image,
                timecourse,
                label: ic.label,
            });
        }
        patients.push(ManifestPatient {
            patient_id: p.patient_id.clone(),
            age_years: p.age_years,
            sex: p.sex,
            ics,
        });
    }
    let doc = ManifestDoc {
        format: MANIFEST_FORMAT.to_string(),
        version: MANIFEST_VERSION,
        tr_seconds: dataset.tr_seconds,
        montage_layout: dataset.montage_layout,
        patients,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    let file = File::open(path).map_err(|e| Error::load(path, e.to_string()))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::load(path, format!("bad PNG: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::load(path, "PNG too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::load(path, format!("bad PNG: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::load(path, "indexed PNG was not expanded"));
        }
    };
    let mut rgb = Vec::with_capacity(w * h * 3);
    for px in bytes.chunks_exact(channels) {
        match channels {
            1 | 2 => rgb.extend_from_slice(&[px[0], px[0], px[0]]),
            _ => rgb.extend_from_slice(&px[..3]),
        }
    }
    RgbImage::from_raw(h, w, rgb).map_err(|e| Error::load(path, e.to_string()))
}

pub fn write_png(path: &Path, image: &RgbImage) -> Result<()> {
    let mut bytes = Vec::new();
    {
        let mut encoder =
            png::Encoder::new(&mut bytes, image.width() as u32, image.height() as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::load(path, format!("PNG encode: {e}")))?;
        writer
            .write_image_data(image.as_raw())
            .map_err(|e| Error::load(path, format!("PNG encode: {e}")))?;
    }
    write_atomic(path, &bytes)
}

pub fn read_timecourse(path: &Path) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|e| Error::load(path, e.to_string()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::load(path, e.to_string()))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::load(path, format!("line {}: {t:?} is not a number", i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_timecourse(path: &Path, samples: &[f64]) -> Result<()> {
    let mut buf = BufWriter::new(Vec::with_capacity(samples.len() * 20));
    for v in samples {
        // `{}` on f64 is the shortest representation that parses back exactly.
        writeln!(buf, "{v}").expect("write to Vec");
    }
    let bytes = buf.into_inner().expect("flush to Vec");
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ic(patient: &str, id: &str, label: Label) -> IcRecord {
        IcRecord {
            ic_id: id.into(),
            patient_id: patient.into(),
            image: RgbImage::filled(32, 32, [10, 20, 30]),
            timecourse: vec![0.0, 1.5, -2.25],
            label: Some(label),
            binary_label: None,
        }
    }

    fn tiny() -> Dataset {
        let patients = ["B", "A"]
            .iter()
            .map(|p| PatientRecord {
                patient_id: p.to_string(),
                age_years: 4.0,
                sex: Sex::F,
                ics: vec![
                    ic(p, "ic3", Label::Soz),
                    ic(p, "ic1", Label::Noise),
                    ic(p, "ic2", Label::Rsn),
                ],
            })
            .collect();
        Dataset::new(patients, DEFAULT_TR_SECONDS, None).unwrap()
    }

    #[test]
    fn ordering_is_by_patient_then_ic() {
        let ds = tiny();
        let ids: Vec<_> = ds
            .ics()
            .map(|ic| format!("{}/{}", ic.patient_id, ic.ic_id))
            .collect();
        assert_eq!(ids, ["A/ic1", "A/ic2", "A/ic3", "B/ic1", "B/ic2", "B/ic3"]);
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        let manifest = save_dataset(&ds, dir.path()).unwrap();
        let back = load_manifest(&manifest).unwrap();
        assert_eq!(back.len(), 6);
        assert_eq!(back, ds);
    }

    #[test]
    fn missing_image_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&tiny(), dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("B").join("ic2.png")).unwrap();
        let err = load_manifest(&manifest).unwrap_err().to_string();
        assert!(err.contains("ic2.png"), "{err}");
    }

    #[test]
    fn malformed_manifest_is_a_load_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Load { .. })));
    }

    #[test]
    fn short_timecourse_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&tiny(), dir.path()).unwrap();
        std::fs::write(dir.path().join("A").join("ic1.txt"), "1.0\n").unwrap();
        let err = load_manifest(&manifest).unwrap_err().to_string();
        assert!(err.contains("ic1"), "{err}");
    }

    #[test]
    fn relabel_maps_and_keeps_originals() {
        let ds = relabel_binary(&tiny()).unwrap();
        let pairs: Vec<_> = ds.patients[0]
            .ics
            .iter()
            .map(|ic| (ic.label.unwrap(), ic.binary_label.unwrap()))
            .collect();
        assert_eq!(
            pairs,
            [
                (Label::Noise, BinaryLabel::Noise),
                (Label::Rsn, BinaryLabel::NotNoise),
                (Label::Soz, BinaryLabel::NotNoise),
            ]
        );
        assert_eq!(relabel_binary(&ds).unwrap(), ds);
    }

    #[test]
    fn relabel_empty_and_unlabeled() {
        let empty = Dataset::new(vec![], 2.0, None).unwrap();
        assert!(relabel_binary(&empty).unwrap().is_empty());

        let mut ds = tiny();
        ds.patients[0].ics[0].label = None;
        assert!(matches!(relabel_binary(&ds), Err(Error::Argument(_))));
    }

    #[test]
    fn class_counts_add_up() {
        let c = tiny().class_counts();
        assert_eq!((c.noise, c.rsn, c.soz, c.unlabeled), (2, 2, 2, 0));
    }
}
