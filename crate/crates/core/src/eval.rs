//! Leave-one-patient-out evaluation, metrics, hypothesis tests and the
//! feature ablation study.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::dataset::{BinaryLabel, Dataset, Label, Sex};
use crate::eki::{fit_eki, EkiConfig, FitSummary};
use crate::error::{Error, Result};
use crate::features::{Feature, FeatureConfig, FeatureVector};
use crate::fusion::{analyze_ic, classify, ClassificationResult, Localization};
use crate::noise_net::{argmax, binary_target, train, train_weighted, NetworkConfig, TrainConfig};

/// Per-IC quantities that do not depend on the fold.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedIc {
    pub patient_id: String,
    pub ic_id: String,
    pub label: Label,
    pub features: FeatureVector,
    pub localization: Localization,
}

/// Features and localization of every labeled IC, in dataset order.
pub fn analyze_dataset(dataset: &Dataset, cfg: &FeatureConfig) -> Result<Vec<CachedIc>> {
    let ics: Vec<_> = dataset.ics().collect();
    ics.par_iter()
        .map(|ic| {
            let label = ic.label.ok_or_else(|| {
                Error::arg(format!("IC {}/{} is unlabeled", ic.patient_id, ic.ic_id))
            })?;
            let (features, localization) = analyze_ic(ic, dataset.montage_layout, cfg)?;
            Ok(CachedIc {
                patient_id: ic.patient_id.clone(),
                ic_id: ic.ic_id.clone(),
                label,
                features,
                localization,
            })
        })
        .collect()
}

/// One leave-one-patient-out split over IC indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub test_patient: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Fold {
    /// Errors if any training index belongs to the test patient.
    pub fn check(&self, patient_ids: &[&str]) -> Result<()> {
        if let Some(&i) = self.train.iter().find(|&&i| patient_ids[i] == self.test_patient) {
            return Err(Error::Numeric(format!(
                "fold {} leaks IC {i} of the test patient into training",
                self.test_patient
            )));
        }
        Ok(())
    }
}

/// Folds in sorted patient order; every fold is leak-checked.
pub fn loocv_folds(patient_ids: &[&str]) -> Result<Vec<Fold>> {
    let patients: BTreeSet<&str> = patient_ids.iter().copied().collect();
    if patients.len() < 2 {
        return Err(Error::arg(format!(
            "leave-one-out needs at least 2 patients, got {}",
            patients.len()
        )));
    }
    patients
        .into_iter()
        .map(|p| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..patient_ids.len()).partition(|&i| patient_ids[i] == p);
            let fold = Fold {
                test_patient: p.to_owned(),
                train,
                test,
            };
            fold.check(patient_ids)?;
            Ok(fold)
        })
        .collect()
}

fn train_cfg_for_fold(cfg: &TrainConfig, fold: usize) -> TrainConfig {
    TrainConfig {
        seed: cfg.seed.wrapping_add(fold as u64),
        ..cfg.clone()
    }
}

/// Gate decisions for every IC, each from a network trained without that
/// IC's patient.
pub fn loocv_gate(
    inputs: &[Vec<f64>],
    labels: &[Label],
    patient_ids: &[&str],
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<BinaryLabel>> {
    let folds = loocv_folds(patient_ids)?;
    let per_fold: Vec<Vec<(usize, BinaryLabel)>> = folds
        .par_iter()
        .enumerate()
        .map(|(k, fold)| {
            let xs: Vec<&[f64]> = fold.train.iter().map(|&i| inputs[i].as_slice()).collect();
            let ys: Vec<usize> = fold.train.iter().map(|&i| binary_target(labels[i])).collect();
            let (net, _) = train(&xs, &ys, net_cfg, &train_cfg_for_fold(train_cfg, k))?;
            let test: Vec<&[f64]> = fold.test.iter().map(|&i| inputs[i].as_slice()).collect();
            let pred = net.predict(&test)?;
            info!("gate fold {} done", fold.test_patient);
            Ok(fold
                .test
                .iter()
                .zip(pred)
                .map(|(&i, p)| {
                    let l = if p == 1 { BinaryLabel::Noise } else { BinaryLabel::NotNoise };
                    (i, l)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out = vec![BinaryLabel::NotNoise; inputs.len()];
    for (i, l) in per_fold.into_iter().flatten() {
        out[i] = l;
    }
    Ok(out)
}

/// Three-class baseline predictions under the same protocol, with
/// inverse-frequency class weights.
pub fn loocv_baseline(
    inputs: &[Vec<f64>],
    labels: &[Label],
    patient_ids: &[&str],
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<Label>> {
    let folds = loocv_folds(patient_ids)?;
    let per_fold: Vec<Vec<(usize, Label)>> = folds
        .par_iter()
        .enumerate()
        .map(|(k, fold)| {
            let xs: Vec<&[f64]> = fold.train.iter().map(|&i| inputs[i].as_slice()).collect();
            let ys: Vec<usize> = fold.train.iter().map(|&i| labels[i].index()).collect();
            let (net, _) = train_weighted(&xs, &ys, net_cfg, &train_cfg_for_fold(train_cfg, k))?;
            let test: Vec<&[f64]> = fold.test.iter().map(|&i| inputs[i].as_slice()).collect();
            let probs = net.predict_proba(&test)?;
            info!("baseline fold {} done", fold.test_patient);
            Ok(fold
                .test
                .iter()
                .zip(probs)
                .map(|(&i, p)| (i, Label::from_index(argmax(&p)).unwrap_or(Label::Noise)))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out = vec![Label::Noise; inputs.len()];
    for (i, l) in per_fold.into_iter().flatten() {
        out[i] = l;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub test_patient: String,
    pub n_train_patients: usize,
    pub n_train_ics: usize,
    pub n_test_ics: usize,
    pub fit: FitSummary,
    pub omega: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoocvRun {
    pub results: Vec<ClassificationResult>,
    pub folds: Vec<FoldRecord>,
}

impl LoocvRun {
    pub fn predictions(&self, ics: &[CachedIc]) -> Vec<Prediction> {
        self.results
            .iter()
            .zip(ics)
            .map(|(r, ic)| Prediction {
                patient_id: r.patient_id.clone(),
                predicted: r.final_label,
                truth: ic.label,
            })
            .collect()
    }
}

/// Expert model fitted per fold on the other patients' RSN/SOZ ICs, fused
/// with the supplied gate decisions (one per IC, already out-of-fold).
pub fn loocv_eki(
    ics: &[CachedIc],
    gate: &[BinaryLabel],
    cfg: &EkiConfig,
    dropped: Option<Feature>,
) -> Result<LoocvRun> {
    if gate.len() != ics.len() {
        return Err(Error::arg(format!(
            "{} gate decisions for {} ICs",
            gate.len(),
            ics.len()
        )));
    }
    let pids: Vec<&str> = ics.iter().map(|c| c.patient_id.as_str()).collect();
    let folds = loocv_folds(&pids)?;
    let per_fold: Vec<(FoldRecord, Vec<(usize, ClassificationResult)>)> = folds
        .par_iter()
        .map(|fold| {
            let samples: Vec<(FeatureVector, Label)> =
                fold.train.iter().map(|&i| (ics[i].features, ics[i].label)).collect();
            let (model, fit) = fit_eki(&samples, cfg, dropped)?;
            let train_patients: BTreeSet<&str> = fold.train.iter().map(|&i| pids[i]).collect();
            let record = FoldRecord {
                test_patient: fold.test_patient.clone(),
                n_train_patients: train_patients.len(),
                n_train_ics: fold.train.len(),
                n_test_ics: fold.test.len(),
                fit,
                omega: model.omega.clone(),
            };
            let results = fold
                .test
                .iter()
                .map(|&i| {
                    let c = &ics[i];
                    let r = classify(&c.patient_id, &c.ic_id, gate[i], &c.features, c.localization, &model);
                    (i, r)
                })
                .collect();
            Ok((record, results))
        })
        .collect::<Result<_>>()?;
    let mut slots: Vec<Option<ClassificationResult>> = vec![None; ics.len()];
    let mut records = Vec::with_capacity(per_fold.len());
    for (rec, rs) in per_fold {
        records.push(rec);
        for (i, r) in rs {
            slots[i] = Some(r);
        }
    }
    Ok(LoocvRun {
        results: slots.into_iter().map(|r| r.expect("every IC is in one test fold")).collect(),
        folds: records,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub patient_id: String,
    pub predicted: Label,
    pub truth: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Level {
    Ic,
    Patient,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub level: Level,
    pub n: usize,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub f1: Option<f64>,
    pub confusion: Confusion,
    /// `matrix[truth][predicted]` over NOISE/RSN/SOZ; IC level only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<[[usize; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: Option<f64>, sensitivity: Option<f64>) -> Option<f64> {
    let (p, s) = (precision?, sensitivity?);
    Some(if p + s == 0.0 { 0.0 } else { 2.0 * p * s / (p + s) })
}

/// SOZ is the positive class at both levels. A patient is TP if one of its
/// predicted-SOZ ICs is truly SOZ, else FP if it has any predicted-SOZ IC,
/// else FN if it has a true SOZ IC, else TN.
pub fn compute_metrics(preds: &[Prediction], level: Level) -> MetricsReport {
    let mut c = Confusion::default();
    let mut matrix = None;
    let n;
    let accuracy;
    match level {
        Level::Ic => {
            let mut m = [[0usize; 3]; 3];
            for p in preds {
                m[p.truth.index()][p.predicted.index()] += 1;
                let (pt, tt) = (p.predicted == Label::Soz, p.truth == Label::Soz);
                match (pt, tt) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                }
            }
            n = preds.len();
            accuracy = ratio((0..3).map(|i| m[i][i]).sum(), n);
            matrix = Some(m);
        }
        Level::Patient => {
            let mut by_patient: BTreeMap<&str, (bool, bool, bool)> = BTreeMap::new();
            for p in preds {
                let e = by_patient.entry(&p.patient_id).or_default();
                let (pt, tt) = (p.predicted == Label::Soz, p.truth == Label::Soz);
                e.0 |= pt && tt;
                e.1 |= pt;
                e.2 |= tt;
            }
            for &(hit, any_pred, any_true) in by_patient.values() {
                if hit {
                    c.tp += 1;
                } else if any_pred {
                    c.fp += 1;
                } else if any_true {
                    c.fn_ += 1;
                } else {
                    c.tn += 1;
                }
            }
            n = by_patient.len();
            accuracy = ratio(c.tp + c.tn, n);
        }
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    MetricsReport {
        level,
        n,
        accuracy,
        precision,
        sensitivity,
        f1: f1_score(precision, sensitivity),
        confusion: c,
        matrix,
        group: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Age,
    Sex,
}

impl std::str::FromStr for GroupBy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "age" => Ok(GroupBy::Age),
            "sex" => Ok(GroupBy::Sex),
            _ => Err(Error::arg(format!("unknown grouping {s:?} (expected age or sex)"))),
        }
    }
}

/// `[0,5)`, `[5,13)`, `[13,18]`; anything else is `other`.
pub fn age_bin(age: f64) -> &'static str {
    if (0.0..5.0).contains(&age) {
        "age [0,5)"
    } else if (5.0..13.0).contains(&age) {
        "age [5,13)"
    } else if (13.0..=18.0).contains(&age) {
        "age [13,18]"
    } else {
        "age other"
    }
}

/// Metrics per age bin or sex, for each level; groups in sorted order.
pub fn group_metrics(preds: &[Prediction], dataset: &Dataset, by: GroupBy) -> Vec<MetricsReport> {
    let group_of: BTreeMap<&str, String> = dataset
        .patients
        .iter()
        .map(|p| {
            let g = match by {
                GroupBy::Age => age_bin(p.age_years).to_owned(),
                GroupBy::Sex => match p.sex {
                    Sex::M => "sex M".to_owned(),
                    Sex::F => "sex F".to_owned(),
                },
            };
            (p.patient_id.as_str(), g)
        })
        .collect();
    let mut groups: BTreeMap<&str, Vec<Prediction>> = BTreeMap::new();
    for p in preds {
        if let Some(g) = group_of.get(p.patient_id.as_str()) {
            groups.entry(g).or_default().push(p.clone());
        }
    }
    let mut out = Vec::new();
    for (g, ps) in groups {
        for level in [Level::Ic, Level::Patient] {
            let mut m = compute_metrics(&ps, level);
            m.group = Some(g.to_owned());
            out.push(m);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum TestOutcome {
    Value { statistic: f64, p_value: f64 },
    Degenerate,
}

impl TestOutcome {
    pub fn p_value(&self) -> Option<f64> {
        match self {
            TestOutcome::Value { p_value, .. } => Some(*p_value),
            TestOutcome::Degenerate => None,
        }
    }

    pub fn statistic(&self) -> Option<f64> {
        match self {
            TestOutcome::Value { statistic, .. } => Some(*statistic),
            TestOutcome::Degenerate => None,
        }
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20)
            .map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp())
            .sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        2.0 * s
    };
    p.clamp(0.0, 1.0)
}

/// One-sample KS statistic against a normal with the sample mean and
/// standard deviation; the p-value uses the asymptotic distribution of
/// `sqrt(n) D` and ignores that the parameters were estimated.
pub fn ks_normality_test(samples: &[f64]) -> Result<TestOutcome> {
    if samples.len() < 3 {
        return Err(Error::arg(format!("KS test needs n >= 3, got {}", samples.len())));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("KS test samples must be finite"));
    }
    let (m, v) = mean_var(samples);
    if !(m.is_finite() && v.is_finite()) {
        return Err(Error::Numeric("sample mean or variance overflowed".into()));
    }
    if !(v > 0.0) {
        return Ok(TestOutcome::Degenerate);
    }
    let normal = Normal::new(m, v.sqrt()).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let f = normal.cdf(xi);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    Ok(TestOutcome::Value {
        statistic: d,
        p_value: kolmogorov_sf(n.sqrt() * d),
    })
}

/// Welch's t-test of `mean(a) > mean(b)` with Welch–Satterthwaite degrees of
/// freedom.
pub fn welch_one_sided_t(a: &[f64], b: &[f64]) -> Result<TestOutcome> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::arg("Welch test needs at least 2 samples per group"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::arg("Welch test samples must be finite"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if ![ma, va, mb, vb].iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric("sample mean or variance overflowed".into()));
    }
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(TestOutcome::Degenerate);
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2
        / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(TestOutcome::Value {
        statistic: t,
        p_value: dist.sf(t),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `None` for the full model.
    pub dropped: Option<Feature>,
    pub ic: MetricsReport,
    pub patient: MetricsReport,
    /// Full-model F1 minus this row's F1.
    pub delta_f1_ic: Option<f64>,
    pub delta_f1_patient: Option<f64>,
}

impl fmt::Display for AblationRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.dropped.map_or("full model", Feature::name);
        let p = |v: Option<f64>| v.map_or("n/a".to_owned(), |v| format!("{:.1}", 100.0 * v));
        write!(
            f,
            "{name:<16} acc {:>5}  F1 {:>5}  dF1 {:>5}  patient F1 {:>5}  dF1 {:>5}",
            p(self.ic.accuracy),
            p(self.ic.f1),
            p(self.delta_f1_ic),
            p(self.patient.f1),
            p(self.delta_f1_patient)
        )
    }
}

fn delta(full: Option<f64>, other: Option<f64>) -> Option<f64> {
    Some(full? - other?)
}

/// The full model followed by one row per dropped feature, all sharing the
/// same out-of-fold gate decisions.
pub fn ablation_study(ics: &[CachedIc], gate: &[BinaryLabel], cfg: &EkiConfig) -> Result<Vec<AblationRow>> {
    let metrics = |dropped| -> Result<(MetricsReport, MetricsReport)> {
        let run = loocv_eki(ics, gate, cfg, dropped)?;
        let preds = run.predictions(ics);
        Ok((compute_metrics(&preds, Level::Ic), compute_metrics(&preds, Level::Patient)))
    };
    let (full_ic, full_pat) = metrics(None)?;
    let mut rows = vec![AblationRow {
        dropped: None,
        delta_f1_ic: Some(0.0),
        delta_f1_patient: Some(0.0),
        ic: full_ic.clone(),
        patient: full_pat.clone(),
    }];
    for f in Feature::ALL {
        let (ic, patient) = metrics(Some(f))?;
        rows.push(AblationRow {
            dropped: Some(f),
            delta_f1_ic: delta(full_ic.f1, ic.f1),
            delta_f1_patient: delta(full_pat.f1, patient.f1),
            ic,
            patient,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(p: &str, predicted: Label, truth: Label) -> Prediction {
        Prediction {
            patient_id: p.into(),
            predicted,
            truth,
        }
    }

    #[test]
    fn overflowing_samples_are_numeric_errors() {
        let big = [1e308, 1e308, -1e308, 5.0];
        assert!(matches!(ks_normality_test(&big), Err(Error::Numeric(_))));
        assert!(matches!(welch_one_sided_t(&big, &[0.0, 1.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn precision_from_counts() {
        use Label::*;
        let ps = vec![
            pred("a", Soz, Soz),
            pred("a", Soz, Soz),
            pred("a", Soz, Soz),
            pred("a", Soz, Rsn),
            pred("a", Rsn, Rsn),
        ];
        let m = compute_metrics(&ps, Level::Ic);
        assert_eq!(m.precision, Some(0.75));
        assert_eq!(m.sensitivity, Some(1.0));
        assert_eq!(m.accuracy, Some(0.8));
    }

    #[test]
    fn f1_matches_table_values() {
        let f = f1_score(Some(0.936), Some(0.897)).unwrap();
        assert!((f - 0.916).abs() < 5e-4, "{f}");
    }

    #[test]
    fn no_positive_calls() {
        let ps = vec![pred("a", Label::Rsn, Label::Soz)];
        let m = compute_metrics(&ps, Level::Ic);
        assert_eq!(m.precision, None);
        assert_eq!(m.sensitivity, Some(0.0));
        assert_eq!(m.f1, None);
    }

    #[test]
    fn patient_level_first_match() {
        use Label::*;
        let ps = vec![
            // TP: one correct SOZ call beside a wrong one.
            pred("p1", Soz, Soz),
            pred("p1", Soz, Rsn),
            // FP: SOZ calls, none correct, although a true SOZ exists.
            pred("p2", Soz, Rsn),
            pred("p2", Rsn, Soz),
            // FN
            pred("p3", Rsn, Soz),
            // TN
            pred("p4", Noise, Noise),
        ];
        let m = compute_metrics(&ps, Level::Patient);
        assert_eq!(
            m.confusion,
            Confusion {
                tp: 1,
                fp: 1,
                fn_: 1,
                tn: 1
            }
        );
        assert_eq!(m.n, 4);
        assert_eq!(m.accuracy, Some(0.5));
    }

    #[test]
    fn fewer_than_two_patients_rejected() {
        assert!(loocv_folds(&["a", "a"]).is_err());
        let folds = loocv_folds(&["b", "a", "b", "c"]).unwrap();
        assert_eq!(folds.len(), 3);
        assert_eq!(folds[1].test, vec![0, 2]);
        assert_eq!(folds[1].train, vec![1, 3]);
    }

    #[test]
    fn leak_detected() {
        let fold = Fold {
            test_patient: "a".into(),
            train: vec![0, 1],
            test: vec![2],
        };
        assert!(fold.check(&["b", "a", "a"]).is_err());
    }

    #[test]
    fn kolmogorov_critical_values() {
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-4);
        assert!((kolmogorov_sf(0.8276) - 0.5).abs() < 1e-3);
        // Both series agree where they meet.
        let a = kolmogorov_sf(1.18 - 1e-12);
        let b = kolmogorov_sf(1.18);
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn constant_samples_are_degenerate() {
        assert_eq!(ks_normality_test(&[2.0; 5]).unwrap(), TestOutcome::Degenerate);
        assert_eq!(
            welch_one_sided_t(&[1.0, 1.0], &[2.0, 2.0]).unwrap(),
            TestOutcome::Degenerate
        );
        assert!(ks_normality_test(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn identical_groups_give_half() {
        let a = [1.0, 2.0, 4.0, 8.0];
        let p = welch_one_sided_t(&a, &a).unwrap().p_value().unwrap();
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn age_bins() {
        assert_eq!(age_bin(0.0), "age [0,5)");
        assert_eq!(age_bin(5.0), "age [5,13)");
        assert_eq!(age_bin(18.0), "age [13,18]");
        assert_eq!(age_bin(18.5), "age other");
    }
}
