//! End-to-end leave-one-patient-out evaluation and its JSON report.

use log::info;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{BinaryLabel, Dataset, Label};
use crate::error::Result;
use crate::eval::{
    ablation_study, analyze_dataset, compute_metrics, group_metrics, loocv_baseline, loocv_eki, loocv_gate,
    AblationRow, CachedIc, FoldRecord, GroupBy, Level, MetricsReport, Prediction,
};
use crate::features::Feature;
use crate::fusion::ClassificationResult;
use crate::noise_net::prepare_inputs;

pub const EVALUATION_FORMAT: &str = "sozloc-evaluation";
pub const EVALUATION_VERSION: u32 = 1;

/// Where the per-IC NOISE decisions come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateSource {
    /// A noise network trained per fold without the test patient.
    #[default]
    Loocv,
    /// The annotated labels, which isolates the expert model.
    Labels,
}

impl std::str::FromStr for GateSource {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loocv" => Ok(GateSource::Loocv),
            "labels" => Ok(GateSource::Labels),
            _ => Err(crate::Error::Argument(format!(
                "unknown gate source {s:?} (expected loocv or labels)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluateOptions {
    pub gate: GateSource,
    pub dropped: Option<Feature>,
    pub group: Option<GroupBy>,
    pub ablation: bool,
    pub baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineMetrics {
    pub ic: MetricsReport,
    pub patient: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub options: EvaluateOptions,
    pub n_patients: usize,
    pub n_ics: usize,
    /// Fraction of ICs whose gate decision matches the annotated NOISE flag.
    pub gate_accuracy: f64,
    pub ic: MetricsReport,
    pub patient: MetricsReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<Vec<AblationRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineMetrics>,
    pub folds: Vec<FoldRecord>,
    pub results: Vec<ClassificationResult>,
}

/// Out-of-fold gate decisions for every IC of `ics`.
pub fn gate_decisions(
    dataset: &Dataset,
    ics: &[CachedIc],
    cfg: &RunConfig,
    source: GateSource,
) -> Result<Vec<BinaryLabel>> {
    match source {
        GateSource::Labels => Ok(ics.iter().map(|c| c.label.binary()).collect()),
        GateSource::Loocv => {
            let inputs = prepare_inputs(dataset, &cfg.gate)?;
            let labels: Vec<Label> = ics.iter().map(|c| c.label).collect();
            let pids: Vec<&str> = ics.iter().map(|c| c.patient_id.as_str()).collect();
            loocv_gate(&inputs, &labels, &pids, &cfg.gate, &cfg.train_config())
        }
    }
}

/// Out-of-fold predictions of the three-class CNN baseline.
pub fn baseline_predictions(dataset: &Dataset, ics: &[CachedIc], cfg: &RunConfig) -> Result<Vec<Prediction>> {
    let inputs = prepare_inputs(dataset, &cfg.baseline)?;
    let labels: Vec<Label> = ics.iter().map(|c| c.label).collect();
    let pids: Vec<&str> = ics.iter().map(|c| c.patient_id.as_str()).collect();
    let predicted = loocv_baseline(&inputs, &labels, &pids, &cfg.baseline, &cfg.train_config())?;
    Ok(predicted
        .into_iter()
        .zip(ics)
        .map(|(p, c)| Prediction {
            patient_id: c.patient_id.clone(),
            predicted: p,
            truth: c.label,
        })
        .collect())
}

/// Runs the full pipeline under leave-one-patient-out on a labeled dataset.
pub fn evaluate(dataset: &Dataset, cfg: &RunConfig, opts: &EvaluateOptions) -> Result<EvaluationReport> {
    cfg.validate()?;
    let ics = analyze_dataset(dataset, &cfg.features)?;
    info!("features extracted for {} ICs", ics.len());
    let gate = gate_decisions(dataset, &ics, cfg, opts.gate)?;
    let gate_hits = gate.iter().zip(&ics).filter(|(g, c)| **g == c.label.binary()).count();
    info!("gate decisions ready");
    let eki_cfg = cfg.eki_config();
    let run = loocv_eki(&ics, &gate, &eki_cfg, opts.dropped)?;
    let preds = run.predictions(&ics);
    let ablation = if opts.ablation {
        Some(ablation_study(&ics, &gate, &eki_cfg)?)
    } else {
        None
    };
    let baseline = if opts.baseline {
        let bp = baseline_predictions(dataset, &ics, cfg)?;
        info!("baseline done");
        Some(BaselineMetrics {
            ic: compute_metrics(&bp, Level::Ic),
            patient: compute_metrics(&bp, Level::Patient),
        })
    } else {
        None
    };
    Ok(EvaluationReport {
        format: EVALUATION_FORMAT.into(),
        version: EVALUATION_VERSION,
        config: cfg.clone(),
        options: opts.clone(),
        n_patients: dataset.patients.len(),
        n_ics: ics.len(),
        gate_accuracy: gate_hits as f64 / ics.len().max(1) as f64,
        ic: compute_metrics(&preds, Level::Ic),
        patient: compute_metrics(&preds, Level::Patient),
        groups: opts.group.map(|g| group_metrics(&preds, dataset, g)).unwrap_or_default(),
        ablation,
        baseline,
        folds: run.folds,
        results: run.results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom_dataset, PhantomSpec};

    fn small() -> (Dataset, RunConfig) {
        let cfg = RunConfig {
            phantom: PhantomSpec {
                n_patients: 3,
                ics_per_patient: 10,
                class_mix: (0.4, 0.4, 0.2),
                ..PhantomSpec::default()
            },
            ..RunConfig::default()
        };
        (generate_phantom_dataset(&cfg.phantom).unwrap().dataset, cfg)
    }

    #[test]
    fn label_gate_report_is_complete() {
        let (ds, cfg) = small();
        let opts = EvaluateOptions {
            gate: GateSource::Labels,
            group: Some(GroupBy::Sex),
            ablation: true,
            ..EvaluateOptions::default()
        };
        let r = evaluate(&ds, &cfg, &opts).unwrap();
        assert_eq!(r.n_patients, 3);
        assert_eq!(r.results.len(), 30);
        assert_eq!(r.gate_accuracy, 1.0);
        assert_eq!(r.folds.len(), 3);
        assert_eq!(r.ablation.as_ref().unwrap().len(), 5);
        assert!(!r.groups.is_empty());
        assert!(r.baseline.is_none());
    }

    #[test]
    fn report_json_round_trips() {
        let (ds, cfg) = small();
        let opts = EvaluateOptions {
            gate: GateSource::Labels,
            dropped: Some(Feature::SineGini),
            ..EvaluateOptions::default()
        };
        let r = evaluate(&ds, &cfg, &opts).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvaluationReport>(&s).unwrap(), r);
    }

    #[test]
    fn gate_source_parses() {
        assert_eq!("labels".parse::<GateSource>().unwrap(), GateSource::Labels);
        assert!("cnn".parse::<GateSource>().is_err());
    }
}
