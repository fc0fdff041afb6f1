//! Repeated split / train / infer / score experiment and its reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::datagen::generate_cohort;
use crate::encoder::{encode, ModelParams};
use crate::error::{Error, Result};
use crate::inference::ReferenceSet;
use crate::linalg::{mean, std_pop};
use crate::preprocess::{prepare_cohort, split_cohort, PatientRecord, SplitPlan};
use crate::trainer::{train, TrainTrace};

use super::correlation::IterationTable;
use super::metrics::{auc, average_precision};

/// Tolerance used when re-deriving aggregates from iteration rows.
const AGGREGATE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientMetrics {
    pub patient_id: String,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub patients: Vec<PatientMetrics>,
    /// Test patients without both classes, left out of the means.
    pub excluded: usize,
    pub skipped: bool,
    pub mean_auc: Option<f64>,
    pub mean_ap: Option<f64>,
    pub final_train_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub auc: Summary,
    pub ap: Summary,
    pub iterations_used: usize,
    pub iterations_skipped: usize,
    pub excluded_patients: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Always "population": standard deviations divide by the number of
    /// iterations.
    pub std_kind: String,
    /// "per-patient" or "pooled".
    pub metric_scope: String,
    pub config: Value,
    pub iterations: Vec<IterationRecord>,
    pub aggregate: Aggregate,
}

fn aggregate(iterations: &[IterationRecord]) -> Result<Aggregate> {
    let used: Vec<&IterationRecord> = iterations.iter().filter(|r| !r.skipped).collect();
    if used.is_empty() {
        return Err(Error::UndefinedMetric("every iteration was skipped".into()));
    }
    let aucs: Vec<f64> = used.iter().filter_map(|r| r.mean_auc).collect();
    let aps: Vec<f64> = used.iter().filter_map(|r| r.mean_ap).collect();
    Ok(Aggregate {
        auc: Summary {
            mean: mean(&aucs),
            std: std_pop(&aucs),
        },
        ap: Summary {
            mean: mean(&aps),
            std: std_pop(&aps),
        },
        iterations_used: used.len(),
        iterations_skipped: iterations.len() - used.len(),
        excluded_patients: iterations.iter().map(|r| r.excluded).sum(),
    })
}

impl MetricsReport {
    pub fn new(config: Value, pooled: bool, iterations: Vec<IterationRecord>) -> Result<Self> {
        let aggregate = aggregate(&iterations)?;
        Ok(Self {
            std_kind: "population".into(),
            metric_scope: if pooled { "pooled" } else { "per-patient" }.into(),
            config,
            iterations,
            aggregate,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a report and checks that its aggregate matches its rows.
    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        let again = aggregate(&report.iterations)?;
        let close = |a: &Summary, b: &Summary| {
            (a.mean - b.mean).abs() <= AGGREGATE_TOL && (a.std - b.std).abs() <= AGGREGATE_TOL
        };
        if !close(&again.auc, &report.aggregate.auc)
            || !close(&again.ap, &report.aggregate.ap)
            || again.iterations_used != report.aggregate.iterations_used
            || again.excluded_patients != report.aggregate.excluded_patients
        {
            return Err(Error::Data("report aggregate does not match its iteration rows".into()));
        }
        Ok(report)
    }

    pub fn iteration_table(&self, patient_ids: Vec<String>) -> Result<IterationTable> {
        let mut table = IterationTable::new(patient_ids);
        for r in self.iterations.iter().filter(|r| !r.skipped) {
            if let Some(ap) = r.mean_ap {
                table.push(r.iteration, ap, &r.train_ids)?;
            }
        }
        Ok(table)
    }
}

/// Everything one iteration produces.
#[derive(Clone, Debug)]
pub struct IterationOutput {
    pub record: IterationRecord,
    pub split: SplitPlan,
    pub params: ModelParams,
    pub trace: TrainTrace,
}

fn select<'a>(cohort: &'a [PatientRecord], ids: &[String]) -> Vec<PatientRecord> {
    let by_id = |id: &String| cohort.iter().find(|r| &r.patient_id == id);
    ids.iter().filter_map(by_id).cloned().collect::<Vec<_>>()
}

/// One split / train / infer / score round with seed `master_seed + iteration`.
pub fn run_iteration(cohort: &[PatientRecord], cfg: &ExperimentConfig, iteration: usize) -> Result<IterationOutput> {
    let seed = cfg.master_seed.wrapping_add(iteration as u64);
    let ids: Vec<String> = cohort.iter().map(|r| r.patient_id.clone()).collect();
    let split = split_cohort(&ids, seed, cfg.eval.train_fraction)?;
    let train_set = select(cohort, &split.train_ids);
    let test_set = select(cohort, &split.test_ids);
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    let (params, trace) = train(&train_set, &cfg.encoder, &train_cfg)?;

    let n_refs = cfg.inference.max_references.unwrap_or(train_set.len()).min(train_set.len());
    let refs = ReferenceSet::encode(&train_set[..n_refs], &params)?;
    let mut patients = Vec::with_capacity(test_set.len());
    let (mut pooled_scores, mut pooled_labels) = (Vec::new(), Vec::new());
    let mut excluded = 0;
    for rec in &test_set {
        let z = encode(&rec.patient_id, rec.x(), &params)?;
        let scores = refs.score(&z.z)?.0;
        let (auc_v, ap_v) = if rec.has_both_classes() {
            (Some(auc(&scores, rec.y())?), Some(average_precision(&scores, rec.y())?))
        } else {
            log::info!("iteration {iteration}: test patient {} is single-class; excluded", rec.patient_id);
            excluded += 1;
            (None, None)
        };
        pooled_scores.extend_from_slice(&scores);
        pooled_labels.extend_from_slice(rec.y());
        patients.push(PatientMetrics {
            patient_id: rec.patient_id.clone(),
            auc: auc_v,
            ap: ap_v,
        });
    }
    let (mean_auc, mean_ap) = if cfg.eval.pooled {
        (auc(&pooled_scores, &pooled_labels).ok(), average_precision(&pooled_scores, &pooled_labels).ok())
    } else {
        let aucs: Vec<f64> = patients.iter().filter_map(|p| p.auc).collect();
        let aps: Vec<f64> = patients.iter().filter_map(|p| p.ap).collect();
        (
            (!aucs.is_empty()).then(|| mean(&aucs)),
            (!aps.is_empty()).then(|| mean(&aps)),
        )
    };
    let skipped = mean_auc.is_none() || mean_ap.is_none();
    if skipped {
        log::warn!("iteration {iteration}: no test patient has both classes; skipped");
    }
    let record = IterationRecord {
        iteration,
        seed,
        train_ids: split.train_ids.clone(),
        test_ids: split.test_ids.clone(),
        patients,
        excluded,
        skipped,
        mean_auc,
        mean_ap,
        final_train_loss: trace.final_loss().unwrap_or(f64::NAN),
    };
    Ok(IterationOutput {
        record,
        split,
        params,
        trace,
    })
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: MetricsReport,
    pub table: IterationTable,
    /// Outputs of iteration 0 (model, split, trace) for plotting.
    pub first: IterationOutput,
    /// Wall-clock training seconds per iteration (kept out of the report).
    pub train_seconds: Vec<f64>,
}

/// Runs `cfg.eval.n_iterations` independent iterations on up to `jobs`
/// threads; results are merged in iteration order.
pub fn run_experiment(cohort: &[PatientRecord], cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutcome> {
    if cohort.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "the experiment needs at least 5 patients, got {}",
            cohort.len()
        )));
    }
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Runtime(e.to_string()))?;
    let outputs: Vec<IterationOutput> = pool.install(|| {
        (0..cfg.eval.n_iterations)
            .into_par_iter()
            .map(|it| {
                let out = run_iteration(cohort, cfg, it);
                if let Ok(o) = &out {
                    log::info!(
                        "iteration {it}: AUC {:?} AP {:?} ({:.1}s training)",
                        o.record.mean_auc,
                        o.record.mean_ap,
                        o.trace.epoch_seconds.iter().sum::<f64>()
                    );
                }
                out
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let train_seconds = outputs.iter().map(|o| o.trace.epoch_seconds.iter().sum()).collect();
    let records: Vec<IterationRecord> = outputs.iter().map(|o| o.record.clone()).collect();
    let report = MetricsReport::new(serde_json::to_value(cfg)?, cfg.eval.pooled, records)?;
    let table = report.iteration_table(cohort.iter().map(|r| r.patient_id.clone()).collect())?;
    let first = outputs.into_iter().next().expect("at least one iteration");
    Ok(ExperimentOutcome {
        report,
        table,
        first,
        train_seconds,
    })
}

/// Generates the synthetic cohort described by `cfg` and preprocesses it.
pub fn build_cohort(cfg: &ExperimentConfig) -> Result<Vec<PatientRecord>> {
    let raw = generate_cohort(&cfg.generator)?;
    prepare_cohort(&raw, &cfg.preprocess)
}

/// Runs the experiment twice, with and without cross-channel attention;
/// every other setting is shared. Returns `(with, without, table)`.
pub fn run_ablation(
    cohort: &[PatientRecord],
    cfg: &ExperimentConfig,
    jobs: usize,
) -> Result<(ExperimentOutcome, ExperimentOutcome, AblationTable)> {
    let mut with_cfg = cfg.clone();
    with_cfg.encoder.use_cross_attention = true;
    let mut without_cfg = cfg.clone();
    without_cfg.encoder.use_cross_attention = false;
    let with_ca = run_experiment(cohort, &with_cfg, jobs)?;
    let without_ca = run_experiment(cohort, &without_cfg, jobs)?;
    let table = AblationTable::new(&with_ca.report, &without_ca.report);
    Ok((with_ca, without_ca, table))
}

/// Dotted paths whose values differ between two JSON documents.
pub fn config_diff(a: &Value, b: &Value) -> Vec<String> {
    fn walk(a: &Value, b: &Value, path: &str, out: &mut Vec<String>) {
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
                keys.sort();
                keys.dedup();
                for k in keys {
                    let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                    match (x.get(k), y.get(k)) {
                        (Some(u), Some(v)) => walk(u, v, &p, out),
                        _ => out.push(p),
                    }
                }
            }
            _ if a != b => out.push(path.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(a, b, "", &mut out);
    out
}

/// Mean ± std of AP and AUC with and without cross-channel attention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub with_ca: Aggregate,
    pub without_ca: Aggregate,
    pub config_diff: Vec<String>,
}

impl AblationTable {
    pub fn new(with_ca: &MetricsReport, without_ca: &MetricsReport) -> Self {
        Self {
            with_ca: with_ca.aggregate.clone(),
            without_ca: without_ca.aggregate.clone(),
            config_diff: config_diff(&with_ca.config, &without_ca.config),
        }
    }

    /// The four cells as `(row, column, mean, std)`.
    pub fn cells(&self) -> [(&'static str, &'static str, f64, f64); 4] {
        let (w, wo) = (&self.with_ca, &self.without_ca);
        [
            ("With CA", "AP", w.ap.mean, w.ap.std),
            ("With CA", "AUC", w.auc.mean, w.auc.std),
            ("Without CA", "AP", wo.ap.mean, wo.ap.std),
            ("Without CA", "AUC", wo.auc.mean, wo.auc.std),
        ]
    }

    pub fn to_markdown(&self) -> String {
        let c = self.cells();
        let cell = |k: usize| format!("{:.3} ± {:.3}", c[k].2, c[k].3);
        format!(
            "| | AP | AUC |\n|---|---|---|\n| With CA | {} | {} |\n| Without CA | {} | {} |\n",
            cell(0),
            cell(1),
            cell(2),
            cell(3)
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,metric,mean,std\n");
        for (arm, metric, m, s) in self.cells() {
            out.push_str(&format!("{arm},{metric},{m},{s}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(it: usize, auc: f64, ap: f64) -> IterationRecord {
        IterationRecord {
            iteration: it,
            seed: it as u64,
            train_ids: vec!["a".into()],
            test_ids: vec!["b".into()],
            patients: vec![],
            excluded: 1,
            skipped: false,
            mean_auc: Some(auc),
            mean_ap: Some(ap),
            final_train_loss: 0.5,
        }
    }

    #[test]
    fn aggregate_uses_population_std_and_validates_on_load() {
        let report = MetricsReport::new(Value::Null, false, vec![record(0, 0.8, 0.6), record(1, 0.9, 0.7)]).unwrap();
        assert!((report.aggregate.auc.mean - 0.85).abs() < 1e-15);
        assert!((report.aggregate.auc.std - 0.05).abs() < 1e-12);
        assert_eq!(report.aggregate.excluded_patients, 2);
        let json = report.to_json().unwrap();
        assert_eq!(MetricsReport::from_json(&json).unwrap(), report);
        let tampered = json.replacen("\"mean\": 0.85", "\"mean\": 0.95", 1);
        assert_ne!(tampered, json);
        assert!(MetricsReport::from_json(&tampered).is_err());

        let one = MetricsReport::new(Value::Null, false, vec![record(0, 0.7, 0.4)]).unwrap();
        assert_eq!(one.aggregate.auc.mean, 0.7);
        assert_eq!(one.aggregate.auc.std, 0.0);
    }

    #[test]
    fn skipped_iterations_are_not_averaged() {
        let mut skipped = record(1, 0.0, 0.0);
        skipped.skipped = true;
        skipped.mean_auc = None;
        skipped.mean_ap = None;
        let r = MetricsReport::new(Value::Null, false, vec![record(0, 0.8, 0.6), skipped]).unwrap();
        assert_eq!(r.aggregate.iterations_used, 1);
        assert_eq!(r.aggregate.iterations_skipped, 1);
        assert_eq!(r.aggregate.ap.mean, 0.6);
        let table = r.iteration_table(vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].membership, vec![1, 0]);
    }

    #[test]
    fn ablation_table_has_four_cells_and_diff() {
        let mut a = serde_json::json!({"encoder": {"use_cross_attention": true, "hidden_size": 32}});
        let with = MetricsReport::new(a.clone(), false, vec![record(0, 0.8, 0.6)]).unwrap();
        a["encoder"]["use_cross_attention"] = Value::Bool(false);
        let without = MetricsReport::new(a, false, vec![record(0, 0.9, 0.7)]).unwrap();
        let t = AblationTable::new(&with, &without);
        assert_eq!(t.config_diff, vec!["encoder.use_cross_attention".to_string()]);
        assert_eq!(t.cells().len(), 4);
        assert_eq!(t.to_csv().lines().count(), 5);
        assert!(t.to_markdown().contains("| Without CA | 0.700 ± 0.000 | 0.900 ± 0.000 |"));
    }
}
