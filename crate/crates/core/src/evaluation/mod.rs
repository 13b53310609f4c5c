//! Grouped constrained splits, k-fold cross-validation, run-time benchmarks
//! and report rendering.

mod split;

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use split::{
    groups_by_set, parse_split, split_dataset, target_counts, FoldAssignment, SetKind, SplitRecord,
    DEFAULT_MAX_ATTEMPTS, MIN_CLASS_FRACTION, TARGET_FRACTIONS,
};

use crate::error::{Error, Result};
use crate::methods::{derive_seed, run_method, DataSplit, FittedMethod, MethodConfig, MethodId, MethodReport};
use crate::synthgen::LabeledScan;
use crate::voxcore::Dims3;

/// Human intrapersonal mean accuracy, in percent.
pub const HUMAN_REFERENCE_PCT: f64 = 78.29;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub assignment: FoldAssignment,
    pub report: MethodReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub folds: Vec<FoldOutcome>,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
}

pub fn fold_seed(master: u64, fold: usize) -> u64 {
    derive_seed(master, &format!("fold{fold}"))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// k independent split / fit / test runs. `run` receives the fold index, the
/// fold seed and the split; folds are spread over `workers` threads and
/// returned in fold order.
pub fn cross_validate_with<F>(
    scans: &[LabeledScan],
    k: usize,
    seed: u64,
    max_attempts: usize,
    workers: usize,
    run: F,
) -> Result<CrossValidation>
where
    F: Fn(usize, u64, &DataSplit) -> Result<MethodReport> + Sync,
{
    if k < 2 {
        return Err(Error::Argument(format!("cross-validation needs k >= 2, got {k}")));
    }
    let one = |fold: usize| -> Result<FoldOutcome> {
        let s = fold_seed(seed, fold);
        let wrap = |e: Error| Error::Fold {
            fold,
            source: Box::new(e),
        };
        let mut assignment = split_dataset(scans, s, max_attempts).map_err(wrap)?;
        assignment.fold = fold;
        let split = assignment.apply(scans).map_err(wrap)?;
        let report = run(fold, s, &split).map_err(wrap)?;
        Ok(FoldOutcome { assignment, report })
    };
    let workers = workers.clamp(1, k);
    let mut slots: Vec<Option<Result<FoldOutcome>>> = (0..k).map(|_| None).collect();
    if workers == 1 {
        for (fold, slot) in slots.iter_mut().enumerate() {
            *slot = Some(one(fold));
        }
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let one = &one;
                    scope.spawn(move || (w..k).step_by(workers).map(|f| (f, one(f))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (f, r) in h.join().expect("fold worker panicked") {
                    slots[f] = Some(r);
                }
            }
        });
    }
    let folds = slots
        .into_iter()
        .map(|s| s.expect("every fold ran"))
        .collect::<Result<Vec<_>>>()?;
    let accs: Vec<f64> = folds.iter().map(|f| f.report.meanacc).collect();
    let (mean, std) = mean_std(&accs);
    Ok(CrossValidation { folds, mean, std })
}

/// Cross-validates one method; each fold trains with its own fold seed.
pub fn cross_validate(
    method: MethodId,
    scans: &[LabeledScan],
    k: usize,
    seed: u64,
    cfg: &MethodConfig,
    workers: usize,
) -> Result<CrossValidation> {
    cross_validate_with(scans, k, seed, DEFAULT_MAX_ATTEMPTS, workers, |_, s, split| {
        let cfg = MethodConfig { seed: s, ..cfg.clone() };
        run_method(method, &cfg, split).map(|r| r.report)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRecord {
    pub method: MethodId,
    pub scans: usize,
    /// Wall-clock seconds of each pass over the test set.
    pub runs_s: Vec<f64>,
    pub median_s: f64,
}

/// Times `repeats` full passes of a fitted method over the test scans.
pub fn benchmark(
    method: MethodId,
    fitted: &mut FittedMethod,
    test: &[&LabeledScan],
    repeats: usize,
) -> Result<RuntimeRecord> {
    if test.is_empty() || repeats == 0 {
        return Err(Error::Argument("benchmark needs test scans and at least one repeat".into()));
    }
    let mut runs_s = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        fitted.predict_all(test)?;
        runs_s.push(start.elapsed().as_secs_f64());
    }
    let mut sorted = runs_s.clone();
    sorted.sort_by(f64::total_cmp);
    let median_s = sorted[sorted.len() / 2];
    Ok(RuntimeRecord {
        method,
        scans: test.len(),
        runs_s,
        median_s,
    })
}

pub fn format_resolution(r: Dims3) -> String {
    format!("{}x{}x{}", r[0], r[1], r[2])
}

/// Comparison table: one row per report, methods in table order.
pub fn render_report(reports: &[MethodReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Argument("report needs at least one method result".into()));
    }
    let mut sorted: Vec<&MethodReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.method);
    let mut s = String::from("method,title,runtime_s,resolution,meanacc\n");
    for r in sorted {
        let _ = writeln!(
            s,
            "{},{},{:.3},{},{:.6}",
            r.method,
            r.method.title(),
            r.runtime_s,
            format_resolution(r.resolution),
            r.meanacc
        );
    }
    Ok(s)
}

/// Per-fold accuracies with the mean and the human reference line, in percent.
pub fn render_chart(cv: &CrossValidation) -> String {
    let mut s = String::from("fold,meanacc_pct,mean_pct,std_pct,human_reference_pct\n");
    for f in &cv.folds {
        let _ = writeln!(
            s,
            "{},{:.4},{:.4},{:.4},{:.2}",
            f.assignment.fold,
            100.0 * f.report.meanacc,
            100.0 * cv.mean,
            100.0 * cv.std,
            HUMAN_REFERENCE_PCT
        );
    }
    s
}

/// Per-fold records without timings; identical inputs give identical bytes.
pub fn render_fold_records(cv: &CrossValidation) -> String {
    let mut s = String::from("fold,method,seed,config_hash,resolution,val_meanacc,meanacc,confusion\n");
    for f in &cv.folds {
        let r = &f.report;
        let cm: Vec<String> = r
            .confusion
            .iter()
            .map(|row| row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "))
            .collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.6},{}",
            f.assignment.fold,
            r.method,
            r.seed,
            r.config_hash,
            format_resolution(r.resolution),
            r.val_meanacc.map(|v| format!("{v:.6}")).unwrap_or_default(),
            r.meanacc,
            cm.join(";")
        );
    }
    s
}

pub fn render_timings(cv: &CrossValidation) -> String {
    let mut s = String::from("fold,method,runtime_s\n");
    for f in &cv.folds {
        let _ = writeln!(s, "{},{},{:.6}", f.assignment.fold, f.report.method, f.report.runtime_s);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(method: MethodId, meanacc: f64) -> MethodReport {
        MethodReport {
            method,
            meanacc,
            runtime_s: 1.0,
            resolution: [64, 64, 16],
            seed: 0,
            config_hash: "00".into(),
            confusion: vec![vec![0; 3]; 3],
            val_meanacc: None,
        }
    }

    #[test]
    fn report_rows_follow_table_order() {
        let reports: Vec<_> = MethodId::ALL.iter().rev().map(|&m| report(m, 0.5)).collect();
        let csv = render_report(&reports).unwrap();
        let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        let expected: Vec<&str> = MethodId::ALL.iter().map(|m| m.name()).collect();
        assert_eq!(names, expected);
        assert_eq!(render_report(&reports[..1]).unwrap().lines().count(), 2);
        assert!(render_report(&[]).is_err());
    }

    #[test]
    fn target_counts_round_to_half_and_quarters() {
        assert_eq!(target_counts(12), [6, 3, 3]);
        assert_eq!(target_counts(10), [5, 3, 2]);
        assert_eq!(target_counts(4), [2, 1, 1]);
    }
}
