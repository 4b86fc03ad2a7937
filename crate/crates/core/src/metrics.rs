//! Classification and regression metrics and the evaluation runner.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Record;
use crate::error::{Error, Result};
use crate::heads::{COARSE_CLASSES, FINE_CLASSES};
use crate::model::{AblationToggles, DualEncoderModel};

/// Returned as R² when targets are constant but predictions miss them.
pub const R2_DEGENERATE: f64 = -1e12;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidInput(format!("{a} predictions against {b} labels")));
    }
    if a == 0 {
        return Err(Error::InvalidInput("no predictions to score".into()));
    }
    Ok(())
}

/// `(accuracy, macro_f1)` over `n_classes`. A class with `P + R = 0`
/// contributes F1 = 0, including classes absent from both inputs.
pub fn classification_metrics(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<(f64, f64)> {
    check_lengths(preds.len(), labels.len())?;
    if let Some(&bad) = preds.iter().chain(labels).find(|&&c| c >= n_classes) {
        return Err(Error::InvalidInput(format!("class {bad} out of range for {n_classes} classes")));
    }
    let mut tp = vec![0usize; n_classes];
    let mut predicted = vec![0usize; n_classes];
    let mut actual = vec![0usize; n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        predicted[p] += 1;
        actual[l] += 1;
        if p == l {
            tp[p] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let f1_sum: f64 = (0..n_classes)
        .map(|c| {
            let p = ratio(tp[c], predicted[c]);
            let r = ratio(tp[c], actual[c]);
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        })
        .sum();
    Ok((ratio(correct, labels.len()), f1_sum / n_classes as f64))
}

/// `(mae, mse, r2)`.
pub fn regression_metrics(preds: &[f64], targets: &[f64]) -> Result<(f64, f64, f64)> {
    check_lengths(preds.len(), targets.len())?;
    let n = preds.len() as f64;
    let (abs_sum, ss_res) = preds
        .iter()
        .zip(targets)
        .fold((0.0, 0.0), |(a, s), (p, t)| (a + (p - t).abs(), s + (p - t) * (p - t)));
    let mean = targets.iter().sum::<f64>() / n;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        0.0
    } else {
        log::warn!("R² undefined for constant targets with nonzero residuals; reporting {R2_DEGENERATE}");
        R2_DEGENERATE
    };
    Ok((abs_sum / n, ss_res / n, r2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub coarse_acc: f64,
    pub fine_acc: f64,
    pub coarse_f1: f64,
    pub fine_f1: f64,
    pub mae: f64,
    pub mse: f64,
    pub r2: f64,
}

pub const METRICS_CSV_HEADER: &str = "run_id,variant,coarse_acc,fine_acc,coarse_f1,fine_f1,mae,mse,r2";

impl MetricsReport {
    pub fn from_predictions(
        coarse: (&[usize], &[usize]),
        fine: (&[usize], &[usize]),
        intensity: (&[f64], &[f64]),
    ) -> Result<Self> {
        let (coarse_acc, coarse_f1) = classification_metrics(coarse.0, coarse.1, COARSE_CLASSES)?;
        let (fine_acc, fine_f1) = classification_metrics(fine.0, fine.1, FINE_CLASSES)?;
        let (mae, mse, r2) = regression_metrics(intensity.0, intensity.1)?;
        Ok(Self {
            coarse_acc,
            fine_acc,
            coarse_f1,
            fine_f1,
            mae,
            mse,
            r2,
        })
    }

    pub fn values(&self) -> [f64; 7] {
        [self.coarse_acc, self.fine_acc, self.coarse_f1, self.fine_f1, self.mae, self.mse, self.r2]
    }

    /// One CSV row matching [`METRICS_CSV_HEADER`].
    pub fn csv_row(&self, run_id: &str, variant: &str) -> String {
        let vals: Vec<String> = self.values().iter().map(|v| format!("{v:.6}")).collect();
        format!("{run_id},{variant},{}", vals.join(","))
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = ["C. Acc", "F. Acc", "C. F1", "F. F1", "MAE", "MSE", "R2"];
        for name in names {
            write!(f, "{name:>9}")?;
        }
        writeln!(f)?;
        for v in self.values() {
            write!(f, "{v:>9.4}")?;
        }
        Ok(())
    }
}

/// Scores `model` on `records` without dropout.
pub fn evaluate(model: &DualEncoderModel, records: &[Record], toggles: &AblationToggles) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::InvalidInput("evaluation set is empty".into()));
    }
    let n = records.len();
    let (mut pc, mut pf, mut pi) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for r in records {
        let p = model.predict(&r.token_ids, toggles)?;
        pc.push(p.coarse);
        pf.push(p.fine);
        pi.push(p.intensity);
    }
    let lc: Vec<usize> = records.iter().map(|r| r.coarse_label).collect();
    let lf: Vec<usize> = records.iter().map(|r| r.fine_label).collect();
    let li: Vec<f64> = records.iter().map(|r| r.intensity).collect();
    MetricsReport::from_predictions((&pc, &lc), (&pf, &lf), (&pi, &li))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn argmax_prefers_lowest_tie() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[-1.0, -0.5]), 1);
    }

    #[test]
    fn hand_examples_classification() {
        assert_eq!(classification_metrics(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap(), (1.0, 1.0));
        let (acc, f1) = classification_metrics(&[0, 1, 1, 2], &[0, 0, 1, 2], 3).unwrap();
        assert_eq!(acc, 0.75);
        assert!((f1 - 7.0 / 9.0).abs() < 1e-12);
        // Class 2 absent from both sides.
        let (acc, f1) = classification_metrics(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(acc, 1.0);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn classification_errors() {
        assert!(classification_metrics(&[0], &[0, 1], 2).is_err());
        assert!(classification_metrics(&[], &[], 2).is_err());
        assert!(classification_metrics(&[0], &[2], 2).is_err());
    }

    #[test]
    fn hand_examples_regression() {
        assert_eq!(regression_metrics(&[0.2, 0.9], &[0.2, 0.9]).unwrap(), (0.0, 0.0, 1.0));
        let (_, _, r2) = regression_metrics(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(r2, 0.0);
        let (mae, mse, r2) = regression_metrics(&[0.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).unwrap();
        assert!((mae - 1.0 / 3.0).abs() < 1e-12);
        assert!((mse - 1.0 / 3.0).abs() < 1e-12);
        assert!((r2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_targets() {
        assert_eq!(regression_metrics(&[0.5, 0.5], &[0.5, 0.5]).unwrap().2, 0.0);
        assert_eq!(regression_metrics(&[0.4, 0.5], &[0.5, 0.5]).unwrap().2, R2_DEGENERATE);
        assert!(regression_metrics(&[0.4], &[]).is_err());
    }

    #[test]
    fn csv_row_layout() {
        let r = MetricsReport {
            coarse_acc: 1.0,
            fine_acc: 0.5,
            coarse_f1: 0.25,
            fine_f1: 0.125,
            mae: 0.1,
            mse: 0.01,
            r2: -0.5,
        };
        assert_eq!(
            r.csv_row("run", "full"),
            "run,full,1.000000,0.500000,0.250000,0.125000,0.100000,0.010000,-0.500000"
        );
        assert_eq!(METRICS_CSV_HEADER.split(',').count(), r.csv_row("a", "b").split(',').count());
    }

    proptest! {
        #[test]
        fn mae_squared_bounded_by_mse(pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..64)) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (mae, mse, r2) = regression_metrics(&p, &t).unwrap();
            prop_assert!(mae * mae <= mse * (1.0 + 1e-12) + 1e-300);
            prop_assert!(r2 <= 1.0);
        }

        #[test]
        fn metrics_are_permutation_invariant(
            pairs in prop::collection::vec((0usize..5, 0usize..5), 1..40),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let split = |v: &[(usize, usize)]| -> (Vec<usize>, Vec<usize>) { v.iter().copied().unzip() };
            let (p1, l1) = split(&pairs);
            let (p2, l2) = split(&shuffled);
            let a = classification_metrics(&p1, &l1, 5).unwrap();
            let b = classification_metrics(&p2, &l2, 5).unwrap();
            prop_assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
            prop_assert!(a.1 <= 1.0 && (0.0..=1.0).contains(&a.0));
        }
    }
}
