//! Chi-square goodness-of-fit check of a learned feature.
//!
//! For each predicted class `k`, the label distribution among rows predicted
//! `k` in a validation environment is compared with the same conditional in
//! the training environment. A rejection for any class means the feature's
//! relation to the label is not stable across environments, so matching is
//! called for.

use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::numerics::{chi_square_sf, Rng};
use crate::scalar::Scalar;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_SAMPLE_SIZE: usize = 200;

/// Label counts among rows of `ds` that `model` predicts as `class`.
pub fn conditional_table<T: Scalar>(model: &Model<T>, ds: &LabeledDataset<T>, class: usize) -> Result<Vec<usize>> {
    let pred = model.predict(&ds.x)?;
    table_from_predictions(&pred, &ds.y, ds.num_classes as usize, class)
}

pub fn table_from_predictions(pred: &[u8], labels: &[u8], classes: usize, class: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0; classes];
    let mut any = false;
    for (&p, &y) in pred.iter().zip(labels) {
        if p as usize == class {
            counts[y as usize] += 1;
            any = true;
        }
    }
    if !any {
        return Err(Error::EmptyCell(class));
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofEntry {
    pub class: usize,
    pub observed: Vec<usize>,
    pub expected_proportions: Vec<f64>,
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    pub n_used: usize,
    /// Fewer than `n` validation rows were available; all of them were used.
    pub insufficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub n: usize,
    pub entries: Vec<GofEntry>,
    /// Classes that could not be tested, with the reason.
    pub skipped: Vec<(usize, String)>,
}

/// Chi-square test of the validation counts against the training proportions.
///
/// With more than `n` validation rows, `n` of them are drawn uniformly without
/// replacement.
pub fn gof_test(
    class: usize,
    train_counts: &[usize],
    valid_counts: &[usize],
    n: usize,
    rng: &mut Rng,
) -> Result<GofEntry> {
    let k = train_counts.len();
    if k < 2 || valid_counts.len() != k {
        return Err(Error::Dimension(format!(
            "count vectors of length {k} and {}",
            valid_counts.len()
        )));
    }
    let train_total: usize = train_counts.iter().sum();
    if train_total == 0 {
        return Err(Error::EmptyCell(class));
    }
    let valid_total: usize = valid_counts.iter().sum();
    if valid_total == 0 {
        return Err(Error::EmptyCell(class));
    }
    let (observed, insufficient) = if valid_total > n {
        let labels: Vec<usize> = valid_counts
            .iter()
            .enumerate()
            .flat_map(|(label, &c)| std::iter::repeat_n(label, c))
            .collect();
        let mut obs = vec![0; k];
        for i in rng.sample_indices(valid_total, n) {
            obs[labels[i]] += 1;
        }
        (obs, false)
    } else {
        (valid_counts.to_vec(), valid_total < n)
    };
    let n_used: usize = observed.iter().sum();
    let proportions: Vec<f64> = train_counts.iter().map(|&c| c as f64 / train_total as f64).collect();
    let mut statistic = 0.0;
    for (label, (&o, &p)) in observed.iter().zip(&proportions).enumerate() {
        let expected = n_used as f64 * p;
        if expected < 1.0 {
            return Err(Error::ExpectedCellTooSmall { label, expected });
        }
        statistic += (o as f64 - expected).powi(2) / expected;
    }
    let df = (k - 1) as u32;
    Ok(GofEntry {
        class,
        observed,
        expected_proportions: proportions,
        statistic,
        df,
        p_value: chi_square_sf(statistic, df)?,
        n_used,
        insufficient,
    })
}

/// One test per predicted class; untestable classes land in `skipped`.
pub fn gof_report<T: Scalar>(
    model: &Model<T>,
    train: &LabeledDataset<T>,
    valid: &LabeledDataset<T>,
    n: usize,
    rng: &mut Rng,
) -> Result<GofReport> {
    let k = model.classes();
    let train_pred = model.predict(&train.x)?;
    let valid_pred = model.predict(&valid.x)?;
    gof_report_from_predictions(&train_pred, &train.y, &valid_pred, &valid.y, k, n, rng)
}

pub fn gof_report_from_predictions(
    train_pred: &[u8],
    train_y: &[u8],
    valid_pred: &[u8],
    valid_y: &[u8],
    classes: usize,
    n: usize,
    rng: &mut Rng,
) -> Result<GofReport> {
    let mut report = GofReport {
        n,
        entries: Vec::new(),
        skipped: Vec::new(),
    };
    for class in 0..classes {
        let entry = table_from_predictions(train_pred, train_y, classes, class).and_then(|tc| {
            let vc = table_from_predictions(valid_pred, valid_y, classes, class)?;
            gof_test(class, &tc, &vc, n, rng)
        });
        match entry {
            Ok(e) => report.entries.push(e),
            Err(e @ (Error::EmptyCell(_) | Error::ExpectedCellTooSmall { .. })) => {
                report.skipped.push((class, e.to_string()))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    UseFmi,
    UseErm,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::UseFmi => "use_fmi",
            Decision::UseErm => "use_erm",
        }
    }
}

/// Reject (→ FMI) iff any tested class has `p < alpha`; no multiplicity correction.
pub fn decide_workflow(report: &GofReport, alpha: f64) -> Result<Decision> {
    if report.entries.is_empty() {
        return Err(Error::InvalidParameter("no class could be tested".into()));
    }
    Ok(if report.entries.iter().any(|e| e.p_value < alpha) {
        Decision::UseFmi
    } else {
        Decision::UseErm
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Architecture;
    use crate::numerics::Matrix;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn entry_with_p(class: usize, p: f64) -> GofEntry {
        GofEntry {
            class,
            observed: vec![],
            expected_proportions: vec![],
            statistic: 0.0,
            df: 1,
            p_value: p,
            n_used: 0,
            insufficient: false,
        }
    }

    #[test]
    fn perfect_fit() {
        let e = gof_test(0, &[100, 100], &[100, 100], 200, &mut Rng::new(0)).unwrap();
        assert_eq!(e.statistic, 0.0);
        assert_eq!(e.p_value, 1.0);
        assert!(!e.insufficient);
    }

    #[test]
    fn ninety_ten_against_half() {
        let e = gof_test(0, &[50, 50], &[90, 10], 100, &mut Rng::new(0)).unwrap();
        assert_eq!(e.statistic, 64.0);
        assert!(e.p_value < 1e-14);
        assert_eq!(e.df, 1);
    }

    #[test]
    fn subsamples_to_n() {
        let e = gof_test(1, &[30, 70], &[300, 700], 200, &mut Rng::new(1)).unwrap();
        assert_eq!(e.n_used, 200);
        assert_eq!(e.observed.iter().sum::<usize>(), 200);
    }

    #[test]
    fn insufficient_rows_flagged() {
        let e = gof_test(0, &[50, 50], &[40, 40], 200, &mut Rng::new(0)).unwrap();
        assert!(e.insufficient);
        assert_eq!(e.n_used, 80);
    }

    #[test]
    fn tiny_expected_cell_rejected() {
        let r = gof_test(0, &[999, 1], &[100, 100], 200, &mut Rng::new(0));
        assert!(matches!(r, Err(Error::ExpectedCellTooSmall { label: 1, .. })));
    }

    #[test]
    fn empty_validation_class() {
        assert!(matches!(
            gof_test(1, &[5, 5], &[0, 0], 10, &mut Rng::new(0)),
            Err(Error::EmptyCell(1))
        ));
    }

    #[test]
    fn constant_model_other_class_is_empty() {
        let mut m = Model::<f64>::zeros(&Architecture::linear(2, 2)).unwrap();
        m.classifier.bias = vec![1.0, 0.0];
        let ds = LabeledDataset::new(Matrix::zeros(6, 2), vec![0, 1, 0, 1, 0, 1], 2, "e", None).unwrap();
        assert!(matches!(conditional_table(&m, &ds, 1), Err(Error::EmptyCell(1))));
        assert_eq!(conditional_table(&m, &ds, 0).unwrap(), vec![3, 3]);
    }

    #[test]
    fn perfect_model_concentrates_counts() {
        let mut m = Model::<f64>::zeros(&Architecture::linear(1, 2)).unwrap();
        m.classifier.weights = Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![2.0], vec![-3.0]]).unwrap();
        let ds = LabeledDataset::new(x, vec![1, 0, 1, 0], 2, "e", None).unwrap();
        assert_eq!(conditional_table(&m, &ds, 1).unwrap(), vec![0, 2]);
        assert_eq!(conditional_table(&m, &ds, 0).unwrap(), vec![2, 0]);
    }

    #[test]
    fn decisions() {
        let all_one = GofReport {
            n: 200,
            entries: vec![entry_with_p(0, 1.0), entry_with_p(1, 1.0)],
            skipped: vec![],
        };
        assert_eq!(decide_workflow(&all_one, 0.05).unwrap(), Decision::UseErm);
        let one_low = GofReport {
            n: 200,
            entries: vec![entry_with_p(0, 0.8), entry_with_p(1, 0.001)],
            skipped: vec![],
        };
        assert_eq!(decide_workflow(&one_low, 0.05).unwrap(), Decision::UseFmi);
        let none = GofReport {
            n: 200,
            entries: vec![],
            skipped: vec![(0, "x".into())],
        };
        assert!(decide_workflow(&none, 0.05).is_err());
    }

    #[test]
    fn report_skips_untestable_classes() {
        let train_pred = vec![0, 0, 0, 0];
        let train_y = vec![0, 1, 0, 1];
        let r = gof_report_from_predictions(&train_pred, &train_y, &train_pred, &train_y, 2, 200, &mut Rng::new(0))
            .unwrap();
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].0, 1);
    }

    proptest! {
        #[test]
        fn relabeling_invariance(
            train in prop::collection::vec(20usize..200, 3),
            valid in prop::collection::vec(0usize..100, 3),
            perm in Just(vec![2usize, 0, 1]),
        ) {
            prop_assume!(valid.iter().sum::<usize>() > 0);
            let a = gof_test(0, &train, &valid, 1000, &mut Rng::new(0));
            let pt: Vec<usize> = perm.iter().map(|&i| train[i]).collect();
            let pv: Vec<usize> = perm.iter().map(|&i| valid[i]).collect();
            let b = gof_test(0, &pt, &pv, 1000, &mut Rng::new(0));
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert!((a.p_value - b.p_value).abs() <= 1e-12);
                    prop_assert!((0.0..=1.0).contains(&a.p_value));
                    prop_assert!(a.statistic >= 0.0);
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "relabeling changed testability"),
            }
        }
    }
}
