//! Segmentation metrics: confusion matrices and average per-class accuracy
//! (the mean over classes of correctly classified pixels in the class over
//! the class's pixel count), plus global pixel accuracy.

use crate::{Error, Label, Result};

/// L x L counts, ground truth in rows, predictions in columns, plus the
/// number of pixels excluded by the ignore label.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    labels: usize,
    counts: Vec<u64>,
    ignored: u64,
}

impl ConfusionMatrix {
    pub fn zeros(labels: usize) -> Self {
        Self {
            labels,
            counts: vec![0; labels * labels],
            ignored: 0,
        }
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    #[inline]
    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.labels + pred]
    }

    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    /// Ground-truth pixels of a class (row sum).
    pub fn class_total(&self, gt: usize) -> u64 {
        self.counts[gt * self.labels..(gt + 1) * self.labels]
            .iter()
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds another tally (e.g. a per-frame one) into this matrix.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.labels != self.labels {
            return Err(Error::DimensionMismatch {
                left: "confusion",
                right: "confusion",
                detail: format!("{} vs {} labels", self.labels, other.labels),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.ignored += other.ignored;
        Ok(())
    }
}

/// Tallies prediction against ground truth; pixels whose ground truth
/// equals `ignore` are excluded and counted separately.
pub fn confusion(
    pred: &[Label],
    gt: &[Label],
    labels: usize,
    ignore: Label,
) -> Result<ConfusionMatrix> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(labels);
    for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        if g == ignore {
            cm.ignored += 1;
            continue;
        }
        if g as usize >= labels {
            return Err(Error::LabelOutOfRange {
                label: g as usize,
                labels,
                variable: i,
            });
        }
        if p as usize >= labels {
            return Err(Error::LabelOutOfRange {
                label: p as usize,
                labels,
                variable: i,
            });
        }
        cm.counts[g as usize * labels + p as usize] += 1;
    }
    Ok(cm)
}

/// Average per-class accuracy plus the per-class vector and global pixel
/// accuracy. Classes with no ground-truth pixels are `None`.
#[derive(Debug, Clone)]
pub struct ClassAccuracy {
    pub per_class: Vec<Option<f64>>,
    pub average: f64,
    pub global: f64,
}

/// Averages the per-class accuracies, excluding classes absent from the
/// ground truth.
pub fn average_per_class_accuracy(cm: &ConfusionMatrix) -> Result<ClassAccuracy> {
    average_per_class_accuracy_with(cm, false)
}

/// As [`average_per_class_accuracy`], but `absent_as_zero` counts classes
/// without ground-truth pixels as zero accuracy instead of excluding them.
pub fn average_per_class_accuracy_with(
    cm: &ConfusionMatrix,
    absent_as_zero: bool,
) -> Result<ClassAccuracy> {
    let mut per_class = Vec::with_capacity(cm.labels());
    let mut sum = 0.0f64;
    let mut present = 0usize;
    let mut correct_total = 0u64;
    for l in 0..cm.labels() {
        let total = cm.class_total(l);
        let correct = cm.count(l, l);
        correct_total += correct;
        if total == 0 {
            per_class.push(None);
        } else {
            let acc = correct as f64 / total as f64;
            per_class.push(Some(acc));
            sum += acc;
            present += 1;
        }
    }
    if present == 0 {
        return Err(Error::NoEvaluatedPixels);
    }
    let denom = if absent_as_zero {
        cm.labels()
    } else {
        present
    };
    Ok(ClassAccuracy {
        per_class,
        average: sum / denom as f64,
        global: correct_total as f64 / cm.total() as f64,
    })
}

/// Renders the metrics as CSV. Column order: `class,gt_pixels,correct,
/// accuracy`, one row per class id ascending (accuracy empty for classes
/// absent from the ground truth), then an `average_per_class` row, a
/// `global` row, and an `ignored` row.
pub fn metrics_csv(cm: &ConfusionMatrix, acc: &ClassAccuracy) -> String {
    let mut out = String::from("class,gt_pixels,correct,accuracy\n");
    for l in 0..cm.labels() {
        let total = cm.class_total(l);
        let correct = cm.count(l, l);
        match acc.per_class[l] {
            Some(a) => out.push_str(&format!("{l},{total},{correct},{a:.6}\n")),
            None => out.push_str(&format!("{l},{total},{correct},\n")),
        }
    }
    out.push_str(&format!("average_per_class,,,{:.6}\n", acc.average));
    out.push_str(&format!(
        "global,{},{},{:.6}\n",
        cm.total(),
        (0..cm.labels()).map(|l| cm.count(l, l)).sum::<u64>(),
        acc.global
    ));
    out.push_str(&format!("ignored,{},,\n", cm.ignored()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction_is_diagonal() {
        let gt: Vec<Label> = vec![0, 1, 2, 1, 0];
        let cm = confusion(&gt, &gt, 3, 255).unwrap();
        for g in 0..3 {
            for p in 0..3 {
                if g == p {
                    continue;
                }
                assert_eq!(cm.count(g, p), 0);
            }
        }
        let acc = average_per_class_accuracy(&cm).unwrap();
        assert_eq!(acc.average, 1.0);
        assert_eq!(acc.global, 1.0);
    }

    #[test]
    fn all_ignored_yields_no_metric() {
        let gt: Vec<Label> = vec![255; 4];
        let pred: Vec<Label> = vec![0, 1, 0, 1];
        let cm = confusion(&pred, &gt, 2, 255).unwrap();
        assert_eq!(cm.ignored(), 4);
        assert_eq!(cm.total(), 0);
        assert!(matches!(
            average_per_class_accuracy(&cm),
            Err(Error::NoEvaluatedPixels)
        ));
    }

    #[test]
    fn hand_enumerated_tally() {
        let gt: Vec<Label> = vec![0, 0, 1, 1];
        let pred: Vec<Label> = vec![0, 1, 1, 1];
        let cm = confusion(&pred, &gt, 2, 255).unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.count(1, 1), 2);
        assert_eq!(cm.count(1, 0), 0);
        let acc = average_per_class_accuracy(&cm).unwrap();
        assert!((acc.per_class[0].unwrap() - 0.5).abs() < 1e-12);
        assert!((acc.per_class[1].unwrap() - 1.0).abs() < 1e-12);
        assert!((acc.average - 0.75).abs() < 1e-12);
    }

    #[test]
    fn absent_classes_excluded_unless_flagged() {
        let gt: Vec<Label> = vec![0, 0];
        let pred: Vec<Label> = vec![0, 0];
        let cm = confusion(&pred, &gt, 3, 255).unwrap();
        let acc = average_per_class_accuracy(&cm).unwrap();
        assert_eq!(acc.average, 1.0);
        assert!(acc.per_class[1].is_none());
        let zeroed = average_per_class_accuracy_with(&cm, true).unwrap();
        assert!((zeroed.average - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(matches!(
            confusion(&[0, 1], &[0], 2, 255),
            Err(Error::LengthMismatch { pred: 2, gt: 1 })
        ));
        assert!(matches!(
            confusion(&[3], &[0], 2, 255),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn merge_adds_counts() {
        let a = confusion(&[0, 1], &[0, 0], 2, 255).unwrap();
        let b = confusion(&[1, 255], &[1, 255], 2, 255).unwrap();
        let mut m = ConfusionMatrix::zeros(2);
        m.merge(&a).unwrap();
        m.merge(&b).unwrap();
        assert_eq!(m.count(0, 0), 1);
        assert_eq!(m.count(0, 1), 1);
        assert_eq!(m.count(1, 1), 1);
        assert_eq!(m.ignored(), 1);
    }

    #[test]
    fn csv_layout() {
        let gt: Vec<Label> = vec![0, 0, 1, 1, 255];
        let pred: Vec<Label> = vec![0, 1, 1, 1, 0];
        let cm = confusion(&pred, &gt, 3, 255).unwrap();
        let acc = average_per_class_accuracy(&cm).unwrap();
        let csv = metrics_csv(&cm, &acc);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "class,gt_pixels,correct,accuracy");
        assert_eq!(lines[1], "0,2,1,0.500000");
        assert_eq!(lines[2], "1,2,2,1.000000");
        assert_eq!(lines[3], "2,0,0,");
        assert_eq!(lines[4], "average_per_class,,,0.750000");
        assert_eq!(lines[5], "global,4,3,0.750000");
        assert_eq!(lines[6], "ignored,1,,");
    }

    proptest! {
        #[test]
        fn permutation_equivariance(seed in 0u64..300) {
            let labels = 4usize;
            let mut rng = SplitMix64::new(seed);
            let n = 40;
            let gt: Vec<Label> = (0..n).map(|_| rng.next_below(labels as u64) as Label).collect();
            let pred: Vec<Label> = (0..n).map(|_| rng.next_below(labels as u64) as Label).collect();
            // A fixed 4-cycle permutation.
            let perm = [2u8, 0, 3, 1];
            let gt_p: Vec<Label> = gt.iter().map(|&l| perm[l as usize]).collect();
            let pred_p: Vec<Label> = pred.iter().map(|&l| perm[l as usize]).collect();
            let base = average_per_class_accuracy(&confusion(&pred, &gt, labels, 255).unwrap()).unwrap();
            let permuted = average_per_class_accuracy(&confusion(&pred_p, &gt_p, labels, 255).unwrap()).unwrap();
            prop_assert!((base.average - permuted.average).abs() < 1e-12);
            for l in 0..labels {
                let a = base.per_class[l];
                let b = permuted.per_class[perm[l] as usize];
                match (a, b) {
                    (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                    (None, None) => {}
                    _ => prop_assert!(false, "presence mismatch"),
                }
            }
            prop_assert!(base.average >= 0.0 && base.average <= 1.0);

            // Pixel-order independence.
            let mut idx: Vec<usize> = (0..n).collect();
            // Fisher-Yates with the same rng.
            for i in (1..n).rev() {
                let j = rng.next_below((i + 1) as u64) as usize;
                idx.swap(i, j);
            }
            let gt_s: Vec<Label> = idx.iter().map(|&i| gt[i]).collect();
            let pred_s: Vec<Label> = idx.iter().map(|&i| pred[i]).collect();
            let shuffled = average_per_class_accuracy(&confusion(&pred_s, &gt_s, labels, 255).unwrap()).unwrap();
            prop_assert!((base.average - shuffled.average).abs() < 1e-12);
        }
    }
}
