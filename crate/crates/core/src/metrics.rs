//! Pixel-level segmentation scores and image-level confusion matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::BinaryMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    pub dice: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl SegScores {
    /// Scores from pixel counts. Dice is 1 when both maps are empty;
    /// sensitivity and specificity are 0 when undefined.
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        SegScores {
            dice: if tp + fp + fn_ == 0 { 1.0 } else { ratio(2 * tp, 2 * tp + fp + fn_) },
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            sensitivity: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
            tp,
            fp,
            tn,
            fn_,
        }
    }
}

pub fn seg_scores(pred: &BinaryMap, gt: &BinaryMap) -> Result<SegScores> {
    pred.check_dims(gt, "seg_scores")?;
    let mut c = [0u64; 4];
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        c[(p as usize) << 1 | g as usize] += 1;
    }
    let [tn, fn_, fp, tp] = c;
    Ok(SegScores::from_counts(tp, fp, tn, fn_))
}

/// Image-level one-vs-rest statistics of one class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

/// Rows are true classes, columns predicted classes. Images for which no
/// class was predicted are counted per true class in `rejected`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub rejected: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; n]; n],
            rejected: vec![0; n],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, pred: Option<usize>) -> Result<()> {
        let n = self.classes();
        for label in std::iter::once(truth).chain(pred) {
            if label >= n {
                return Err(Error::Index {
                    what: "class label",
                    index: label,
                    len: n,
                });
            }
        }
        match pred {
            Some(p) => self.counts[truth][p] += 1,
            None => self.rejected[truth] += 1,
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.rejected.iter().sum::<u64>()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total())
    }

    pub fn row_total(&self, class: usize) -> u64 {
        self.counts[class].iter().sum::<u64>() + self.rejected[class]
    }

    pub fn class_stats(&self, class: usize) -> ClassStats {
        let tp = self.counts[class][class];
        let fn_ = self.row_total(class) - tp;
        let fp = (0..self.classes()).map(|r| self.counts[r][class]).sum::<u64>() - tp;
        let tn = self.total() - tp - fn_ - fp;
        ClassStats {
            sensitivity: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
            accuracy: ratio(tp + tn, self.total()),
        }
    }
}

/// Confusion matrix of `pred` against `truth` over `n` classes.
pub fn confusion(truth: &[usize], pred: &[usize], n: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::dim("confusion", &[truth.len()], &[pred.len()]));
    }
    let mut m = ConfusionMatrix::new(n);
    for (&t, &p) in truth.iter().zip(pred) {
        m.add(t, Some(p))?;
    }
    Ok(m)
}
