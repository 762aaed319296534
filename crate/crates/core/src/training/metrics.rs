use crate::error::{Error, Result};

/// Row = ground truth, column = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_pairs(classes: usize, truth: &[usize], pred: &[usize]) -> Result<Self> {
        let mut m = ConfusionMatrix::new(classes);
        if truth.len() != pred.len() {
            return Err(Error::shape("confusion pairs", truth.len(), pred.len()));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            m.add(t, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.classes || pred >= self.classes {
            return Err(Error::shape("confusion class", format!("< {}", self.classes), truth.max(pred)));
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    #[inline]
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Correct / total, in percent.
    pub fn instance_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let correct: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        100.0 * correct as f64 / total as f64
    }

    /// Unweighted mean of per-class recall over classes present in the ground
    /// truth, in percent.
    pub fn class_accuracy(&self) -> f64 {
        let mut sum = 0.0;
        let mut present = 0;
        for c in 0..self.classes {
            let row: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
            if row > 0 {
                sum += self.get(c, c) as f64 / row as f64;
                present += 1;
            }
        }
        if present == 0 {
            0.0
        } else {
            100.0 * sum / present as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationScores {
    pub class_accuracy: f64,
    pub instance_accuracy: f64,
}

pub fn classification_scores(classes: usize, truth: &[usize], pred: &[usize]) -> Result<ClassificationScores> {
    let m = ConfusionMatrix::from_pairs(classes, truth, pred)?;
    Ok(ClassificationScores {
        class_accuracy: m.class_accuracy(),
        instance_accuracy: m.instance_accuracy(),
    })
}

/// Mean IoU over `parts` for one shape. A part absent from both prediction and
/// ground truth scores 1.
pub fn shape_iou(truth: &[usize], pred: &[usize], parts: &[usize]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::shape("segmentation labels", truth.len(), pred.len()));
    }
    if parts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sum = 0.0;
    for &part in parts {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&t, &p) in truth.iter().zip(pred) {
            let (a, b) = (t == part, p == part);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        sum += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    Ok(sum / parts.len() as f64)
}

/// Part-averaged IoU in percent: parts averaged within each shape, then shapes
/// averaged. Each item is `(truth, prediction, parts of that shape)`.
pub fn mean_iou<'a, I>(shapes: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [usize], &'a [usize], &'a [usize])>,
{
    let mut sum = 0.0;
    let mut count = 0;
    for (truth, pred, parts) in shapes {
        sum += shape_iou(truth, pred, parts)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(100.0 * sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_classification() {
        let s = classification_scores(3, &[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap();
        assert_eq!((s.class_accuracy, s.instance_accuracy), (100.0, 100.0));
    }

    #[test]
    fn one_class_wrong_is_fifty() {
        let truth = [0, 0, 0, 0, 0, 0, 0, 0, 1];
        let pred = [0, 0, 0, 0, 0, 0, 0, 0, 0];
        let s = classification_scores(2, &truth, &pred).unwrap();
        assert_eq!(s.class_accuracy, 50.0);
        assert!((s.instance_accuracy - 800.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_disjoint_segmentation() {
        let t = [0, 0, 1, 1];
        assert_eq!(mean_iou([(&t[..], &t[..], &[0, 1][..])]).unwrap(), 100.0);
        let p = [1, 1, 0, 0];
        assert_eq!(shape_iou(&t, &p, &[0]).unwrap(), 0.0);
        // part 2 is absent everywhere and scores 1
        assert_eq!(shape_iou(&t, &t, &[0, 1, 2]).unwrap(), 1.0);
    }
}
