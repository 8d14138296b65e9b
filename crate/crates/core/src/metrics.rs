//! Dice overlap between predicted and reference label sets.

use serde::Serialize;

/// Which foreground classes enter the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanOver {
    /// Classes that occur in the reference labels.
    PresentInReference,
    /// Classes that occur in either the prediction or the reference.
    PresentInEither,
}

/// Per-class voxel counts: predicted, reference, and both.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub predicted: u64,
    pub reference: u64,
    pub overlap: u64,
}

impl ClassCounts {
    /// `2|P∩G| / (|P|+|G|)`, or `None` when the class is absent from both.
    pub fn dice(&self) -> Option<f64> {
        let denom = self.predicted + self.reference;
        (denom > 0).then(|| 2.0 * self.overlap as f64 / denom as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiceReport {
    /// Indexed by class; `None` when the class is absent from both sides.
    pub per_class: Vec<Option<f64>>,
    /// Mean over the selected foreground classes; `None` if there are none.
    pub mean: Option<f64>,
}

/// Accumulates class counts over paired label slices.
pub fn count_classes(pred: &[u8], reference: &[u8], class_count: usize, counts: &mut [ClassCounts]) {
    assert_eq!(pred.len(), reference.len(), "label slices differ in length");
    assert_eq!(counts.len(), class_count);
    for (&p, &g) in pred.iter().zip(reference) {
        counts[p as usize].predicted += 1;
        counts[g as usize].reference += 1;
        if p == g {
            counts[p as usize].overlap += 1;
        }
    }
}

pub fn report_from_counts(counts: &[ClassCounts], over: MeanOver) -> DiceReport {
    let per_class: Vec<Option<f64>> = counts.iter().map(ClassCounts::dice).collect();
    let selected: Vec<f64> = counts
        .iter()
        .zip(&per_class)
        .skip(1)
        .filter(|(c, _)| match over {
            MeanOver::PresentInReference => c.reference > 0,
            MeanOver::PresentInEither => c.reference + c.predicted > 0,
        })
        .map(|(_, d)| d.unwrap_or(0.0))
        .collect();
    let mean = (!selected.is_empty()).then(|| selected.iter().sum::<f64>() / selected.len() as f64);
    DiceReport { per_class, mean }
}

pub fn dice(pred: &[u8], reference: &[u8], class_count: usize, over: MeanOver) -> DiceReport {
    let mut counts = vec![ClassCounts::default(); class_count];
    count_classes(pred, reference, class_count, &mut counts);
    report_from_counts(&counts, over)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_labels_score_one() {
        let l = [0u8, 1, 2, 2, 1, 0];
        let r = dice(&l, &l, 4, MeanOver::PresentInEither);
        assert_eq!(r.per_class, vec![Some(1.0), Some(1.0), Some(1.0), None]);
        assert_eq!(r.mean, Some(1.0));
    }

    #[test]
    fn half_overlap() {
        let p = [1u8, 1, 1, 1, 0, 0, 0, 0];
        let g = [1u8, 1, 0, 0, 1, 1, 0, 0];
        assert_eq!(dice(&p, &g, 2, MeanOver::PresentInEither).per_class[1], Some(0.5));
    }

    #[test]
    fn background_prediction_scores_zero() {
        let p = [0u8; 6];
        let g = [1u8, 1, 2, 2, 3, 3];
        assert_eq!(dice(&p, &g, 4, MeanOver::PresentInReference).mean, Some(0.0));
    }

    #[test]
    fn mean_selection_rules() {
        // Class 2 only predicted: counted as 0 in `PresentInEither` only.
        let p = [1u8, 2];
        let g = [1u8, 0];
        assert_eq!(dice(&p, &g, 3, MeanOver::PresentInReference).mean, Some(1.0));
        assert_eq!(dice(&p, &g, 3, MeanOver::PresentInEither).mean, Some(0.5));
        assert_eq!(dice(&[0], &[0], 3, MeanOver::PresentInEither).mean, None);
    }
}
