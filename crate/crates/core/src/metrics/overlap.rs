use serde::{Deserialize, Serialize};

use super::check_class;
use crate::data::LabelMap;
use crate::error::{Error, Result};

/// Dice, recall and precision in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub dice: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Pixel-wise overlap of one class. Both sets empty scores 100 everywhere;
/// exactly one empty set scores Dice 0 and 0 for the undefined ratio.
pub fn overlap_metrics(pred: &LabelMap, gt: &LabelMap, class_id: u8) -> Result<Overlap> {
    if !pred.same_dims(gt) {
        return Err(Error::shape(&[gt.height, gt.width], &[pred.height, pred.width]));
    }
    check_class(class_id)?;
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.labels.iter().zip(&gt.labels) {
        let (ia, ib) = (a == class_id, b == class_id);
        p += ia as usize;
        g += ib as usize;
        both += (ia && ib) as usize;
    }
    if p == 0 && g == 0 {
        return Ok(Overlap {
            dice: 100.0,
            recall: 100.0,
            precision: 100.0,
        });
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    Ok(Overlap {
        dice: 100.0 * 2.0 * both as f64 / (p + g) as f64,
        recall: ratio(both, g),
        precision: ratio(both, p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, cells: &[(usize, usize)]) -> LabelMap {
        let mut l = LabelMap::background(h, w);
        for &(y, x) in cells {
            l.set(y, x, 1);
        }
        l
    }

    #[test]
    fn identical_masks_score_100() {
        let a = map(4, 4, &[(1, 1), (1, 2)]);
        let o = overlap_metrics(&a, &a, 1).unwrap();
        assert_eq!((o.dice, o.recall, o.precision), (100.0, 100.0, 100.0));
    }

    #[test]
    fn half_overlapping_squares() {
        let a = map(4, 4, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let b = map(4, 4, &[(0, 1), (0, 2), (1, 1), (1, 2)]);
        let o = overlap_metrics(&a, &b, 1).unwrap();
        assert_eq!((o.dice, o.recall, o.precision), (50.0, 50.0, 50.0));
    }

    #[test]
    fn full_frame_prediction_against_small_block() {
        let all: Vec<_> = (0..4).flat_map(|y| (0..4).map(move |x| (y, x))).collect();
        let pred = map(4, 4, &all);
        let gt = map(4, 4, &[(1, 1), (1, 2), (2, 1), (2, 2)]);
        let o = overlap_metrics(&pred, &gt, 1).unwrap();
        assert_eq!((o.recall, o.precision, o.dice), (100.0, 25.0, 40.0));
    }

    #[test]
    fn empty_set_conventions() {
        let empty = map(3, 3, &[]);
        let one = map(3, 3, &[(1, 1)]);
        assert_eq!(overlap_metrics(&empty, &empty, 1).unwrap().dice, 100.0);
        let o = overlap_metrics(&empty, &one, 1).unwrap();
        assert_eq!((o.dice, o.recall, o.precision), (0.0, 0.0, 0.0));
        let o = overlap_metrics(&one, &empty, 1).unwrap();
        assert_eq!((o.dice, o.recall, o.precision), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(overlap_metrics(&map(3, 3, &[]), &map(3, 4, &[]), 1).is_err());
        assert!(overlap_metrics(&map(3, 3, &[]), &map(3, 3, &[]), 0).is_err());
    }
}
