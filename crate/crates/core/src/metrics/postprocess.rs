use super::topology::{fill_holes, label_components, Connectivity};
use super::LUNG_CLASSES;
use crate::data::{LabelMap, BACKGROUND};

/// Largest-component selection followed by hole filling, per lung class.
pub fn postprocess(pred: &LabelMap) -> LabelMap {
    postprocess_with(pred, Connectivity::Four)
}

/// Keeps the largest connected component of each class (ties go to the
/// component whose first pixel comes first in raster order) and fills its
/// holes. When one filled class region encloses the other class's
/// component, the enclosing class keeps the shared pixels.
pub fn postprocess_with(pred: &LabelMap, conn: Connectivity) -> LabelMap {
    let (h, w) = (pred.height, pred.width);
    let filled: Vec<Vec<bool>> = LUNG_CLASSES
        .iter()
        .map(|&c| {
            let mask = pred.mask(c);
            let (labels, sizes) = label_components(&mask, h, w, conn);
            let Some(best) = (1..sizes.len()).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))) else {
                return mask;
            };
            let kept: Vec<bool> = labels.iter().map(|&l| l == best as u32).collect();
            fill_holes(&kept, h, w, conn)
        })
        .collect();
    let area: Vec<usize> = filled.iter().map(|m| m.iter().filter(|&&b| b).count()).collect();
    let mut out = LabelMap::background(h, w);
    for p in 0..h * w {
        let claims: Vec<usize> = (0..LUNG_CLASSES.len()).filter(|&k| filled[k][p]).collect();
        out.labels[p] = match claims.as_slice() {
            [] => BACKGROUND,
            [k] => LUNG_CLASSES[*k],
            many => LUNG_CLASSES[*many.iter().max_by_key(|&&k| area[k]).unwrap()],
        };
    }
    out
}
