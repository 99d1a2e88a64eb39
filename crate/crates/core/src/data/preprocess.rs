use super::{Dataset, Image, Item, LabelMap};
use crate::error::{Error, Result};
use crate::par;

/// Half-pixel-centred source coordinate for output index `o`.
fn source_pos(o: usize, src: usize, dst: usize) -> f64 {
    ((o as f64 + 0.5) * src as f64 / dst as f64 - 0.5).max(0.0)
}

fn bilinear(img: &Image, size: usize) -> Vec<f32> {
    if img.height == size && img.width == size {
        return img.pixels.clone();
    }
    let taps = |src: usize| -> Vec<(usize, usize, f64)> {
        (0..size)
            .map(|o| {
                let p = source_pos(o, src, size);
                let lo = (p.floor() as usize).min(src - 1);
                let hi = (lo + 1).min(src - 1);
                (lo, hi, if hi == lo { 0.0 } else { p - lo as f64 })
            })
            .collect()
    };
    let ty = taps(img.height);
    let tx = taps(img.width);
    let mut out = Vec::with_capacity(size * size);
    for &(y0, y1, wy) in &ty {
        for &(x0, x1, wx) in &tx {
            let p = |y: usize, x: usize| img.get(y, x) as f64;
            let top = p(y0, x0) * (1.0 - wx) + p(y0, x1) * wx;
            let bot = p(y1, x0) * (1.0 - wx) + p(y1, x1) * wx;
            out.push((top * (1.0 - wy) + bot * wy) as f32);
        }
    }
    out
}

/// Resamples to `working_size × working_size` (bilinear) and rescales the
/// intensities so the minimum maps to 0 and the maximum to 255. Constant
/// images become all-zero.
pub fn preprocess(image: &Image, working_size: usize) -> Result<Image> {
    if image.pixels.is_empty() || image.height == 0 || image.width == 0 {
        return Err(Error::Empty("image"));
    }
    if working_size < 8 {
        return Err(Error::Config(format!("working size {working_size} is below 8")));
    }
    let resized = bilinear(image, working_size);
    let (lo, hi) = resized
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &p| (a.min(p as f64), b.max(p as f64)));
    let pixels = if hi > lo {
        let scale = 255.0 / (hi - lo);
        resized.iter().map(|&p| ((p as f64 - lo) * scale) as f32).collect()
    } else {
        vec![0.0; resized.len()]
    };
    // physical extent is preserved, so spacing scales with the resampling
    let spacing_mm = image.spacing_mm * image.width as f64 / working_size as f64;
    Ok(Image {
        height: working_size,
        width: working_size,
        pixels,
        spacing_mm,
        domain: image.domain,
    })
}

/// Nearest-neighbour resampling of a label map.
pub fn resize_labels(labels: &LabelMap, size: usize) -> LabelMap {
    if labels.height == size && labels.width == size {
        return labels.clone();
    }
    let idx = |o: usize, src: usize| (((o as f64 + 0.5) * src as f64 / size as f64) as usize).min(src - 1);
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let sy = idx(y, labels.height);
        for x in 0..size {
            out.push(labels.get(sy, idx(x, labels.width)));
        }
    }
    LabelMap {
        height: size,
        width: size,
        labels: out,
    }
}

/// Applies [`preprocess`] to every image and [`resize_labels`] to every mask.
pub fn preprocess_dataset(ds: &Dataset, working_size: usize) -> Result<Dataset> {
    let items = par::map(&ds.items, |it| -> Result<Item> {
        Ok(Item {
            case_id: it.case_id.clone(),
            image: preprocess(&it.image, working_size)?,
            label: it.label.as_ref().map(|l| resize_labels(l, working_size)),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Dataset::new(items, ds.domain, ds.split)
}
