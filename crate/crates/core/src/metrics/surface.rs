use super::topology::Connectivity;
use super::check_class;
use crate::data::LabelMap;
use crate::error::{Error, Result};

/// Class pixels with at least one neighbour outside the class; pixels on
/// the frame edge always count as boundary.
pub fn boundary(mask: &[bool], h: usize, w: usize, conn: Connectivity) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if !mask[p] {
                continue;
            }
            out[p] = conn.offsets().iter().any(|&(dy, dx)| {
                let ny = y as isize + dy;
                let nx = x as isize + dx;
                ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize || !mask[ny as usize * w + nx as usize]
            });
        }
    }
    out
}

const FAR: f64 = 1e30;

/// One-dimensional squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates from -inf
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest `true`
/// pixel of `features`.
pub(crate) fn squared_edt(features: &[bool], h: usize, w: usize) -> Vec<f64> {
    let n = h.max(w);
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut f = vec![0f64; n];
    let mut col = vec![0f64; n];
    let mut grid: Vec<f64> = features.iter().map(|&b| if b { 0.0 } else { FAR }).collect();
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut col[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = col[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut col[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&col[..w]);
    }
    grid
}

/// Symmetric average surface distance of one class in millimetres.
pub fn asd(pred: &LabelMap, gt: &LabelMap, class_id: u8, spacing_mm: f64) -> Result<f64> {
    asd_with(pred, gt, class_id, spacing_mm, Connectivity::Four)
}

pub fn asd_with(pred: &LabelMap, gt: &LabelMap, class_id: u8, spacing_mm: f64, conn: Connectivity) -> Result<f64> {
    if !pred.same_dims(gt) {
        return Err(Error::shape(&[gt.height, gt.width], &[pred.height, pred.width]));
    }
    check_class(class_id)?;
    let (h, w) = (gt.height, gt.width);
    let pm = pred.mask(class_id);
    let gm = gt.mask(class_id);
    if !pm.contains(&true) || !gm.contains(&true) {
        return Err(Error::AsdUndefined { class_id });
    }
    let bp = boundary(&pm, h, w, conn);
    let bg = boundary(&gm, h, w, conn);
    let dist_to_g = squared_edt(&bg, h, w);
    let dist_to_p = squared_edt(&bp, h, w);
    let one_way = |from: &[bool], dist: &[f64]| -> (f64, usize) {
        from.iter()
            .zip(dist)
            .filter(|(&b, _)| b)
            .fold((0.0, 0), |(s, n), (_, &d)| (s + d.sqrt(), n + 1))
    };
    let (s1, n1) = one_way(&bp, &dist_to_g);
    let (s2, n2) = one_way(&bg, &dist_to_p);
    Ok((s1 + s2) / (n1 + n2) as f64 * spacing_mm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(h: usize, w: usize, y: usize, x: usize) -> LabelMap {
        let mut l = LabelMap::background(h, w);
        l.set(y, x, 1);
        l
    }

    fn brute_sq(features: &[bool], h: usize, w: usize) -> Vec<f64> {
        (0..h * w)
            .map(|p| {
                (0..h * w)
                    .filter(|&q| features[q])
                    .map(|q| {
                        let dy = (p / w) as f64 - (q / w) as f64;
                        let dx = (p % w) as f64 - (q % w) as f64;
                        dy * dy + dx * dx
                    })
                    .fold(FAR, f64::min)
            })
            .collect()
    }

    #[test]
    fn edt_matches_brute_force() {
        let (h, w) = (9, 13);
        let feats: Vec<bool> = (0..h * w).map(|i| (i * 7919) % 17 == 3).collect();
        assert_eq!(squared_edt(&feats, h, w), brute_sq(&feats, h, w));
        let one: Vec<bool> = (0..h * w).map(|i| i == 40).collect();
        assert_eq!(squared_edt(&one, h, w), brute_sq(&one, h, w));
    }

    #[test]
    fn identical_masks_have_zero_asd() {
        let a = single(5, 5, 2, 2);
        assert_eq!(asd(&a, &a, 1, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn single_pixels_three_apart() {
        let a = single(4, 4, 0, 0);
        let b = single(4, 4, 0, 3);
        assert_eq!(asd(&a, &b, 1, 0.5).unwrap(), 1.5);
    }

    #[test]
    fn empty_mask_is_undefined() {
        let a = single(4, 4, 0, 0);
        let e = LabelMap::background(4, 4);
        assert!(matches!(asd(&a, &e, 1, 1.0), Err(Error::AsdUndefined { .. })));
        assert!(matches!(asd(&e, &a, 1, 1.0), Err(Error::AsdUndefined { .. })));
    }

    #[test]
    fn frame_edge_counts_as_outside() {
        let full: Vec<bool> = vec![true; 9];
        let b = boundary(&full, 3, 3, Connectivity::Four);
        assert_eq!(b.iter().filter(|&&x| x).count(), 8);
        assert!(!b[4]);
    }
}
