use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Pixel adjacency used for components, boundaries and holes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl Connectivity {
    pub(crate) fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

pub(crate) fn neighbors(
    y: usize,
    x: usize,
    h: usize,
    w: usize,
    conn: Connectivity,
) -> impl Iterator<Item = (usize, usize)> {
    conn.offsets().iter().filter_map(move |&(dy, dx)| {
        let ny = y as isize + dy;
        let nx = x as isize + dx;
        (ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w).then_some((ny as usize, nx as usize))
    })
}

/// Labels the connected components of `mask`. Components are numbered from
/// 1 in raster order of their first pixel; returns the label image and the
/// size of each component (index 0 unused).
pub fn label_components(mask: &[bool], h: usize, w: usize, conn: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; h * w];
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0;
        labels[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            size += 1;
            for (ny, nx) in neighbors(p / w, p % w, h, w, conn) {
                let q = ny * w + nx;
                if mask[q] && labels[q] == 0 {
                    labels[q] = id;
                    queue.push_back(q);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

pub fn count_components(mask: &[bool], h: usize, w: usize, conn: Connectivity) -> usize {
    label_components(mask, h, w, conn).1.len() - 1
}

/// Marks the complement pixels reachable from the frame border.
fn outside(mask: &[bool], h: usize, w: usize, conn: Connectivity) -> Vec<bool> {
    let mut seen = vec![false; h * w];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let on_border = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
            let p = y * w + x;
            if on_border && !mask[p] {
                seen[p] = true;
                queue.push_back(p);
            }
        }
    }
    while let Some(p) = queue.pop_front() {
        for (ny, nx) in neighbors(p / w, p % w, h, w, conn) {
            let q = ny * w + nx;
            if !mask[q] && !seen[q] {
                seen[q] = true;
                queue.push_back(q);
            }
        }
    }
    seen
}

/// Fills every complement region that does not reach the frame border.
pub fn fill_holes(mask: &[bool], h: usize, w: usize, conn: Connectivity) -> Vec<bool> {
    let out = outside(mask, h, w, conn);
    mask.iter().zip(&out).map(|(&m, &o)| m || !o).collect()
}

/// Number of enclosed complement regions.
pub fn count_holes(mask: &[bool], h: usize, w: usize, conn: Connectivity) -> usize {
    let out = outside(mask, h, w, conn);
    let holes: Vec<bool> = mask.iter().zip(&out).map(|(&m, &o)| !m && !o).collect();
    count_components(&holes, h, w, conn)
}
