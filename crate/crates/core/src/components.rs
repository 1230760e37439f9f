//! Two-pass connected-component labelling of binary slices.

use serde::{Deserialize, Serialize};

use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    /// N, S, E, W neighbours.
    Four,
    /// All eight neighbours.
    #[default]
    Eight,
}

/// Component labels (0 = background, components numbered from 1 in order of
/// their first pixel in scan order) and the size of each component.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub labels: Grid<u32>,
    /// `sizes[i]` is the pixel count of component `i + 1`.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Label of the largest component; ties go to the lowest label.
    pub fn largest(&self) -> Option<u32> {
        let mut best: Option<(usize, u32)> = None;
        for (i, &size) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(s, _)| size > s) {
                best = Some((size, i as u32 + 1));
            }
        }
        best.map(|(_, label)| label)
    }

    pub fn mask_of(&self, label: u32) -> Grid<bool> {
        self.labels.map(|&l| l == label)
    }

    /// Pixels of component `label` in scan order.
    pub fn pixels_of(&self, label: u32) -> Vec<(usize, usize)> {
        self.labels
            .iter_xy()
            .filter(|&(_, _, &l)| l == label)
            .map(|(x, y, _)| (x, y))
            .collect()
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        DisjointSet { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

pub fn connected_components(mask: &Grid<bool>, connectivity: Connectivity) -> Components {
    let (w, h) = (mask.width(), mask.height());
    let mut provisional = Grid::filled(w, h, 0u32);
    let mut sets = DisjointSet::new();

    let back: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (0, -1)],
        Connectivity::Eight => &[(-1, 0), (-1, -1), (0, -1), (1, -1)],
    };

    for y in 0..h {
        for x in 0..w {
            if !*mask.get(x, y) {
                continue;
            }
            let mut label = 0u32;
            for &(dx, dy) in back {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if let Some(&l) = provisional.checked_get(nx, ny) {
                    if l == 0 {
                        continue;
                    }
                    if label == 0 {
                        label = l;
                    } else if l != label {
                        sets.union(label, l);
                    }
                }
            }
            if label == 0 {
                label = sets.make();
            }
            provisional.set(x, y, label);
        }
    }

    // Second pass: resolve roots and renumber in scan order.
    let mut renumber = vec![0u32; sets.parent.len()];
    let mut sizes = Vec::new();
    let mut labels = provisional;
    for l in labels.as_mut_slice() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l) as usize;
        if renumber[root] == 0 {
            sizes.push(0);
            renumber[root] = sizes.len() as u32;
        }
        *l = renumber[root];
        sizes[*l as usize - 1] += 1;
    }
    Components { labels, sizes }
}

/// Drops components smaller than `min_size` pixels.
pub fn remove_small_components(
    mask: &Grid<bool>,
    min_size: usize,
    connectivity: Connectivity,
) -> Grid<bool> {
    if min_size <= 1 {
        return mask.clone();
    }
    let cc = connected_components(mask, connectivity);
    cc.labels
        .map(|&l| l != 0 && cc.sizes[l as usize - 1] >= min_size)
}
