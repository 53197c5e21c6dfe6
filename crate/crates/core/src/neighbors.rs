//! Neighbor search for isolated (non-periodic) clusters.
//!
//! Neighbors of each center are returned in a canonical geometric order
//! (squared distance, then relative position), so the summation order of
//! descriptor contributions does not depend on atom numbering.

use std::collections::HashMap;

use crate::conformation::{dot, sub, Vec3};

/// One neighbor of a center atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    /// `r_j - r_n`
    pub rel: Vec3,
    pub r2: f64,
}

fn canonical_order(a: &Neighbor, b: &Neighbor) -> std::cmp::Ordering {
    a.r2.total_cmp(&b.r2)
        .then(a.rel[0].total_cmp(&b.rel[0]))
        .then(a.rel[1].total_cmp(&b.rel[1]))
        .then(a.rel[2].total_cmp(&b.rel[2]))
        .then(a.index.cmp(&b.index))
}

fn neighbor(positions: &[Vec3], center: usize, j: usize, rc2: f64) -> Option<Neighbor> {
    if j == center {
        return None;
    }
    let rel = sub(&positions[j], &positions[center]);
    let r2 = dot(&rel, &rel);
    (r2 < rc2).then_some(Neighbor { index: j, rel, r2 })
}

/// O(N²) reference search.
pub fn brute_force(positions: &[Vec3], cutoff: f64) -> Vec<Vec<Neighbor>> {
    let rc2 = cutoff * cutoff;
    (0..positions.len())
        .map(|n| {
            let mut list: Vec<Neighbor> = (0..positions.len())
                .filter_map(|j| neighbor(positions, n, j, rc2))
                .collect();
            list.sort_by(canonical_order);
            list
        })
        .collect()
}

/// Cell-binned search with cubic cells of edge `cutoff`.
pub fn cell_list(positions: &[Vec3], cutoff: f64) -> Vec<Vec<Neighbor>> {
    let rc2 = cutoff * cutoff;
    let cell_of = |p: &Vec3| -> [i64; 3] {
        [
            (p[0] / cutoff).floor() as i64,
            (p[1] / cutoff).floor() as i64,
            (p[2] / cutoff).floor() as i64,
        ]
    };
    let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        cells.entry(cell_of(p)).or_default().push(i);
    }
    (0..positions.len())
        .map(|n| {
            let c = cell_of(&positions[n]);
            let mut list = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(members) = cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            list.extend(members.iter().filter_map(|&j| neighbor(positions, n, j, rc2)));
                        }
                    }
                }
            }
            list.sort_by(canonical_order);
            list
        })
        .collect()
}

/// Picks the cell list for larger systems.
pub fn neighbor_lists(positions: &[Vec3], cutoff: f64) -> Vec<Vec<Neighbor>> {
    if positions.len() > 64 {
        cell_list(positions, cutoff)
    } else {
        brute_force(positions, cutoff)
    }
}
