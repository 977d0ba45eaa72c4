//! Dense enumeration of the truncated index lattices, with a precomputed
//! pair-sum table so convolutions in the ODE right-hand sides run on flat
//! arrays. Internal layout only; the public contract stays sparse.

use std::collections::HashMap;

use crate::law::MultiIndex;

const NO_SUM: u32 = u32::MAX;

/// Multi-indices of dimension `dim` with total order `<= kmax`, enumerated
/// in graded lexicographic order (the zero index is offset 0).
pub(crate) struct KSpace {
    indices: Vec<MultiIndex>,
    offsets: HashMap<MultiIndex, usize>,
    /// `pair_sum[a * len + b]` = offset of `indices[a] + indices[b]`,
    /// or `NO_SUM` when the sum leaves the lattice.
    pair_sum: Vec<u32>,
    /// First offset of each grade; grade `g` occupies
    /// `grade_start[g] .. grade_start[g + 1]`.
    grade_start: Vec<usize>,
}

impl KSpace {
    pub fn new(dim: usize, kmax: u32) -> Self {
        let mut indices = Vec::new();
        let mut grade_start = Vec::with_capacity(kmax as usize + 2);
        for grade in 0..=kmax {
            grade_start.push(indices.len());
            enumerate_grade(dim, grade, &mut indices);
        }
        grade_start.push(indices.len());
        let offsets: HashMap<MultiIndex, usize> = indices
            .iter()
            .enumerate()
            .map(|(o, idx)| (idx.clone(), o))
            .collect();
        let len = indices.len();
        let mut pair_sum = vec![NO_SUM; len * len];
        for a in 0..len {
            for b in 0..len {
                if indices[a].order() + indices[b].order() <= kmax {
                    let sum = indices[a].add(&indices[b]);
                    pair_sum[a * len + b] = offsets[&sum] as u32;
                }
            }
        }
        Self {
            indices,
            offsets,
            pair_sum,
            grade_start,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn index(&self, offset: usize) -> &MultiIndex {
        &self.indices[offset]
    }

    pub fn offset(&self, index: &MultiIndex) -> Option<usize> {
        self.offsets.get(index).copied()
    }

    pub fn grade_range(&self, grade: u32) -> std::ops::Range<usize> {
        self.grade_start[grade as usize]..self.grade_start[grade as usize + 1]
    }

    #[cfg(test)]
    pub fn sum_offset(&self, a: usize, b: usize) -> Option<usize> {
        let s = self.pair_sum[a * self.len() + b];
        (s != NO_SUM).then_some(s as usize)
    }

    /// Offsets for `k -> k - e_pos` per lattice point (`NO_SUM` when the
    /// coordinate is zero), used to apply the mark shifts.
    pub fn shift_down(&self, pos: usize) -> Vec<u32> {
        self.indices
            .iter()
            .map(|idx| match idx.minus_unit(pos) {
                Some(lower) => self.offsets[&lower] as u32,
                None => NO_SUM,
            })
            .collect()
    }

    /// `out = a * b` restricted to the lattice.
    pub fn convolve(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let len = self.len();
        out.fill(0.0);
        for ia in 0..len {
            let va = a[ia];
            if va == 0.0 {
                continue;
            }
            let row = &self.pair_sum[ia * len..(ia + 1) * len];
            for (ib, &target) in row.iter().enumerate() {
                if target != NO_SUM {
                    out[target as usize] += va * b[ib];
                }
            }
        }
    }
}

pub(crate) fn shift_entry(shifts: &[u32], offset: usize) -> Option<usize> {
    let s = shifts[offset];
    (s != NO_SUM).then_some(s as usize)
}

fn enumerate_grade(dim: usize, grade: u32, out: &mut Vec<MultiIndex>) {
    if dim == 0 {
        if grade == 0 {
            out.push(MultiIndex::zero(0));
        }
        return;
    }
    let mut current = vec![0u32; dim];
    fill_grade(&mut current, 0, grade, out);
}

fn fill_grade(current: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(MultiIndex::from_counts(current.clone()));
        return;
    }
    for c in (0..=remaining).rev() {
        current[pos] = c;
        fill_grade(current, pos + 1, remaining - c, out);
    }
    current[pos] = 0;
}

/// Dense layout for the joint `(population, crossing)` lattice: population
/// planes of a shared [`KSpace`], offset = `pop * kspace.len() + k_offset`.
pub(crate) struct JointSpace {
    pub kspace: KSpace,
    pub jmax: u32,
}

impl JointSpace {
    pub fn new(dim: usize, jmax: u32, kmax: u32) -> Self {
        Self {
            kspace: KSpace::new(dim, kmax),
            jmax,
        }
    }

    pub fn len(&self) -> usize {
        (self.jmax as usize + 1) * self.kspace.len()
    }

    pub fn offset(&self, pop: u32, k_offset: usize) -> usize {
        pop as usize * self.kspace.len() + k_offset
    }

    /// Joint convolution: populations add, crossing indices add, both
    /// restricted to the lattice.
    pub fn convolve(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let klen = self.kspace.len();
        out.fill(0.0);
        for ja in 0..=self.jmax {
            let plane_a = &a[self.offset(ja, 0)..self.offset(ja, 0) + klen];
            if plane_a.iter().all(|&v| v == 0.0) {
                continue;
            }
            for jb in 0..=(self.jmax - ja) {
                let plane_b = &b[self.offset(jb, 0)..self.offset(jb, 0) + klen];
                let base = self.offset(ja + jb, 0);
                for ia in 0..klen {
                    let va = plane_a[ia];
                    if va == 0.0 {
                        continue;
                    }
                    let row = &self.kspace.pair_sum[ia * klen..(ia + 1) * klen];
                    for (ib, &target) in row.iter().enumerate() {
                        if target != NO_SUM {
                            out[base + target as usize] += va * plane_b[ib];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kspace_enumeration_graded() {
        let space = KSpace::new(2, 3);
        assert_eq!(space.len(), 10); // C(3 + 2, 2)
        assert_eq!(space.index(0), &MultiIndex::zero(2));
        for grade in 0..=3 {
            for o in space.grade_range(grade) {
                assert_eq!(space.index(o).order(), grade);
            }
        }
        let e1 = MultiIndex::unit(2, 1);
        let off = space.offset(&e1).unwrap();
        assert_eq!(space.index(off), &e1);
    }

    #[test]
    fn kspace_dim_zero() {
        let space = KSpace::new(0, 5);
        assert_eq!(space.len(), 1);
        assert_eq!(space.sum_offset(0, 0), Some(0));
    }

    #[test]
    fn dense_convolve_matches_binomial() {
        let space = KSpace::new(1, 4);
        let a = [0.5, 0.5, 0.0, 0.0, 0.0];
        let mut sq = [0.0; 5];
        space.convolve(&a, &a, &mut sq);
        assert_eq!(&sq, &[0.25, 0.5, 0.25, 0.0, 0.0]);
    }

    #[test]
    fn joint_convolve_adds_population() {
        let js = JointSpace::new(1, 2, 2);
        let mut a = vec![0.0; js.len()];
        a[js.offset(1, 0)] = 1.0; // mass at (1, 0)
        let mut out = vec![0.0; js.len()];
        js.convolve(&a, &a, &mut out);
        assert_eq!(out[js.offset(2, 0)], 1.0);
        assert_eq!(out.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn shift_down_tracks_unit_steps() {
        let space = KSpace::new(2, 2);
        let shifts = space.shift_down(0);
        let e0 = space.offset(&MultiIndex::unit(2, 0)).unwrap();
        assert_eq!(shift_entry(&shifts, e0), Some(0));
        assert_eq!(shift_entry(&shifts, 0), None);
    }
}
