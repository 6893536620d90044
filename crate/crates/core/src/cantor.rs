//! Seeded fat-Cantor sets in `[0, 1]`.
//!
//! At construction step `j` a gap of length `4⁻ʲ` is removed from every
//! remaining interval, so after `level` steps the set is a union of
//! `2^level` closed intervals with measure `1/2 + 2^-(level+1)`. The gap
//! positions are jittered by a seeded RNG; the measure does not depend on
//! the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct FatCantor {
    seed: u64,
    level: u32,
    intervals: Vec<(f64, f64)>,
    // prefix[i] = total length of intervals[..i]
    prefix: Vec<f64>,
}

impl FatCantor {
    pub fn new(seed: u64, level: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut intervals = vec![(0.0_f64, 1.0_f64)];
        for j in 1..=level {
            let gap = 0.25_f64.powi(j as i32);
            let mut next = Vec::with_capacity(intervals.len() * 2);
            for &(a, b) in &intervals {
                let len = b - a;
                let frac: f64 = rng.gen_range(0.45..0.55);
                let lo = a + gap / 2.0;
                let hi = b - gap / 2.0;
                let c = (a + frac * len).clamp(lo, hi);
                next.push((a, c - gap / 2.0));
                next.push((c + gap / 2.0, b));
            }
            intervals = next;
        }
        let mut prefix = Vec::with_capacity(intervals.len() + 1);
        let mut acc = 0.0;
        prefix.push(acc);
        for &(a, b) in &intervals {
            acc += b - a;
            prefix.push(acc);
        }
        FatCantor { seed, level, intervals, prefix }
    }

    /// Construction depth at which every interval is shorter than a cell of
    /// a grid with `cells` cells on `[0, 1]`.
    pub fn level_for_cells(cells: usize) -> u32 {
        let c = cells.max(1) as f64;
        c.log2().ceil() as u32 + 4
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn measure(&self) -> f64 {
        *self.prefix.last().unwrap()
    }

    /// Index of the first interval whose right end is `>= x`.
    fn first_ending_after(&self, x: f64) -> usize {
        self.intervals.partition_point(|&(_, b)| b < x)
    }

    pub fn contains(&self, x: f64) -> bool {
        let i = self.first_ending_after(x);
        i < self.intervals.len() && self.intervals[i].0 <= x
    }

    /// Lebesgue measure of `K ∩ [a, b]`.
    pub fn measure_in(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        self.cumulative(b) - self.cumulative(a)
    }

    fn cumulative(&self, x: f64) -> f64 {
        let i = self.first_ending_after(x);
        let mut m = self.prefix[i];
        if i < self.intervals.len() {
            let (a, _) = self.intervals[i];
            if x > a {
                m += x - a;
            }
        }
        m
    }

    /// Whether `[a, b]` lies inside a single interval of the set, i.e. the
    /// complement has zero measure there.
    pub fn covers(&self, a: f64, b: f64) -> bool {
        let i = self.first_ending_after(b);
        i < self.intervals.len() && self.intervals[i].0 <= a
    }
}
