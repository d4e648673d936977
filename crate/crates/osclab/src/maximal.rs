//! Maximal functions over ball-bases.
//!
//! The core quantity is, per atom `x`, the supremum over balls containing
//! `x` of a ratio `num(B) / den(B)` of additive set functions — this covers
//! the r-th power means of the Hardy-Littlewood maximal operator (den = mu),
//! weighted maximal operators (den = w dmu), and their multilinear joint
//! version. Complexity: O(n log n) on the dyadic tree (compute each node
//! once, propagate the running maximum down), O(n^2) on the all-intervals
//! basis (per interval length, a monotone-deque sliding maximum), and
//! incidence-sum time on generic bases.

use crate::func::GridFunction;
use crate::space::{BallBasis, BasisKind, DiscreteSpace};

/// Per-atom numerator/denominator data for one function slot.
#[derive(Clone)]
pub struct RatioData {
    /// Prefix sums (length n+1) of the numerator set function.
    pub num_prefix: Vec<f64>,
    /// Prefix sums (length n+1) of the denominator set function.
    pub den_prefix: Vec<f64>,
    /// Power applied to the ratio (1/r for an r-th power mean).
    pub outer_pow: f64,
}

impl RatioData {
    /// `|f 1_S|^r mu` numerator against `mu` denominator.
    pub fn power_mean(space: &DiscreteSpace, f: &GridFunction, r: f64, support: Option<(u32, u32)>) -> Self {
        let n = f.len();
        let mut num_prefix = Vec::with_capacity(n + 1);
        num_prefix.push(0.0);
        let mut acc = 0.0;
        let (slo, shi) = support.unwrap_or((0, n as u32));
        for i in 0..n {
            if i >= slo as usize && i < shi as usize {
                acc += f.values[i].abs().powf(r) * space.mass(i);
            }
            num_prefix.push(acc);
        }
        RatioData {
            num_prefix,
            den_prefix: space.prefix_mass().to_vec(),
            outer_pow: 1.0 / r,
        }
    }

    /// `|f 1_S| w mu` numerator against `w mu` denominator (weighted maximal).
    pub fn weighted_mean(space: &DiscreteSpace, f: &GridFunction, w: &[f64], support: Option<(u32, u32)>) -> Self {
        let n = f.len();
        let mut num_prefix = Vec::with_capacity(n + 1);
        let mut den_prefix = Vec::with_capacity(n + 1);
        num_prefix.push(0.0);
        den_prefix.push(0.0);
        let mut na = 0.0;
        let mut da = 0.0;
        let (slo, shi) = support.unwrap_or((0, n as u32));
        for i in 0..n {
            if i >= slo as usize && i < shi as usize {
                na += f.values[i].abs() * w[i] * space.mass(i);
            }
            da += w[i] * space.mass(i);
            num_prefix.push(na);
            den_prefix.push(da);
        }
        RatioData { num_prefix, den_prefix, outer_pow: 1.0 }
    }

    #[inline]
    pub fn value(&self, lo: u32, hi: u32) -> f64 {
        let num = self.num_prefix[hi as usize] - self.num_prefix[lo as usize];
        let den = self.den_prefix[hi as usize] - self.den_prefix[lo as usize];
        if den <= 0.0 {
            return 0.0;
        }
        (num / den).powf(self.outer_pow)
    }
}

/// Product over slots of ratio values on `[lo, hi)`.
#[inline]
fn slot_product(slots: &[RatioData], lo: u32, hi: u32) -> f64 {
    let mut p = 1.0;
    for s in slots {
        p *= s.value(lo, hi);
    }
    p
}

/// Joint maximal function: per atom, the supremum over balls containing it
/// of the product of per-slot ratio means. With one power-mean slot this is
/// the maximal operator `M_{B,r}`.
pub fn maximal(basis: &BallBasis, slots: &[RatioData]) -> GridFunction {
    let space = basis.space();
    let n = space.n_atoms();
    let mut out = vec![0.0f64; n];
    match basis.kind() {
        BasisKind::DyadicMartingale => {
            // compute node values, then carry the running maximum down the tree
            let n_balls = basis.n_balls();
            let mut best = vec![0.0f64; n_balls];
            for b in basis.balls() {
                let (lo, hi) = b.extent.range().unwrap();
                let v = slot_product(slots, lo, hi);
                let up = if b.id == 0 { 0.0 } else { best[((b.id - 1) / 2) as usize] };
                best[b.id as usize] = v.max(up);
            }
            let leaf0 = (1usize << basis.depth()) - 1;
            for atom in 0..n {
                out[atom] = best[leaf0 + atom];
            }
        }
        BasisKind::AllIntervals { .. } => {
            // per interval length, sliding-window maximum over start points
            let mut deque: Vec<u32> = Vec::with_capacity(n);
            let mut vals = vec![0.0f64; n];
            for len in 1..=n as u32 {
                let starts = n as u32 - len + 1;
                for a in 0..starts {
                    vals[a as usize] = slot_product(slots, a, a + len);
                }
                deque.clear();
                for x in 0..n as u32 {
                    if x < starts {
                        while let Some(&back) = deque.last() {
                            if vals[back as usize] <= vals[x as usize] {
                                deque.pop();
                            } else {
                                break;
                            }
                        }
                        deque.push(x);
                    }
                    while deque.first().is_some_and(|&f| f + len <= x) {
                        deque.remove(0);
                    }
                    if let Some(&front) = deque.first() {
                        let v = vals[front as usize];
                        if v > out[x as usize] {
                            out[x as usize] = v;
                        }
                    }
                }
            }
        }
        _ => {
            let nx = space.nx();
            for b in basis.balls() {
                let v = match b.extent.range() {
                    Some((lo, hi)) => slot_product(slots, lo, hi),
                    None => {
                        // generic extents: direct sums per slot
                        let mut p = 1.0;
                        for s in slots {
                            let mut num = 0.0;
                            let mut den = 0.0;
                            for a in b.extent.atoms(nx) {
                                num += s.num_prefix[a + 1] - s.num_prefix[a];
                                den += s.den_prefix[a + 1] - s.den_prefix[a];
                            }
                            p *= if den > 0.0 { (num / den).powf(s.outer_pow) } else { 0.0 };
                        }
                        p
                    }
                };
                for a in b.extent.atoms(nx) {
                    if v > out[a] {
                        out[a] = v;
                    }
                }
            }
        }
    }
    GridFunction { values: out }
}

/// Maximal value at a single atom (supremum over balls containing it).
pub fn maximal_at(basis: &BallBasis, slots: &[RatioData], atom: usize) -> f64 {
    match basis.kind() {
        BasisKind::DyadicMartingale => {
            let mut best = 0.0f64;
            for id in basis.dyadic_ancestors(basis.dyadic_leaf(atom)) {
                let (lo, hi) = basis.ball(id).extent.range().unwrap();
                best = best.max(slot_product(slots, lo, hi));
            }
            best
        }
        BasisKind::AllIntervals { .. } => {
            let n = basis.space().n_atoms() as u32;
            let mut best = 0.0f64;
            for lo in 0..=atom as u32 {
                for hi in (atom as u32 + 1)..=n {
                    best = best.max(slot_product(slots, lo, hi));
                }
            }
            best
        }
        _ => {
            let mut best = 0.0f64;
            for id in basis.balls_containing(atom) {
                if let Some((lo, hi)) = basis.ball(id).extent.range() {
                    best = best.max(slot_product(slots, lo, hi));
                } else {
                    let nx = basis.space().nx();
                    let mut p = 1.0;
                    for s in slots {
                        let mut num = 0.0;
                        let mut den = 0.0;
                        for a in basis.ball(id).extent.atoms(nx) {
                            num += s.num_prefix[a + 1] - s.num_prefix[a];
                            den += s.den_prefix[a + 1] - s.den_prefix[a];
                        }
                        p *= if den > 0.0 { (num / den).powf(s.outer_pow) } else { 0.0 };
                    }
                    best = best.max(p);
                }
            }
            best
        }
    }
}

/// Like [`maximal_at`] but restricted to balls contained in `[wlo, whi)`.
/// This realizes `M(f 1_{B*})` on atoms of `B` for hull windows.
pub fn maximal_at_within(basis: &BallBasis, slots: &[RatioData], atom: usize, wlo: u32, whi: u32) -> f64 {
    match basis.kind() {
        BasisKind::DyadicMartingale => {
            let mut best = 0.0f64;
            for id in basis.dyadic_ancestors(basis.dyadic_leaf(atom)) {
                let (lo, hi) = basis.ball(id).extent.range().unwrap();
                if lo >= wlo && hi <= whi {
                    best = best.max(slot_product(slots, lo, hi));
                }
            }
            best
        }
        BasisKind::AllIntervals { .. } => {
            let mut best = 0.0f64;
            for lo in wlo..=atom as u32 {
                for hi in (atom as u32 + 1)..=whi {
                    best = best.max(slot_product(slots, lo, hi));
                }
            }
            best
        }
        _ => {
            let mut best = 0.0f64;
            for id in basis.balls_containing(atom) {
                if let Some((lo, hi)) = basis.ball(id).extent.range() {
                    if lo >= wlo && hi <= whi {
                        best = best.max(slot_product(slots, lo, hi));
                    }
                }
            }
            best
        }
    }
}

/// `M_{B,r} f`: single-slot convenience wrapper.
pub fn maximal_power(basis: &BallBasis, f: &GridFunction, r: f64) -> GridFunction {
    maximal(basis, &[RatioData::power_mean(basis.space(), f, r, None)])
}

/// The tensor maximal function: the pointwise product of the single-slot
/// maximal functions of each component.
pub fn tensor_maximal(basis: &BallBasis, fvec: &[&GridFunction], r: f64, support: Option<(u32, u32)>) -> GridFunction {
    let space = basis.space();
    let n = space.n_atoms();
    let mut out = vec![1.0f64; n];
    for f in fvec {
        let m = maximal(basis, &[RatioData::power_mean(space, f, r, support)]);
        for i in 0..n {
            out[i] *= m.values[i];
        }
    }
    GridFunction { values: out }
}

/// Joint multilinear maximal function `M_{B,r}(f_vec)`.
pub fn multilinear_maximal(basis: &BallBasis, fvec: &[&GridFunction], r: f64, support: Option<(u32, u32)>) -> GridFunction {
    let space = basis.space();
    let slots: Vec<RatioData> = fvec
        .iter()
        .map(|f| RatioData::power_mean(space, f, r, support))
        .collect();
    maximal(basis, &slots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{BallBasis, DiscreteSpace, Extent};
    use std::sync::Arc;

    /// Oracle: loop over every ball and its atoms.
    fn maximal_oracle(basis: &BallBasis, f: &GridFunction, r: f64) -> Vec<f64> {
        let space = basis.space();
        let n = space.n_atoms();
        let mut out = vec![0.0f64; n];
        for b in basis.balls() {
            let v = crate::func::ball_average(space, f, b, r);
            for a in b.extent.atoms(space.nx()) {
                out[a] = out[a].max(v);
            }
        }
        out
    }

    #[test]
    fn dyadic_matches_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let masses: Vec<f64> = (0..16).map(|_| rng.gen_range(0.1..2.0)).collect();
        let basis = BallBasis::dyadic_martingale(4, masses).unwrap();
        for r in [1.0, 2.0] {
            for _ in 0..5 {
                let f = GridFunction::new((0..16).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
                let fast = maximal_power(&basis, &f, r);
                let slow = maximal_oracle(&basis, &f, r);
                for (a, b) in fast.values.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn intervals_match_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let masses: Vec<f64> = (0..12).map(|_| rng.gen_range(0.1..2.0)).collect();
        let space = Arc::new(DiscreteSpace::new_1d(12, 0.0, 1.0, masses).unwrap());
        let basis = BallBasis::all_intervals(space, 5.0).unwrap();
        for r in [1.0, 1.7] {
            for _ in 0..5 {
                let f = GridFunction::new((0..12).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
                let fast = maximal_power(&basis, &f, r);
                let slow = maximal_oracle(&basis, &f, r);
                for (a, b) in fast.values.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn constant_function_fixed_point() {
        let basis = BallBasis::dyadic_martingale(3, vec![0.125; 8]).unwrap();
        let f = GridFunction::constant(8, 2.0);
        for v in maximal_power(&basis, &f, 1.0).values {
            assert!((v - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn point_and_window_queries() {
        let basis = BallBasis::dyadic_martingale(3, vec![0.125; 8]).unwrap();
        let space = basis.space();
        let mut v = vec![0.0; 8];
        v[0] = 8.0;
        let f = GridFunction::new(v).unwrap();
        let slots = [RatioData::power_mean(space, &f, 1.0, None)];
        let full = maximal(&basis, &slots);
        for a in 0..8 {
            assert_eq!(maximal_at(&basis, &slots, a), full.values[a]);
        }
        // restricted to the right half, the spike is invisible
        assert_eq!(maximal_at_within(&basis, &slots, 5, 4, 8), 0.0);
    }

    #[test]
    fn sublinear_and_homogeneous() {
        use rand::{Rng, SeedableRng};
        let basis = BallBasis::dyadic_martingale(4, vec![1.0 / 16.0; 16]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        let f = GridFunction::new((0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let g = GridFunction::new((0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let sum = GridFunction::new(f.values.iter().zip(&g.values).map(|(a, b)| a + b).collect()).unwrap();
        let mf = maximal_power(&basis, &f, 1.0);
        let mg = maximal_power(&basis, &g, 1.0);
        let ms = maximal_power(&basis, &sum, 1.0);
        for i in 0..16 {
            assert!(ms.values[i] <= mf.values[i] + mg.values[i] + 1e-12);
        }
        let m2 = maximal_power(&basis, &f.scaled(4.0), 1.0);
        for i in 0..16 {
            assert_eq!(m2.values[i], 4.0 * mf.values[i]);
        }
    }

    #[test]
    fn multilinear_is_tensor_bounded() {
        use rand::{Rng, SeedableRng};
        let basis = BallBasis::dyadic_martingale(4, vec![1.0 / 16.0; 16]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let f = GridFunction::new((0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let g = GridFunction::new((0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let joint = multilinear_maximal(&basis, &[&f, &g], 1.0, None);
        let tensor = tensor_maximal(&basis, &[&f, &g], 1.0, None);
        for i in 0..16 {
            assert!(joint.values[i] <= tensor.values[i] + 1e-12);
        }
    }

    #[test]
    fn weighted_mean_slot() {
        let basis = BallBasis::dyadic_martingale(2, vec![0.25; 4]).unwrap();
        let space = basis.space();
        let w = vec![1.0, 1.0, 4.0, 4.0];
        let f = GridFunction::constant(4, 1.0);
        let slot = RatioData::weighted_mean(space, &f, &w, None);
        let m = maximal(&basis, &[slot]);
        for v in m.values {
            assert!((v - 1.0).abs() < 1e-14);
        }
        // support restriction zeroes the numerator outside
        let slot = RatioData::weighted_mean(space, &f, &w, Some((0, 2)));
        let m = maximal(&basis, &[slot]);
        let right = basis.balls().iter().find(|b| b.extent == Extent::Interval { lo: 2, hi: 4 }).unwrap();
        let _ = right;
        assert!(m.values[3] < 1.0);
    }
}
