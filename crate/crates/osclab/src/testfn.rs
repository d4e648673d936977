//! Deterministic random test functions: atom spikes, Haar packets, smooth
//! bumps, and signed noise. Every draw is keyed by `(seed, stream)` so that
//! estimator samples and experiment trials replay exactly regardless of
//! worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::func::GridFunction;
use crate::space::DiscreteSpace;

/// Independent generator for logical stream `stream` under `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_add(1));
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recipe {
    AtomSpike,
    HaarPacket,
    SmoothBump,
    SignedNoise,
}

const RECIPES: [Recipe; 4] = [
    Recipe::AtomSpike,
    Recipe::HaarPacket,
    Recipe::SmoothBump,
    Recipe::SignedNoise,
];

/// Draw one test function supported in `[lo, hi)` (default: everywhere).
pub fn sample(space: &DiscreteSpace, support: Option<(u32, u32)>, rng: &mut ChaCha8Rng) -> GridFunction {
    let recipe = RECIPES[rng.gen_range(0..RECIPES.len())];
    sample_recipe(space, support, recipe, rng)
}

pub fn sample_recipe(
    space: &DiscreteSpace,
    support: Option<(u32, u32)>,
    recipe: Recipe,
    rng: &mut ChaCha8Rng,
) -> GridFunction {
    let n = space.n_atoms();
    let (lo, hi) = support.unwrap_or((0, n as u32));
    let (lo, hi) = (lo as usize, hi as usize);
    let len = hi - lo;
    let mut v = vec![0.0f64; n];
    match recipe {
        Recipe::AtomSpike => {
            let spikes = rng.gen_range(1..=3.min(len));
            for _ in 0..spikes {
                let a = rng.gen_range(lo..hi);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                // normalize so the spike has unit L^1 mass
                v[a] += sign * rng.gen_range(0.2..1.0) / space.mass(a);
            }
        }
        Recipe::HaarPacket => {
            let packets = rng.gen_range(1..=3);
            for _ in 0..packets {
                let w = rng.gen_range(1..=(len / 2).max(1));
                let start = rng.gen_range(lo..=hi - (2 * w).min(len));
                let amp = rng.gen_range(0.2..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                for i in 0..w.min(hi - start) {
                    v[start + i] += amp;
                }
                for i in w..(2 * w).min(hi - start) {
                    v[start + i] -= amp;
                }
            }
        }
        Recipe::SmoothBump => {
            let c = rng.gen_range(lo..hi) as f64;
            let width = rng.gen_range((len as f64 / 16.0).max(1.0)..(len as f64 / 2.0).max(2.0));
            let amp = rng.gen_range(0.2..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            for (i, item) in v.iter_mut().enumerate().take(hi).skip(lo) {
                let t = (i as f64 - c) / width;
                if t.abs() < 1.0 {
                    *item += amp * (1.0 + (std::f64::consts::PI * t).cos()) * 0.5;
                }
            }
        }
        Recipe::SignedNoise => {
            for item in v.iter_mut().take(hi).skip(lo) {
                *item = rng.gen_range(-1.0..1.0);
            }
        }
    }
    // guard against the degenerate all-zero draw
    if v.iter().all(|x| *x == 0.0) {
        v[lo] = 1.0;
    }
    GridFunction { values: v }
}

/// Draw an m-tuple of test functions.
pub fn sample_vec(
    space: &DiscreteSpace,
    m: usize,
    support: Option<(u32, u32)>,
    rng: &mut ChaCha8Rng,
) -> Vec<GridFunction> {
    (0..m).map(|_| sample(space, support, rng)).collect()
}
