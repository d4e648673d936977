//! Concrete multilinear operators at desk scale: the joint maximal operator,
//! a truncated Hilbert transform, the second-order Calderón-commutator
//! kernel, a discrete-scale square function, the lacunary Carleson operator,
//! q-variation of truncations, and a degenerate global-average operator used
//! as a smoke test. Alongside them: the grand maximal truncation operator
//! `T_*`, the majorant `Gamma = max(|T|, T_*, c(T) M_tensor)`, and sampled
//! estimators of the two oscillation constants.
//!
//! Singular kernels use symmetric truncation at half a cell width (on the
//! lattice only the diagonal is excluded) and midpoint quadrature.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::func::{GridFunction, VectorFunction, VectorNorm};
use crate::maximal::{self, RatioData};
use crate::space::{BallBasis, BallId, BasisKind, DiscreteSpace};
use crate::testfn;

/// Evaluation context: the space and the ball-basis the operator acts over.
#[derive(Clone, Copy)]
pub struct OpCtx<'a> {
    pub space: &'a DiscreteSpace,
    pub basis: &'a BallBasis,
}

impl<'a> OpCtx<'a> {
    pub fn new(basis: &'a BallBasis) -> Self {
        OpCtx { space: basis.space(), basis }
    }
}

/// Profile of the mean-zero bump generating the square-function components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BumpProfile {
    BoxDiff,
    Cosine,
}

/// Tagged description of a concrete operator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum OperatorSpec {
    /// `T f = int f dmu`, constant in x; the degenerate test operator with
    /// vanishing regularity constant.
    GlobalAverage,
    /// Joint multilinear maximal operator with reduction exponent `r`.
    Maximal { m: usize, r: f64 },
    /// Principal-value `1/(x - y)` with half-cell truncation. The declared
    /// modulus of continuity is `t^omega_exponent`, used by diagnostics.
    Hilbert { omega_exponent: f64 },
    /// The bilinear kernel `(-1)^{e(y2 - x)} (x - y2)^{-2} 1_{(x ^ y2, x v y2)}(y1)`.
    CalderonCommutator,
    /// Discrete-scale square function `(sum_t |psi_t * f|^2)^{1/2}`.
    LpSquare { scales: Vec<f64>, profile: BumpProfile },
    /// `sup_j |H(e^{2 pi i theta_j .} f)|` over a lacunary frequency list.
    LacunaryCarleson { freqs: Vec<f64> },
    /// q-variation over a decreasing truncation list of the Hilbert kernel.
    Variation { q: f64, truncations: Vec<f64>, r: f64 },
    /// Dense kernel table (row-major, `n x n`), 1-linear.
    CustomKernel { table: Arc<Vec<f64>> },
}

impl OperatorSpec {
    pub fn arity(&self) -> usize {
        match self {
            OperatorSpec::Maximal { m, .. } => *m,
            OperatorSpec::CalderonCommutator => 2,
            _ => 1,
        }
    }

    /// Reduction exponent: the `r` the oscillation conditions are phrased in.
    pub fn reduction(&self) -> f64 {
        match self {
            OperatorSpec::Maximal { r, .. } => *r,
            OperatorSpec::Variation { r, .. } => *r,
            OperatorSpec::LpSquare { .. } => 2.0,
            _ => 1.0,
        }
    }

    pub fn validate(&self, space: &DiscreteSpace) -> Result<()> {
        match self {
            OperatorSpec::Maximal { m, r } => {
                if *m == 0 || !(*r >= 1.0) {
                    return Err(Error::invalid("maximal tag needs m >= 1 and r >= 1"));
                }
            }
            OperatorSpec::LpSquare { scales, .. } => {
                if scales.is_empty() || scales.windows(2).any(|w| w[0] >= w[1]) || scales[0] <= 0.0 {
                    return Err(Error::invalid("scale list must be positive and strictly increasing"));
                }
            }
            OperatorSpec::LacunaryCarleson { freqs } => {
                if freqs.is_empty() {
                    return Err(Error::invalid("empty frequency list"));
                }
                for w in freqs.windows(2) {
                    if !(w[1] >= 2.0 * w[0]) || w[0] < 0.0 {
                        return Err(Error::invalid("frequency list must be nonnegative and lacunary (ratio >= 2)"));
                    }
                }
            }
            OperatorSpec::Variation { q, truncations, r } => {
                if !(*q > 1.0) {
                    return Err(Error::invalid("variation exponent must exceed 1"));
                }
                if !(*r >= 1.0) {
                    return Err(Error::invalid("reduction exponent must be at least 1"));
                }
                if truncations.len() < 2 || truncations.windows(2).any(|w| w[0] <= w[1]) || truncations.last().copied().unwrap_or(0.0) < 0.0 {
                    return Err(Error::invalid("truncation list must be strictly decreasing and nonnegative"));
                }
            }
            OperatorSpec::CustomKernel { table } => {
                let n = space.n_atoms();
                if table.len() != n * n {
                    return Err(Error::invalid("kernel table must be n x n"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Dimension of the auxiliary value space (1 for scalar tags).
    pub fn b_dim(&self) -> usize {
        match self {
            OperatorSpec::LpSquare { scales, .. } => scales.len(),
            OperatorSpec::LacunaryCarleson { freqs } => 2 * freqs.len(),
            OperatorSpec::Variation { truncations, .. } => truncations.len(),
            _ => 1,
        }
    }

    /// Norm on the auxiliary value space.
    pub fn b_norm(&self, coords: &[f64]) -> f64 {
        match self {
            OperatorSpec::LpSquare { .. } => coords.iter().map(|v| v * v).sum::<f64>().sqrt(),
            OperatorSpec::LacunaryCarleson { .. } => {
                // pairs (re, im) per frequency; sup of moduli
                coords
                    .chunks(2)
                    .map(|c| (c[0] * c[0] + c[1] * c[1]).sqrt())
                    .fold(0.0, f64::max)
            }
            OperatorSpec::Variation { q, .. } => variation_norm(coords, *q),
            _ => coords[0].abs(),
        }
    }
}

// ---------------------------------------------------------------------------
// support ranges

pub type Support = Option<(u32, u32)>;

fn support_range(space: &DiscreteSpace, support: Support) -> (u32, u32) {
    support.unwrap_or((0, space.n_atoms() as u32))
}

fn intersect(a: (u32, u32), b: (u32, u32)) -> (u32, u32) {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    (lo, hi.max(lo))
}

// ---------------------------------------------------------------------------
// kernels

#[inline]
fn hilbert_kernel(h: f64, x: usize, y: usize) -> f64 {
    1.0 / ((x as i64 - y as i64) as f64 * h)
}

/// The bilinear Calderón-commutator kernel value at coordinates of atoms
/// `(x, y1, y2)` (arity 2). Exposed for direct inspection.
pub fn calderon_kernel(space: &DiscreteSpace, x: usize, y1: usize, y2: usize) -> f64 {
    if x == y2 {
        return 0.0;
    }
    let cx = space.coord(x);
    let cy1 = space.coord(y1);
    let cy2 = space.coord(y2);
    let inside = cy1 > cx.min(cy2) && cy1 < cx.max(cy2);
    if !inside {
        return 0.0;
    }
    let sign = if cy2 > cx { -1.0 } else { 1.0 };
    sign / ((cx - cy2) * (cx - cy2))
}

/// Closed-form Calderón-commutator kernel from raw coordinates (m = 2).
pub fn calderon_kernel_at(x: f64, y1: f64, y2: f64) -> f64 {
    if y1 <= x.min(y2) || y1 >= x.max(y2) {
        return 0.0;
    }
    let sign = if y2 > x { -1.0 } else { 1.0 };
    sign / ((x - y2) * (x - y2))
}

fn bump(profile: BumpProfile, u: f64) -> f64 {
    match profile {
        BumpProfile::BoxDiff => {
            if u.abs() < 1.0 {
                0.5
            } else {
                0.0
            }
        }
        BumpProfile::Cosine => {
            if u.abs() < 1.0 {
                0.5 * (1.0 + (std::f64::consts::PI * u).cos())
            } else {
                0.0
            }
        }
    }
}

/// Square-function component at scale `t`: the difference of the normalized
/// bump averages at scales `t` and `2t`. Normalizing by the discrete bump
/// mass makes the component annihilate constants exactly.
fn scale_component(
    space: &DiscreteSpace,
    f: &GridFunction,
    profile: BumpProfile,
    t: f64,
    window: (u32, u32),
    x: usize,
) -> f64 {
    let cx = space.coord(x);
    let h = space.cell_width();
    let n = space.n_atoms();
    let mut avg = [0.0f64; 2];
    for (k, scale) in [t, 2.0 * t].into_iter().enumerate() {
        let rad = (scale / h).ceil() as usize + 1;
        let lo = x.saturating_sub(rad);
        let hi = (x + rad + 1).min(n);
        let mut num = 0.0;
        let mut den = 0.0;
        for j in lo..hi {
            let b = bump(profile, (cx - space.coord(j)) / scale);
            // the normalization is part of the operator; only the numerator
            // sees the restriction of f
            den += b * space.mass(j);
            if j >= window.0 as usize && j < window.1 as usize {
                num += b * f.values[j] * space.mass(j);
            }
        }
        avg[k] = if den > 0.0 { num / den } else { 0.0 };
    }
    avg[0] - avg[1]
}

// ---------------------------------------------------------------------------
// application

impl OperatorSpec {
    fn check_arity(&self, got: usize) -> Result<()> {
        if got != self.arity() {
            return Err(Error::ArityMismatch { expected: self.arity(), got });
        }
        Ok(())
    }

    /// Pointwise magnitudes `|T(f 1_S)|` (the auxiliary norm for vector
    /// tags).
    pub fn apply(&self, ctx: OpCtx<'_>, fvec: &[&GridFunction], support: Support) -> Result<GridFunction> {
        self.check_arity(fvec.len())?;
        self.validate(ctx.space)?;
        let n = ctx.space.n_atoms();
        let (slo, shi) = support_range(ctx.space, support);
        match self {
            OperatorSpec::GlobalAverage => {
                let v = fvec[0].integral_range(ctx.space, slo, shi).abs();
                Ok(GridFunction::constant(n, v))
            }
            OperatorSpec::Maximal { r, .. } => {
                Ok(maximal::multilinear_maximal(ctx.basis, fvec, *r, support))
            }
            OperatorSpec::Hilbert { .. } | OperatorSpec::CustomKernel { .. } => {
                let g = mass_weighted(ctx.space, fvec[0], slo, shi);
                let h = ctx.space.cell_width();
                let table = if let OperatorSpec::CustomKernel { table } = self { Some(table.as_slice()) } else { None };
                let mut out = vec![0.0f64; n];
                for (x, item) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    match table {
                        None => {
                            for j in slo as usize..shi as usize {
                                if j != x {
                                    acc += g[j] * hilbert_kernel(h, x, j);
                                }
                            }
                        }
                        Some(t) => {
                            let row = &t[x * n..(x + 1) * n];
                            for j in slo as usize..shi as usize {
                                if j != x {
                                    acc += g[j] * row[j];
                                }
                            }
                        }
                    }
                    *item = acc.abs();
                }
                Ok(GridFunction { values: out })
            }
            OperatorSpec::CalderonCommutator => {
                let rows = CalderonRows::new(ctx.space, fvec[0], fvec[1], slo, shi);
                let mut out = vec![0.0f64; n];
                for (x, item) in out.iter_mut().enumerate() {
                    *item = rows.full(x).abs();
                }
                Ok(GridFunction { values: out })
            }
            _ => {
                // vector tags: collapse coordinates with the auxiliary norm
                let mut out = vec![0.0f64; n];
                let mut coords = vec![0.0f64; self.b_dim()];
                for (x, item) in out.iter_mut().enumerate() {
                    self.coords_at(ctx, fvec, (slo, shi), x, &mut coords)?;
                    *item = self.b_norm(&coords);
                }
                Ok(GridFunction { values: out })
            }
        }
    }

    /// Vector-valued application for the linearizable vector tags.
    pub fn apply_vector(&self, ctx: OpCtx<'_>, fvec: &[&GridFunction], support: Support) -> Result<VectorFunction> {
        self.check_arity(fvec.len())?;
        self.validate(ctx.space)?;
        let (slo, shi) = support_range(ctx.space, support);
        let n = ctx.space.n_atoms();
        let norm_tag = match self {
            OperatorSpec::LpSquare { scales, .. } => VectorNorm::L2Weighted(vec![1.0; scales.len()]),
            OperatorSpec::LacunaryCarleson { freqs } => {
                let _ = freqs;
                VectorNorm::Sup
            }
            _ => return Err(Error::Unsupported("vector application is defined for the square-function and maximally modulated tags".into())),
        };
        let mut values = Vec::with_capacity(n);
        let mut coords = vec![0.0f64; self.b_dim()];
        for x in 0..n {
            self.coords_at(ctx, fvec, (slo, shi), x, &mut coords)?;
            match self {
                OperatorSpec::LacunaryCarleson { .. } => {
                    // collapse (re, im) pairs to moduli for the sup norm
                    let v: Vec<f64> = coords.chunks(2).map(|c| (c[0] * c[0] + c[1] * c[1]).sqrt()).collect();
                    values.push(v);
                }
                _ => values.push(coords.clone()),
            }
        }
        VectorFunction::new(values, norm_tag)
    }

    /// Auxiliary-space coordinates of `T(f 1_W)(x)`; scalar tags put the
    /// signed value in `coords[0]`.
    pub fn coords_at(&self, ctx: OpCtx<'_>, fvec: &[&GridFunction], window: (u32, u32), x: usize, coords: &mut [f64]) -> Result<()> {
        let (wlo, whi) = window;
        match self {
            OperatorSpec::GlobalAverage => {
                coords[0] = fvec[0].integral_range(ctx.space, wlo, whi);
            }
            OperatorSpec::Maximal { r, .. } => {
                let slots: Vec<RatioData> = fvec
                    .iter()
                    .map(|f| RatioData::power_mean(ctx.space, f, *r, Some(window)))
                    .collect();
                coords[0] = maximal::maximal_at(ctx.basis, &slots, x);
            }
            OperatorSpec::Hilbert { .. } => {
                let h = ctx.space.cell_width();
                let mut acc = 0.0;
                for j in wlo as usize..whi as usize {
                    if j != x {
                        acc += fvec[0].values[j] * ctx.space.mass(j) * hilbert_kernel(h, x, j);
                    }
                }
                coords[0] = acc;
            }
            OperatorSpec::CustomKernel { table } => {
                let n = ctx.space.n_atoms();
                let row = &table[x * n..(x + 1) * n];
                let mut acc = 0.0;
                for j in wlo as usize..whi as usize {
                    if j != x {
                        acc += fvec[0].values[j] * ctx.space.mass(j) * row[j];
                    }
                }
                coords[0] = acc;
            }
            OperatorSpec::CalderonCommutator => {
                let rows = CalderonRows::new(ctx.space, fvec[0], fvec[1], wlo, whi);
                coords[0] = rows.window(x, wlo, whi);
            }
            OperatorSpec::LpSquare { scales, profile } => {
                for (k, &t) in scales.iter().enumerate() {
                    coords[k] = scale_component(ctx.space, fvec[0], *profile, t, (wlo, whi), x);
                }
            }
            OperatorSpec::LacunaryCarleson { freqs } => {
                let h = ctx.space.cell_width();
                for (k, &theta) in freqs.iter().enumerate() {
                    let mut re = 0.0;
                    let mut im = 0.0;
                    for j in wlo as usize..whi as usize {
                        if j != x {
                            let kv = fvec[0].values[j] * ctx.space.mass(j) * hilbert_kernel(h, x, j);
                            let phase = 2.0 * std::f64::consts::PI * theta * ctx.space.coord(j);
                            re += kv * phase.cos();
                            im += kv * phase.sin();
                        }
                    }
                    coords[2 * k] = re;
                    coords[2 * k + 1] = im;
                }
            }
            OperatorSpec::Variation { truncations, .. } => {
                let h = ctx.space.cell_width();
                for (k, &eta) in truncations.iter().enumerate() {
                    // |x - y| > eta excludes indices within eta/h of x
                    let d = (eta / h).floor() as usize;
                    let mut acc = 0.0;
                    for j in wlo as usize..whi as usize {
                        if j != x && x.abs_diff(j) > d {
                            acc += fvec[0].values[j] * ctx.space.mass(j) * hilbert_kernel(h, x, j);
                        }
                    }
                    coords[k] = acc;
                }
            }
        }
        Ok(())
    }

    /// `T_*(f)(x) = sup_{B : x in B} || T(f 1_S)(x) - T(f 1_{S cap B*})(x) ||`.
    pub fn grand_maximal(&self, ctx: OpCtx<'_>, fvec: &[&GridFunction], support: Support) -> Result<GridFunction> {
        self.check_arity(fvec.len())?;
        self.validate(ctx.space)?;
        let n = ctx.space.n_atoms();
        let fields = self.fields_on(ctx, fvec, support, 0, n)?;
        Ok(GridFunction { values: fields.t_star })
    }

    /// `Gamma(f)(x) = max(|T f(x)|, T_* f(x), c_T M_tensor f(x))` on the atom
    /// range `[out_lo, out_hi)`, with every `f_i` restricted to the support.
    pub fn gamma_on(
        &self,
        ctx: OpCtx<'_>,
        fvec: &[&GridFunction],
        support: Support,
        out_lo: usize,
        out_hi: usize,
        c_t: f64,
    ) -> Result<Vec<f64>> {
        self.check_arity(fvec.len())?;
        let r = self.reduction();
        let fields = self.fields_on(ctx, fvec, support, out_lo, out_hi)?;
        // tensor maximal via per-slot restricted chains
        let slots: Vec<RatioData> = fvec
            .iter()
            .map(|f| RatioData::power_mean(ctx.space, f, r, support))
            .collect();
        let mut out = Vec::with_capacity(out_hi - out_lo);
        for (i, x) in (out_lo..out_hi).enumerate() {
            let mut mt = 1.0;
            for s in &slots {
                mt *= maximal::maximal_at(ctx.basis, std::slice::from_ref(s), x);
            }
            out.push(fields.t_abs[i].max(fields.t_star[i]).max(c_t * mt));
        }
        Ok(out)
    }

    /// Convenience full-range majorant.
    pub fn gamma_majorant(&self, ctx: OpCtx<'_>, fvec: &[&GridFunction], c_t: f64) -> Result<GridFunction> {
        let n = ctx.space.n_atoms();
        Ok(GridFunction { values: self.gamma_on(ctx, fvec, None, 0, n, c_t)? })
    }

    /// `|T|` and `T_*` on an atom range, sharing the per-atom kernel rows.
    fn fields_on(
        &self,
        ctx: OpCtx<'_>,
        fvec: &[&GridFunction],
        support: Support,
        out_lo: usize,
        out_hi: usize,
    ) -> Result<Fields> {
        let supp = support_range(ctx.space, support);
        let (slo, shi) = supp;
        let n_out = out_hi - out_lo;
        let mut t_abs = vec![0.0f64; n_out];
        let mut t_star = vec![0.0f64; n_out];
        match self {
            OperatorSpec::GlobalAverage => {
                let full = fvec[0].integral_range(ctx.space, slo, shi);
                let pf = crate::func::power_prefix_signed(ctx.space, fvec[0]);
                for (i, x) in (out_lo..out_hi).enumerate() {
                    t_abs[i] = full.abs();
                    let mut best = 0.0f64;
                    for id in ctx.basis.balls_containing(x) {
                        let hull = ctx.basis.ball(ctx.basis.hull_id(id));
                        if let Some(hr) = hull.extent.range() {
                            let (a, b) = intersect(supp, hr);
                            let inside = pf[b as usize] - pf[a as usize];
                            best = best.max((full - inside).abs());
                        }
                    }
                    t_star[i] = best;
                }
            }
            OperatorSpec::Maximal { r, .. } => {
                let slots: Vec<RatioData> = fvec
                    .iter()
                    .map(|f| RatioData::power_mean(ctx.space, f, *r, support))
                    .collect();
                for (i, x) in (out_lo..out_hi).enumerate() {
                    let full = maximal::maximal_at(ctx.basis, &slots, x);
                    t_abs[i] = full;
                    let mut best = 0.0f64;
                    for id in ctx.basis.balls_containing(x) {
                        let hull = ctx.basis.ball(ctx.basis.hull_id(id));
                        if let Some(hr) = hull.extent.range() {
                            let restricted = restricted_maximal_at(ctx, &slots, x, intersect(supp, hr));
                            best = best.max((full - restricted).abs());
                        }
                    }
                    t_star[i] = best;
                }
            }
            OperatorSpec::Hilbert { .. } | OperatorSpec::CustomKernel { .. } => {
                let g = mass_weighted(ctx.space, fvec[0], slo, shi);
                let h = ctx.space.cell_width();
                let table = if let OperatorSpec::CustomKernel { table } = self { Some(table.as_slice()) } else { None };
                let n = ctx.space.n_atoms();
                let mut row = vec![0.0f64; n + 1];
                for (i, x) in (out_lo..out_hi).enumerate() {
                    // prefix over j of k(x, j) g_j, zero outside the support
                    row[slo as usize] = 0.0;
                    match table {
                        None => {
                            for j in slo as usize..shi as usize {
                                let kv = if j == x { 0.0 } else { hilbert_kernel(h, x, j) };
                                row[j + 1] = row[j] + kv * g[j];
                            }
                        }
                        Some(t) => {
                            let trow = &t[x * n..(x + 1) * n];
                            for j in slo as usize..shi as usize {
                                let kv = if j == x { 0.0 } else { trow[j] };
                                row[j + 1] = row[j] + kv * g[j];
                            }
                        }
                    }
                    let full = row[shi as usize] - row[slo as usize];
                    t_abs[i] = full.abs();
                    let mut best = 0.0f64;
                    self.for_each_hull_window(ctx, x, |w| {
                        let (a, b) = intersect(supp, w);
                        let inside = row[b as usize] - row[a as usize];
                        best = best.max((full - inside).abs());
                    });
                    t_star[i] = best;
                }
            }
            OperatorSpec::CalderonCommutator => {
                let rows = CalderonRows::new(ctx.space, fvec[0], fvec[1], slo, shi);
                let n = ctx.space.n_atoms();
                let mut row = vec![0.0f64; n + 1];
                for (i, x) in (out_lo..out_hi).enumerate() {
                    rows.prefix_into(x, &mut row);
                    let full = row[shi as usize] - row[slo as usize];
                    t_abs[i] = full.abs();
                    let mut best = 0.0f64;
                    self.for_each_hull_window(ctx, x, |w| {
                        let (a, b) = intersect(supp, w);
                        let inside = row[b as usize] - row[a as usize];
                        best = best.max((full - inside).abs());
                    });
                    t_star[i] = best;
                }
            }
            _ => {
                // vector tags: direct evaluation per (atom, ball) pair
                let dim = self.b_dim();
                let mut full = vec![0.0f64; dim];
                let mut inner = vec![0.0f64; dim];
                let mut diff = vec![0.0f64; dim];
                for (i, x) in (out_lo..out_hi).enumerate() {
                    self.coords_at(ctx, fvec, supp, x, &mut full)?;
                    t_abs[i] = self.b_norm(&full);
                    let mut best = 0.0f64;
                    let mut windows: Vec<(u32, u32)> = Vec::new();
                    self.for_each_hull_window(ctx, x, |w| windows.push(intersect(supp, w)));
                    windows.sort_unstable();
                    windows.dedup();
                    for w in windows {
                        self.coords_at(ctx, fvec, w, x, &mut inner)?;
                        for k in 0..dim {
                            diff[k] = full[k] - inner[k];
                        }
                        best = best.max(self.b_norm(&diff));
                    }
                    t_star[i] = best;
                }
            }
        }
        Ok(Fields { t_abs, t_star })
    }

    /// Visit the hull windows of all balls containing `x`.
    fn for_each_hull_window(&self, ctx: OpCtx<'_>, x: usize, mut visit: impl FnMut((u32, u32))) {
        match ctx.basis.kind() {
            BasisKind::DyadicMartingale => {
                for id in ctx.basis.dyadic_ancestors(ctx.basis.dyadic_leaf(x)) {
                    if let Some(r) = ctx.basis.ball(ctx.basis.hull_id(id)).extent.range() {
                        visit(r);
                    }
                }
            }
            _ => {
                for id in ctx.basis.balls_containing(x) {
                    if let Some(r) = ctx.basis.ball(ctx.basis.hull_id(id)).extent.range() {
                        visit(r);
                    }
                }
            }
        }
    }
}

struct Fields {
    t_abs: Vec<f64>,
    t_star: Vec<f64>,
}

/// `f mu` on the support, zero elsewhere.
fn mass_weighted(space: &DiscreteSpace, f: &GridFunction, slo: u32, shi: u32) -> Vec<f64> {
    let n = space.n_atoms();
    let mut g = vec![0.0f64; n];
    for j in slo as usize..shi as usize {
        g[j] = f.values[j] * space.mass(j);
    }
    g
}

/// Joint maximal value at `x` with every slot numerator clipped to a window
/// (the candidate balls stay unrestricted).
fn restricted_maximal_at(ctx: OpCtx<'_>, slots: &[RatioData], x: usize, window: (u32, u32)) -> f64 {
    let (wlo, whi) = window;
    let clip_value = |lo: u32, hi: u32| -> f64 {
        let mut p = 1.0;
        for s in slots {
            let (a, b) = intersect((lo, hi), (wlo, whi));
            let num = s.num_prefix[b as usize] - s.num_prefix[a as usize];
            let den = s.den_prefix[hi as usize] - s.den_prefix[lo as usize];
            p *= if den > 0.0 { (num / den).powf(s.outer_pow) } else { 0.0 };
        }
        p
    };
    match ctx.basis.kind() {
        BasisKind::DyadicMartingale => {
            let mut best = 0.0f64;
            for id in ctx.basis.dyadic_ancestors(ctx.basis.dyadic_leaf(x)) {
                let (lo, hi) = ctx.basis.ball(id).extent.range().unwrap();
                best = best.max(clip_value(lo, hi));
            }
            best
        }
        _ => {
            let mut best = 0.0f64;
            for id in ctx.basis.balls_containing(x) {
                if let Some((lo, hi)) = ctx.basis.ball(id).extent.range() {
                    best = best.max(clip_value(lo, hi));
                }
            }
            best
        }
    }
}

/// Precomputed per-row machinery for the Calderón-commutator kernel: the
/// inner `y1` integral collapses to a prefix difference of `f1 mu`, so each
/// row over `y2` costs O(support).
struct CalderonRows<'a> {
    space: &'a DiscreteSpace,
    f2: &'a GridFunction,
    f1_prefix: Vec<f64>,
    slo: u32,
    shi: u32,
}

impl<'a> CalderonRows<'a> {
    fn new(space: &'a DiscreteSpace, f1: &'a GridFunction, f2: &'a GridFunction, slo: u32, shi: u32) -> Self {
        let n = space.n_atoms();
        let mut f1_prefix = vec![0.0f64; n + 1];
        for j in 0..n {
            let v = if j >= slo as usize && j < shi as usize {
                f1.values[j] * space.mass(j)
            } else {
                0.0
            };
            f1_prefix[j + 1] = f1_prefix[j] + v;
        }
        CalderonRows { space, f2, f1_prefix, slo, shi }
    }

    #[inline]
    fn term(&self, x: usize, y2: usize) -> f64 {
        if y2 == x {
            return 0.0;
        }
        let h = self.space.cell_width();
        let d = (x as i64 - y2 as i64) as f64 * h;
        // atoms strictly between x and y2
        let inner = if y2 > x {
            self.f1_prefix[y2] - self.f1_prefix[x + 1]
        } else {
            self.f1_prefix[x] - self.f1_prefix[y2 + 1]
        };
        let sign = if y2 > x { -1.0 } else { 1.0 };
        sign / (d * d) * self.f2.values[y2] * self.space.mass(y2) * inner
    }

    /// Prefix over `y2` of the row at `x` (zero outside the support).
    fn prefix_into(&self, x: usize, row: &mut [f64]) {
        row[self.slo as usize] = 0.0;
        for y2 in self.slo as usize..self.shi as usize {
            row[y2 + 1] = row[y2] + self.term(x, y2);
        }
    }

    fn full(&self, x: usize) -> f64 {
        let mut acc = 0.0;
        for y2 in self.slo as usize..self.shi as usize {
            acc += self.term(x, y2);
        }
        acc
    }

    /// Value with both slots restricted to `[a, b)` inside the support.
    fn window(&self, x: usize, a: u32, b: u32) -> f64 {
        let (a, b) = intersect((a, b), (self.slo, self.shi));
        let mut acc = 0.0;
        for y2 in a as usize..b as usize {
            if y2 == x {
                continue;
            }
            let h = self.space.cell_width();
            let d = (x as i64 - y2 as i64) as f64 * h;
            // clip the inner range to [a, b) as well
            let (ilo, ihi) = if y2 > x { (x + 1, y2) } else { (y2 + 1, x) };
            let (ilo, ihi) = (ilo.max(a as usize), ihi.min(b as usize));
            if ilo >= ihi {
                continue;
            }
            let inner = self.f1_prefix[ihi] - self.f1_prefix[ilo];
            let sign = if y2 > x { -1.0 } else { 1.0 };
            acc += sign / (d * d) * self.f2.values[y2] * self.space.mass(y2) * inner;
        }
        acc
    }
}

// ---------------------------------------------------------------------------
// q-variation

/// Supremal `l^q` jump norm over all subsequences, by longest-path dynamic
/// programming on the O(n^2) jump graph.
pub fn variation_norm(seq: &[f64], q: f64) -> f64 {
    let n = seq.len();
    if n < 2 {
        return 0.0;
    }
    let mut dp = vec![0.0f64; n];
    let mut best = 0.0f64;
    for j in 1..n {
        for i in 0..j {
            let w = (seq[i] - seq[j]).abs().powf(q);
            let cand = dp[i] + w;
            if cand > dp[j] {
                dp[j] = cand;
            }
        }
        best = best.max(dp[j]);
    }
    best.powf(1.0 / q)
}

// ---------------------------------------------------------------------------
// commutators

/// `[T, b]_alpha`: a base operator with symbol functions and a multi-index.
#[derive(Clone, Debug)]
pub struct CommutatorSpec {
    pub base: OperatorSpec,
    pub symbols: Vec<GridFunction>,
    pub alpha: Vec<u32>,
}

impl CommutatorSpec {
    pub fn new(base: OperatorSpec, symbols: Vec<GridFunction>, alpha: Vec<u32>) -> Result<Self> {
        let m = base.arity();
        if symbols.len() != m || alpha.len() != m {
            return Err(Error::invalid("one symbol and one multi-index entry per linear slot"));
        }
        if alpha.iter().any(|a| *a > 0) {
            match base {
                OperatorSpec::GlobalAverage
                | OperatorSpec::Hilbert { .. }
                | OperatorSpec::CustomKernel { .. }
                | OperatorSpec::CalderonCommutator => {}
                _ => {
                    return Err(Error::Unsupported(
                        "nonzero multi-index requires a kernel representation".into(),
                    ))
                }
            }
        }
        Ok(CommutatorSpec { base, symbols, alpha })
    }

    pub fn order(&self) -> u32 {
        self.alpha.iter().sum()
    }

    /// Active symbol slots `tau = { i : alpha_i != 0 }`.
    pub fn tau(&self) -> Vec<usize> {
        self.alpha
            .iter()
            .enumerate()
            .filter(|(_, a)| **a > 0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Pointwise `|[T, b]_alpha (f 1_S)|` via binomial expansion of
    /// `(b(x) - b(y))^alpha` into applications of the base operator.
    pub fn apply(&self, ctx: OpCtx<'_>, fvec: &[&GridFunction], support: Support) -> Result<GridFunction> {
        self.base.check_arity(fvec.len())?;
        if self.order() == 0 {
            return self.base.apply(ctx, fvec, support);
        }
        let n = ctx.space.n_atoms();
        match &self.base {
            OperatorSpec::GlobalAverage | OperatorSpec::Hilbert { .. } | OperatorSpec::CustomKernel { .. } => {
                let alpha = self.alpha[0];
                let b = &self.symbols[0];
                // sum_j C(alpha, j) b(x)^{alpha - j} (-1)^j T(b^j f)(x)
                let mut pieces: Vec<GridFunction> = Vec::with_capacity(alpha as usize + 1);
                for j in 0..=alpha {
                    let bf = GridFunction {
                        values: fvec[0]
                            .values
                            .iter()
                            .zip(&b.values)
                            .map(|(f, bb)| f * bb.powi(j as i32))
                            .collect(),
                    };
                    pieces.push(self.base_signed(ctx, &[&bf], support)?);
                }
                let mut out = vec![0.0f64; n];
                for (x, item) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..=alpha {
                        let c = binomial(alpha, j) * if j % 2 == 0 { 1.0 } else { -1.0 };
                        acc += c * b.values[x].powi((alpha - j) as i32) * pieces[j as usize].values[x];
                    }
                    *item = acc.abs();
                }
                Ok(GridFunction { values: out })
            }
            OperatorSpec::CalderonCommutator => {
                let (slo, shi) = support_range(ctx.space, support);
                let (a1, a2) = (self.alpha[0], self.alpha[1]);
                let (b1, b2) = (&self.symbols[0], &self.symbols[1]);
                // expand slot 1 into prefixes of b1^j f1 mu
                let mut prefixes: Vec<Vec<f64>> = Vec::with_capacity(a1 as usize + 1);
                for j in 0..=a1 {
                    let mut p = vec![0.0f64; n + 1];
                    for i in 0..n {
                        let v = if i >= slo as usize && i < shi as usize {
                            fvec[0].values[i] * b1.values[i].powi(j as i32) * ctx.space.mass(i)
                        } else {
                            0.0
                        };
                        p[i + 1] = p[i] + v;
                    }
                    prefixes.push(p);
                }
                let h = ctx.space.cell_width();
                let mut out = vec![0.0f64; n];
                for (x, item) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for y2 in slo as usize..shi as usize {
                        if y2 == x {
                            continue;
                        }
                        let d = (x as i64 - y2 as i64) as f64 * h;
                        let (ilo, ihi) = if y2 > x { (x + 1, y2) } else { (y2 + 1, x) };
                        if ilo >= ihi {
                            continue;
                        }
                        let mut inner = 0.0;
                        for j in 0..=a1 {
                            let c = binomial(a1, j) * if j % 2 == 0 { 1.0 } else { -1.0 };
                            inner += c
                                * b1.values[x].powi((a1 - j) as i32)
                                * (prefixes[j as usize][ihi] - prefixes[j as usize][ilo]);
                        }
                        let sign = if y2 > x { -1.0 } else { 1.0 };
                        let sym2 = (b2.values[x] - b2.values[y2]).powi(a2 as i32);
                        acc += sign / (d * d) * sym2 * fvec[1].values[y2] * ctx.space.mass(y2) * inner;
                    }
                    *item = acc.abs();
                }
                Ok(GridFunction { values: out })
            }
            _ => Err(Error::Unsupported("nonzero multi-index requires a kernel representation".into())),
        }
    }

    /// Signed base application for 1-linear kernel tags.
    fn base_signed(&self, ctx: OpCtx<'_>, fvec: &[&GridFunction], support: Support) -> Result<GridFunction> {
        let (slo, shi) = support_range(ctx.space, support);
        let n = ctx.space.n_atoms();
        let mut out = vec![0.0f64; n];
        let mut coords = [0.0f64];
        for (x, item) in out.iter_mut().enumerate() {
            self.base.coords_at(ctx, fvec, (slo, shi), x, &mut coords)?;
            *item = coords[0];
        }
        Ok(GridFunction { values: out })
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    let mut out = 1.0f64;
    for i in 0..k {
        out = out * (n - i) as f64 / (i + 1) as f64;
    }
    out
}

// ---------------------------------------------------------------------------
// oscillation estimators

/// Sampled estimates of the two oscillation constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OscillationReport {
    pub c1_est: f64,
    pub c2_est: f64,
    pub samples: usize,
    pub skipped: usize,
    pub worst_witness: Option<OscWitness>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OscWitness {
    pub condition: u8,
    pub ball: BallId,
    pub x: usize,
    pub x_prime: usize,
    pub sample_index: usize,
}

/// Expansion-ball recipe for the size condition.
fn expansion_ball(ctx: OpCtx<'_>, op: &OperatorSpec, b0: BallId) -> Option<BallId> {
    let basis = ctx.basis;
    match op {
        OperatorSpec::Maximal { .. } | OperatorSpec::GlobalAverage => {
            // smallest strictly larger intersecting ball, then its hull
            let e0 = basis.ball(b0).extent;
            let m0 = basis.ball(b0).measure;
            let mut best: Option<BallId> = None;
            for b in basis.balls() {
                if b.measure > m0 && b.extent.intersects(&e0) {
                    if let Some(cur) = best {
                        if b.measure < basis.ball(cur).measure {
                            best = Some(b.id);
                        }
                    } else {
                        best = Some(b.id);
                    }
                }
            }
            best.map(|b1| basis.hull_id(b1))
        }
        _ => {
            // geometric 2-dilation of the ball, then the smallest basis ball
            // containing it
            let (lo, hi) = basis.ball(b0).extent.range()?;
            let len = hi - lo;
            let ext = len.div_ceil(2);
            let dlo = lo.saturating_sub(ext);
            let dhi = (hi + ext).min(ctx.space.n_atoms() as u32);
            basis.smallest_ball_containing_range(dlo, dhi)
        }
    }
    .filter(|b| *b != b0)
}

/// Sampled estimators of the size and regularity constants. The suprema over
/// atoms and function tuples are Monte-Carlo maxima: estimates grow with the
/// sample count and never overshoot the true constants.
pub fn estimate_oscillation(
    op: &OperatorSpec,
    ctx: OpCtx<'_>,
    n_samples: usize,
    seed: u64,
) -> Result<OscillationReport> {
    if n_samples == 0 {
        return Err(Error::invalid("at least one sample required"));
    }
    op.validate(ctx.space)?;
    use rand::Rng;
    let m = op.arity();
    let r = op.reduction();
    let dim = op.b_dim();
    let n_balls = ctx.basis.n_balls();
    let full = support_range(ctx.space, None);
    let mut c1 = 0.0f64;
    let mut c2 = 0.0f64;
    let mut skipped = 0usize;
    let mut witness: Option<OscWitness> = None;
    let mut cf = vec![0.0f64; dim];
    let mut cw = vec![0.0f64; dim];
    let mut cf2 = vec![0.0f64; dim];
    let mut cw2 = vec![0.0f64; dim];
    let mut diff = vec![0.0f64; dim];
    for i in 0..n_samples {
        let mut rng = testfn::rng_for(seed, i as u64);
        let fvec = testfn::sample_vec(ctx.space, m, None, &mut rng);
        let frefs: Vec<&GridFunction> = fvec.iter().collect();

        // regularity: difference of tail oscillations at two points of B
        let ball: BallId = rng.gen_range(0..n_balls) as BallId;
        let extent = ctx.basis.ball(ball).extent;
        let atoms = extent.atoms(ctx.space.nx());
        let x = atoms[rng.gen_range(0..atoms.len())];
        let xp = atoms[rng.gen_range(0..atoms.len())];
        let hull = ctx.basis.ball(ctx.basis.hull_id(ball));
        if let Some(hr) = hull.extent.range() {
            let mut den = 1.0;
            for f in &frefs {
                den *= crate::func::super_average(ctx.space, ctx.basis, f, ball, r);
            }
            if den > 0.0 {
                op.coords_at(ctx, &frefs, full, x, &mut cf)?;
                op.coords_at(ctx, &frefs, hr, x, &mut cw)?;
                op.coords_at(ctx, &frefs, full, xp, &mut cf2)?;
                op.coords_at(ctx, &frefs, hr, xp, &mut cw2)?;
                for k in 0..dim {
                    diff[k] = (cf[k] - cw[k]) - (cf2[k] - cw2[k]);
                }
                let val = op.b_norm(&diff) / den;
                if val > c2 {
                    c2 = val;
                    witness = Some(OscWitness { condition: 2, ball, x, x_prime: xp, sample_index: i });
                }
            } else {
                skipped += 1;
            }
        }

        // size: expansion ball against the hull of an unsaturated ball
        let mut b0 = None;
        for _ in 0..16 {
            let cand: BallId = rng.gen_range(0..n_balls) as BallId;
            if !ctx.basis.hull_saturated(cand) {
                b0 = Some(cand);
                break;
            }
        }
        if let Some(b0) = b0 {
            if let Some(bex) = expansion_ball(ctx, op, b0) {
                let hull_b = ctx.basis.ball(ctx.basis.hull_id(bex)).extent.range();
                let hull_b0 = ctx.basis.ball(ctx.basis.hull_id(b0)).extent.range();
                if let (Some(hb), Some(hb0)) = (hull_b, hull_b0) {
                    let mut den = 1.0;
                    for f in &frefs {
                        den *= crate::func::range_average_from_prefix(
                            ctx.space,
                            &crate::func::power_prefix(ctx.space, f, r),
                            hb.0,
                            hb.1,
                            r,
                        );
                    }
                    if den > 0.0 {
                        let b0_atoms = ctx.basis.ball(b0).extent.atoms(ctx.space.nx());
                        let tries = b0_atoms.len().min(12);
                        let mut val = 0.0f64;
                        let mut wx = b0_atoms[0];
                        for _ in 0..tries {
                            let x = b0_atoms[rng.gen_range(0..b0_atoms.len())];
                            op.coords_at(ctx, &frefs, hb, x, &mut cf)?;
                            op.coords_at(ctx, &frefs, hb0, x, &mut cw)?;
                            for k in 0..dim {
                                diff[k] = cf[k] - cw[k];
                            }
                            let v = op.b_norm(&diff);
                            if v > val {
                                val = v;
                                wx = x;
                            }
                        }
                        let v = val / den;
                        if v > c1 {
                            c1 = v;
                            witness = Some(OscWitness { condition: 1, ball: b0, x: wx, x_prime: wx, sample_index: i });
                        }
                    } else {
                        skipped += 1;
                    }
                }
            }
        }
    }
    Ok(OscillationReport { c1_est: c1, c2_est: c2, samples: n_samples, skipped, worst_witness: witness })
}

/// Sampled normalized truncation oscillation between nested balls:
/// `sup_{f, x in A} ||T(f 1_{B*})(x) - T(f 1_{A*})(x)|| / prod <f_i>_{B*, r}`.
pub fn delta(
    op: &OperatorSpec,
    ctx: OpCtx<'_>,
    a: BallId,
    b: BallId,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    if !ctx.basis.ball(b).extent.contains(&ctx.basis.ball(a).extent) {
        return Err(Error::invalid("delta requires A inside B"));
    }
    use rand::Rng;
    let m = op.arity();
    let r = op.reduction();
    let dim = op.b_dim();
    let ha = ctx.basis.ball(ctx.basis.hull_id(a)).extent.range().ok_or_else(|| Error::Unsupported("1D hulls required".into()))?;
    let hb = ctx.basis.ball(ctx.basis.hull_id(b)).extent.range().ok_or_else(|| Error::Unsupported("1D hulls required".into()))?;
    let a_atoms = ctx.basis.ball(a).extent.atoms(ctx.space.nx());
    let mut best = 0.0f64;
    let mut ca = vec![0.0f64; dim];
    let mut cb = vec![0.0f64; dim];
    let mut diff = vec![0.0f64; dim];
    for i in 0..n_samples {
        let mut rng = testfn::rng_for(seed, i as u64);
        let fvec = testfn::sample_vec(ctx.space, m, None, &mut rng);
        let frefs: Vec<&GridFunction> = fvec.iter().collect();
        let mut den = 1.0;
        for f in &frefs {
            den *= crate::func::range_average_from_prefix(
                ctx.space,
                &crate::func::power_prefix(ctx.space, f, r),
                hb.0,
                hb.1,
                r,
            );
        }
        if !(den > 0.0) {
            continue;
        }
        let tries = a_atoms.len().min(12);
        for _ in 0..tries {
            let x = a_atoms[rng.gen_range(0..a_atoms.len())];
            op.coords_at(ctx, &frefs, hb, x, &mut cb)?;
            op.coords_at(ctx, &frefs, ha, x, &mut ca)?;
            for k in 0..dim {
                diff[k] = cb[k] - ca[k];
            }
            best = best.max(op.b_norm(&diff) / den);
        }
    }
    Ok(best)
}

/// Frozen empirical constants of an operator on a basis: oscillation
/// estimates, the weak-norm estimate entering `c(T)`, and the weak-norm
/// estimate of the majorant used by the sparse-domination threshold.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorCalibration {
    pub c1_est: f64,
    pub c2_est: f64,
    pub weak_norm_est: f64,
    pub gamma_norm_est: f64,
    pub osc_samples: usize,
    pub norm_trials: usize,
    pub seed: u64,
}

impl OperatorCalibration {
    pub fn c_t(&self) -> f64 {
        self.c1_est + self.c2_est + self.weak_norm_est
    }
}

/// Randomized weak-norm lower bound `||T f|| / prod ||f_i||_r`, best of
/// `trials` draws.
fn weak_norm_estimate(
    op: &OperatorSpec,
    ctx: OpCtx<'_>,
    trials: usize,
    seed: u64,
    gamma_c_t: Option<f64>,
) -> Result<f64> {
    let m = op.arity();
    let r = op.reduction();
    let mut best = 0.0f64;
    for i in 0..trials {
        let mut rng = testfn::rng_for(seed ^ 0x5eed_0001, i as u64);
        let fvec = testfn::sample_vec(ctx.space, m, None, &mut rng);
        let frefs: Vec<&GridFunction> = fvec.iter().collect();
        let out = match gamma_c_t {
            None => op.apply(ctx, &frefs, None)?,
            Some(ct) => op.gamma_majorant(ctx, &frefs, ct)?,
        };
        let wn = crate::func::weak_norm(ctx.space, &out, r / m as f64, None);
        let mut den = 1.0;
        for f in &frefs {
            den *= f.lp_norm(ctx.space, r, None);
        }
        if den > 0.0 {
            best = best.max(wn / den);
        }
    }
    Ok(best)
}

/// Estimate all empirical constants for `(op, basis, seed)`.
pub fn calibrate(
    op: &OperatorSpec,
    ctx: OpCtx<'_>,
    osc_samples: usize,
    norm_trials: usize,
    seed: u64,
) -> Result<OperatorCalibration> {
    let osc = estimate_oscillation(op, ctx, osc_samples, seed)?;
    let weak = weak_norm_estimate(op, ctx, norm_trials, seed, None)?;
    let c_t = osc.c1_est + osc.c2_est + weak;
    let gamma = weak_norm_estimate(op, ctx, norm_trials, seed, Some(c_t))?;
    Ok(OperatorCalibration {
        c1_est: osc.c1_est,
        c2_est: osc.c2_est,
        weak_norm_est: weak,
        gamma_norm_est: gamma,
        osc_samples,
        norm_trials,
        seed,
    })
}
