//! Sparse families and the stopping-time construction of the two dominating
//! families, together with the pointwise-domination verifier.
//!
//! The constructor runs the full stopping time: level sets of the majorant
//! `Gamma` at a threshold proportional to the product of averages, exact
//! covers of the level set inside the hull, stopping balls attached through
//! ascending chains, recursion to generations, level assignment
//! `r(B) = floor(log_{c0} mu(B) / 2)`, pruning of level-collision subtrees,
//! a greedy disjoint selection per level, and the parity split. The output
//! families consist of the third hulls `B^(3)` carrying cores carved
//! smallest-first, and are `1/(2 c0^3)`-sparse whenever the construction
//! succeeds.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::func::{extent_mean, GridFunction};
use crate::ops::{CommutatorSpec, OpCtx, OperatorCalibration, OperatorSpec};
use crate::space::{BallBasis, BallId};

/// A ball collection with pairwise disjoint cores `E_B` inside each ball.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SparseFamily {
    pub balls: Vec<BallId>,
    /// Sorted atom lists, parallel to `balls`.
    pub cores: Vec<Vec<u32>>,
    /// Smallest achieved `mu(E_B) / mu(B)`.
    pub eta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum SparseWitness {
    Overlap { first: BallId, second: BallId, atom: u32 },
    DeficientCore { ball: BallId, ratio: f64 },
    CoreOutsideBall { ball: BallId, atom: u32 },
}

/// Check disjointness exactly and `mu(E_B) >= eta mu(B)` for every member.
pub fn verify_sparse(
    basis: &BallBasis,
    family: &SparseFamily,
    eta: f64,
) -> (bool, Option<SparseWitness>) {
    let space = basis.space();
    let n = space.n_atoms();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (idx, (&id, core)) in family.balls.iter().zip(&family.cores).enumerate() {
        let ball = basis.ball(id);
        for &a in core {
            if !ball.extent.contains_atom(space.nx(), a as usize) {
                return (false, Some(SparseWitness::CoreOutsideBall { ball: id, atom: a }));
            }
            if let Some(prev) = owner[a as usize] {
                return (
                    false,
                    Some(SparseWitness::Overlap { first: family.balls[prev], second: id, atom: a }),
                );
            }
            owner[a as usize] = Some(idx);
        }
        let core_mass: f64 = core.iter().map(|&a| space.mass(a as usize)).sum();
        let ratio = core_mass / ball.measure;
        if ratio + 1e-12 < eta {
            return (false, Some(SparseWitness::DeficientCore { ball: id, ratio }));
        }
    }
    (true, None)
}

/// Greedy core assignment in increasing ball measure: each ball keeps the
/// atoms not yet claimed by a smaller ball.
pub fn carve_cores(basis: &BallBasis, balls: &[BallId]) -> SparseFamily {
    let space = basis.space();
    let n = space.n_atoms();
    let mut order: Vec<BallId> = balls.to_vec();
    order.sort_unstable();
    order.dedup();
    order.sort_by(|&a, &b| {
        basis
            .ball(a)
            .measure
            .total_cmp(&basis.ball(b).measure)
            .then(a.cmp(&b))
    });
    let mut claimed = vec![false; n];
    let mut cores_by_ball: HashMap<BallId, Vec<u32>> = HashMap::new();
    let mut eta = f64::INFINITY;
    for &id in &order {
        let ball = basis.ball(id);
        let mut core = Vec::new();
        let mut mass = 0.0;
        for a in ball.extent.atoms(space.nx()) {
            if !claimed[a] {
                claimed[a] = true;
                core.push(a as u32);
                mass += space.mass(a);
            }
        }
        eta = eta.min(mass / ball.measure);
        cores_by_ball.insert(id, core);
    }
    let balls: Vec<BallId> = order;
    let cores: Vec<Vec<u32>> = balls.iter().map(|id| cores_by_ball.remove(id).unwrap()).collect();
    let eta = if eta.is_finite() { eta } else { 0.0 };
    SparseFamily { balls, cores, eta }
}

/// `A_{S, r_vec}(f_vec)(x) = sum_B prod_i <f_i>_{B, r_i} 1_B(x)`.
pub fn eval_sparse(
    basis: &BallBasis,
    fvec: &[&GridFunction],
    family: &SparseFamily,
    r_vec: &[f64],
) -> Result<GridFunction> {
    if fvec.len() != r_vec.len() {
        return Err(Error::invalid("one reduction exponent per function"));
    }
    let space = basis.space();
    let n = space.n_atoms();
    // prefix sums per (slot) for O(1) interval averages
    let prefixes: Vec<Vec<f64>> = fvec
        .iter()
        .zip(r_vec)
        .map(|(f, &r)| crate::func::power_prefix(space, f, r))
        .collect();
    let mut out = vec![0.0f64; n];
    for &id in &family.balls {
        let ball = basis.ball(id);
        let mut prod = 1.0;
        match ball.extent.range() {
            Some((lo, hi)) => {
                for (p, &r) in prefixes.iter().zip(r_vec) {
                    prod *= crate::func::range_average_from_prefix(space, p, lo, hi, r);
                }
            }
            None => {
                for (f, &r) in fvec.iter().zip(r_vec) {
                    prod *= crate::func::extent_average(space, f, &ball.extent, r);
                }
            }
        }
        for a in ball.extent.atoms(space.nx()) {
            out[a] += prod;
        }
    }
    Ok(GridFunction { values: out })
}

/// The commutator sparse form with symbol factors split across the two index
/// sets `tau1` (oscillation at the point) and `tau2` (oscillation inside the
/// average).
pub fn eval_sparse_commutator(
    basis: &BallBasis,
    fvec: &[&GridFunction],
    symbols: &[&GridFunction],
    tau1: &[usize],
    tau2: &[usize],
    family: &SparseFamily,
    r_vec: &[f64],
) -> Result<GridFunction> {
    if fvec.len() != r_vec.len() || symbols.len() != fvec.len() {
        return Err(Error::invalid("one symbol and one exponent per function"));
    }
    if tau1.iter().any(|i| tau2.contains(i)) {
        return Err(Error::invalid("overlapping symbol index sets"));
    }
    let m = fvec.len();
    if tau1.iter().chain(tau2).any(|&i| i >= m) {
        return Err(Error::invalid("symbol index out of range"));
    }
    let space = basis.space();
    let n = space.n_atoms();
    let mut out = vec![0.0f64; n];
    for &id in &family.balls {
        let ball = basis.ball(id);
        let means: Vec<f64> = symbols.iter().map(|b| extent_mean(space, b, &ball.extent)).collect();
        // x-independent factors
        let mut scalar = 1.0;
        for i in 0..m {
            if tau1.contains(&i) {
                scalar *= crate::func::extent_average(space, fvec[i], &ball.extent, r_vec[i]);
            } else if tau2.contains(&i) {
                let shifted = GridFunction {
                    values: fvec[i]
                        .values
                        .iter()
                        .zip(&symbols[i].values)
                        .map(|(f, b)| (b - means[i]) * f)
                        .collect(),
                };
                scalar *= crate::func::extent_average(space, &shifted, &ball.extent, r_vec[i]);
            } else {
                scalar *= crate::func::extent_average(space, fvec[i], &ball.extent, r_vec[i]);
            }
        }
        for a in ball.extent.atoms(space.nx()) {
            let mut factor = scalar;
            for &i in tau1 {
                factor *= (symbols[i].values[a] - means[i]).abs();
            }
            out[a] += factor;
        }
    }
    Ok(GridFunction { values: out })
}

// ---------------------------------------------------------------------------
// the stopping-time constructor

/// Per-generation statistics of the stopping tree.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TreeStats {
    /// Ball counts per generation (generation 0 is the root).
    pub generation_counts: Vec<usize>,
    /// `mu(union of generation k)`.
    pub generation_union_measure: Vec<f64>,
    pub max_depth: usize,
    pub node_count: usize,
    pub pruned_count: usize,
}

/// Output of the sparse-domination constructor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DominationResult {
    pub s1: SparseFamily,
    pub s2: SparseFamily,
    pub lambda_used: f64,
    /// `sup_{x in B0} |T f(x)| / (A_{S1}(x) + A_{S2}(x))`.
    pub pointwise_constant: f64,
    /// Fraction of `B0` atoms where the domination denominator is positive.
    pub coverage: f64,
    pub tree_stats: TreeStats,
    /// Root ball and the support window the inputs were restricted to.
    pub b0: BallId,
    pub support: (u32, u32),
    /// Threshold multiplier `2^{m/r} c0^{3m/r} lambda^{m/r} ||Gamma||` used
    /// in the level sets.
    pub threshold_factor: f64,
}

struct Node {
    ball: BallId,
    parent: Option<usize>,
    gen: usize,
}

/// Validity floor for the stopping-time parameter.
pub fn lambda_floor(c0: f64) -> f64 {
    3.0 * c0.powi(6)
}

/// Default `lambda = 4 c0^6`.
pub fn lambda_default(c0: f64) -> f64 {
    4.0 * c0.powi(6)
}

/// Run the stopping-time construction for `op` on `f_vec` localized at `b0`.
///
/// Preconditions: `lambda > 3 c0^6` and each `f_i` carries at least half of
/// its `L^r` mass on `b0`. The inputs are restricted to `b0^(3)`; the
/// resulting families live inside `b0^(3)` as well.
pub fn construct_domination(
    op: &OperatorSpec,
    calib: &OperatorCalibration,
    ctx: OpCtx<'_>,
    fvec: &[&GridFunction],
    b0: BallId,
    lambda: Option<f64>,
) -> Result<DominationResult> {
    let basis = ctx.basis;
    let space = ctx.space;
    let c0 = basis.c0();
    let lambda = lambda.unwrap_or_else(|| lambda_default(c0));
    if !(lambda > lambda_floor(c0)) {
        return Err(Error::invalid(format!(
            "lambda = {lambda} must exceed the validity floor 3 c0^6 = {}",
            lambda_floor(c0)
        )));
    }
    let m = op.arity();
    if fvec.len() != m {
        return Err(Error::ArityMismatch { expected: m, got: fvec.len() });
    }
    let r = op.reduction();
    // localization hypothesis
    let (b0lo, b0hi) = basis
        .ball(b0)
        .extent
        .range()
        .ok_or_else(|| Error::Unsupported("construction requires interval balls".into()))?;
    for f in fvec {
        let local = {
            let p = crate::func::power_prefix(space, f, r);
            p[b0hi as usize] - p[b0lo as usize]
        };
        let global = f.lp_norm(space, r, None).powf(r);
        if local < 0.5 * global * (1.0 - 1e-12) {
            return Err(Error::invalid(
                "input carries less than half of its L^r mass on the root ball",
            ));
        }
    }
    let b0_3 = basis.hull_power(b0, 3);
    let support = basis.ball(b0_3).extent.range().expect("interval hull");
    let restricted: Vec<GridFunction> = fvec.iter().map(|f| f.restrict_range(support.0, support.1)).collect();
    let frefs: Vec<&GridFunction> = restricted.iter().collect();
    let gamma_norm = calib.gamma_norm_est;
    let c_t = calib.c_t();
    let threshold_factor =
        (2.0f64).powf(m as f64 / r) * c0.powf(3.0 * m as f64 / r) * lambda.powf(m as f64 / r) * gamma_norm;

    // stopping tree
    let mut nodes: Vec<Node> = vec![Node { ball: b0, parent: None, gen: 0 }];
    let mut frontier: Vec<usize> = vec![0];
    let mut stats = TreeStats::default();
    stats.generation_counts.push(1);
    stats.generation_union_measure.push(basis.ball(b0).measure);
    let max_depth = 64usize;
    let mut depth = 0usize;
    while !frontier.is_empty() {
        depth += 1;
        if depth > max_depth {
            return Err(Error::ConstructionAbort(format!(
                "stopping tree exceeded the depth cap {max_depth}"
            )));
        }
        let mut next: Vec<usize> = Vec::new();
        for &ni in &frontier {
            let a = nodes[ni].ball;
            let children = expand_node(op, ctx, &frefs, a, support, threshold_factor, lambda, c_t, r, m)?;
            for g in children {
                nodes.push(Node { ball: g, parent: Some(ni), gen: depth });
                next.push(nodes.len() - 1);
            }
        }
        if next.is_empty() {
            break;
        }
        // generation decay check
        let union = union_measure(basis, next.iter().map(|&i| nodes[i].ball));
        let bound = (3.0 * c0 * c0 / lambda).powi(depth as i32) * basis.ball(b0).measure;
        if union > bound * (1.0 + 1e-9) {
            return Err(Error::ConstructionAbort(format!(
                "generation {depth} measure {union} exceeds the decay bound {bound}"
            )));
        }
        stats.generation_counts.push(next.len());
        stats.generation_union_measure.push(union);
        frontier = next;
    }
    stats.max_depth = depth.saturating_sub(1);
    stats.node_count = nodes.len();

    // levels
    let level = |id: BallId| -> i64 { (0.5 * basis.ball(id).measure.ln() / c0.ln()).floor() as i64 };
    let k0 = level(b0);
    for node in &nodes[1..] {
        let parent = nodes[node.parent.unwrap()].ball;
        if level(node.ball) > level(parent) - 1 {
            return Err(Error::ConstructionAbort(format!(
                "level drop failed: child level {} vs parent level {}",
                level(node.ball),
                level(parent)
            )));
        }
    }

    // level-collision pruning: a node is bad when some other generation ball
    // meets its second hull at a level strictly between its own level and
    // its parent's, with gaps of two on both sides
    let mut bad = vec![false; nodes.len()];
    for (i, node) in nodes.iter().enumerate().skip(1) {
        let parent_level = level(nodes[node.parent.unwrap()].ball);
        let b2 = basis.hull_power(node.ball, 2);
        let e2 = basis.ball(b2).extent;
        let li = level(node.ball);
        for other in &nodes {
            let lo = level(other.ball);
            if li + 2 <= lo && lo <= parent_level - 2 && e2.intersects(&basis.ball(other.ball).extent) {
                bad[i] = true;
                break;
            }
        }
    }
    // prune the whole subtree under each bad node
    let mut pruned = vec![false; nodes.len()];
    for i in 0..nodes.len() {
        let mut cur = Some(i);
        while let Some(c) = cur {
            if bad[c] {
                pruned[i] = true;
                break;
            }
            cur = nodes[c].parent;
        }
    }
    stats.pruned_count = pruned.iter().filter(|p| **p).count();

    // survivors per level, then a greedy disjoint selection per level
    let mut by_level: HashMap<i64, Vec<BallId>> = HashMap::new();
    by_level.insert(k0, vec![b0]);
    for (i, node) in nodes.iter().enumerate().skip(1) {
        if !pruned[i] {
            by_level.entry(level(node.ball)).or_default().push(node.ball);
        }
    }
    let mut d1: Vec<BallId> = Vec::new();
    let mut d2: Vec<BallId> = Vec::new();
    for (&k, balls) in &by_level {
        let chosen = basis.vitali_disjoint(balls);
        if k.rem_euclid(2) == 1 {
            d1.extend(chosen);
        } else {
            d2.extend(chosen);
        }
    }

    let s1 = third_hull_family(basis, &d1);
    let s2 = third_hull_family(basis, &d2);

    let mut result = DominationResult {
        s1,
        s2,
        lambda_used: lambda,
        pointwise_constant: f64::NAN,
        coverage: 0.0,
        tree_stats: stats,
        b0,
        support,
        threshold_factor,
    };
    let (constant, coverage) = pointwise_constant(op, ctx, fvec, &result, None)?;
    result.pointwise_constant = constant;
    result.coverage = coverage;
    Ok(result)
}

/// Level set of Gamma, exact cover, chain-attached stopping balls.
#[allow(clippy::too_many_arguments)]
fn expand_node(
    op: &OperatorSpec,
    ctx: OpCtx<'_>,
    frefs: &[&GridFunction],
    a: BallId,
    global_support: (u32, u32),
    threshold_factor: f64,
    lambda: f64,
    c_t: f64,
    r: f64,
    m: usize,
) -> Result<Vec<BallId>> {
    let basis = ctx.basis;
    let space = ctx.space;
    let c0 = basis.c0();
    let a3 = basis.hull_power(a, 3);
    let (a3lo, a3hi) = basis.ball(a3).extent.range().expect("interval hull");
    let supp = (a3lo.max(global_support.0), a3hi.min(global_support.1));
    let mut avg_prod = 1.0;
    for f in frefs {
        let p = crate::func::power_prefix(space, f, r);
        avg_prod *= crate::func::range_average_from_prefix(space, &p, a3lo, a3hi, r);
    }
    if !(avg_prod > 0.0) {
        // trivial level set
        return Ok(Vec::new());
    }
    let threshold = threshold_factor * avg_prod;
    let a1 = basis.hull_power(a, 1);
    let (a1lo, a1hi) = basis.ball(a1).extent.range().expect("interval hull");
    let gamma = op.gamma_on(ctx, frefs, Some(supp), a1lo as usize, a1hi as usize, c_t)?;
    let mut f_atoms: Vec<usize> = Vec::new();
    for (i, x) in (a1lo as usize..a1hi as usize).enumerate() {
        if gamma[i] > threshold {
            f_atoms.push(x);
        }
    }
    if f_atoms.is_empty() {
        return Ok(Vec::new());
    }
    let mu_f = space.measure_atoms(&f_atoms);
    if mu_f > basis.ball(a).measure / lambda * (1.0 + 1e-9) {
        return Err(Error::ConstructionAbort(format!(
            "level set measure {mu_f} exceeds mu(A)/lambda = {}",
            basis.ball(a).measure / lambda
        )));
    }
    // membership in F with lazy evaluation outside the computed window
    let mut f_mask = vec![false; space.n_atoms()];
    for &x in &f_atoms {
        f_mask[x] = true;
    }
    let mut lazy: HashMap<usize, bool> = HashMap::new();
    let mut in_f = |x: usize, op: &OperatorSpec| -> Result<bool> {
        if x >= a1lo as usize && x < a1hi as usize {
            return Ok(f_mask[x]);
        }
        if let Some(&v) = lazy.get(&x) {
            return Ok(v);
        }
        let g = op.gamma_on(ctx, frefs, Some(supp), x, x + 1, c_t)?;
        let v = g[0] > threshold;
        lazy.insert(x, v);
        Ok(v)
    };

    let cover = basis.cover_measurable(&f_atoms);
    let mut children: Vec<BallId> = Vec::new();
    for &cb in &cover.balls {
        let g = attach_stopping_ball(ctx, op, cb, &mut in_f)?;
        if !children.contains(&g) {
            children.push(g);
        }
    }
    // size bound on the attached family's hulls
    let hull_union = union_measure(basis, children.iter().map(|&g| basis.hull_power(g, 1)));
    let bound = 3.0 * c0 * c0 / lambda * basis.ball(a).measure;
    if hull_union > bound * (1.0 + 1e-9) {
        return Err(Error::ConstructionAbort(format!(
            "attached family hull measure {hull_union} exceeds 3 c0^2 mu(A)/lambda = {bound}"
        )));
    }
    let _ = m;
    Ok(children)
}

/// Ascend the chain from a cover ball and return the last link whose
/// successor's hull still lies inside the level set.
fn attach_stopping_ball(
    ctx: OpCtx<'_>,
    op: &OperatorSpec,
    start: BallId,
    in_f: &mut impl FnMut(usize, &OperatorSpec) -> Result<bool>,
) -> Result<BallId> {
    let basis = ctx.basis;
    let mut cur = start;
    for _ in 0..256 {
        let next = chain_next(ctx, cur);
        let hull_next = basis.hull_power(next, 1);
        let atoms = basis.ball(hull_next).extent.atoms(ctx.space.nx());
        let mut inside = true;
        for a in atoms {
            if !in_f(a, op)? {
                inside = false;
                break;
            }
        }
        if !inside {
            return Ok(cur);
        }
        if next == cur {
            return Ok(cur);
        }
        cur = next;
    }
    Err(Error::ConstructionAbort("stopping chain failed to terminate".into()))
}

/// Next chain link: the smallest ball containing the second hull of `c`
/// with at least twice its measure; the whole space when none exists.
fn chain_next(ctx: OpCtx<'_>, c: BallId) -> BallId {
    let basis = ctx.basis;
    let c2 = basis.hull_power(c, 2);
    let (mut lo, mut hi) = basis.ball(c2).extent.range().expect("interval hull");
    let target = 2.0 * basis.ball(c).measure;
    let n = ctx.space.n_atoms() as u32;
    // grow the range greedily by the lighter side until heavy enough
    while ctx.space.measure_range(lo, hi) < target && (lo > 0 || hi < n) {
        let left = if lo > 0 { ctx.space.mass(lo as usize - 1) } else { f64::INFINITY };
        let right = if hi < n { ctx.space.mass(hi as usize) } else { f64::INFINITY };
        if left <= right {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    basis
        .smallest_ball_containing_range(lo, hi)
        .or(basis.root())
        .unwrap_or(c)
}

fn union_measure(basis: &BallBasis, balls: impl Iterator<Item = BallId>) -> f64 {
    let space = basis.space();
    let mut mask = vec![false; space.n_atoms()];
    for id in balls {
        for a in basis.ball(id).extent.atoms(space.nx()) {
            mask[a] = true;
        }
    }
    mask.iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(a, _)| space.mass(a))
        .sum()
}

/// Map a disjoint-selected family to its third hulls with smallest-first
/// carved cores; duplicate hulls merge their cores.
fn third_hull_family(basis: &BallBasis, selected: &[BallId]) -> SparseFamily {
    let carved = carve_cores(basis, selected);
    let mut merged: HashMap<BallId, Vec<u32>> = HashMap::new();
    for (&id, core) in carved.balls.iter().zip(&carved.cores) {
        let b3 = basis.hull_power(id, 3);
        merged.entry(b3).or_default().extend(core.iter().copied());
    }
    let space = basis.space();
    let mut balls: Vec<BallId> = merged.keys().copied().collect();
    balls.sort_unstable();
    let mut cores = Vec::with_capacity(balls.len());
    let mut eta = f64::INFINITY;
    for id in &balls {
        let mut core = merged.remove(id).unwrap();
        core.sort_unstable();
        let mass: f64 = core.iter().map(|&a| space.mass(a as usize)).sum();
        eta = eta.min(mass / basis.ball(*id).measure);
        cores.push(core);
    }
    let eta = if eta.is_finite() { eta } else { 0.0 };
    SparseFamily { balls, cores, eta }
}

/// `sup_{x in B0} numerator / (A_{S1} + A_{S2})`, with the commutator form
/// when symbol data is given. Returns the constant and the coverage.
fn pointwise_constant(
    op: &OperatorSpec,
    ctx: OpCtx<'_>,
    fvec: &[&GridFunction],
    result: &DominationResult,
    commutator: Option<(&[&GridFunction], &[u32])>,
) -> Result<(f64, f64)> {
    let basis = ctx.basis;
    let space = ctx.space;
    let (slo, shi) = result.support;
    let restricted: Vec<GridFunction> = fvec.iter().map(|f| f.restrict_range(slo, shi)).collect();
    let frefs: Vec<&GridFunction> = restricted.iter().collect();
    let r = op.reduction();
    let r_vec = vec![r; op.arity()];
    let numerator = match commutator {
        None => op.apply(ctx, &frefs, None)?,
        Some((symbols, alpha)) => {
            let com = CommutatorSpec::new(op.clone(), symbols.iter().map(|s| (*s).clone()).collect(), alpha.to_vec())?;
            com.apply(ctx, &frefs, None)?
        }
    };
    let denominator = match commutator {
        None => {
            let d1 = eval_sparse(basis, &frefs, &result.s1, &r_vec)?;
            let d2 = eval_sparse(basis, &frefs, &result.s2, &r_vec)?;
            GridFunction {
                values: d1.values.iter().zip(&d2.values).map(|(a, b)| a + b).collect(),
            }
        }
        Some((symbols, alpha)) => {
            let tau: Vec<usize> = alpha
                .iter()
                .enumerate()
                .filter(|(_, a)| **a > 0)
                .map(|(i, _)| i)
                .collect();
            let mut total = vec![0.0f64; space.n_atoms()];
            // sum over all splits tau1 (+) tau2 = tau
            for mask in 0u32..(1 << tau.len()) {
                let mut tau1 = Vec::new();
                let mut tau2 = Vec::new();
                for (j, &i) in tau.iter().enumerate() {
                    if mask & (1 << j) != 0 {
                        tau1.push(i);
                    } else {
                        tau2.push(i);
                    }
                }
                for fam in [&result.s1, &result.s2] {
                    let v = eval_sparse_commutator(basis, &frefs, symbols, &tau1, &tau2, fam, &r_vec)?;
                    for (t, x) in total.iter_mut().zip(&v.values) {
                        *t += x;
                    }
                }
            }
            GridFunction { values: total }
        }
    };
    let (b0lo, b0hi) = basis.ball(result.b0).extent.range().expect("interval root");
    let mut sup = 0.0f64;
    let mut covered_mass = 0.0;
    let mut total_mass = 0.0;
    for x in b0lo as usize..b0hi as usize {
        total_mass += space.mass(x);
        let den = denominator.values[x];
        let num = numerator.values[x];
        if den > 0.0 {
            covered_mass += space.mass(x);
            sup = sup.max(num / den);
        } else if num > 0.0 {
            sup = f64::INFINITY;
        }
    }
    Ok((sup, covered_mass / total_mass))
}

/// Re-run the pointwise verifier against an existing construction, in the
/// plain or commutator form.
pub fn verify_pointwise_domination(
    op: &OperatorSpec,
    ctx: OpCtx<'_>,
    fvec: &[&GridFunction],
    result: &DominationResult,
    commutator: Option<(&[&GridFunction], &[u32])>,
) -> Result<f64> {
    pointwise_constant(op, ctx, fvec, result, commutator).map(|(c, _)| c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::calibrate;
    use crate::space::Extent;

    fn dyadic(depth: usize) -> BallBasis {
        let n = 1 << depth;
        BallBasis::dyadic_martingale(depth, vec![1.0 / n as f64; n]).unwrap()
    }

    #[test]
    fn verify_sparse_examples() {
        let basis = dyadic(3);
        // single ball with E_B = B
        let fam = SparseFamily { balls: vec![0], cores: vec![(0..8).collect()], eta: 1.0 };
        assert!(verify_sparse(&basis, &fam, 1.0).0);
        // duplicate cores
        let bad = SparseFamily {
            balls: vec![1, 2],
            cores: vec![vec![0, 1], vec![0]],
            eta: 0.0,
        };
        let (ok, witness) = verify_sparse(&basis, &bad, 0.1);
        assert!(!ok);
        assert!(matches!(witness, Some(SparseWitness::Overlap { atom: 0, .. }) | Some(SparseWitness::CoreOutsideBall { .. })));
    }

    #[test]
    fn chain_carving_achieves_half() {
        let basis = dyadic(3);
        // the root, its left half, the first quarter
        let half = basis.balls().iter().find(|b| b.extent == Extent::Interval { lo: 0, hi: 4 }).unwrap().id;
        let quarter = basis.balls().iter().find(|b| b.extent == Extent::Interval { lo: 0, hi: 2 }).unwrap().id;
        let fam = carve_cores(&basis, &[0, half, quarter]);
        assert!((fam.eta - 0.5).abs() < 1e-12, "eta {}", fam.eta);
        assert!(verify_sparse(&basis, &fam, 0.5).0);
    }

    #[test]
    fn carve_cores_examples() {
        let basis = dyadic(3);
        // disjoint balls keep everything
        let a = basis.balls().iter().find(|b| b.extent == Extent::Interval { lo: 0, hi: 2 }).unwrap().id;
        let b = basis.balls().iter().find(|b| b.extent == Extent::Interval { lo: 4, hi: 6 }).unwrap().id;
        let fam = carve_cores(&basis, &[a, b]);
        assert_eq!(fam.eta, 1.0);
        // nested pair, smallest first: the half keeps itself, the root keeps
        // the complement
        let half = basis.balls().iter().find(|b| b.extent == Extent::Interval { lo: 0, hi: 4 }).unwrap().id;
        let fam = carve_cores(&basis, &[0, half]);
        assert!((fam.eta - 0.5).abs() < 1e-12);
        let half_idx = fam.balls.iter().position(|&id| id == half).unwrap();
        let root_idx = fam.balls.iter().position(|&id| id == 0).unwrap();
        assert_eq!(fam.cores[half_idx], vec![0, 1, 2, 3]);
        assert_eq!(fam.cores[root_idx], vec![4, 5, 6, 7]);
    }

    #[test]
    fn eval_sparse_examples() {
        let basis = dyadic(3);
        let one = GridFunction::constant(8, 1.0);
        let fam = SparseFamily { balls: vec![0], cores: vec![(0..8).collect()], eta: 1.0 };
        let out = eval_sparse(&basis, &[&one], &fam, &[1.0]).unwrap();
        assert!(out.values.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let half = basis.balls().iter().find(|b| b.extent == Extent::Interval { lo: 0, hi: 4 }).unwrap().id;
        let fam = SparseFamily { balls: vec![0, half], cores: vec![vec![], vec![]], eta: 0.0 };
        let out = eval_sparse(&basis, &[&one], &fam, &[1.0]).unwrap();
        for x in 0..8 {
            let expect = if x < 4 { 2.0 } else { 1.0 };
            assert!((out.values[x] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn eval_sparse_matches_dense_oracle() {
        use rand::{Rng, SeedableRng};
        let basis = dyadic(5);
        let space = basis.space();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(211);
        let f = GridFunction::new((0..32).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let balls: Vec<BallId> = (0..20).map(|_| rng.gen_range(0..basis.n_balls()) as BallId).collect();
        let fam = SparseFamily { balls: balls.clone(), cores: vec![vec![]; balls.len()], eta: 0.0 };
        let fast = eval_sparse(&basis, &[&f], &fam, &[1.0]).unwrap();
        // dense double loop
        let mut slow = vec![0.0f64; 32];
        for &id in &balls {
            let b = basis.ball(id);
            let mut num = 0.0;
            for a in b.extent.atoms(32) {
                num += f.values[a].abs() * space.mass(a);
            }
            let avg = num / b.measure;
            for a in b.extent.atoms(32) {
                slow[a] += avg;
            }
        }
        for (a, b) in fast.values.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sparse_commutator_examples() {
        use rand::{Rng, SeedableRng};
        let basis = dyadic(3);
        let space = basis.space();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(223);
        let f = GridFunction::new((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = GridFunction::new((0..8).map(|i| space.coord(i)).collect()).unwrap();
        let fam = SparseFamily { balls: vec![0], cores: vec![vec![]], eta: 0.0 };
        // empty index sets reduce to the plain form
        let plain = eval_sparse(&basis, &[&f], &fam, &[1.0]).unwrap();
        let com = eval_sparse_commutator(&basis, &[&f], &[&b], &[], &[], &fam, &[1.0]).unwrap();
        assert_eq!(plain, com);
        // constant symbols vanish when an index set is active
        let cb = GridFunction::constant(8, 2.0);
        let z = eval_sparse_commutator(&basis, &[&f], &[&cb], &[0], &[], &fam, &[1.0]).unwrap();
        assert!(z.values.iter().all(|v| v.abs() < 1e-14));
        // single-ball closed form: |x - mean| <f>
        let out = eval_sparse_commutator(&basis, &[&f], &[&b], &[0], &[], &fam, &[1.0]).unwrap();
        let mean = extent_mean(space, &b, &basis.ball(0).extent);
        let avg = crate::func::extent_average(space, &f, &basis.ball(0).extent, 1.0);
        for x in 0..8 {
            let expect = (b.values[x] - mean).abs() * avg;
            assert!((out.values[x] - expect).abs() < 1e-12);
        }
        // overlapping index sets rejected
        assert!(eval_sparse_commutator(&basis, &[&f], &[&b], &[0], &[0], &fam, &[1.0]).is_err());
    }

    #[test]
    fn construct_global_average_trivial() {
        let basis = dyadic(4);
        let ctx = OpCtx::new(&basis);
        let op = OperatorSpec::GlobalAverage;
        let calib = calibrate(&op, ctx, 32, 16, 1).unwrap();
        let one = GridFunction::constant(16, 1.0);
        let result = construct_domination(&op, &calib, ctx, &[&one], 0, None).unwrap();
        assert!(result.pointwise_constant <= 1.0 + 1e-12, "{}", result.pointwise_constant);
        assert_eq!(result.coverage, 1.0);
        let eta = 1.0 / (2.0 * basis.c0().powi(3));
        assert!(verify_sparse(&basis, &result.s1, eta).0 || result.s1.balls.is_empty());
        assert!(verify_sparse(&basis, &result.s2, eta).0 || result.s2.balls.is_empty());
        assert!(!result.s1.balls.is_empty() || !result.s2.balls.is_empty());
    }

    #[test]
    fn construct_maximal_random_inputs() {
        let basis = dyadic(7);
        let ctx = OpCtx::new(&basis);
        let op = OperatorSpec::Maximal { m: 1, r: 1.0 };
        let calib = calibrate(&op, ctx, 128, 32, 5).unwrap();
        let eta = 1.0 / (2.0 * basis.c0().powi(3));
        for trial in 0..5u64 {
            let mut rng = crate::testfn::rng_for(400 + trial, 0);
            let f = crate::testfn::sample(ctx.space, None, &mut rng);
            let result = construct_domination(&op, &calib, ctx, &[&f], 0, None).unwrap();
            assert!(verify_sparse(&basis, &result.s1, eta).0, "s1 not sparse");
            assert!(verify_sparse(&basis, &result.s2, eta).0, "s2 not sparse");
            assert!(result.pointwise_constant.is_finite(), "trial {trial}: infinite constant");
            // generation decay recorded against the stated bound
            let c0 = basis.c0();
            for (k, mu) in result.tree_stats.generation_union_measure.iter().enumerate().skip(1) {
                let bound = (3.0 * c0 * c0 / result.lambda_used).powi(k as i32) * basis.ball(0).measure;
                assert!(*mu <= bound * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn commutator_with_constant_symbols_matches_plain() {
        let basis = dyadic(6);
        let ctx = OpCtx::new(&basis);
        let op = OperatorSpec::Hilbert { omega_exponent: 1.0 };
        let calib = calibrate(&op, ctx, 64, 16, 9).unwrap();
        let mut rng = crate::testfn::rng_for(17, 0);
        let f = crate::testfn::sample(ctx.space, None, &mut rng);
        let result = construct_domination(&op, &calib, ctx, &[&f], 0, None).unwrap();
        let plain = verify_pointwise_domination(&op, ctx, &[&f], &result, None).unwrap();
        // alpha = 0 on every slot: the commutator form collapses to the plain
        let b = GridFunction::constant(64, 3.0);
        let com = verify_pointwise_domination(&op, ctx, &[&f], &result, Some((&[&b], &[0]))).unwrap();
        assert!((plain - com).abs() <= 1e-12 * plain.max(1.0));
    }

    #[test]
    fn lambda_floor_enforced() {
        let basis = dyadic(4);
        let ctx = OpCtx::new(&basis);
        let op = OperatorSpec::GlobalAverage;
        let calib = calibrate(&op, ctx, 16, 8, 1).unwrap();
        let one = GridFunction::constant(16, 1.0);
        let err = construct_domination(&op, &calib, ctx, &[&one], 0, Some(100.0));
        assert!(err.is_err());
    }

    #[test]
    fn mass_hypothesis_enforced() {
        let basis = dyadic(4);
        let ctx = OpCtx::new(&basis);
        let op = OperatorSpec::GlobalAverage;
        let calib = calibrate(&op, ctx, 16, 8, 1).unwrap();
        // all mass on the right half, rooted at the left half
        let f = GridFunction::indicator(16, &Extent::Interval { lo: 12, hi: 16 }, 16);
        let left_half = basis.balls().iter().find(|b| b.extent == Extent::Interval { lo: 0, hi: 8 }).unwrap().id;
        assert!(construct_domination(&op, &calib, ctx, &[&f], left_half, None).is_err());
    }
}
