//! Finite measure spaces and ball-bases.
//!
//! A [`DiscreteSpace`] is a regular lattice of equal-width cells ("atoms"),
//! each carrying a strictly positive mass. A [`BallBasis`] is an enumerated
//! family of index intervals (1D) or index boxes (2D) together with a hull
//! map `B -> B*` whose defining property (axiom B4) is that `B*` engulfs
//! every ball meeting `B` of measure at most `2 mu(B)`, while
//! `mu(B*) <= c0 mu(B)`.
//!
//! Three concrete bases are provided:
//! - the dyadic martingale basis, where `B*` is the highest ancestor of
//!   measure at most `2 mu(B)` (constant `c0 = 2` for any masses),
//! - the all-intervals basis with hull given by a `kappa`-dilation about the
//!   center (clipped to the space),
//! - the family of all axis-parallel rectangles on a square lattice, which
//!   is *not* a ball-basis for `n >= 4`; its hull map is a placeholder and
//!   [`verify_axioms`] checks B4 existentially against a cap.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type AtomIdx = usize;
pub type BallId = u32;

/// Index extent of a ball: a half-open atom interval in 1D, a half-open
/// index box in 2D.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Extent {
    Interval { lo: u32, hi: u32 },
    Rect { x0: u16, x1: u16, y0: u16, y1: u16 },
}

impl Extent {
    pub fn len(&self) -> usize {
        match *self {
            Extent::Interval { lo, hi } => (hi - lo) as usize,
            Extent::Rect { x0, x1, y0, y1 } => (x1 - x0) as usize * (y1 - y0) as usize,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains_atom(&self, nx: usize, atom: AtomIdx) -> bool {
        match *self {
            Extent::Interval { lo, hi } => (lo as usize..hi as usize).contains(&atom),
            Extent::Rect { x0, x1, y0, y1 } => {
                let (ax, ay) = (atom % nx, atom / nx);
                (x0 as usize..x1 as usize).contains(&ax) && (y0 as usize..y1 as usize).contains(&ay)
            }
        }
    }

    pub fn contains(&self, other: &Extent) -> bool {
        match (*self, *other) {
            (Extent::Interval { lo, hi }, Extent::Interval { lo: l2, hi: h2 }) => lo <= l2 && h2 <= hi,
            (
                Extent::Rect { x0, x1, y0, y1 },
                Extent::Rect { x0: a, x1: b, y0: c, y1: d },
            ) => x0 <= a && b <= x1 && y0 <= c && d <= y1,
            _ => false,
        }
    }

    pub fn intersects(&self, other: &Extent) -> bool {
        match (*self, *other) {
            (Extent::Interval { lo, hi }, Extent::Interval { lo: l2, hi: h2 }) => lo < h2 && l2 < hi,
            (
                Extent::Rect { x0, x1, y0, y1 },
                Extent::Rect { x0: a, x1: b, y0: c, y1: d },
            ) => x0 < b && a < x1 && y0 < d && c < y1,
            _ => false,
        }
    }

    /// Atoms of the extent in increasing index order.
    pub fn atoms(&self, nx: usize) -> Vec<AtomIdx> {
        match *self {
            Extent::Interval { lo, hi } => (lo as usize..hi as usize).collect(),
            Extent::Rect { x0, x1, y0, y1 } => {
                let mut out = Vec::with_capacity(self.len());
                for y in y0 as usize..y1 as usize {
                    for x in x0 as usize..x1 as usize {
                        out.push(y * nx + x);
                    }
                }
                out
            }
        }
    }

    /// The 1D interval range, if this is an interval extent.
    pub fn range(&self) -> Option<(u32, u32)> {
        match *self {
            Extent::Interval { lo, hi } => Some((lo, hi)),
            _ => None,
        }
    }
}

/// A member of a ball-basis: an extent plus its measure.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Ball {
    pub id: BallId,
    pub extent: Extent,
    pub measure: f64,
}

/// A finite atomized measure space on a regular lattice.
#[derive(Clone, Debug)]
pub struct DiscreteSpace {
    dim: u8,
    shape: [usize; 2],
    origin: f64,
    cell: f64,
    masses: Vec<f64>,
    prefix_mass: Vec<f64>,
    total_mass: f64,
}

impl DiscreteSpace {
    pub fn new_1d(n: usize, origin: f64, length: f64, masses: Vec<f64>) -> Result<Self> {
        if n == 0 || masses.len() != n {
            return Err(Error::invalid("atom count and mass vector length must agree and be positive"));
        }
        if length <= 0.0 || !length.is_finite() {
            return Err(Error::invalid("space length must be positive and finite"));
        }
        for &m in &masses {
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::invalid("every atom mass must be strictly positive and finite"));
            }
        }
        let mut prefix_mass = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        prefix_mass.push(0.0);
        for &m in &masses {
            acc += m;
            prefix_mass.push(acc);
        }
        Ok(DiscreteSpace {
            dim: 1,
            shape: [n, 1],
            origin,
            cell: length / n as f64,
            masses,
            prefix_mass,
            total_mass: acc,
        })
    }

    /// 1D space over `[origin, origin + length)` with Lebesgue cell masses.
    pub fn uniform_1d(n: usize, origin: f64, length: f64) -> Result<Self> {
        let h = length / n as f64;
        Self::new_1d(n, origin, length, vec![h; n])
    }

    /// 1D probability space over `[0, 1)` with equal masses `1/n`.
    pub fn probability_1d(n: usize) -> Result<Self> {
        Self::new_1d(n, 0.0, 1.0, vec![1.0 / n as f64; n])
    }

    /// Square 2D lattice over `[0,1)^2` with equal masses `1/n^2`.
    pub fn square_2d(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("lattice side must be positive"));
        }
        let total = n * n;
        let m = 1.0 / total as f64;
        let masses = vec![m; total];
        let mut prefix_mass = Vec::with_capacity(total + 1);
        let mut acc = 0.0;
        prefix_mass.push(0.0);
        for &v in &masses {
            acc += v;
            prefix_mass.push(acc);
        }
        Ok(DiscreteSpace {
            dim: 2,
            shape: [n, n],
            origin: 0.0,
            cell: 1.0 / n as f64,
            masses,
            prefix_mass,
            total_mass: acc,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn n_atoms(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn nx(&self) -> usize {
        self.shape[0]
    }

    pub fn cell_width(&self) -> f64 {
        self.cell
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn mass(&self, atom: AtomIdx) -> f64 {
        self.masses[atom]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Center coordinate of atom `i` (1D).
    pub fn coord(&self, atom: AtomIdx) -> f64 {
        self.origin + (atom as f64 + 0.5) * self.cell
    }

    /// Center coordinates of atom `i` (2D).
    pub fn coord2(&self, atom: AtomIdx) -> (f64, f64) {
        let (ax, ay) = (atom % self.shape[0], atom / self.shape[0]);
        (
            self.origin + (ax as f64 + 0.5) * self.cell,
            self.origin + (ay as f64 + 0.5) * self.cell,
        )
    }

    /// Measure of the atom interval `[lo, hi)` in O(1).
    pub fn measure_range(&self, lo: u32, hi: u32) -> f64 {
        self.prefix_mass[hi as usize] - self.prefix_mass[lo as usize]
    }

    pub fn prefix_mass(&self) -> &[f64] {
        &self.prefix_mass
    }

    pub fn measure_extent(&self, extent: &Extent) -> f64 {
        match *extent {
            Extent::Interval { lo, hi } => self.measure_range(lo, hi),
            Extent::Rect { .. } => extent
                .atoms(self.shape[0])
                .iter()
                .map(|&a| self.masses[a])
                .sum(),
        }
    }

    pub fn measure_atoms(&self, atoms: &[AtomIdx]) -> f64 {
        atoms.iter().map(|&a| self.masses[a]).sum()
    }
}

/// Basis flavor; drives builder-specific fast paths.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub enum BasisKind {
    DyadicMartingale,
    AllIntervals { kappa: f64 },
    Rect2dCandidate,
    Custom,
}

/// Axiom verification report. `witness` is present iff some axiom fails.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AxiomReport {
    pub b1_pass: bool,
    pub b2_pass: bool,
    pub b3_pass: bool,
    pub b4_pass: bool,
    pub witness: Option<Witness>,
    /// Smallest constant making B4 hold with the best possible hull
    /// assignment; infinite when some engulfing set fits in no ball.
    pub effective_c0: f64,
}

impl AxiomReport {
    pub fn all_pass(&self) -> bool {
        self.b1_pass && self.b2_pass && self.b3_pass && self.b4_pass
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Witness {
    BallPair { b: BallId, b_prime: BallId },
    AtomPair { x: AtomIdx, y: AtomIdx },
    AtomSet { atoms: Vec<AtomIdx> },
}

/// Result of [`BallBasis::cover_measurable`]. Our builders cover exactly, so
/// `symmetric_difference` is zero for them; custom bases report what they
/// achieve.
#[derive(Clone, Debug)]
pub struct CoverResult {
    pub balls: Vec<BallId>,
    /// `sum mu(B_k) / mu(E)`.
    pub ratio: f64,
    pub symmetric_difference: f64,
    /// Whether `ratio <= 2 c0` was met.
    pub budget_met: bool,
}

/// An enumerated ball family over a [`DiscreteSpace`] with a hull map.
#[derive(Clone, Debug)]
pub struct BallBasis {
    space: Arc<DiscreteSpace>,
    kind: BasisKind,
    balls: Vec<Ball>,
    hull: Vec<BallId>,
    /// False for the rectangle candidate, whose hull entry is an identity
    /// placeholder rather than a claim.
    hull_assigned: bool,
    c0: f64,
    root: Option<BallId>,
    hull_saturated: Vec<bool>,
    /// Set when construction parameters put B4 in doubt (e.g. kappa < 5 in
    /// dimension 1); `verify_axioms` decides.
    pub b4_warning: bool,
    // dyadic bookkeeping
    depth: usize,
}

impl BallBasis {
    // ---------------------------------------------------------------- builders

    /// Dyadic martingale basis over `2^depth` atoms: all nodes of the binary
    /// tree (the root being the whole space). The hull of `B` is the highest
    /// ancestor `F^k(B)` with `mu(F^k B) <= 2 mu(B) < mu(F^{k+1} B)`, or `B`
    /// itself when already the parent is more than twice as heavy. This
    /// yields `c0 = 2` for arbitrary positive masses.
    pub fn dyadic_martingale(depth: usize, masses: Vec<f64>) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("dyadic depth must be at least 1"));
        }
        let n = 1usize << depth;
        if masses.len() != n {
            return Err(Error::invalid("mass vector length must equal 2^depth"));
        }
        let space = Arc::new(DiscreteSpace::new_1d(n, 0.0, 1.0, masses)?);
        Self::dyadic_on(space, depth)
    }

    /// Dyadic martingale basis over an existing 1D space whose atom count is
    /// `2^depth`.
    pub fn dyadic_on(space: Arc<DiscreteSpace>, depth: usize) -> Result<Self> {
        let n = 1usize << depth;
        if space.dim() != 1 || space.n_atoms() != n {
            return Err(Error::invalid("space must be 1D with 2^depth atoms"));
        }
        let n_balls = 2 * n - 1;
        let mut balls = Vec::with_capacity(n_balls);
        for level in 0..=depth {
            let width = (n >> level) as u32;
            for k in 0..(1usize << level) {
                let lo = k as u32 * width;
                let hi = lo + width;
                let id = ((1usize << level) - 1 + k) as BallId;
                balls.push(Ball {
                    id,
                    extent: Extent::Interval { lo, hi },
                    measure: space.measure_range(lo, hi),
                });
            }
        }
        // martingale hull: climb while the ancestor stays within twice the measure
        let mut hull = vec![0 as BallId; n_balls];
        let mut saturated = vec![false; n_balls];
        for b in &balls {
            let m2 = 2.0 * b.measure;
            let mut cur = b.id;
            let mut best = b.id;
            while cur != 0 {
                let parent = (cur - 1) / 2;
                if balls[parent as usize].measure <= m2 {
                    best = parent;
                    cur = parent;
                } else {
                    break;
                }
            }
            hull[b.id as usize] = best;
            saturated[b.id as usize] = best == 0;
        }
        saturated[0] = true;
        Ok(BallBasis {
            space,
            kind: BasisKind::DyadicMartingale,
            balls,
            hull,
            hull_assigned: true,
            c0: 2.0,
            root: Some(0),
            hull_saturated: saturated,
            b4_warning: false,
            depth,
        })
    }

    /// All discrete subintervals of a 1D space; the hull is the
    /// `kappa`-dilation about the center, clipped to the space.
    pub fn all_intervals(space: Arc<DiscreteSpace>, kappa: f64) -> Result<Self> {
        let n = space.n_atoms();
        if space.dim() != 1 || n < 2 {
            return Err(Error::invalid("interval basis needs a 1D space with at least 2 atoms"));
        }
        if !(kappa >= 1.0) || !kappa.is_finite() {
            return Err(Error::invalid("kappa must be finite and at least 1"));
        }
        let b4_warning = kappa < 5.0;
        let n_balls = n * (n + 1) / 2;
        let mut balls = Vec::with_capacity(n_balls);
        for lo in 0..n as u32 {
            for hi in (lo + 1)..=(n as u32) {
                let id = interval_ball_id(n, lo, hi);
                debug_assert_eq!(id as usize, balls.len());
                balls.push(Ball {
                    id,
                    extent: Extent::Interval { lo, hi },
                    measure: space.measure_range(lo, hi),
                });
            }
        }
        let mut hull = vec![0 as BallId; n_balls];
        let mut saturated = vec![false; n_balls];
        for b in &balls {
            let (lo, hi) = b.extent.range().unwrap();
            let (hlo, hhi) = dilate_clip(n, lo, hi, kappa);
            hull[b.id as usize] = interval_ball_id(n, hlo, hhi);
            saturated[b.id as usize] = hlo == 0 && hhi == n as u32;
        }
        let root = interval_ball_id(n, 0, n as u32);
        Ok(BallBasis {
            space,
            kind: BasisKind::AllIntervals { kappa },
            balls,
            hull,
            hull_assigned: true,
            c0: kappa,
            root: Some(root),
            hull_saturated: saturated,
            b4_warning,
            depth: 0,
        })
    }

    /// All axis-parallel rectangles on an `n x n` lattice. The hull map is an
    /// identity placeholder (no valid hull assignment is claimed); the `c0`
    /// field holds the cap against which [`verify_axioms`] checks B4
    /// existentially. This family fails B4 for `n >= 4`.
    pub fn rect2d_candidate(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("rectangle candidate needs n >= 2"));
        }
        if n > 64 {
            return Err(Error::invalid("rectangle candidate capped at n = 64"));
        }
        let space = Arc::new(DiscreteSpace::square_2d(n)?);
        let n_int = n * (n + 1) / 2;
        let mut balls = Vec::with_capacity(n_int * n_int);
        let mut id: BallId = 0;
        for y0 in 0..n as u16 {
            for y1 in (y0 + 1)..=(n as u16) {
                for x0 in 0..n as u16 {
                    for x1 in (x0 + 1)..=(n as u16) {
                        let extent = Extent::Rect { x0, x1, y0, y1 };
                        balls.push(Ball {
                            id,
                            extent,
                            measure: space.measure_extent(&extent),
                        });
                        id += 1;
                    }
                }
            }
        }
        let root = balls
            .iter()
            .find(|b| b.extent.len() == n * n)
            .map(|b| b.id);
        let hull = (0..balls.len() as BallId).collect();
        let n_balls = balls.len();
        Ok(BallBasis {
            space,
            kind: BasisKind::Rect2dCandidate,
            balls,
            hull,
            hull_assigned: false,
            c0: 6.0,
            root,
            hull_saturated: vec![false; n_balls],
            b4_warning: true,
            depth: 0,
        })
    }

    /// A custom enumerated basis with an explicit hull map.
    pub fn custom(space: Arc<DiscreteSpace>, extents: Vec<Extent>, hull: Vec<BallId>, c0: f64) -> Result<Self> {
        if extents.is_empty() || hull.len() != extents.len() {
            return Err(Error::invalid("custom basis needs balls and a hull entry per ball"));
        }
        let mut balls = Vec::with_capacity(extents.len());
        for (i, e) in extents.iter().enumerate() {
            if e.is_empty() {
                return Err(Error::invalid("empty ball extent"));
            }
            balls.push(Ball {
                id: i as BallId,
                extent: *e,
                measure: space.measure_extent(e),
            });
        }
        for (i, &h) in hull.iter().enumerate() {
            if h as usize >= balls.len() {
                return Err(Error::invalid("hull entry out of range"));
            }
            if !balls[h as usize].extent.contains(&balls[i].extent) {
                return Err(Error::invalid("hull must contain its ball"));
            }
        }
        let total = space.total_mass();
        let root = balls
            .iter()
            .find(|b| (b.measure - total).abs() < 1e-12 * total && b.extent.len() == space.n_atoms())
            .map(|b| b.id);
        let n_balls = balls.len();
        Ok(BallBasis {
            space,
            kind: BasisKind::Custom,
            balls,
            hull,
            hull_assigned: true,
            c0,
            root,
            hull_saturated: vec![false; n_balls],
            b4_warning: false,
            depth: 0,
        })
    }

    // ---------------------------------------------------------------- accessors

    pub fn space(&self) -> &DiscreteSpace {
        &self.space
    }

    pub fn space_arc(&self) -> Arc<DiscreteSpace> {
        Arc::clone(&self.space)
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn n_balls(&self) -> usize {
        self.balls.len()
    }

    pub fn balls(&self) -> &[Ball] {
        &self.balls
    }

    pub fn ball(&self, id: BallId) -> &Ball {
        &self.balls[id as usize]
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn root(&self) -> Option<BallId> {
        self.root
    }

    pub fn hull_id(&self, id: BallId) -> BallId {
        self.hull[id as usize]
    }

    pub fn hull_table(&self) -> &[BallId] {
        &self.hull
    }

    pub fn hull_assigned(&self) -> bool {
        self.hull_assigned
    }

    /// Whether the hull of `id` already fills the whole space.
    pub fn hull_saturated(&self, id: BallId) -> bool {
        self.hull_saturated[id as usize]
    }

    /// `B^(k)`: the k-fold hull iterate, `B^(0) = B`.
    pub fn hull_power(&self, id: BallId, k: usize) -> BallId {
        let mut cur = id;
        for _ in 0..k {
            cur = self.hull[cur as usize];
        }
        cur
    }

    /// Id of the dyadic leaf ball holding `atom` (dyadic basis only).
    pub fn dyadic_leaf(&self, atom: AtomIdx) -> BallId {
        debug_assert_eq!(self.kind, BasisKind::DyadicMartingale);
        (((1usize << self.depth) - 1) + atom) as BallId
    }

    /// Ancestor chain of a dyadic ball, from the ball itself up to the root.
    pub fn dyadic_ancestors(&self, id: BallId) -> Vec<BallId> {
        debug_assert_eq!(self.kind, BasisKind::DyadicMartingale);
        let mut out = Vec::with_capacity(self.depth + 1);
        let mut cur = id;
        out.push(cur);
        while cur != 0 {
            cur = (cur - 1) / 2;
            out.push(cur);
        }
        out
    }

    /// Ids of all balls containing `atom`. For the dyadic basis this is the
    /// leaf-to-root chain; for intervals and rectangles it is enumerated.
    pub fn balls_containing(&self, atom: AtomIdx) -> Vec<BallId> {
        match self.kind {
            BasisKind::DyadicMartingale => self.dyadic_ancestors(self.dyadic_leaf(atom)),
            BasisKind::AllIntervals { .. } => {
                let n = self.space.n_atoms();
                let mut out = Vec::new();
                for lo in 0..=atom as u32 {
                    for hi in (atom as u32 + 1)..=(n as u32) {
                        out.push(interval_ball_id(n, lo, hi));
                    }
                }
                out
            }
            _ => self
                .balls
                .iter()
                .filter(|b| b.extent.contains_atom(self.space.nx(), atom))
                .map(|b| b.id)
                .collect(),
        }
    }

    /// Smallest-measure ball containing the given interval, if any.
    pub fn smallest_ball_containing_range(&self, lo: u32, hi: u32) -> Option<BallId> {
        let target = Extent::Interval { lo, hi };
        match self.kind {
            BasisKind::AllIntervals { .. } => Some(interval_ball_id(self.space.n_atoms(), lo, hi)),
            BasisKind::DyadicMartingale => {
                // walk up from a leaf until the node covers the range
                let mut cur = self.dyadic_leaf(lo as usize);
                loop {
                    if self.balls[cur as usize].extent.contains(&target) {
                        return Some(cur);
                    }
                    if cur == 0 {
                        return None;
                    }
                    cur = (cur - 1) / 2;
                }
            }
            _ => self
                .balls
                .iter()
                .filter(|b| b.extent.contains(&target))
                .min_by(|a, b| a.measure.total_cmp(&b.measure))
                .map(|b| b.id),
        }
    }

    // ------------------------------------------------------------ verification

    /// Exhaustively check axioms B1-B4 and compute the effective hull
    /// constant. Failures are report content, not errors.
    pub fn verify_axioms(&self) -> AxiomReport {
        let mut report = AxiomReport {
            b1_pass: true,
            b2_pass: true,
            b3_pass: true,
            b4_pass: true,
            witness: None,
            effective_c0: 1.0,
        };

        // B1: positive finite measure, nonempty extent.
        for b in &self.balls {
            if b.extent.is_empty() || !(b.measure > 0.0) || !b.measure.is_finite() {
                report.b1_pass = false;
                report.witness.get_or_insert(Witness::BallPair { b: b.id, b_prime: b.id });
                break;
            }
        }

        // B2: every atom pair shares a ball.
        if let Some(root) = self.root {
            debug_assert!(self.balls[root as usize].extent.len() == self.space.n_atoms());
        } else {
            'outer: for x in 0..self.space.n_atoms() {
                let bx = self.balls_containing(x);
                for y in (x + 1)..self.space.n_atoms() {
                    let shares = bx
                        .iter()
                        .any(|&id| self.balls[id as usize].extent.contains_atom(self.space.nx(), y));
                    if !shares {
                        report.b2_pass = false;
                        report.witness.get_or_insert(Witness::AtomPair { x, y });
                        break 'outer;
                    }
                }
            }
        }

        // B3: constructive check through exact covers of a probe family.
        let mut uncovered = Vec::new();
        for atom in 0..self.space.n_atoms() {
            if !self
                .balls_containing(atom)
                .first()
                .is_some()
            {
                uncovered.push(atom);
            }
        }
        if !uncovered.is_empty() {
            report.b3_pass = false;
            report.witness.get_or_insert(Witness::AtomSet { atoms: uncovered });
        } else {
            for probe in self.b3_probes() {
                let cov = self.cover_measurable(&probe);
                if cov.symmetric_difference > 0.0 {
                    report.b3_pass = false;
                    report.witness.get_or_insert(Witness::AtomSet { atoms: probe });
                    break;
                }
            }
        }

        // B4.
        let (eff, pass, witness) = self.check_b4();
        report.effective_c0 = eff;
        report.b4_pass = pass;
        if !pass {
            report.witness.get_or_insert(witness.unwrap_or(Witness::AtomSet { atoms: vec![] }));
        }
        report
    }

    fn b3_probes(&self) -> Vec<Vec<AtomIdx>> {
        let n = self.space.n_atoms();
        let mut probes: Vec<Vec<AtomIdx>> = Vec::new();
        // dyadic-aligned cells of the index range
        let mut width = n;
        while width >= 1 {
            let mut start = 0;
            while start + width <= n {
                probes.push((start..start + width).collect());
                start += width;
                if probes.len() > 64 {
                    break;
                }
            }
            if width == 1 {
                break;
            }
            width /= 2;
            if probes.len() > 64 {
                break;
            }
        }
        // fixed pseudo-random atom sets
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x0b3);
        for _ in 0..8 {
            let k = rng.gen_range(1..=n.min(16));
            let mut set: Vec<AtomIdx> = (0..k).map(|_| rng.gen_range(0..n)).collect();
            set.sort_unstable();
            set.dedup();
            probes.push(set);
        }
        probes
    }

    /// Returns (effective_c0, claimed-or-capped pass, witness on failure).
    fn check_b4(&self) -> (f64, bool, Option<Witness>) {
        match self.kind {
            BasisKind::DyadicMartingale => self.check_b4_dyadic(),
            BasisKind::AllIntervals { .. } => self.check_b4_intervals(),
            BasisKind::Rect2dCandidate => self.check_b4_rect(),
            BasisKind::Custom => self.check_b4_generic(),
        }
    }

    fn check_b4_dyadic(&self) -> (f64, bool, Option<Witness>) {
        // Only ancestors can meet a dyadic ball without being contained in it,
        // so the engulfing set is the highest ancestor of measure <= 2 mu(B).
        let mut eff: f64 = 1.0;
        for b in &self.balls {
            let needed = {
                let m2 = 2.0 * b.measure;
                let mut cur = b.id;
                let mut best = b.id;
                while cur != 0 {
                    let parent = (cur - 1) / 2;
                    if self.balls[parent as usize].measure <= m2 {
                        best = parent;
                        cur = parent;
                    } else {
                        break;
                    }
                }
                best
            };
            let ratio = self.balls[needed as usize].measure / b.measure;
            eff = eff.max(ratio);
            let claimed = self.hull[b.id as usize];
            if !self.balls[claimed as usize]
                .extent
                .contains(&self.balls[needed as usize].extent)
                || self.balls[claimed as usize].measure > self.c0 * b.measure * (1.0 + 1e-12)
            {
                return (eff, false, Some(Witness::BallPair { b: b.id, b_prime: needed }));
            }
        }
        (eff, true, None)
    }

    fn check_b4_intervals(&self) -> (f64, bool, Option<Witness>) {
        let n = self.space.n_atoms();
        let mut eff: f64 = 1.0;
        let mut fail: Option<Witness> = None;
        for b in &self.balls {
            let (lo, hi) = b.extent.range().unwrap();
            let budget = 2.0 * b.measure;
            // furthest right endpoint of an interval meeting B within budget:
            // start just inside the right edge and extend while mass permits
            let mut bmax = hi;
            {
                let start = hi - 1;
                let base = self.space.prefix_mass()[start as usize];
                while bmax < n as u32 && self.space.prefix_mass()[bmax as usize + 1] - base <= budget {
                    bmax += 1;
                }
            }
            let mut amin = lo;
            {
                let end = lo + 1;
                let base = self.space.prefix_mass()[end as usize];
                while amin > 0 && base - self.space.prefix_mass()[amin as usize - 1] <= budget {
                    amin -= 1;
                }
            }
            let needed_measure = self.space.measure_range(amin, bmax);
            eff = eff.max(needed_measure / b.measure);
            if fail.is_none() {
                let claimed = &self.balls[self.hull[b.id as usize] as usize];
                let (clo, chi) = claimed.extent.range().unwrap();
                if clo > amin || chi < bmax {
                    // an interval escaping the claimed hull: prefer the right side
                    let bp = if chi < bmax {
                        interval_ball_id(n, hi - 1, bmax)
                    } else {
                        interval_ball_id(n, amin, lo + 1)
                    };
                    fail = Some(Witness::BallPair { b: b.id, b_prime: bp });
                } else if claimed.measure > self.c0 * b.measure * (1.0 + 1e-12) {
                    fail = Some(Witness::BallPair { b: b.id, b_prime: claimed.id });
                }
            }
        }
        (eff, fail.is_none(), fail)
    }

    fn check_b4_rect(&self) -> (f64, bool, Option<Witness>) {
        // No hull is claimed: check existentially whether any assignment could
        // work within the cap. The minimal cover of the engulfing union is its
        // bounding box; thin rectangles of area 2|B| maximize the reach.
        let n = self.space.shape()[0];
        let mut eff: f64 = 1.0;
        let mut worst: Option<(BallId, Witness)> = None;
        for b in &self.balls {
            if let Extent::Rect { x0, x1, y0, y1 } = b.extent {
                let cells = b.extent.len();
                let reach = (2 * cells) as u16;
                let rx1 = (x1 - 1).saturating_add(reach).min(n as u16);
                let rx0 = x0.saturating_sub(reach - 1);
                let ry1 = (y1 - 1).saturating_add(reach).min(n as u16);
                let ry0 = y0.saturating_sub(reach - 1);
                let bbox_cells = (rx1 - rx0) as usize * (ry1 - ry0) as usize;
                let ratio = bbox_cells as f64 / cells as f64;
                if ratio > eff {
                    eff = ratio;
                    // witness: the horizontal thin rectangle realizing the reach
                    let thin_w = (reach as usize).min(n) as u16;
                    let tx0 = (x1 - 1).min(n as u16 - thin_w);
                    let thin = Extent::Rect { x0: tx0, x1: tx0 + thin_w, y0, y1: y0 + 1 };
                    let bp = self
                        .balls
                        .iter()
                        .find(|c| c.extent == thin)
                        .map(|c| c.id)
                        .unwrap_or(b.id);
                    worst = Some((b.id, Witness::BallPair { b: b.id, b_prime: bp }));
                }
            }
        }
        let pass = eff <= self.c0;
        (eff, pass, if pass { None } else { worst.map(|w| w.1) })
    }

    fn check_b4_generic(&self) -> (f64, bool, Option<Witness>) {
        let nx = self.space.nx();
        let n = self.space.n_atoms();
        let mut eff: f64 = 1.0;
        let mut fail = None;
        for b in &self.balls {
            let mut mask = vec![false; n];
            for a in b.extent.atoms(nx) {
                mask[a] = true;
            }
            let mut offender = None;
            for bp in &self.balls {
                if bp.measure <= 2.0 * b.measure && bp.extent.intersects(&b.extent) {
                    for a in bp.extent.atoms(nx) {
                        mask[a] = true;
                    }
                    if offender.is_none()
                        && !self.balls[self.hull[b.id as usize] as usize]
                            .extent
                            .contains(&bp.extent)
                    {
                        offender = Some(bp.id);
                    }
                }
            }
            let union: Vec<AtomIdx> = (0..n).filter(|&a| mask[a]).collect();
            let needed = self
                .balls
                .iter()
                .filter(|c| union.iter().all(|&a| c.extent.contains_atom(nx, a)))
                .min_by(|a, b| a.measure.total_cmp(&b.measure));
            match needed {
                Some(c) => eff = eff.max(c.measure / b.measure),
                None => eff = f64::INFINITY,
            }
            if fail.is_none() {
                if let Some(off) = offender {
                    fail = Some(Witness::BallPair { b: b.id, b_prime: off });
                } else if self.balls[self.hull[b.id as usize] as usize].measure
                    > self.c0 * b.measure * (1.0 + 1e-12)
                {
                    fail = Some(Witness::BallPair { b: b.id, b_prime: self.hull[b.id as usize] });
                }
            }
        }
        (eff, fail.is_none(), fail)
    }

    // ---------------------------------------------------------------- covering

    /// Cover an atom set by basis balls. For all builder kinds the cover is
    /// exact (zero symmetric difference) with total measure equal to
    /// `mu(E)`, well within the `2 c0 mu(E)` budget.
    pub fn cover_measurable(&self, atoms: &[AtomIdx]) -> CoverResult {
        assert!(!atoms.is_empty(), "cover of an empty set");
        let mu_e = self.space.measure_atoms(atoms);
        let mut balls = Vec::new();
        match self.kind {
            BasisKind::DyadicMartingale => {
                for (lo, hi) in runs(atoms) {
                    // split the run into maximal dyadic-aligned cells
                    let mut a = lo;
                    while a < hi {
                        let mut width = 1u32;
                        // largest power of two aligned at `a` and fitting in the run
                        while a % (width * 2) == 0 && a + width * 2 <= hi {
                            width *= 2;
                        }
                        let level = self.depth - (width.trailing_zeros() as usize);
                        let id = ((1usize << level) - 1) as u32 + a / width;
                        balls.push(id);
                        a += width;
                    }
                }
            }
            BasisKind::AllIntervals { .. } => {
                let n = self.space.n_atoms();
                for (lo, hi) in runs(atoms) {
                    balls.push(interval_ball_id(n, lo, hi));
                }
            }
            BasisKind::Rect2dCandidate => {
                // row runs
                let nx = self.space.nx();
                let mut by_row: HashMap<usize, Vec<AtomIdx>> = HashMap::new();
                for &a in atoms {
                    by_row.entry(a / nx).or_default().push(a % nx);
                }
                let mut rows: Vec<_> = by_row.into_iter().collect();
                rows.sort_unstable_by_key(|r| r.0);
                for (y, mut xs) in rows {
                    xs.sort_unstable();
                    for (lo, hi) in runs(&xs) {
                        let target = Extent::Rect {
                            x0: lo as u16,
                            x1: hi as u16,
                            y0: y as u16,
                            y1: y as u16 + 1,
                        };
                        if let Some(b) = self.balls.iter().find(|b| b.extent == target) {
                            balls.push(b.id);
                        }
                    }
                }
            }
            BasisKind::Custom => {
                // smallest containing ball per atom
                let nx = self.space.nx();
                for &a in atoms {
                    let best = self
                        .balls
                        .iter()
                        .filter(|b| b.extent.contains_atom(nx, a))
                        .min_by(|x, y| x.measure.total_cmp(&y.measure));
                    if let Some(b) = best {
                        balls.push(b.id);
                    }
                }
                balls.sort_unstable();
                balls.dedup();
            }
        }
        let total: f64 = balls.iter().map(|&id| self.balls[id as usize].measure).sum();
        // symmetric difference of the union against E
        let nx = self.space.nx();
        let mut mask = vec![false; self.space.n_atoms()];
        for &id in &balls {
            for a in self.balls[id as usize].extent.atoms(nx) {
                mask[a] = true;
            }
        }
        let mut sym = 0.0;
        let mut in_e = vec![false; self.space.n_atoms()];
        for &a in atoms {
            in_e[a] = true;
        }
        for a in 0..self.space.n_atoms() {
            if mask[a] != in_e[a] {
                sym += self.space.mass(a);
            }
        }
        let ratio = total / mu_e;
        CoverResult {
            balls,
            ratio,
            symmetric_difference: sym,
            budget_met: ratio <= 2.0 * self.c0 + 1e-12,
        }
    }

    /// Same-union subfamily with small overlap: greedy selection by
    /// decreasing measure, skipping balls already covered by the selection.
    /// Returns the subfamily and the maximal overlap count at any atom.
    pub fn besicovitch_subfamily(&self, family: &[BallId]) -> (Vec<BallId>, usize) {
        assert!(!family.is_empty(), "empty family");
        let nx = self.space.nx();
        let n = self.space.n_atoms();
        let mut order: Vec<BallId> = family.to_vec();
        order.sort_unstable_by(|&a, &b| {
            self.balls[b as usize]
                .measure
                .total_cmp(&self.balls[a as usize].measure)
                .then(a.cmp(&b))
        });
        order.dedup();
        let mut covered = vec![false; n];
        let mut chosen = Vec::new();
        for id in order {
            let atoms = self.balls[id as usize].extent.atoms(nx);
            if atoms.iter().any(|&a| !covered[a]) {
                for &a in &atoms {
                    covered[a] = true;
                }
                chosen.push(id);
            }
        }
        let mut overlap = vec![0usize; n];
        for &id in &chosen {
            for a in self.balls[id as usize].extent.atoms(nx) {
                overlap[a] += 1;
            }
        }
        let n0 = overlap.into_iter().max().unwrap_or(0);
        (chosen, n0)
    }

    /// Greedy pairwise-disjoint subfamily (largest first); every member of
    /// the input is contained in the hull of some selected ball.
    pub fn vitali_disjoint(&self, family: &[BallId]) -> Vec<BallId> {
        let mut order: Vec<BallId> = family.to_vec();
        order.sort_unstable_by(|&a, &b| {
            self.balls[b as usize]
                .measure
                .total_cmp(&self.balls[a as usize].measure)
                .then(a.cmp(&b))
        });
        order.dedup();
        let mut chosen: Vec<BallId> = Vec::new();
        for id in order {
            let e = self.balls[id as usize].extent;
            if chosen.iter().all(|&c| !self.balls[c as usize].extent.intersects(&e)) {
                chosen.push(id);
            }
        }
        chosen
    }
}

/// Id of interval `[lo, hi)` in the all-intervals enumeration (ordered by
/// `lo`, then `hi`).
pub fn interval_ball_id(n: usize, lo: u32, hi: u32) -> BallId {
    debug_assert!(lo < hi && hi as usize <= n);
    let l = lo as usize;
    (l * (2 * n - l + 1) / 2 + (hi - lo) as usize - 1) as BallId
}

/// Kappa-dilation of `[lo, hi)` about its center, each side clipped to
/// `[0, n)` independently.
fn dilate_clip(n: usize, lo: u32, hi: u32, kappa: f64) -> (u32, u32) {
    let len = (hi - lo) as usize;
    let hull_w = ((kappa * len as f64).floor() as usize).max(len);
    let ext = hull_w - len;
    let ext_l = ext / 2;
    let ext_r = ext - ext_l;
    let new_lo = lo.saturating_sub(ext_l as u32);
    let new_hi = (hi as usize + ext_r).min(n) as u32;
    (new_lo, new_hi)
}

/// Maximal runs `[lo, hi)` of a sorted atom list.
pub fn runs(atoms: &[AtomIdx]) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let mut iter = atoms.iter().copied();
    if let Some(first) = iter.next() {
        let mut lo = first;
        let mut prev = first;
        for a in iter {
            if a == prev + 1 {
                prev = a;
            } else {
                out.push((lo as u32, prev as u32 + 1));
                lo = a;
                prev = a;
            }
        }
        out.push((lo as u32, prev as u32 + 1));
    }
    out
}
