//! Retarded device Green's function `G = [(E + iη) − H − Σ_L − Σ_R]⁻¹`.
//!
//! Three solvers share one contract:
//!
//! * [`solve_dense`] factorizes the full matrix. It is the reference.
//! * [`solve_recursive`] runs the open-chain block recursion (left- and
//!   right-connected Green's functions) and then restores the ring-closing
//!   corner blocks with a rank-`2b` Woodbury update built from the first and
//!   last block rows/columns of the open-chain inverse.
//! * [`solve_contacts`] eliminates the two arcs of the ring between the lead
//!   layers, inverts the remaining `2b × 2b` system and back-substitutes for
//!   the contact columns. It skips the diagonal blocks, which no observable
//!   needs.
//!
//! Block elimination without pivoting across layers can lose accuracy when a
//! partial Schur complement is nearly singular, which happens on this
//! bipartite lattice close to E = 0. Every block solution is therefore checked
//! through the residual of its contact columns, refined if needed, and handed
//! to the dense solver as a last resort.
//!
//! Only the retarded function is ever solved for; the advanced one is its
//! adjoint.

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use nalgebra::{DMatrix, SMatrix};
use num_complex::Complex64;
use thiserror::Error;

use crate::blockops::{self, Panel, SparseBlock};
use crate::hamiltonian::{Block, BlockHamiltonian, BLOCK};
use crate::lattice::ContactSet;
use crate::leads::{ContactMatrix, ContactSelfEnergy};

pub const DEFAULT_ETA: f64 = 1e-6;

/// Number of contact sites across both leads.
pub const CONTACTS: usize = 8;
pub type ContactBlock = SMatrix<Complex64, CONTACTS, CONTACTS>;

type Pair = SMatrix<Complex64, { 2 * BLOCK }, { 2 * BLOCK }>;
type ContactPanel = Panel<CONTACTS>;

/// Growth factor of a block pivot beyond which the recursion is abandoned.
const PIVOT_GROWTH_LIMIT: f64 = 1e12;

/// Relative residual `max|A·X − I| / max(1, max|X|)` at which a block
/// solution of the contact columns is accepted.
const ACCEPT_RESIDUAL: f64 = 1e-11;

/// Relative residual of the unrefined recursive solution above which its
/// diagonal blocks are not trusted and the dense solver takes over.
const DIAG_TRUST_RESIDUAL: f64 = 1e-10;

const MAX_REFINEMENTS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GreensError {
    #[error("effective system is invalid: {0}")]
    InvalidSystem(String),
    #[error("E − H_eff is singular at E = {energy} eV")]
    Singular { energy: f64 },
    #[error("block pivot at layer {layer} broke down (E = {energy} eV)")]
    PivotBreakdown { layer: usize, energy: f64 },
    #[error("block recursion lost accuracy at E = {energy} eV (relative residual {residual:.1e})")]
    Inaccurate { energy: f64, residual: f64 },
}

/// A lead self-energy placed on its four contact sites.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSelfEnergy {
    pub contacts: ContactSet,
    pub sigma: ContactMatrix,
    pub energy: f64,
}

impl EmbeddedSelfEnergy {
    pub fn new(contacts: ContactSet, self_energy: &ContactSelfEnergy) -> Self {
        Self { contacts, sigma: self_energy.sigma, energy: self_energy.energy }
    }
}

#[derive(Debug, Clone)]
pub struct EffectiveSystem<'a> {
    pub hamiltonian: &'a BlockHamiltonian,
    pub left: EmbeddedSelfEnergy,
    pub right: EmbeddedSelfEnergy,
    pub eta: f64,
    pub energy: f64,
}

impl<'a> EffectiveSystem<'a> {
    pub fn new(
        hamiltonian: &'a BlockHamiltonian,
        left: EmbeddedSelfEnergy,
        right: EmbeddedSelfEnergy,
        eta: f64,
        energy: f64,
    ) -> Result<Self, GreensError> {
        let sys = Self { hamiltonian, left, right, eta, energy };
        sys.validate()?;
        Ok(sys)
    }

    fn validate(&self) -> Result<(), GreensError> {
        let bad = |m: String| Err(GreensError::InvalidSystem(m));
        if !(self.eta >= 0.0 && self.eta.is_finite() && self.energy.is_finite()) {
            return bad(format!("need finite E and η ≥ 0 (E={}, η={})", self.energy, self.eta));
        }
        let n = self.hamiltonian.n_layers();
        for lead in [&self.left, &self.right] {
            if lead.contacts.layer >= n {
                return bad(format!("contact layer {} outside {n} layers", lead.contacts.layer));
            }
            if lead.contacts.slots.iter().any(|&s| s >= BLOCK) {
                return bad("contact slot outside the layer".into());
            }
            if lead.sigma.iter().any(|z| !z.is_finite()) {
                return bad("self-energy has non-finite entries".into());
            }
            if (lead.energy - self.energy).abs() > 1e-12 {
                return bad(format!("self-energy at E={} used at E={}", lead.energy, self.energy));
            }
            // anti-Hermitian part of Σ must be negative semidefinite
            let anti = (lead.sigma - lead.sigma.adjoint()) * Complex64::new(0.0, -0.5);
            let scale = lead.sigma.norm().max(1e-300);
            if anti.symmetric_eigenvalues().iter().any(|&l| l > 1e-12 * scale) {
                return bad("self-energy is not retarded (Im Σ has a positive eigenvalue)".into());
            }
        }
        if self.left.contacts.layer == self.right.contacts.layer {
            return bad("both leads attach to the same layer".into());
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.hamiltonian.n_layers()
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    /// Global site indices of the contacts, left lead first.
    pub fn contact_sites(&self) -> [usize; CONTACTS] {
        let mut out = [0; CONTACTS];
        out[..4].copy_from_slice(&self.left.contacts.site_indices());
        out[4..].copy_from_slice(&self.right.contacts.site_indices());
        out
    }

    /// Diagonal block of `(E + iη) − H − Σ` for `layer`.
    pub fn layer_operator(&self, layer: usize) -> Block {
        let z = Complex64::new(self.energy, self.eta);
        let mut d = Block::from_diagonal_element(z) - self.hamiltonian.diag(layer);
        for lead in [&self.left, &self.right] {
            if lead.contacts.layer == layer {
                for (p, &sp) in lead.contacts.slots.iter().enumerate() {
                    for (q, &sq) in lead.contacts.slots.iter().enumerate() {
                        d[(sp, sq)] -= lead.sigma[(p, q)];
                    }
                }
            }
        }
        d
    }

    /// Block `A[(i+1) mod n, i]` of the operator; `A[i, (i+1) mod n]` is its adjoint.
    fn forward_operator(&self, layer: usize) -> Block {
        -self.hamiltonian.forward_hop(layer)
    }

    /// The full operator `(E + iη) − H − Σ` as a dense matrix.
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut a = -self.hamiltonian.to_dense();
        for i in 0..self.n_layers() {
            let d = self.layer_operator(i);
            a.fixed_view_mut::<BLOCK, BLOCK>(i * BLOCK, i * BLOCK).copy_from(&d);
        }
        a
    }
}

/// Anything that exposes the retarded Green's function on the contact columns.
pub trait ContactView {
    fn energy(&self) -> f64;
    /// Global site indices of the four left contacts, then the four right ones.
    fn contact_sites(&self) -> &[usize; CONTACTS];
    /// Full columns of `G` for every contact site (dim × 8).
    fn contact_columns(&self) -> &DMatrix<Complex64>;

    /// `G` restricted to contact rows and columns.
    fn contact_block(&self) -> ContactBlock {
        let (sites, cols) = (self.contact_sites(), self.contact_columns());
        ContactBlock::from_fn(|r, c| cols[(sites[r], c)])
    }

    fn advanced_contact_block(&self) -> ContactBlock {
        self.contact_block().adjoint()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreensResult {
    pub energy: f64,
    /// `G_ii` for every layer.
    pub diag_blocks: Vec<Block>,
    pub contact_sites: [usize; CONTACTS],
    pub contact_columns: DMatrix<Complex64>,
}

impl GreensResult {
    /// `G_ii` of a single site.
    pub fn site_diagonal(&self, site: usize) -> Complex64 {
        let (layer, slot) = (site / BLOCK, site % BLOCK);
        self.diag_blocks[layer][(slot, slot)]
    }
}

impl ContactView for GreensResult {
    fn energy(&self) -> f64 {
        self.energy
    }

    fn contact_sites(&self) -> &[usize; CONTACTS] {
        &self.contact_sites
    }

    fn contact_columns(&self) -> &DMatrix<Complex64> {
        &self.contact_columns
    }
}

/// Contact columns of `G` without the diagonal blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactGreens {
    pub energy: f64,
    pub contact_sites: [usize; CONTACTS],
    pub contact_columns: DMatrix<Complex64>,
}

impl ContactView for ContactGreens {
    fn energy(&self) -> f64 {
        self.energy
    }

    fn contact_sites(&self) -> &[usize; CONTACTS] {
        &self.contact_sites
    }

    fn contact_columns(&self) -> &DMatrix<Complex64> {
        &self.contact_columns
    }
}

/// Largest entry of `A·G[:, contacts] − I[:, contacts]`.
pub fn residual(sys: &EffectiveSystem, g: &impl ContactView) -> f64 {
    let op = Operator::new(sys);
    let x = to_panels(g.contact_columns());
    max_abs_panels(&op.residual(&x, g.contact_sites()))
}

/// The operator `(E + iη) − H − Σ` in block form with sparse couplings.
struct Operator {
    d: Vec<Block>,
    /// `hops[i] = A[(i+1) mod n, i]`
    hops: Vec<SparseBlock>,
}

impl Operator {
    fn new(sys: &EffectiveSystem) -> Self {
        let n = sys.n_layers();
        Self {
            d: (0..n).map(|i| sys.layer_operator(i)).collect(),
            hops: (0..n).map(|i| SparseBlock::from_dense(&sys.forward_operator(i))).collect(),
        }
    }

    fn n_layers(&self) -> usize {
        self.d.len()
    }

    fn apply(&self, x: &[ContactPanel]) -> Vec<ContactPanel> {
        let n = self.n_layers();
        (0..n)
            .map(|i| {
                let (prev, next) = ((i + n - 1) % n, (i + 1) % n);
                blockops::mul(&self.d[i], &x[i])
                    + self.hops[i].adjoint_left_mul(&x[next])
                    + self.hops[prev].left_mul(&x[prev])
            })
            .collect()
    }

    fn residual(&self, x: &[ContactPanel], sites: &[usize; CONTACTS]) -> Vec<ContactPanel> {
        let mut r = self.apply(x);
        for (col, &site) in sites.iter().enumerate() {
            r[site / BLOCK][(site % BLOCK, col)] -= Complex64::new(1.0, 0.0);
        }
        r
    }

    fn relative_residual(&self, x: &[ContactPanel], sites: &[usize; CONTACTS]) -> f64 {
        let res = max_abs_panels(&self.residual(x, sites)) / max_abs_panels(x).max(1.0);
        if res.is_finite() {
            res
        } else {
            f64::INFINITY
        }
    }
}

fn max_abs<const R: usize, const C: usize>(m: &SMatrix<Complex64, R, C>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max).sqrt()
}

fn max_abs_panels(x: &[ContactPanel]) -> f64 {
    x.iter().map(max_abs).fold(0.0, f64::max)
}

fn unit_panels(n: usize, sites: &[usize; CONTACTS]) -> Vec<ContactPanel> {
    let mut e = vec![ContactPanel::zeros(); n];
    for (col, &site) in sites.iter().enumerate() {
        e[site / BLOCK][(site % BLOCK, col)] = Complex64::new(1.0, 0.0);
    }
    e
}

fn to_panels(x: &DMatrix<Complex64>) -> Vec<ContactPanel> {
    (0..x.nrows() / BLOCK)
        .map(|i| ContactPanel::from_fn(|r, c| x[(i * BLOCK + r, c)]))
        .collect()
}

fn from_panels(x: &[ContactPanel]) -> DMatrix<Complex64> {
    let mut out = DMatrix::zeros(x.len() * BLOCK, CONTACTS);
    for (i, p) in x.iter().enumerate() {
        out.fixed_rows_mut::<BLOCK>(i * BLOCK).copy_from(p);
    }
    out
}

fn invert_pivot(d: &Block, layer: usize, energy: f64) -> Result<Block, GreensError> {
    let breakdown = GreensError::PivotBreakdown { layer, energy };
    let inv = blockops::inverse(d).ok_or(breakdown.clone())?;
    let growth = max_abs(&inv) * max_abs(d);
    if !growth.is_finite() || growth > PIVOT_GROWTH_LIMIT {
        return Err(breakdown);
    }
    Ok(inv)
}

/// Dense LU factorization of the whole operator.
pub fn solve_dense(sys: &EffectiveSystem) -> Result<GreensResult, GreensError> {
    let a = sys.to_dense();
    let dim = a.nrows();
    let mat = Mat::<Complex64>::from_fn(dim, dim, |i, j| a[(i, j)]);
    let inv = mat.partial_piv_lu().inverse();
    let contact_sites = sys.contact_sites();
    let contact_columns = DMatrix::from_fn(dim, CONTACTS, |row, col| inv[(row, contact_sites[col])]);
    let diag_blocks: Vec<Block> = (0..sys.n_layers())
        .map(|l| Block::from_fn(|r, c| inv[(l * BLOCK + r, l * BLOCK + c)]))
        .collect();
    if contact_columns.iter().chain(diag_blocks.iter().flat_map(|b| b.iter())).any(|z| !z.is_finite()) {
        return Err(GreensError::Singular { energy: sys.energy });
    }
    Ok(GreensResult { energy: sys.energy, diag_blocks, contact_sites, contact_columns })
}

/// Block factorization of the ring: open-chain recursion in both directions
/// plus the Woodbury matrix that closes the ring.
struct RingFactor {
    gl: Vec<Block>,
    /// Diagonal blocks of the open-chain inverse.
    g0: Vec<Block>,
    col_first: Vec<Block>,
    col_last: Vec<Block>,
    row_first: Vec<Block>,
    row_last: Vec<Block>,
    /// `M = (I + C K)⁻¹ C` split into 12×12 quadrants.
    m: [[Block; 2]; 2],
}

impl RingFactor {
    fn new(op: &Operator, energy: f64) -> Result<Self, GreensError> {
        let n = op.n_layers();
        let (d, hop) = (&op.d, &op.hops);
        // open chain: A[i+1, i] = hop[i] and A[i, i+1] = hop[i]† for i < n-1

        let mut gl = Vec::with_capacity(n);
        gl.push(invert_pivot(&d[0], 0, energy)?);
        for i in 1..n {
            let s = d[i] - hop[i - 1].left_mul(&hop[i - 1].right_mul_adjoint(&gl[i - 1]));
            gl.push(invert_pivot(&s, i, energy)?);
        }
        let mut gr = vec![Block::zeros(); n];
        gr[n - 1] = invert_pivot(&d[n - 1], n - 1, energy)?;
        for i in (0..n - 1).rev() {
            let s = d[i] - hop[i].adjoint_left_mul(&hop[i].right_mul(&gr[i + 1]));
            gr[i] = invert_pivot(&s, i, energy)?;
        }

        let mut g0 = vec![Block::zeros(); n];
        g0[n - 1] = gl[n - 1];
        for i in (0..n - 1).rev() {
            let up = hop[i].right_mul_adjoint(&gl[i]); // gl_i A[i, i+1]
            let down = hop[i].left_mul(&gl[i]); // A[i+1, i] gl_i
            g0[i] = gl[i] + blockops::mul(&blockops::mul(&up, &g0[i + 1]), &down);
        }

        let mut col_first = vec![Block::zeros(); n];
        let mut col_last = vec![Block::zeros(); n];
        let mut row_first = vec![Block::zeros(); n];
        let mut row_last = vec![Block::zeros(); n];
        col_first[0] = g0[0];
        row_first[0] = g0[0];
        for i in 1..n {
            col_first[i] = -blockops::mul(&gr[i], &hop[i - 1].left_mul(&col_first[i - 1]));
            row_first[i] = -blockops::mul(&hop[i - 1].right_mul_adjoint(&row_first[i - 1]), &gr[i]);
        }
        col_last[n - 1] = g0[n - 1];
        row_last[n - 1] = g0[n - 1];
        for i in (0..n - 1).rev() {
            col_last[i] = -blockops::mul(&gl[i], &hop[i].adjoint_left_mul(&col_last[i + 1]));
            row_last[i] = -blockops::mul(&hop[i].right_mul(&row_last[i + 1]), &gl[i]);
        }

        // A = A_open + U C Uᵀ on layers {0, n-1}, with C[0, n-1] = A[0, n-1] = hop[n-1]
        let corner_op = hop[n - 1].to_dense();
        let mut k = Pair::zeros();
        k.fixed_view_mut::<BLOCK, BLOCK>(0, 0).copy_from(&g0[0]);
        k.fixed_view_mut::<BLOCK, BLOCK>(0, BLOCK).copy_from(&row_first[n - 1]);
        k.fixed_view_mut::<BLOCK, BLOCK>(BLOCK, 0).copy_from(&row_last[0]);
        k.fixed_view_mut::<BLOCK, BLOCK>(BLOCK, BLOCK).copy_from(&g0[n - 1]);
        let mut c = Pair::zeros();
        c.fixed_view_mut::<BLOCK, BLOCK>(0, BLOCK).copy_from(&corner_op);
        c.fixed_view_mut::<BLOCK, BLOCK>(BLOCK, 0).copy_from(&corner_op.adjoint());
        let breakdown = GreensError::PivotBreakdown { layer: n - 1, energy };
        let m = (Pair::identity() + c * k).lu().solve(&c).ok_or(breakdown.clone())?;
        if m.iter().any(|z| !z.is_finite()) {
            return Err(breakdown);
        }
        let quad = |r: usize, c: usize| -> Block { m.fixed_view::<BLOCK, BLOCK>(r * BLOCK, c * BLOCK).into_owned() };
        let m = [[quad(0, 0), quad(0, 1)], [quad(1, 0), quad(1, 1)]];
        Ok(Self { gl, g0, col_first, col_last, row_first, row_last, m })
    }

    fn n_layers(&self) -> usize {
        self.gl.len()
    }

    /// Solve `A x = b` for 8 right-hand sides.
    fn solve(&self, op: &Operator, b: &[ContactPanel]) -> Vec<ContactPanel> {
        let n = self.n_layers();
        let hop = &op.hops;
        // open chain: forward elimination, then back-substitution
        let mut y: Vec<ContactPanel> = Vec::with_capacity(n);
        y.push(b[0]);
        for i in 1..n {
            let carried = hop[i - 1].left_mul(&blockops::mul(&self.gl[i - 1], &y[i - 1]));
            y.push(b[i] - carried);
        }
        y[n - 1] = blockops::mul(&self.gl[n - 1], &y[n - 1]);
        for i in (0..n - 1).rev() {
            let rhs = y[i] - hop[i].adjoint_left_mul(&y[i + 1]);
            y[i] = blockops::mul(&self.gl[i], &rhs);
        }
        // corner correction
        let (y0, yn) = (y[0], y[n - 1]);
        let z0 = blockops::mul(&self.m[0][0], &y0) + blockops::mul(&self.m[0][1], &yn);
        let zn = blockops::mul(&self.m[1][0], &y0) + blockops::mul(&self.m[1][1], &yn);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi -= blockops::mul(&self.col_first[i], &z0) + blockops::mul(&self.col_last[i], &zn);
        }
        y
    }

    fn diag_blocks(&self) -> Vec<Block> {
        let m = &self.m;
        (0..self.n_layers())
            .map(|i| {
                let (rf, rl) = (&self.row_first[i], &self.row_last[i]);
                let top = blockops::mul(&m[0][0], rf) + blockops::mul(&m[0][1], rl);
                let bottom = blockops::mul(&m[1][0], rf) + blockops::mul(&m[1][1], rl);
                self.g0[i] - blockops::mul(&self.col_first[i], &top) - blockops::mul(&self.col_last[i], &bottom)
            })
            .collect()
    }

    /// Iterative refinement of `x ≈ A⁻¹ I[:, sites]`; returns the final relative residual.
    fn refine(&self, op: &Operator, x: &mut [ContactPanel], sites: &[usize; CONTACTS]) -> f64 {
        let mut res = f64::INFINITY;
        for _ in 0..=MAX_REFINEMENTS {
            let r = op.residual(x, sites);
            res = max_abs_panels(&r) / max_abs_panels(x).max(1.0);
            if !res.is_finite() {
                return f64::INFINITY;
            }
            if res <= ACCEPT_RESIDUAL {
                break;
            }
            for (xi, di) in x.iter_mut().zip(self.solve(op, &r)) {
                *xi -= di;
            }
        }
        res
    }
}

/// Open-chain recursion plus Woodbury corner correction, verified by the
/// residual of the contact columns. Falls back to [`solve_dense`] when a block
/// pivot breaks down or the recursion has lost accuracy.
pub fn solve_recursive(sys: &EffectiveSystem) -> Result<GreensResult, GreensError> {
    match recursive_checked(sys) {
        Err(GreensError::PivotBreakdown { layer, energy }) => {
            log::warn!("recursive solve broke down at layer {layer}, E = {energy} eV; using dense LU");
            solve_dense(sys)
        }
        Err(GreensError::Inaccurate { energy, residual }) => {
            log::warn!("recursive solve residual {residual:.1e} at E = {energy} eV; using dense LU");
            solve_dense(sys)
        }
        other => other,
    }
}

fn recursive_checked(sys: &EffectiveSystem) -> Result<GreensResult, GreensError> {
    let op = Operator::new(sys);
    let factor = RingFactor::new(&op, sys.energy)?;
    let sites = sys.contact_sites();
    let mut x = factor.solve(&op, &unit_panels(op.n_layers(), &sites));
    let initial = op.relative_residual(&x, &sites);
    if !(initial <= DIAG_TRUST_RESIDUAL) {
        return Err(GreensError::Inaccurate { energy: sys.energy, residual: initial });
    }
    let refined = factor.refine(&op, &mut x, &sites);
    if !(refined <= ACCEPT_RESIDUAL) {
        return Err(GreensError::Inaccurate { energy: sys.energy, residual: refined });
    }
    Ok(GreensResult {
        energy: sys.energy,
        diag_blocks: factor.diag_blocks(),
        contact_sites: sites,
        contact_columns: from_panels(&x),
    })
}

/// Result of eliminating the interior layers of one arc `p → q` of the ring.
struct ArcReduction {
    /// Added to the diagonal block of `p`.
    pp: Block,
    /// Added to the diagonal block of `q`.
    qq: Block,
    /// Effective `A[p, q]`.
    pq: Block,
    /// Effective `A[q, p]`.
    qp: Block,
    /// Per eliminated layer, in order: `(layer, S⁻¹, A'[layer, p])`.
    steps: Vec<(usize, Block, Block)>,
}

fn eliminate_arc(op: &Operator, p: usize, q: usize, energy: f64) -> Result<ArcReduction, GreensError> {
    let n = op.n_layers();
    let (d, hop) = (&op.d, &op.hops);
    let first = hop[p].to_dense();
    let mut k = (p + 1) % n;
    if k == q {
        return Ok(ArcReduction {
            pp: Block::zeros(),
            qq: Block::zeros(),
            pq: first.adjoint(),
            qp: first,
            steps: Vec::new(),
        });
    }
    let mut t_pk = first.adjoint();
    let mut t_kp = first;
    let mut dk = d[k];
    let mut pp = Block::zeros();
    let mut steps = Vec::with_capacity(n);
    loop {
        let s = invert_pivot(&dk, k, energy)?;
        let next = (k + 1) % n;
        let ts = blockops::mul(&t_pk, &s);
        pp -= blockops::mul(&ts, &t_kp);
        let fs = hop[k].left_mul(&s);
        let fill = -blockops::mul(&fs, &t_kp);
        steps.push((k, s, t_kp));
        if next == q {
            return Ok(ArcReduction {
                pp,
                qq: -hop[k].right_mul_adjoint(&fs),
                pq: -hop[k].right_mul_adjoint(&ts),
                qp: fill,
                steps,
            });
        }
        dk = d[next] - hop[k].right_mul_adjoint(&fs);
        t_pk = -hop[k].right_mul_adjoint(&ts);
        t_kp = fill;
        k = next;
    }
}

fn arc_columns(sys: &EffectiveSystem, op: &Operator) -> Result<Vec<ContactPanel>, GreensError> {
    let n = op.n_layers();
    let d = &op.d;
    let (l, r) = (sys.left.contacts.layer, sys.right.contacts.layer);
    let arc_lr = eliminate_arc(op, l, r, sys.energy)?;
    let arc_rl = eliminate_arc(op, r, l, sys.energy)?;

    let mut reduced = Pair::zeros();
    reduced.fixed_view_mut::<BLOCK, BLOCK>(0, 0).copy_from(&(d[l] + arc_lr.pp + arc_rl.qq));
    reduced.fixed_view_mut::<BLOCK, BLOCK>(0, BLOCK).copy_from(&(arc_lr.pq + arc_rl.qp));
    reduced.fixed_view_mut::<BLOCK, BLOCK>(BLOCK, 0).copy_from(&(arc_lr.qp + arc_rl.pq));
    reduced.fixed_view_mut::<BLOCK, BLOCK>(BLOCK, BLOCK).copy_from(&(d[r] + arc_lr.qq + arc_rl.pp));
    let breakdown = GreensError::PivotBreakdown { layer: l, energy: sys.energy };
    let inv = reduced.lu().try_inverse().ok_or(breakdown.clone())?;
    if inv.iter().any(|z| !z.is_finite()) {
        return Err(breakdown);
    }

    // columns of the reduced inverse belonging to the contact sites
    let index: Vec<usize> = sys
        .left
        .contacts
        .slots
        .iter()
        .copied()
        .chain(sys.right.contacts.slots.iter().map(|s| s + BLOCK))
        .collect();
    let mut x = vec![ContactPanel::zeros(); n];
    x[l] = ContactPanel::from_fn(|row, j| inv[(row, index[j])]);
    x[r] = ContactPanel::from_fn(|row, j| inv[(row + BLOCK, index[j])]);

    // interior rows read S_k x_k + A'[k, p] x_p + A[k, k+1] x_{k+1} = 0
    for (arc, p) in [(&arc_lr, l), (&arc_rl, r)] {
        let xp = x[p];
        for (k, s, t_kp) in arc.steps.iter().rev() {
            let next = (k + 1) % n;
            let rhs = blockops::mul(t_kp, &xp) + op.hops[*k].adjoint_left_mul(&x[next]);
            x[*k] = -blockops::mul(s, &rhs);
        }
    }
    Ok(x)
}

/// Contact columns of `G`. Both arcs between the lead layers are eliminated,
/// the remaining two-layer system is inverted, and the columns are recovered
/// by back-substitution and checked through their residual. Inaccurate
/// results are refined with the ring factorization; the dense solver is the
/// last resort.
pub fn solve_contacts(sys: &EffectiveSystem) -> Result<ContactGreens, GreensError> {
    let op = Operator::new(sys);
    let sites = sys.contact_sites();
    let done = |x: &[ContactPanel]| ContactGreens { energy: sys.energy, contact_sites: sites, contact_columns: from_panels(x) };
    let first = match arc_columns(sys, &op) {
        Ok(x) => {
            let res = op.relative_residual(&x, &sites);
            if res <= ACCEPT_RESIDUAL {
                return Ok(done(&x));
            }
            log::debug!("arc elimination residual {res:.1e} at E = {} eV; refining", sys.energy);
            Some(x)
        }
        Err(GreensError::PivotBreakdown { .. }) => None,
        Err(e) => return Err(e),
    };
    match RingFactor::new(&op, sys.energy) {
        Ok(factor) => {
            let mut x = match first {
                Some(x) if max_abs_panels(&x).is_finite() => x,
                _ => factor.solve(&op, &unit_panels(op.n_layers(), &sites)),
            };
            let res = factor.refine(&op, &mut x, &sites);
            if res <= ACCEPT_RESIDUAL {
                return Ok(done(&x));
            }
            log::warn!("refinement stalled at residual {res:.1e}, E = {} eV; using dense LU", sys.energy);
        }
        Err(GreensError::PivotBreakdown { layer, energy }) => {
            log::warn!("ring factorization broke down at layer {layer}, E = {energy} eV; using dense LU");
        }
        Err(e) => return Err(e),
    }
    let full = solve_dense(sys)?;
    Ok(ContactGreens { energy: full.energy, contact_sites: full.contact_sites, contact_columns: full.contact_columns })
}
