//! The hierarchy of auxiliary operators `Q_m^(n)` (`0 <= m <= n`,
//! `n + m <= N_Q`) and their coupled evolution
//!
//! ```text
//! dQ_m^(n)/dt = delta_{n,0} alpha(0) L
//!             + (m/n') alpha(0) [L, Q_{m-1}^(n-1)] + ((n-m)/n') z~*_t [L, Q_m^(n-1)]
//!             - (m+1) gamma Q_m^(n) - i [H, Q_m^(n)]
//!             - sum_{k=0}^{n} sum_{l=l_a}^{l_b} w(n,m,k,l) [L^dag Q_{k-l}^(k), Q_{m-k+l}^(n-k)]
//!             - (n+1) L^dag Q_{m+1}^(n+1)
//! ```
//!
//! with `n' = max(1, n)`, `l_a = max(0, k-m)`, `l_b = min(k, n-m)` and
//! `w = C(k,l) C(n-k, n-m-l) / C(n,m)`. Operators outside the stored
//! triangle are zero; in particular the shell above `N_Q` is dropped, which
//! is the truncation. `Q_0^(n)` summed over `n` gives `O-bar`.
//!
//! Storage is a flat array ordered by shell `s = n + m`, then by `m`, so
//! growing `N_Q` appends a shell at the end.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use num_traits::Float;
use thiserror::Error;

use crate::operator::{self, Operator};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HierarchyError {
    #[error("binomial weight index out of range: n={n}, m={m}, k={k}, l={l}")]
    WeightIndex {
        n: usize,
        m: usize,
        k: usize,
        l: usize,
    },
    #[error("index (n={n}, m={m}) is outside the stored triangle (N_Q={n_q})")]
    OutsideTriangle { n: usize, m: usize, n_q: usize },
    #[error("operator dimension {got} does not match hierarchy dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("eps_thres ({thres}) must be non-negative and below eps_tol ({tol})")]
    Thresholds { thres: f64, tol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HierarchyMode {
    /// Adaptive order up to `n_max`; trajectories whose top shell exceeds
    /// `eps_tol` at the cap are rejected.
    Full,
    /// No hierarchy: `O-bar = 0`.
    BarOZero,
    /// Adaptive order up to `n_max` without rejection.
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierarchyParams {
    pub n_max: usize,
    pub eps_thres: f64,
    pub eps_tol: f64,
    pub mode: HierarchyMode,
}

impl Default for HierarchyParams {
    fn default() -> Self {
        Self {
            n_max: 100,
            eps_thres: 1e-8,
            eps_tol: 1e-4,
            mode: HierarchyMode::Full,
        }
    }
}

impl HierarchyParams {
    pub fn validate(&self) -> Result<(), HierarchyError> {
        if !(self.eps_thres >= 0.0 && self.eps_thres < self.eps_tol) {
            return Err(HierarchyError::Thresholds {
                thres: self.eps_thres,
                tol: self.eps_tol,
            });
        }
        Ok(())
    }

    /// Active order at `t = 0`.
    pub fn initial_order(&self) -> usize {
        self.n_max.min(1)
    }
}

/// `C(k,l) C(n-k, n-m-l) / C(n,m)` for `0 <= m <= n`, `0 <= k <= n` and
/// `max(0, k-m) <= l <= min(k, n-m)`.
///
/// Evaluated as a product over `j = 2..=n` of `j^e(j)`, where `e(j)` counts
/// the factorials in the ratio whose argument reaches `j`. No binomial
/// coefficient is formed on its own, and the running product stays inside
/// the `f64` range for `n <= 200`.
pub fn binomial_weight(n: usize, m: usize, k: usize, l: usize) -> Result<f64, HierarchyError> {
    let in_range = m <= n && k <= n && l + m >= k && l <= k && l + m <= n;
    if !in_range {
        return Err(HierarchyError::WeightIndex { n, m, k, l });
    }
    let numer = [k, n - k, m, n - m];
    let denom = [n, l, k - l, n - m - l, m + l - k];
    let mut w = 1.0f64;
    for j in 2..=n {
        let up = numer.iter().filter(|&&a| a >= j).count() as i32;
        let down = denom.iter().filter(|&&a| a >= j).count() as i32;
        let e = up - down;
        if e != 0 {
            w *= Float::powi(j as f64, e);
        }
    }
    Ok(w)
}

/// First flat index of shell `s = n + m`.
#[inline]
pub(crate) const fn shell_start(s: usize) -> usize {
    let h = s.div_ceil(2);
    if s.is_multiple_of(2) {
        h * (h + 1)
    } else {
        h * h
    }
}

/// Number of stored operators for active order `n_q`.
#[inline]
pub const fn entry_count(n_q: usize) -> usize {
    shell_start(n_q + 1)
}

#[inline]
fn offset(n: usize, m: usize) -> usize {
    shell_start(n + m) + m
}

#[derive(Debug, Clone, Copy)]
struct Term {
    a: u32,
    b: u32,
    w: f64,
}

/// Precomputed index structure for the quadratic double sum, shared by all
/// trajectories with the same `n_max`.
#[derive(Debug)]
pub struct CouplingTable {
    n_max: usize,
    index: Vec<(usize, usize)>,
    term_start: Vec<u32>,
    terms: Vec<Term>,
}

impl CouplingTable {
    pub fn new(n_max: usize) -> Self {
        let count = entry_count(n_max);
        let mut index = Vec::with_capacity(count);
        let mut term_start = Vec::with_capacity(count + 1);
        let mut terms = Vec::new();
        for s in 0..=n_max {
            for m in 0..=s / 2 {
                let n = s - m;
                index.push((n, m));
                term_start.push(terms.len() as u32);
                for k in 0..=n {
                    let la = k.saturating_sub(m);
                    let lb = k.min(n - m);
                    for l in la..=lb {
                        let w = binomial_weight(n, m, k, l).expect("bounds enforced by loop");
                        terms.push(Term {
                            a: offset(k, k - l) as u32,
                            b: offset(n - k, m + l - k) as u32,
                            w,
                        });
                    }
                }
            }
        }
        term_start.push(terms.len() as u32);
        Self {
            n_max,
            index,
            term_start,
            terms,
        }
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// `(n, m)` of flat entry `e`.
    pub fn index_of(&self, e: usize) -> (usize, usize) {
        self.index[e]
    }

    /// Number of terms in the double sum over all entries up to order `n_q`.
    pub fn term_count(&self, n_q: usize) -> usize {
        self.term_start[entry_count(n_q)] as usize
    }
}

/// Triangular array of `Q_m^(n)` for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyState {
    dim: usize,
    n_max: usize,
    n_q: usize,
    rejected: bool,
    data: Vec<Complex64>,
}

impl HierarchyState {
    /// All-zero hierarchy at active order `n_q`.
    pub fn new(dim: usize, n_max: usize, n_q: usize) -> Self {
        assert!(dim >= 1);
        assert!(n_q <= n_max, "active order above cap");
        Self {
            dim,
            n_max,
            n_q,
            rejected: false,
            data: vec![ZERO; entry_count(n_q) * dim * dim],
        }
    }

    pub fn for_params(dim: usize, params: &HierarchyParams) -> Self {
        Self::new(dim, params.n_max, params.initial_order())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n_q(&self) -> usize {
        self.n_q
    }

    #[inline]
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn is_rejected(&self) -> bool {
        self.rejected
    }

    pub fn mark_rejected(&mut self) {
        self.rejected = true;
    }

    pub fn entries(&self) -> usize {
        entry_count(self.n_q)
    }

    pub fn contains(&self, n: usize, m: usize) -> bool {
        m <= n && n + m <= self.n_q
    }

    /// `Q_m^(n)`; zero outside the stored triangle.
    pub fn get(&self, n: usize, m: usize) -> Operator {
        if !self.contains(n, m) {
            return Operator::zeros(self.dim);
        }
        let dd = self.dim * self.dim;
        let e = offset(n, m);
        Operator::from_row_major(self.dim, self.data[e * dd..(e + 1) * dd].to_vec())
            .expect("slice has dim^2 entries")
    }

    pub fn set(&mut self, n: usize, m: usize, q: &Operator) -> Result<(), HierarchyError> {
        if !self.contains(n, m) {
            return Err(HierarchyError::OutsideTriangle {
                n,
                m,
                n_q: self.n_q,
            });
        }
        if q.dim() != self.dim {
            return Err(HierarchyError::Dimension {
                expected: self.dim,
                got: q.dim(),
            });
        }
        let dd = self.dim * self.dim;
        let e = offset(n, m);
        self.data[e * dd..(e + 1) * dd].copy_from_slice(q.as_slice());
        Ok(())
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// `self += h * rate`, entry by entry over the stored triangle.
    pub fn add_scaled(&mut self, h: f64, rate: &[Complex64]) {
        assert_eq!(
            rate.len(),
            self.data.len(),
            "rate buffer does not match hierarchy"
        );
        for (q, r) in self.data.iter_mut().zip(rate) {
            *q += r * h;
        }
    }

    /// Raises the active order by one, appending a zero shell.
    pub fn grow(&mut self) {
        assert!(self.n_q < self.n_max, "cannot grow past n_max");
        self.n_q += 1;
        self.data
            .resize(entry_count(self.n_q) * self.dim * self.dim, ZERO);
    }

    /// Restores values and order from `other` without reallocating when the
    /// capacity already suffices.
    pub fn copy_from(&mut self, other: &HierarchyState) {
        self.dim = other.dim;
        self.n_max = other.n_max;
        self.n_q = other.n_q;
        self.rejected = other.rejected;
        self.data.clear();
        self.data.extend_from_slice(&other.data);
    }

    /// `O-bar = sum_n Q_0^(n)` over the active orders.
    pub fn assemble_bar_o(&self) -> Operator {
        let dd = self.dim * self.dim;
        let mut out = Operator::zeros(self.dim);
        let acc = out.as_mut_slice();
        for n in 0..=self.n_q {
            let e = offset(n, 0);
            for (o, q) in acc.iter_mut().zip(&self.data[e * dd..(e + 1) * dd]) {
                *o += q;
            }
        }
        out
    }

    /// Largest entry magnitude over the shell `n + m = s`.
    pub fn shell_max_abs(&self, s: usize) -> f64 {
        if s > self.n_q {
            return 0.0;
        }
        let dd = self.dim * self.dim;
        let lo = shell_start(s) * dd;
        let hi = shell_start(s + 1) * dd;
        operator::max_abs(&self.data[lo..hi])
    }

    /// Trace norms of `Q_0^(n)` for `n = 0..=up_to` (zero beyond `N_Q`).
    pub fn q0_trace_norms(&self, up_to: usize) -> Vec<f64> {
        let dd = self.dim * self.dim;
        (0..=up_to)
            .map(|n| {
                if n > self.n_q {
                    0.0
                } else {
                    let e = offset(n, 0);
                    operator::trace_norm_slice(&self.data[e * dd..(e + 1) * dd], self.dim)
                }
            })
            .collect()
    }

    /// Largest trace norm over all stored `Q_m^(n)` with `n >= n_min`.
    pub fn max_trace_norm_from(&self, n_min: usize) -> f64 {
        let dd = self.dim * self.dim;
        let mut worst = 0.0f64;
        for s in 0..=self.n_q {
            for m in 0..=s / 2 {
                if s - m >= n_min {
                    let e = offset(s - m, m);
                    worst = worst.max(operator::trace_norm_slice(
                        &self.data[e * dd..(e + 1) * dd],
                        self.dim,
                    ));
                }
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Outcome of the order check after a tentative step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderDecision {
    Keep,
    /// Increase `N_Q`, zero-fill the new shell and redo the step.
    Grow,
    /// Divergence at the cap; the trajectory must be discarded.
    Reject,
}

pub fn adapt_order(state: &HierarchyState, params: &HierarchyParams) -> OrderDecision {
    if params.mode == HierarchyMode::BarOZero {
        return OrderDecision::Keep;
    }
    let top = state.shell_max_abs(state.n_q());
    if state.n_q() < params.n_max.min(state.n_max()) {
        if top > params.eps_thres {
            return OrderDecision::Grow;
        }
    } else if params.mode == HierarchyMode::Full && top > params.eps_tol {
        return OrderDecision::Reject;
    }
    OrderDecision::Keep
}

/// Right-hand side split by term type. All buffers have the layout of
/// [`HierarchyState::as_slice`].
#[derive(Debug, Clone, PartialEq)]
pub struct RhsGroups {
    pub source: Vec<Complex64>,
    pub feed_down: Vec<Complex64>,
    pub damping: Vec<Complex64>,
    pub coherent: Vec<Complex64>,
    pub quadratic: Vec<Complex64>,
    pub feed_up: Vec<Complex64>,
}

impl RhsGroups {
    pub fn total(&self) -> Vec<Complex64> {
        (0..self.source.len())
            .map(|i| {
                self.source[i]
                    + self.feed_down[i]
                    + self.damping[i]
                    + self.coherent[i]
                    + self.quadratic[i]
                    + self.feed_up[i]
            })
            .collect()
    }
}

/// Evaluates the hierarchy right-hand side. Owns its scratch buffers, so
/// one kernel serves one trajectory at a time.
#[derive(Debug, Clone)]
pub struct HierarchyKernel {
    dim: usize,
    h_sys: Vec<Complex64>,
    l: Vec<Complex64>,
    l_dag: Vec<Complex64>,
    alpha0: f64,
    gamma: f64,
    table: Arc<CouplingTable>,
    l_dag_q: Vec<Complex64>,
    out: Vec<Complex64>,
}

impl HierarchyKernel {
    pub fn new(
        h_sys: &Operator,
        l: &Operator,
        alpha0: f64,
        gamma: f64,
        table: Arc<CouplingTable>,
    ) -> Result<Self, HierarchyError> {
        if h_sys.dim() != l.dim() {
            return Err(HierarchyError::Dimension {
                expected: h_sys.dim(),
                got: l.dim(),
            });
        }
        Ok(Self {
            dim: l.dim(),
            h_sys: h_sys.as_slice().to_vec(),
            l: l.as_slice().to_vec(),
            l_dag: l.adjoint().into_vec(),
            alpha0,
            gamma,
            table,
            l_dag_q: Vec::new(),
            out: Vec::new(),
        })
    }

    pub fn table(&self) -> &Arc<CouplingTable> {
        &self.table
    }

    fn check_state(&self, state: &HierarchyState) {
        assert_eq!(state.dim(), self.dim, "hierarchy dimension mismatch");
        assert!(
            state.n_q() <= self.table.n_max(),
            "coupling table built for n_max={} but N_Q={}",
            self.table.n_max(),
            state.n_q()
        );
    }

    fn prepare(&mut self, state: &HierarchyState) {
        let d = self.dim;
        let dd = d * d;
        let len = state.as_slice().len();
        self.l_dag_q.resize(len, ZERO);
        for (p, q) in self
            .l_dag_q
            .chunks_exact_mut(dd)
            .zip(state.as_slice().chunks_exact(dd))
        {
            operator::matmul_into(p, &self.l_dag, q, d);
        }
    }

    /// Time derivative of every stored operator at noise value `z_tilde_star`.
    pub fn rhs(&mut self, state: &HierarchyState, z_tilde_star: Complex64) -> &[Complex64] {
        self.check_state(state);
        self.prepare(state);
        let len = state.as_slice().len();
        let mut out = core::mem::take(&mut self.out);
        out.clear();
        out.resize(len, ZERO);
        self.add_source(&mut out);
        self.add_feed_down(&mut out, state, z_tilde_star);
        self.add_linear(&mut out, state);
        self.add_quadratic(&mut out, state);
        self.add_feed_up(&mut out, state);
        self.out = out;
        &self.out
    }

    /// Same sum as [`Self::rhs`], kept apart by term type.
    pub fn rhs_groups(&mut self, state: &HierarchyState, z_tilde_star: Complex64) -> RhsGroups {
        self.check_state(state);
        self.prepare(state);
        let len = state.as_slice().len();
        let mut g = RhsGroups {
            source: vec![ZERO; len],
            feed_down: vec![ZERO; len],
            damping: vec![ZERO; len],
            coherent: vec![ZERO; len],
            quadratic: vec![ZERO; len],
            feed_up: vec![ZERO; len],
        };
        self.add_source(&mut g.source);
        self.add_feed_down(&mut g.feed_down, state, z_tilde_star);
        self.add_damping(&mut g.damping, state);
        self.add_coherent(&mut g.coherent, state);
        self.add_quadratic(&mut g.quadratic, state);
        self.add_feed_up(&mut g.feed_up, state);
        g
    }

    fn add_source(&self, out: &mut [Complex64]) {
        let dd = self.dim * self.dim;
        for (o, l) in out[..dd].iter_mut().zip(&self.l) {
            *o += l * self.alpha0;
        }
    }

    fn add_feed_down(&self, out: &mut [Complex64], state: &HierarchyState, z: Complex64) {
        let d = self.dim;
        let dd = d * d;
        let q = state.as_slice();
        let mut mix = vec![ZERO; dd];
        for e in 1..state.entries() {
            let (n, m) = self.table.index_of(e);
            if n == 0 {
                continue;
            }
            let inv_n = 1.0 / n as f64;
            mix.iter_mut().for_each(|v| *v = ZERO);
            if m >= 1 {
                let c = self.alpha0 * m as f64 * inv_n;
                let src = offset(n - 1, m - 1) * dd;
                for (v, x) in mix.iter_mut().zip(&q[src..src + dd]) {
                    *v += x * c;
                }
            }
            if n > m {
                let c = z * ((n - m) as f64 * inv_n);
                let src = offset(n - 1, m) * dd;
                for (v, x) in mix.iter_mut().zip(&q[src..src + dd]) {
                    *v += x * c;
                }
            }
            operator::commutator_acc(
                &mut out[e * dd..(e + 1) * dd],
                &self.l,
                &mix,
                d,
                Complex64::new(1.0, 0.0),
            );
        }
    }

    fn add_damping(&self, out: &mut [Complex64], state: &HierarchyState) {
        let dd = self.dim * self.dim;
        let q = state.as_slice();
        for e in 0..state.entries() {
            let (_, m) = self.table.index_of(e);
            let c = -((m + 1) as f64) * self.gamma;
            for i in e * dd..(e + 1) * dd {
                out[i] += q[i] * c;
            }
        }
    }

    fn add_coherent(&self, out: &mut [Complex64], state: &HierarchyState) {
        let d = self.dim;
        let dd = d * d;
        let q = state.as_slice();
        for e in 0..state.entries() {
            operator::commutator_acc(
                &mut out[e * dd..(e + 1) * dd],
                &self.h_sys,
                &q[e * dd..(e + 1) * dd],
                d,
                Complex64::new(0.0, -1.0),
            );
        }
    }

    fn add_linear(&self, out: &mut [Complex64], state: &HierarchyState) {
        self.add_damping(out, state);
        self.add_coherent(out, state);
    }

    fn add_feed_up(&self, out: &mut [Complex64], state: &HierarchyState) {
        let dd = self.dim * self.dim;
        let n_q = state.n_q();
        for e in 0..state.entries() {
            let (n, m) = self.table.index_of(e);
            if n + m + 2 > n_q {
                continue;
            }
            let c = -((n + 1) as f64);
            let src = offset(n + 1, m + 1) * dd;
            for i in 0..dd {
                out[e * dd + i] += self.l_dag_q[src + i] * c;
            }
        }
    }

    fn add_quadratic(&self, out: &mut [Complex64], state: &HierarchyState) {
        if self.dim == 2 {
            self.add_quadratic_2x2(out, state);
        } else {
            self.add_quadratic_dense(out, state);
        }
    }

    fn add_quadratic_dense(&self, out: &mut [Complex64], state: &HierarchyState) {
        let d = self.dim;
        let dd = d * d;
        let q = state.as_slice();
        let p = &self.l_dag_q;
        for e in 0..state.entries() {
            let lo = self.table.term_start[e] as usize;
            let hi = self.table.term_start[e + 1] as usize;
            let dst = &mut out[e * dd..(e + 1) * dd];
            for t in &self.table.terms[lo..hi] {
                let a = t.a as usize * dd;
                let b = t.b as usize * dd;
                operator::commutator_acc(
                    dst,
                    &p[a..a + dd],
                    &q[b..b + dd],
                    d,
                    Complex64::new(-t.w, 0.0),
                );
            }
        }
    }

    fn add_quadratic_2x2(&self, out: &mut [Complex64], state: &HierarchyState) {
        let q = as_blocks(state.as_slice());
        let p = as_blocks(&self.l_dag_q);
        let out = as_blocks_mut(out);
        let starts = &self.table.term_start;
        for (e, dst) in out.iter_mut().enumerate() {
            let lo = starts[e] as usize;
            let hi = starts[e + 1] as usize;
            let mut acc = [ZERO; 4];
            for t in &self.table.terms[lo..hi] {
                let pa = &p[t.a as usize];
                let qb = &q[t.b as usize];
                // pa qb - qb pa
                let c00 = pa[1] * qb[2] - qb[1] * pa[2];
                let c01 = pa[0] * qb[1] + pa[1] * qb[3] - qb[0] * pa[1] - qb[1] * pa[3];
                let c10 = pa[2] * qb[0] + pa[3] * qb[2] - qb[2] * pa[0] - qb[3] * pa[2];
                let c11 = pa[2] * qb[1] - qb[2] * pa[1];
                acc[0] += c00 * t.w;
                acc[1] += c01 * t.w;
                acc[2] += c10 * t.w;
                acc[3] += c11 * t.w;
            }
            for (o, a) in dst.iter_mut().zip(acc) {
                *o -= a;
            }
        }
    }
}

fn as_blocks(data: &[Complex64]) -> &[[Complex64; 4]] {
    let (blocks, rest) = data.as_chunks::<4>();
    debug_assert!(rest.is_empty());
    blocks
}

fn as_blocks_mut(data: &mut [Complex64]) -> &mut [[Complex64; 4]] {
    let (blocks, rest) = data.as_chunks_mut::<4>();
    debug_assert!(rest.is_empty());
    blocks
}

/// Convenience wrapper returning one derivative operator per stored
/// `(n, m)`, in storage order (see [`HierarchyState::as_slice`]).
pub fn hierarchy_rhs(
    state: &HierarchyState,
    z_tilde_star: Complex64,
    h_sys: &Operator,
    l: &Operator,
    alpha0: f64,
    gamma: f64,
) -> Result<Vec<((usize, usize), Operator)>, HierarchyError> {
    if l.dim() != state.dim() {
        return Err(HierarchyError::Dimension {
            expected: state.dim(),
            got: l.dim(),
        });
    }
    let table = Arc::new(CouplingTable::new(state.n_q()));
    let mut kernel = HierarchyKernel::new(h_sys, l, alpha0, gamma, table.clone())?;
    let d = state.dim();
    let dd = d * d;
    let rates = kernel.rhs(state, z_tilde_star);
    Ok(rates
        .chunks_exact(dd)
        .enumerate()
        .map(|(e, chunk)| {
            (
                table.index_of(e),
                Operator::from_row_major(d, chunk.to_vec()).expect("dim^2 entries"),
            )
        })
        .collect())
}

pub fn assemble_bar_o(state: &HierarchyState) -> Operator {
    state.assemble_bar_o()
}
