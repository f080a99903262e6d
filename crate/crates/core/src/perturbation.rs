//! Time-ordered products, local S-matrices and the relative S-matrix
//! identities of the interacting theory.
//!
//! `S(g) = sum_n (i^n / n!) sum dV^n g(x_1)..g(x_n) T(x_1, ..., x_n)` where the
//! time-ordered product `T` is the Wick expansion of a product of normally
//! ordered vertices, contracted pairwise with the Feynman kernel.

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field_solver::{FreeField, Kernel};
use crate::lattice::{causal_shadow, Direction, LatticeSpacetime, Point, Region, Slab};
use crate::wick_algebra::{
    adjoint, binomial, factorial, multiplicity_factorial, star_product, Key, SymTensor, WickElement, ONE, ZERO,
};

pub const MAX_POWER: usize = 4;
pub const MAX_ORDER: usize = 6;

/// Default ceiling on the number of time-ordered terms an S-matrix may expand
/// into.
pub const DEFAULT_TERM_LIMIT: u64 = 20_000_000;

/// Vertex multisets handled per parallel task.
const VERTEX_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Monomial {
    pub power: usize,
    pub label: String,
}

/// The interaction terms a coupling may switch on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexSpec {
    monomials: Vec<Monomial>,
}

impl VertexSpec {
    pub fn new(monomials: Vec<Monomial>) -> Result<Self> {
        if monomials.is_empty() {
            return Err(Error::Configuration("vertex specification has no monomials".into()));
        }
        for m in &monomials {
            if m.power == 0 || m.power > MAX_POWER {
                return Err(Error::Configuration(format!(
                    "monomial '{}' has power {}, allowed range is 1..={MAX_POWER}",
                    m.label, m.power
                )));
            }
        }
        Ok(Self { monomials })
    }

    /// Source term `phi` together with `phi^p`.
    pub fn source_and_power(p: usize) -> Result<Self> {
        Self::new(vec![
            Monomial { power: 1, label: "phi".into() },
            Monomial { power: p, label: format!("phi{p}") },
        ])
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn power(&self, monomial: usize) -> usize {
        self.monomials[monomial].power
    }

    pub fn max_power(&self) -> usize {
        self.monomials.iter().map(|m| m.power).max().unwrap_or(0)
    }

    /// Index of the first `p = 1` monomial.
    pub fn source(&self) -> Option<usize> {
        self.monomials.iter().position(|m| m.power == 1)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.monomials.iter().position(|m| m.label == label)
    }
}

/// Coupling strengths per lattice point and monomial, finitely supported.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CouplingFunction {
    values: BTreeMap<(Point, usize), C64>,
}

impl CouplingFunction {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, p: Point, monomial: usize, value: C64) {
        if value == ZERO {
            self.values.remove(&(p, monomial));
        } else {
            self.values.insert((p, monomial), value);
        }
    }

    pub fn get(&self, p: Point, monomial: usize) -> C64 {
        self.values.get(&(p, monomial)).copied().unwrap_or(ZERO)
    }

    /// `(point, monomial, value)` in point order.
    pub fn entries(&self) -> impl Iterator<Item = (Point, usize, C64)> + '_ {
        self.values.iter().map(|(&(p, m), &v)| (p, m, v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.is_zero()
    }

    pub fn support(&self) -> Region {
        self.values.keys().map(|&(p, _)| p).collect()
    }

    pub fn restrict(&self, r: &Region) -> CouplingFunction {
        CouplingFunction { values: self.values.iter().filter(|((p, _), _)| r.contains(*p)).map(|(k, v)| (*k, *v)).collect() }
    }

    /// Restriction to rows `t_lo..=t_hi`.
    pub fn restrict_rows(&self, t_lo: usize, t_hi: usize) -> CouplingFunction {
        CouplingFunction {
            values: self.values.iter().filter(|((p, _), _)| p.t >= t_lo && p.t <= t_hi).map(|(k, v)| (*k, *v)).collect(),
        }
    }

    pub fn add(&self, other: &CouplingFunction) -> CouplingFunction {
        let mut out = self.clone();
        for (&(p, m), &v) in &other.values {
            out.set(p, m, out.get(p, m) + v);
        }
        out
    }

    pub fn scale(&self, c: C64) -> CouplingFunction {
        let mut out = CouplingFunction::new();
        for (&(p, m), &v) in &self.values {
            out.set(p, m, v * c);
        }
        out
    }

    pub fn sub(&self, other: &CouplingFunction) -> CouplingFunction {
        self.add(&other.scale(-ONE))
    }

    pub fn neg(&self) -> CouplingFunction {
        self.scale(-ONE)
    }

    pub fn check(&self, st: &LatticeSpacetime, vertex: &VertexSpec) -> Result<()> {
        for &(p, m) in self.values.keys() {
            st.check(p)?;
            if !st.is_interior(p) {
                return Err(Error::BoundarySupport(format!("coupling is nonzero at (t={}, x={})", p.t, p.x)));
            }
            if m >= vertex.len() {
                return Err(Error::Input(format!("coupling uses monomial {m}, only {} are defined", vertex.len())));
            }
        }
        Ok(())
    }
}

fn add_into(acc: &mut BTreeMap<usize, HashMap<Key, C64>>, key: Key, value: C64) {
    *acc.entry(key.len()).or_default().entry(key).or_insert(ZERO) += value;
}

fn element_from(acc: BTreeMap<usize, HashMap<Key, C64>>) -> WickElement {
    let mut out = WickElement::zero();
    for (n, map) in acc {
        out.add_tensor(SymTensor::from_map(n, map));
    }
    out.cleanup();
    out
}

/// Add `scale * T(vertices)` to `acc`. Vertices are `(point index, power)`.
fn time_ordered_into(
    vertices: &[(u32, usize)],
    feynman: &Kernel,
    scale: C64,
    acc: &mut BTreeMap<usize, HashMap<Key, C64>>,
) {
    let n = vertices.len();
    let dv = feynman.cell_volume();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let mut counts = vec![0usize; pairs.len()];
    let mut used = vec![0usize; n];

    #[allow(clippy::too_many_arguments)]
    fn rec(
        idx: usize,
        pairs: &[(usize, usize)],
        counts: &mut [usize],
        used: &mut [usize],
        vertices: &[(u32, usize)],
        feynman: &Kernel,
        dv: f64,
        scale: C64,
        acc: &mut BTreeMap<usize, HashMap<Key, C64>>,
    ) {
        if idx == pairs.len() {
            let mut weight = scale;
            let mut multiplicity = 1.0;
            for (i, &(_, power)) in vertices.iter().enumerate() {
                multiplicity *= factorial(power) / factorial(power - used[i]);
            }
            for (e, &(i, j)) in pairs.iter().enumerate() {
                let c = counts[e];
                if c > 0 {
                    multiplicity /= factorial(c);
                    let w = feynman.get(vertices[i].0 as usize, vertices[j].0 as usize);
                    weight *= w.powi(c as i32);
                }
            }
            let mut key: Key = Vec::new();
            for (i, &(p, power)) in vertices.iter().enumerate() {
                key.extend(std::iter::repeat_n(p, power - used[i]));
            }
            key.sort_unstable();
            let g = key.len();
            let normal = multiplicity_factorial(&key) / factorial(g) / dv.powi(g as i32);
            add_into(acc, key, weight * multiplicity * normal);
            return;
        }
        let (i, j) = pairs[idx];
        let cap = (vertices[i].1 - used[i]).min(vertices[j].1 - used[j]);
        for c in 0..=cap {
            counts[idx] = c;
            used[i] += c;
            used[j] += c;
            rec(idx + 1, pairs, counts, used, vertices, feynman, dv, scale, acc);
            used[i] -= c;
            used[j] -= c;
        }
        counts[idx] = 0;
    }

    rec(0, &pairs, &mut counts, &mut used, vertices, feynman, dv, scale, acc);
}

/// `T(:phi^{p_1}(x_1): ... :phi^{p_n}(x_n):)` for vertices `(point index, power)`.
/// Contractions run only between distinct vertices and use the Feynman kernel.
pub fn time_ordered_product(vertices: &[(u32, usize)], feynman: &Kernel) -> Result<WickElement> {
    for &(p, power) in vertices {
        if power == 0 || power > MAX_POWER {
            return Err(Error::Input(format!("vertex power {power} outside 1..={MAX_POWER}")));
        }
        if p as usize >= feynman.n_points() {
            return Err(Error::Input(format!("vertex point {p} outside the lattice")));
        }
    }
    let mut acc = BTreeMap::new();
    time_ordered_into(vertices, feynman, ONE, &mut acc);
    Ok(element_from(acc))
}

/// Truncated power series in the coupling with Wick-polynomial coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FormalSeries {
    coeffs: Vec<WickElement>,
}

impl FormalSeries {
    pub fn new(coeffs: Vec<WickElement>) -> Self {
        assert!(!coeffs.is_empty(), "a series has at least an order-0 coefficient");
        Self { coeffs }
    }

    pub fn unit(order: usize) -> Self {
        let mut coeffs = vec![WickElement::zero(); order + 1];
        coeffs[0] = WickElement::unit();
        Self { coeffs }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, n: usize) -> &WickElement {
        &self.coeffs[n]
    }

    pub fn coeffs(&self) -> &[WickElement] {
        &self.coeffs
    }

    pub fn truncate(&self, order: usize) -> FormalSeries {
        FormalSeries { coeffs: self.coeffs[..=order.min(self.order())].to_vec() }
    }

    /// Coefficient-wise adjoint.
    pub fn adjoint(&self) -> FormalSeries {
        FormalSeries { coeffs: self.coeffs.iter().map(adjoint).collect() }
    }

    /// Relative deviation per order, see [`WickElement::relative_deviation`].
    pub fn deviations(&self, other: &FormalSeries) -> Vec<f64> {
        let n = self.order().min(other.order());
        (0..=n).map(|k| self.coeffs[k].relative_deviation(&other.coeffs[k])).collect()
    }

    /// Largest per-coefficient relative deviation.
    pub fn max_deviation(&self, other: &FormalSeries) -> f64 {
        self.deviations(other).into_iter().fold(0.0, f64::max)
    }

    pub fn num_entries(&self) -> usize {
        self.coeffs.iter().map(WickElement::num_entries).sum()
    }

    /// Largest coefficient magnitude over all orders.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(WickElement::max_abs).fold(0.0, f64::max)
    }
}

/// Cauchy product truncated at the lower of the two orders.
pub fn series_multiply(a: &FormalSeries, b: &FormalSeries, two_point: &Kernel) -> FormalSeries {
    let order = a.order().min(b.order());
    let coeffs = (0..=order)
        .map(|n| {
            let mut c = WickElement::zero();
            for i in 0..=n {
                let (x, y) = (&a.coeffs[i], &b.coeffs[n - i]);
                if x.is_zero() || y.is_zero() {
                    continue;
                }
                c = c.add(&star_product(x, y, two_point));
            }
            c.cleanup();
            c
        })
        .collect();
    FormalSeries { coeffs }
}

/// Inverse of a series whose order-0 coefficient is the unit:
/// `b_0 = 1`, `b_n = -sum_{k=1}^n a_k b_{n-k}`.
pub fn series_inverse(a: &FormalSeries, two_point: &Kernel) -> Result<FormalSeries> {
    if a.coeffs[0] != WickElement::unit() {
        return Err(Error::NonUnitLeading);
    }
    let mut coeffs = vec![WickElement::unit()];
    for n in 1..=a.order() {
        let mut c = WickElement::zero();
        for k in 1..=n {
            if a.coeffs[k].is_zero() || coeffs[n - k].is_zero() {
                continue;
            }
            c = c.sub(&star_product(&a.coeffs[k], &coeffs[n - k], two_point));
        }
        c.cleanup();
        coeffs.push(c);
    }
    Ok(FormalSeries { coeffs })
}

/// Number of edge-count configurations of `n` vertices of power at most `p`,
/// bounded by `(p + 1)^(n (n - 1) / 2)`.
fn pairing_bound(n: usize, p: usize) -> u64 {
    ((p + 1) as u64).saturating_pow((n * n.saturating_sub(1) / 2) as u32)
}

fn multiset_count(entries: usize, n: usize) -> u64 {
    if entries == 0 {
        return u64::from(n == 0);
    }
    let b = binomial(entries + n - 1, n);
    if b > u64::MAX as f64 {
        u64::MAX
    } else {
        b as u64
    }
}

/// Non-decreasing index sequences of length `n` over `0..len`.
fn multisets(len: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
        return out;
    }
    if len == 0 {
        return out;
    }
    let mut cur = vec![0usize; n];
    loop {
        out.push(cur.clone());
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] + 1 < len {
                cur[i] += 1;
                let v = cur[i];
                for c in &mut cur[i + 1..] {
                    *c = v;
                }
                break;
            }
        }
    }
}

/// Report of a causal factorization check.
#[derive(Debug, Clone)]
pub struct FactorizationReport {
    pub lhs: FormalSeries,
    pub rhs: FormalSeries,
    pub per_order: Vec<f64>,
    pub deviation: f64,
}

impl FactorizationReport {
    fn new(lhs: FormalSeries, rhs: FormalSeries) -> Self {
        let per_order = lhs.deviations(&rhs);
        let deviation = per_order.iter().copied().fold(0.0, f64::max);
        Self { lhs, rhs, per_order, deviation }
    }
}

/// Split `c` into the part in the causal future of `f_support` and the rest.
/// Points causally disconnected from `f_support` go to `c_minus`.
pub fn causal_split(
    st: &LatticeSpacetime,
    c: &CouplingFunction,
    f_support: &Region,
) -> Result<(CouplingFunction, CouplingFunction)> {
    let fut = causal_shadow(st, f_support, Direction::Future)?;
    let past = causal_shadow(st, f_support, Direction::Past)?;
    let mut plus = CouplingFunction::new();
    let mut minus = CouplingFunction::new();
    for (p, m, v) in c.entries() {
        match (fut.contains(p), past.contains(p)) {
            (true, true) => {
                return Err(Error::Geometry(format!(
                    "point (t={}, x={}) lies in both the causal past and future of the support",
                    p.t, p.x
                )))
            }
            (true, false) => plus.set(p, m, v),
            _ => minus.set(p, m, v),
        }
    }
    Ok((plus, minus))
}

/// S-matrix engine for one free field and vertex specification.
pub struct Engine<'a> {
    field: &'a FreeField,
    vertex: VertexSpec,
    term_limit: u64,
}

impl<'a> Engine<'a> {
    pub fn new(field: &'a FreeField, vertex: VertexSpec) -> Self {
        Self { field, vertex, term_limit: DEFAULT_TERM_LIMIT }
    }

    pub fn with_term_limit(mut self, limit: u64) -> Self {
        self.term_limit = limit;
        self
    }

    pub fn field(&self) -> &FreeField {
        self.field
    }

    pub fn vertex(&self) -> &VertexSpec {
        &self.vertex
    }

    pub fn spacetime(&self) -> &LatticeSpacetime {
        self.field.spacetime()
    }

    /// Upper bound on the number of time-ordered terms `S(g)` expands into.
    pub fn estimate_terms(&self, g: &CouplingFunction, order: usize) -> u64 {
        let p = self.vertex.max_power();
        (1..=order)
            .map(|n| multiset_count(g.len(), n).saturating_mul(pairing_bound(n, p)))
            .fold(0u64, u64::saturating_add)
    }

    /// `S(g)` to `order`.
    pub fn s_matrix(&self, g: &CouplingFunction, order: usize) -> Result<FormalSeries> {
        if order > MAX_ORDER {
            return Err(Error::Input(format!("order {order} exceeds the maximum {MAX_ORDER}")));
        }
        let st = self.spacetime();
        g.check(st, &self.vertex)?;
        let estimated = self.estimate_terms(g, order);
        if estimated > self.term_limit {
            return Err(Error::Budget { estimated, limit: self.term_limit });
        }
        let entries: Vec<(u32, usize, C64)> =
            g.entries().map(|(p, m, v)| (st.index(p) as u32, self.vertex.power(m), v)).collect();
        let dv = st.cell_volume();
        let feynman = &self.field.feynman;
        let mut coeffs = vec![WickElement::unit()];
        for n in 1..=order {
            let sets = multisets(entries.len(), n);
            let i_n = C64::new(0.0, 1.0).powi(n as i32);
            let partials: Vec<BTreeMap<usize, HashMap<Key, C64>>> = sets
                .par_chunks(VERTEX_CHUNK)
                .map(|chunk| {
                    let mut acc = BTreeMap::new();
                    let mut vertices = Vec::with_capacity(n);
                    for set in chunk {
                        vertices.clear();
                        let mut weight = i_n * dv.powi(n as i32);
                        let mut mult = 1.0;
                        let mut run = 1usize;
                        for (j, &e) in set.iter().enumerate() {
                            let (p, power, v) = entries[e];
                            vertices.push((p, power));
                            weight *= v;
                            if j > 0 && set[j - 1] == e {
                                run += 1;
                                mult *= run as f64;
                            } else {
                                run = 1;
                            }
                        }
                        time_ordered_into(&vertices, feynman, weight / mult, &mut acc);
                    }
                    acc
                })
                .collect();
            let mut total: BTreeMap<usize, HashMap<Key, C64>> = BTreeMap::new();
            for part in partials {
                for (grade, map) in part {
                    let dst = total.entry(grade).or_default();
                    for (k, v) in map {
                        *dst.entry(k).or_insert(ZERO) += v;
                    }
                }
            }
            coeffs.push(element_from(total));
        }
        Ok(FormalSeries { coeffs })
    }

    pub fn multiply(&self, a: &FormalSeries, b: &FormalSeries) -> FormalSeries {
        series_multiply(a, b, &self.field.two_point)
    }

    pub fn inverse(&self, a: &FormalSeries) -> Result<FormalSeries> {
        series_inverse(a, &self.field.two_point)
    }

    /// `S_g(f) = S(g)^{-1} S(g + f)`, graded jointly in `g` and `f`.
    pub fn relative_s(&self, g: &CouplingFunction, f: &CouplingFunction, order: usize) -> Result<FormalSeries> {
        let sg = self.s_matrix(g, order)?;
        let sgf = self.s_matrix(&g.add(f), order)?;
        Ok(self.multiply(&self.inverse(&sg)?, &sgf))
    }

    /// `S_g(f)` for a coupling `g` that need not be local: `g` is replaced by
    /// its restriction to the causal past of `k`, which must contain `supp f`.
    pub fn relative_s_past_compact(
        &self,
        g: &CouplingFunction,
        f: &CouplingFunction,
        k: &Region,
        order: usize,
    ) -> Result<FormalSeries> {
        if !f.support().is_subset(k) {
            return Err(Error::Geometry("supp f is not contained in K".into()));
        }
        let b = g.restrict(&causal_shadow(self.spacetime(), k, Direction::Past)?);
        self.relative_s(&b, f, order)
    }

    /// Both sides of `S(f + g + h) = S(f + g) S(g)^{-1} S(g + h)`. A time row
    /// must separate `supp f` (above) from `supp h` (below).
    pub fn verify_causal_factorization(
        &self,
        f: &CouplingFunction,
        g: &CouplingFunction,
        h: &CouplingFunction,
        order: usize,
    ) -> Result<FactorizationReport> {
        if let (Some(f_lo), Some(h_hi)) = (f.support().min_t(), h.support().max_t()) {
            if h_hi >= f_lo {
                return Err(Error::Geometry(format!(
                    "no time row separates supp f (from row {f_lo}) and supp h (up to row {h_hi})"
                )));
            }
        }
        let lhs = self.s_matrix(&f.add(g).add(h), order)?;
        let sfg = self.s_matrix(&f.add(g), order)?;
        let sg_inv = self.inverse(&self.s_matrix(g, order)?)?;
        let sgh = self.s_matrix(&g.add(h), order)?;
        let rhs = self.multiply(&self.multiply(&sfg, &sg_inv), &sgh);
        Ok(FactorizationReport::new(lhs, rhs))
    }

    /// `S(b)^{-1} X S(b)`.
    pub fn conjugate(&self, b: &CouplingFunction, x: &FormalSeries) -> Result<FormalSeries> {
        let sb = self.s_matrix(b, x.order())?;
        let inv = self.inverse(&sb)?;
        Ok(self.multiply(&self.multiply(&inv, x), &sb))
    }

    /// `S(b) X S(b)^{-1}`, the inverse of [`Engine::conjugate`].
    pub fn conjugate_inverse(&self, b: &CouplingFunction, x: &FormalSeries) -> Result<FormalSeries> {
        let sb = self.s_matrix(b, x.order())?;
        let inv = self.inverse(&sb)?;
        Ok(self.multiply(&self.multiply(&sb, x), &inv))
    }
}

/// Geometry of the interacting construction: a coupling `g` switched on above
/// the row `sigma1_t`, a slab `n` around a Cauchy row with an inner slab
/// `n_inner`, and a compact region `k` inside the inner slab.
#[derive(Debug, Clone)]
pub struct InteractingSetup {
    pub g: CouplingFunction,
    pub sigma1_t: usize,
    pub n: Slab,
    pub n_inner: Slab,
    pub k: Region,
}

/// Admissible choices of the compensating coupling `b'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimeChoice {
    /// `g'` restricted to the causal past of `K`.
    PastOfK,
    /// `g'` itself.
    Whole,
}

/// Every intermediate of the interacting construction for one test coupling.
#[derive(Debug, Clone)]
pub struct Endomorphism {
    pub g_prime: CouplingFunction,
    pub b_prime: CouplingFunction,
    pub l_region: Region,
    pub b: CouplingFunction,
    pub b_plus: CouplingFunction,
    pub b_minus: CouplingFunction,
    /// `S_g(-b')^{-1} S_g(-b' + f)` through relative S-matrices.
    pub lhs: FormalSeries,
    /// `S(b_-)^{-1} S(f) S(b_-)`.
    pub rhs: FormalSeries,
    /// `S(f)`.
    pub s_f: FormalSeries,
}

impl InteractingSetup {
    pub fn check(&self, st: &LatticeSpacetime) -> Result<()> {
        self.n.check_interior(st)?;
        if !self.n.contains_slab(&self.n_inner) {
            return Err(Error::Geometry(format!(
                "inner slab [{}, {}] is not inside N = [{}, {}]",
                self.n_inner.t_lo, self.n_inner.t_hi, self.n.t_lo, self.n.t_hi
            )));
        }
        if self.sigma1_t >= self.n.t_lo {
            return Err(Error::Geometry(format!(
                "the row {} must lie below N = [{}, {}]",
                self.sigma1_t, self.n.t_lo, self.n.t_hi
            )));
        }
        if !self.k.is_subset(&self.n_inner.region(st)) {
            return Err(Error::Geometry("K is not contained in the inner slab".into()));
        }
        if let Some(t) = self.g.support().min_t() {
            if t <= self.sigma1_t {
                return Err(Error::Geometry(format!(
                    "g is nonzero on row {t}, at or below the row {}",
                    self.sigma1_t
                )));
            }
        }
        Ok(())
    }

    /// `g'`: the coupling restricted to `N`.
    pub fn g_prime(&self) -> CouplingFunction {
        self.g.restrict_rows(self.n.t_lo, self.n.t_hi)
    }

    /// `g_- `: the part of `g - g'` below the inner slab.
    pub fn g_minus(&self) -> CouplingFunction {
        match self.n_inner.t_lo.checked_sub(1) {
            Some(hi) => self.g.sub(&self.g_prime()).restrict_rows(0, hi),
            None => CouplingFunction::new(),
        }
    }
}

/// The map `S(f) -> S_{g,g'}(f)` and its conjugation form.
pub fn interacting_endomorphism(
    engine: &Engine,
    setup: &InteractingSetup,
    f: &CouplingFunction,
    choice: PrimeChoice,
    order: usize,
) -> Result<Endomorphism> {
    let st = engine.spacetime();
    setup.check(st)?;
    if !f.support().is_subset(&setup.k) {
        return Err(Error::Geometry("supp f is not contained in K".into()));
    }
    let g_prime = setup.g_prime();
    let past_k = causal_shadow(st, &setup.k, Direction::Past)?;
    let b_prime = match choice {
        PrimeChoice::PastOfK => g_prime.restrict(&past_k),
        PrimeChoice::Whole => g_prime.clone(),
    };
    let l_region = setup.k.union(&b_prime.support()).dilate(st);
    let b = setup.g.restrict(&causal_shadow(st, &l_region, Direction::Past)?);

    // S_g(x) = S_b(x) for x supported in L.
    let s_neg = engine.relative_s(&b, &b_prime.neg(), order)?;
    let s_neg_f = engine.relative_s(&b, &b_prime.neg().add(f), order)?;
    let lhs = engine.multiply(&engine.inverse(&s_neg)?, &s_neg_f);

    let (b_plus, b_minus) = causal_split(st, &b.sub(&b_prime), &f.support())?;
    let s_f = engine.s_matrix(f, order)?;
    let rhs = engine.conjugate(&b_minus, &s_f)?;
    Ok(Endomorphism { g_prime, b_prime, l_region, b, b_plus, b_minus, lhs, rhs, s_f })
}

/// Outcome of [`verify_inverse_endomorphism`].
#[derive(Debug, Clone)]
pub struct InverseReport {
    /// `S(b_- + h) S(b_-)^{-1}` for the first candidate.
    pub first: FormalSeries,
    /// The same for the second candidate.
    pub second: FormalSeries,
    pub deviation: f64,
    /// Deviation of `S(b_- + h) S(b_-)^{-1}` from `S(b_-) S(h) S(b_-)^{-1}`
    /// for the first candidate.
    pub conjugation_deviation: f64,
}

/// `alpha_{b_-}^{-1}(S(h)) = S(b_- + h) S(b_-)^{-1}` for two candidates. The
/// row `sigma1_t` must separate `supp h` (at or below) from both candidates
/// (above), and the candidates may differ only outside the causal future of
/// `supp h`.
pub fn verify_inverse_endomorphism(
    engine: &Engine,
    h: &CouplingFunction,
    b_minus: &CouplingFunction,
    b_minus_tilde: &CouplingFunction,
    sigma1_t: usize,
    order: usize,
) -> Result<InverseReport> {
    let st = engine.spacetime();
    if let Some(t) = h.support().max_t() {
        if t > sigma1_t {
            return Err(Error::Geometry(format!("supp h reaches row {t}, above the row {sigma1_t}")));
        }
    }
    for (name, c) in [("b_-", b_minus), ("the alternative b_-", b_minus_tilde)] {
        if let Some(t) = c.support().min_t() {
            if t <= sigma1_t {
                return Err(Error::Geometry(format!("{name} reaches row {t}, at or below the row {sigma1_t}")));
            }
        }
    }
    let future_h = causal_shadow(st, &h.support(), Direction::Future)?;
    if !b_minus_tilde.sub(b_minus).support().is_disjoint(&future_h) {
        return Err(Error::Geometry("the candidates differ inside the causal future of supp h".into()));
    }
    let apply = |b: &CouplingFunction| -> Result<FormalSeries> {
        let sbh = engine.s_matrix(&b.add(h), order)?;
        let inv = engine.inverse(&engine.s_matrix(b, order)?)?;
        Ok(engine.multiply(&sbh, &inv))
    };
    let first = apply(b_minus)?;
    let second = apply(b_minus_tilde)?;
    let deviation = first.max_deviation(&second);
    let conj = engine.conjugate_inverse(b_minus, &engine.s_matrix(h, order)?)?;
    let conjugation_deviation = first.max_deviation(&conj);
    Ok(InverseReport { first, second, deviation, conjugation_deviation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_solver::KleinGordonOperator;
    use crate::lattice::Topology;

    fn field() -> FreeField {
        let st = LatticeSpacetime::new(12, 4, 0.5, 1.0, Topology::Periodic).unwrap();
        FreeField::new(KleinGordonOperator::with_constant_potential(st, 0.5, 0.0).unwrap()).unwrap()
    }

    /// Brute force over explicit slot matchings between distinct vertices.
    fn brute_t(vertices: &[(u32, usize)], feynman: &Kernel) -> WickElement {
        let slots: Vec<usize> = vertices.iter().enumerate().flat_map(|(i, v)| std::iter::repeat_n(i, v.1)).collect();
        let dv = feynman.cell_volume();
        let mut out = WickElement::zero();
        fn rec(
            i: usize,
            slots: &[usize],
            partner: &mut Vec<Option<usize>>,
            vertices: &[(u32, usize)],
            feynman: &Kernel,
            dv: f64,
            out: &mut WickElement,
        ) {
            if i == slots.len() {
                let mut w = ONE;
                let mut key = Vec::new();
                for (s, p) in partner.iter().enumerate() {
                    match p {
                        Some(q) if *q > s => {
                            w *= feynman.get(vertices[slots[s]].0 as usize, vertices[slots[*q]].0 as usize)
                        }
                        Some(_) => {}
                        None => key.push(vertices[slots[s]].0),
                    }
                }
                key.sort_unstable();
                let n = key.len();
                let c = multiplicity_factorial(&key) / factorial(n) / dv.powi(n as i32);
                out.add_entry(&key, w * c);
                return;
            }
            if partner[i].is_some() {
                rec(i + 1, slots, partner, vertices, feynman, dv, out);
                return;
            }
            rec(i + 1, slots, partner, vertices, feynman, dv, out);
            for j in i + 1..slots.len() {
                if partner[j].is_none() && slots[j] != slots[i] {
                    partner[i] = Some(j);
                    partner[j] = Some(i);
                    rec(i + 1, slots, partner, vertices, feynman, dv, out);
                    partner[i] = None;
                    partner[j] = None;
                }
            }
        }
        rec(0, &slots, &mut vec![None; slots.len()], vertices, feynman, dv, &mut out);
        out.cleanup();
        out
    }

    #[test]
    fn t_product_matches_brute_force() {
        let ff = field();
        let cases: Vec<Vec<(u32, usize)>> = vec![
            vec![(9, 3)],
            vec![(9, 1), (14, 1)],
            vec![(9, 2), (14, 2)],
            vec![(9, 3), (14, 2), (22, 1)],
            vec![(9, 3), (9, 3)],
            vec![(10, 2), (10, 1), (30, 3)],
        ];
        for v in cases {
            let t = time_ordered_product(&v, &ff.feynman).unwrap();
            let b = brute_t(&v, &ff.feynman);
            assert!(t.relative_deviation(&b) < 1e-13, "{v:?}");
        }
    }

    #[test]
    fn two_by_two_multiplicities() {
        let ff = field();
        let (x, y) = (9u32, 14u32);
        let t = time_ordered_product(&[(x, 2), (y, 2)], &ff.feynman).unwrap();
        let dv = ff.feynman.cell_volume();
        let w = ff.feynman.get(x as usize, y as usize);
        // Grade 4 key {x,x,y,y}: 1 * 2!2!/4! / dV^4.
        assert!((t.grade(4).unwrap().get(&[x, x, y, y]) * dv.powi(4) - C64::new(4.0 / 24.0, 0.0)).norm() < 1e-14);
        // Grade 2 key {x,y}: 4 w * 1/2 / dV^2.
        assert!((t.grade(2).unwrap().get(&[x, y]) * dv * dv - w * 2.0).norm() < 1e-14);
        assert!((t.scalar_part() - w * w * 2.0).norm() < 1e-14);
    }

    #[test]
    fn s_matrix_low_orders() {
        let ff = field();
        let st = ff.spacetime().clone();
        let vs = VertexSpec::source_and_power(3).unwrap();
        let engine = Engine::new(&ff, vs);
        let s0 = engine.s_matrix(&CouplingFunction::new(), 3).unwrap();
        assert_eq!(s0, FormalSeries::unit(3));
        let mut f = CouplingFunction::new();
        f.set(Point::new(3, 1), 0, C64::new(0.7, 0.0));
        f.set(Point::new(5, 2), 0, C64::new(-0.2, 0.1));
        let s = engine.s_matrix(&f, 1).unwrap();
        let mut field_f = vec![ZERO; st.num_points()];
        for (p, _, v) in f.entries() {
            field_f[st.index(p)] = v;
        }
        let expected = crate::wick_algebra::generator(&st, &field_f).unwrap().scale(C64::new(0.0, 1.0));
        assert!(s.coeff(1).relative_deviation(&expected) < 1e-14);
    }

    #[test]
    fn hermitian_interaction_is_unitary() {
        let ff = field();
        let engine = Engine::new(&ff, VertexSpec::source_and_power(3).unwrap());
        let mut g = CouplingFunction::new();
        g.set(Point::new(3, 0), 1, C64::new(0.4, 0.0));
        g.set(Point::new(4, 1), 1, C64::new(-0.3, 0.0));
        g.set(Point::new(4, 1), 0, C64::new(0.5, 0.0));
        g.set(Point::new(6, 3), 1, C64::new(0.2, 0.0));
        let s = engine.s_matrix(&g, 3).unwrap();
        let prod = engine.multiply(&s.adjoint(), &s);
        let scale = s.coeffs().iter().map(WickElement::max_abs).fold(0.0, f64::max);
        for n in 1..=3 {
            assert!(prod.coeff(n).max_abs() < 1e-11 * scale * scale, "order {n}: {}", prod.coeff(n).max_abs());
        }
    }

    #[test]
    fn inverse_of_unit_and_products() {
        let ff = field();
        let engine = Engine::new(&ff, VertexSpec::source_and_power(2).unwrap());
        assert_eq!(engine.inverse(&FormalSeries::unit(3)).unwrap(), FormalSeries::unit(3));
        let mut g = CouplingFunction::new();
        g.set(Point::new(3, 0), 1, C64::new(0.4, 0.1));
        g.set(Point::new(7, 2), 0, C64::new(-0.3, 0.0));
        let s = engine.s_matrix(&g, 3).unwrap();
        let inv = engine.inverse(&s).unwrap();
        let one = engine.multiply(&s, &inv);
        let scale = s.max_abs() * inv.max_abs();
        assert_eq!(one.coeff(0), &WickElement::unit());
        for n in 1..=3 {
            assert!(one.coeff(n).max_abs() < 1e-13 * scale, "order {n}");
        }
        let bad = FormalSeries::new(vec![WickElement::scalar(C64::new(2.0, 0.0))]);
        assert!(matches!(engine.inverse(&bad), Err(Error::NonUnitLeading)));
    }

    #[test]
    fn budget_is_enforced() {
        let ff = field();
        let engine = Engine::new(&ff, VertexSpec::source_and_power(3).unwrap()).with_term_limit(10);
        let mut g = CouplingFunction::new();
        for x in 0..4 {
            g.set(Point::new(4, x), 1, ONE);
        }
        assert!(matches!(engine.s_matrix(&g, 2), Err(Error::Budget { .. })));
    }

    #[test]
    fn split_puts_spacelike_points_in_minus() {
        let st = LatticeSpacetime::new(12, 9, 0.5, 1.0, Topology::Reflecting).unwrap();
        let f = Region::from_points([Point::new(5, 4)]);
        let mut c = CouplingFunction::new();
        c.set(Point::new(8, 4), 0, ONE);
        c.set(Point::new(6, 0), 0, ONE);
        c.set(Point::new(2, 4), 0, ONE);
        let (plus, minus) = causal_split(&st, &c, &f).unwrap();
        assert_eq!(plus.len(), 1);
        assert_eq!(minus.len(), 2);
        assert_eq!(plus.get(Point::new(8, 4), 0), ONE);
        c.set(Point::new(5, 4), 0, ONE);
        assert!(matches!(causal_split(&st, &c, &f), Err(Error::Geometry(_))));
    }

    #[test]
    fn factorization_with_separated_supports() {
        let ff = field();
        let engine = Engine::new(&ff, VertexSpec::source_and_power(3).unwrap());
        let mut f = CouplingFunction::new();
        f.set(Point::new(8, 1), 1, C64::new(0.3, 0.0));
        f.set(Point::new(7, 3), 0, C64::new(0.1, 0.2));
        let mut g = CouplingFunction::new();
        g.set(Point::new(6, 2), 1, C64::new(-0.2, 0.0));
        g.set(Point::new(4, 0), 1, C64::new(0.25, 0.0));
        let mut h = CouplingFunction::new();
        h.set(Point::new(3, 2), 1, C64::new(0.15, 0.0));
        let r = engine.verify_causal_factorization(&f, &g, &h, 3).unwrap();
        assert!(r.deviation < 1e-11, "{:?}", r.per_order);
        assert!(engine.verify_causal_factorization(&h, &g, &f, 2).is_err());
    }
}
