//! Wick polynomials of the free field as graded symmetric tensors.
//!
//! A [`WickElement`] with grade tensors `f_n` stands for
//! `sum_n sum_{x_1..x_n} dV^n f_n(x_1, ..., x_n) :phi(x_1) ... phi(x_n):`,
//! so the grade-1 tensor of `phi(f)` is the test function `f` itself.
//! The star product contracts slots pairwise through the two-point kernel.

mod tensor;

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field_solver::{stencil_column, Kernel, KleinGordonOperator};
use crate::lattice::LatticeSpacetime;

pub use tensor::{
    binomial, distinct_orderings, factorial, multiplicity_factorial, permanent, runs, sub_multisets, Key,
    OrderedTensor, SymTensor, CLEANUP_THRESHOLD, DENSE_ENTRY_LIMIT, ONE, ZERO,
};

/// Keys of the left factor handled per parallel task. Fixed so that the
/// accumulation order does not depend on the thread count.
const STAR_CHUNK: usize = 64;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WickElement {
    grades: BTreeMap<usize, SymTensor>,
}

impl WickElement {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn unit() -> Self {
        Self::scalar(ONE)
    }

    pub fn scalar(c: C64) -> Self {
        let mut t = SymTensor::new(0);
        t.add(&[], c);
        Self::from_tensor(t)
    }

    pub fn from_tensor(t: SymTensor) -> Self {
        let mut out = Self::zero();
        out.add_tensor(t);
        out
    }

    pub fn grade(&self, n: usize) -> Option<&SymTensor> {
        self.grades.get(&n)
    }

    pub fn grades(&self) -> impl Iterator<Item = (usize, &SymTensor)> {
        self.grades.iter().map(|(n, t)| (*n, t))
    }

    pub fn max_grade(&self) -> usize {
        self.grades.keys().next_back().copied().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.grades.values().all(SymTensor::is_empty)
    }

    /// Number of stored coefficients over all grades.
    pub fn num_entries(&self) -> usize {
        self.grades.values().map(SymTensor::len).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.grades.values().map(SymTensor::max_abs).fold(0.0, f64::max)
    }

    /// Grade-0 coefficient.
    pub fn scalar_part(&self) -> C64 {
        self.grade(0).map(|t| t.get(&[])).unwrap_or(ZERO)
    }

    pub fn add_tensor(&mut self, t: SymTensor) {
        let n = t.grade();
        let slot = self.grades.entry(n).or_insert_with(|| SymTensor::new(n));
        for (k, v) in t.iter() {
            slot.add_sorted(k.clone(), *v);
        }
        if slot.is_empty() {
            self.grades.remove(&n);
        }
    }

    /// Add `value` at the point multiset `points`.
    pub fn add_entry(&mut self, points: &[u32], value: C64) {
        let n = points.len();
        self.grades.entry(n).or_insert_with(|| SymTensor::new(n)).add(points, value);
    }

    pub fn add(&self, other: &WickElement) -> WickElement {
        let mut out = self.clone();
        for t in other.grades.values() {
            out.add_tensor(t.clone());
        }
        out
    }

    pub fn sub(&self, other: &WickElement) -> WickElement {
        self.add(&other.scale(-ONE))
    }

    pub fn scale(&self, c: C64) -> WickElement {
        WickElement { grades: self.grades.iter().map(|(n, t)| (*n, t.map_values(|v| v * c))).collect() }
    }

    /// Apply the coefficient cleanup to every grade and drop empty grades.
    pub fn cleanup(&mut self) {
        for t in self.grades.values_mut() {
            t.cleanup();
        }
        self.grades.retain(|_, t| !t.is_empty());
    }

    /// Every point index used by a stored key.
    pub fn support(&self) -> Vec<u32> {
        let mut pts: Vec<u32> = self.grades.values().flat_map(|t| t.points().collect::<Vec<_>>()).collect();
        pts.sort_unstable();
        pts.dedup();
        pts
    }

    /// Largest coefficient difference over all grades and keys.
    pub fn max_abs_diff(&self, other: &WickElement) -> f64 {
        let mut worst: f64 = 0.0;
        for (n, t) in &self.grades {
            for (k, v) in t.iter() {
                let o = other.grade(*n).map(|u| u.get(k)).unwrap_or(ZERO);
                worst = worst.max((v - o).norm());
            }
        }
        for (n, t) in &other.grades {
            for (k, v) in t.iter() {
                if self.grade(*n).is_none_or(|u| u.get(k) == ZERO) {
                    worst = worst.max(v.norm());
                }
            }
        }
        worst
    }

    /// `max|a - b| / max(max|a|, max|b|)`, zero when both vanish.
    pub fn relative_deviation(&self, other: &WickElement) -> f64 {
        let scale = self.max_abs().max(other.max_abs());
        if scale == 0.0 {
            0.0
        } else {
            self.max_abs_diff(other) / scale
        }
    }
}

/// Grade-1 element `phi(f)` for a field array over the whole lattice.
pub fn generator(st: &LatticeSpacetime, f: &[C64]) -> Result<WickElement> {
    if f.len() != st.num_points() {
        return Err(Error::DimensionMismatch { expected: st.num_points(), got: f.len() });
    }
    let mut t = SymTensor::new(1);
    for (i, v) in f.iter().enumerate() {
        if *v == ZERO {
            continue;
        }
        let p = st.point(i);
        if !st.is_interior(p) {
            return Err(Error::BoundarySupport(format!("test function is nonzero at (t={}, x={})", p.t, p.x)));
        }
        t.add(&[i as u32], *v);
    }
    Ok(WickElement::from_tensor(t))
}

/// Complex conjugation of every coefficient, the involution `phi(f)* = phi(conj f)`.
pub fn adjoint(a: &WickElement) -> WickElement {
    WickElement { grades: a.grades.iter().map(|(n, t)| (*n, t.map_values(|v| v.conj()))).collect() }
}

/// Pre-split view of a key: for each contraction size, every choice of the
/// contracted sub-multiset.
struct Split {
    /// Contracted points, sorted.
    contracted: Vec<u32>,
    /// Remaining points as runs.
    rest: Vec<(u32, usize)>,
    /// Product of multiplicity factorials of the contracted part.
    contracted_fact: f64,
}

fn splits(key: &[u32], k: usize) -> Vec<Split> {
    let r = runs(key);
    sub_multisets(&r, k)
        .into_iter()
        .map(|counts| {
            let mut contracted = Vec::with_capacity(k);
            let mut rest = Vec::new();
            let mut contracted_fact = 1.0;
            for (&(p, m), &c) in r.iter().zip(&counts) {
                contracted.extend(std::iter::repeat_n(p, c));
                contracted_fact *= factorial(c);
                if m > c {
                    rest.push((p, m - c));
                }
            }
            Split { contracted, rest, contracted_fact }
        })
        .collect()
}

/// Merge two run lists into a sorted key and the factor
/// `prod_p binom(m_C(p), m_X(p))`.
fn merge_runs(x: &[(u32, usize)], y: &[(u32, usize)]) -> (Key, f64) {
    let mut key = Vec::new();
    let mut factor = 1.0;
    let (mut i, mut j) = (0, 0);
    while i < x.len() || j < y.len() {
        let take_x = j == y.len() || (i < x.len() && x[i].0 < y[j].0);
        let take_y = i == x.len() || (j < y.len() && y[j].0 < x[i].0);
        if take_x {
            key.extend(std::iter::repeat_n(x[i].0, x[i].1));
            i += 1;
        } else if take_y {
            key.extend(std::iter::repeat_n(y[j].0, y[j].1));
            j += 1;
        } else {
            let (p, a, b) = (x[i].0, x[i].1, y[j].1);
            key.extend(std::iter::repeat_n(p, a + b));
            factor *= binomial(a + b, a);
            i += 1;
            j += 1;
        }
    }
    (key, factor)
}

/// Contracted product of two single-grade tensors; every `k` from `0` up to
/// `max_k` is included. Returns per-output-grade accumulators.
fn contract_grades<W>(a: &SymTensor, b: &SymTensor, k_range: std::ops::RangeInclusive<usize>, w: &W) -> BTreeMap<usize, HashMap<Key, C64>>
where
    W: Fn(u32, u32) -> C64 + Sync,
{
    let (m, l) = (a.grade(), b.grade());
    let ks: Vec<usize> = k_range.filter(|&k| k <= m.min(l)).collect();
    // Splits of b depend only on b; compute once.
    let b_splits: Vec<(C64, Vec<Vec<Split>>)> =
        b.iter().map(|(key, v)| (*v, ks.iter().map(|&k| splits(key, k)).collect())).collect();
    let a_keys: Vec<(&Key, &C64)> = a.iter().collect();
    let partials: Vec<BTreeMap<usize, HashMap<Key, C64>>> = a_keys
        .par_chunks(STAR_CHUNK)
        .map(|chunk| {
            let mut acc: BTreeMap<usize, HashMap<Key, C64>> = BTreeMap::new();
            for (a_key, va) in chunk {
                for (ki, &k) in ks.iter().enumerate() {
                    let n = m + l - 2 * k;
                    let prefactor = factorial(m) * factorial(l) / factorial(n);
                    let out = acc.entry(n).or_default();
                    for sa in splits(a_key, k) {
                        for (vb, b_split) in &b_splits {
                            for sb in &b_split[ki] {
                                let perm = permanent(&sa.contracted, &sb.contracted, w);
                                if perm == ZERO {
                                    continue;
                                }
                                let (key, binom) = merge_runs(&sa.rest, &sb.rest);
                                let c = prefactor * binom / (sa.contracted_fact * sb.contracted_fact);
                                *out.entry(key).or_insert(ZERO) += perm * **va * vb * c;
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total: BTreeMap<usize, HashMap<Key, C64>> = BTreeMap::new();
    for part in partials {
        for (n, map) in part {
            let dst = total.entry(n).or_default();
            for (k, v) in map {
                *dst.entry(k).or_insert(ZERO) += v;
            }
        }
    }
    total
}

fn contraction_weight(two_point: &Kernel) -> impl Fn(u32, u32) -> C64 + Sync + '_ {
    let dv2 = two_point.cell_volume() * two_point.cell_volume();
    move |y, z| two_point.get(y as usize, z as usize) * dv2
}

/// Star product `a * b`: sum over contractions of slots of `a` against slots
/// of `b` through the two-point kernel, symmetrized.
pub fn star_product(a: &WickElement, b: &WickElement, two_point: &Kernel) -> WickElement {
    let w = contraction_weight(two_point);
    let mut acc: BTreeMap<usize, HashMap<Key, C64>> = BTreeMap::new();
    for ta in a.grades.values() {
        for tb in b.grades.values() {
            let kmax = ta.grade().min(tb.grade());
            for (n, map) in contract_grades(ta, tb, 0..=kmax, &w) {
                let dst = acc.entry(n).or_default();
                for (k, v) in map {
                    *dst.entry(k).or_insert(ZERO) += v;
                }
            }
        }
    }
    let mut out = WickElement::zero();
    for (n, map) in acc {
        out.grades.insert(n, SymTensor::from_map(n, map));
    }
    out.cleanup();
    out
}

/// Vacuum expectation value: the grade-0 coefficient.
pub fn state_expectation(a: &WickElement) -> C64 {
    a.scalar_part()
}

/// `state_expectation(a * b)` without forming the higher grades.
pub fn expectation_of_product(a: &WickElement, b: &WickElement, two_point: &Kernel) -> C64 {
    let w = contraction_weight(two_point);
    let mut total = ZERO;
    for (m, ta) in &a.grades {
        if let Some(tb) = b.grade(*m) {
            let r = contract_grades(ta, tb, *m..=*m, &w);
            total += r.get(&0).and_then(|map| map.get(&Vec::new())).copied().unwrap_or(ZERO);
        }
    }
    total
}

/// Apply `K` to slot `slot` of every grade that has it, then symmetrize.
/// The result lies in the on-shell ideal. Grades with `n <= slot` have no such
/// slot and are dropped.
pub fn apply_k_slot(a: &WickElement, slot: usize, op: &KleinGordonOperator) -> WickElement {
    let column = |y: u32| -> Vec<(u32, C64)> {
        stencil_column(op, y as usize).into_iter().map(|(x, v)| (x as u32, C64::new(v, 0.0))).collect()
    };
    let mut out = WickElement::zero();
    for (n, t) in &a.grades {
        if *n <= slot {
            continue;
        }
        out.add_tensor(t.to_ordered().map_slot(slot, column).symmetrize());
    }
    out.cleanup();
    out
}

/// Coordinates of a solution by its values on the Cauchy rows `t = 2` and
/// `t = 3`; coordinate `c` is the point `2 n_x + c`.
pub fn cauchy_point(st: &LatticeSpacetime, coordinate: usize) -> usize {
    2 * st.n_x() + coordinate
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OnShellSymbol {
    grades: BTreeMap<usize, SymTensor>,
}

impl OnShellSymbol {
    pub fn grade(&self, n: usize) -> Option<&SymTensor> {
        self.grades.get(&n)
    }

    pub fn grades(&self) -> impl Iterator<Item = (usize, &SymTensor)> {
        self.grades.iter().map(|(n, t)| (*n, t))
    }

    pub fn max_abs(&self) -> f64 {
        self.grades.values().map(SymTensor::max_abs).fold(0.0, f64::max)
    }

    fn grade_diff(a: Option<&SymTensor>, b: Option<&SymTensor>) -> f64 {
        let mut worst: f64 = 0.0;
        if let Some(a) = a {
            for (k, v) in a.iter() {
                worst = worst.max((v - b.map(|t| t.get(k)).unwrap_or(ZERO)).norm());
            }
        }
        if let Some(b) = b {
            for (k, v) in b.iter() {
                if a.is_none_or(|t| t.get(k) == ZERO) {
                    worst = worst.max(v.norm());
                }
            }
        }
        worst
    }

    /// Per-grade relative deviation `max|a - b| / max(max|a|, max|b|)`, maximized
    /// over grades.
    pub fn relative_deviation(&self, other: &OnShellSymbol) -> f64 {
        let mut grades: Vec<usize> = self.grades.keys().chain(other.grades.keys()).copied().collect();
        grades.sort_unstable();
        grades.dedup();
        grades
            .into_iter()
            .map(|n| {
                let (a, b) = (self.grade(n), other.grade(n));
                let scale = a.map_or(0.0, SymTensor::max_abs).max(b.map_or(0.0, SymTensor::max_abs));
                let d = Self::grade_diff(a, b);
                if scale == 0.0 {
                    0.0
                } else {
                    d / scale
                }
            })
            .fold(0.0, f64::max)
    }

    /// Largest absolute coefficient difference over all grades.
    pub fn max_abs_diff(&self, other: &OnShellSymbol) -> f64 {
        let mut grades: Vec<usize> = self.grades.keys().chain(other.grades.keys()).copied().collect();
        grades.dedup();
        grades.into_iter().map(|n| Self::grade_diff(self.grade(n), other.grade(n))).fold(0.0, f64::max)
    }
}

/// Image of `a` in the quotient by the on-shell ideal: every slot is mapped to
/// the Cauchy data of the solution `Delta f`.
pub fn onshell_normal_form(a: &WickElement, commutator: &Kernel, st: &LatticeSpacetime) -> Result<OnShellSymbol> {
    if commutator.n_points() != st.num_points() {
        return Err(Error::DimensionMismatch { expected: st.num_points(), got: commutator.n_points() });
    }
    let dv = commutator.cell_volume();
    let dim = 2 * st.n_x();
    let mut out = OnShellSymbol::default();
    for (n, t) in &a.grades {
        let local: Vec<u32> = {
            let mut p: Vec<u32> = t.points().collect();
            p.sort_unstable();
            p.dedup();
            p
        };
        let matrix: Vec<Vec<C64>> = (0..dim)
            .map(|c| {
                let row = commutator.row(cauchy_point(st, c));
                local.iter().map(|&y| row[y as usize] * dv).collect()
            })
            .collect();
        let mut img = t.map_slots(&local, &matrix, dim)?;
        img.cleanup();
        if !img.is_empty() {
            out.grades.insert(*n, img);
        }
    }
    Ok(out)
}
