//! Sparse symmetric tensors keyed by point multisets, plus the ordered form
//! needed for single-slot operators.
//!
//! A symmetric tensor `f(x_1, ..., x_n)` is stored once per multiset of
//! points: the key is the sorted index list and the value is the entry at any
//! ordering of it.

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type Key = Vec<u32>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Entries below this fraction of the largest entry in a grade are dropped.
pub const CLEANUP_THRESHOLD: f64 = 1e-14;

/// Largest dense intermediate that the per-slot mapping will allocate.
pub const DENSE_ENTRY_LIMIT: u64 = 60_000_000;

const FACTORIALS: [f64; 21] = {
    let mut f = [1.0; 21];
    let mut i = 1;
    while i < 21 {
        f[i] = f[i - 1] * i as f64;
        i += 1;
    }
    f
};

pub fn factorial(n: usize) -> f64 {
    if n < FACTORIALS.len() {
        FACTORIALS[n]
    } else {
        (1..=n).map(|i| i as f64).product()
    }
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        0.0
    } else {
        factorial(n) / (factorial(k) * factorial(n - k))
    }
}

/// `(point, multiplicity)` runs of a sorted key.
pub fn runs(key: &[u32]) -> Vec<(u32, usize)> {
    let mut out: Vec<(u32, usize)> = Vec::new();
    for &p in key {
        match out.last_mut() {
            Some((q, m)) if *q == p => *m += 1,
            _ => out.push((p, 1)),
        }
    }
    out
}

/// Product of the factorials of the multiplicities.
pub fn multiplicity_factorial(key: &[u32]) -> f64 {
    runs(key).iter().map(|&(_, m)| factorial(m)).product()
}

/// Every way of taking `k` elements from a multiset given as runs; each
/// choice is the per-run count.
pub fn sub_multisets(runs: &[(u32, usize)], k: usize) -> Vec<Vec<usize>> {
    fn rec(runs: &[(u32, usize)], i: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == runs.len() {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        let remaining: usize = runs[i..].iter().map(|r| r.1).sum();
        if remaining < left {
            return;
        }
        for c in 0..=runs[i].1.min(left) {
            cur.push(c);
            rec(runs, i + 1, left - c, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(runs, 0, k, &mut Vec::with_capacity(runs.len()), &mut out);
    out
}

/// Every distinct ordering of a multiset, starting from the sorted one.
pub fn distinct_orderings(key: &[u32]) -> Vec<Key> {
    let mut cur = key.to_vec();
    cur.sort_unstable();
    let mut out = vec![cur.clone()];
    while next_permutation(&mut cur) {
        out.push(cur.clone());
    }
    out
}

fn next_permutation(v: &mut [u32]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Permanent of the `k x k` matrix `w(rows[i], cols[j])`.
pub fn permanent<F: Fn(u32, u32) -> C64>(rows: &[u32], cols: &[u32], w: F) -> C64 {
    let k = rows.len();
    debug_assert_eq!(k, cols.len());
    match k {
        0 => ONE,
        1 => w(rows[0], cols[0]),
        2 => w(rows[0], cols[0]) * w(rows[1], cols[1]) + w(rows[0], cols[1]) * w(rows[1], cols[0]),
        3 => {
            let m: Vec<C64> = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).map(|(r, c)| w(r, c)).collect();
            m[0] * (m[4] * m[8] + m[5] * m[7])
                + m[1] * (m[3] * m[8] + m[5] * m[6])
                + m[2] * (m[3] * m[7] + m[4] * m[6])
        }
        _ => {
            // Ryser's formula with Gray-code updates of the row sums.
            let m: Vec<C64> = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).map(|(r, c)| w(r, c)).collect();
            let mut row_sums = vec![ZERO; k];
            let mut total = ZERO;
            let mut gray: u64 = 0;
            for step in 1u64..(1u64 << k) {
                let next = step ^ (step >> 1);
                let changed = (gray ^ next).trailing_zeros() as usize;
                let added = next & (1 << changed) != 0;
                for (i, s) in row_sums.iter_mut().enumerate() {
                    if added {
                        *s += m[i * k + changed];
                    } else {
                        *s -= m[i * k + changed];
                    }
                }
                gray = next;
                let prod: C64 = row_sums.iter().product();
                if (k - next.count_ones() as usize).is_multiple_of(2) {
                    total += prod;
                } else {
                    total -= prod;
                }
            }
            total
        }
    }
}

/// Sparse symmetric tensor of a fixed grade.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymTensor {
    grade: usize,
    entries: BTreeMap<Key, C64>,
}

impl SymTensor {
    pub fn new(grade: usize) -> Self {
        Self { grade, entries: BTreeMap::new() }
    }

    pub fn grade(&self) -> usize {
        self.grade
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &[u32]) -> C64 {
        self.entries.get(key).copied().unwrap_or(ZERO)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &C64)> {
        self.entries.iter()
    }

    /// Add `value` at the multiset `points` (any order).
    pub fn add(&mut self, points: &[u32], value: C64) {
        assert_eq!(points.len(), self.grade, "key length must match the grade");
        let mut key = points.to_vec();
        key.sort_unstable();
        *self.entries.entry(key).or_insert(ZERO) += value;
    }

    pub(crate) fn add_sorted(&mut self, key: Key, value: C64) {
        debug_assert!(key.windows(2).all(|w| w[0] <= w[1]));
        *self.entries.entry(key).or_insert(ZERO) += value;
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn map_values<F: Fn(C64) -> C64>(&self, f: F) -> SymTensor {
        SymTensor { grade: self.grade, entries: self.entries.iter().map(|(k, v)| (k.clone(), f(*v))).collect() }
    }

    /// Drop exact zeros and entries below [`CLEANUP_THRESHOLD`] times the
    /// largest entry.
    pub fn cleanup(&mut self) {
        let cut = CLEANUP_THRESHOLD * self.max_abs();
        self.entries.retain(|_, v| v.norm() > cut && v.norm() > 0.0);
    }

    pub fn points(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().flatten().copied()
    }

    pub(crate) fn from_map(grade: usize, map: HashMap<Key, C64>) -> SymTensor {
        SymTensor { grade, entries: map.into_iter().collect() }
    }

    /// Full contraction `sum over orderings` with another tensor of the same
    /// grade is `sum_K (n! / prod m!) a_K b_K`.
    pub fn full_inner(&self, other: &SymTensor) -> C64 {
        let n = factorial(self.grade);
        self.entries
            .iter()
            .filter_map(|(k, a)| other.entries.get(k).map(|b| a * b * (n / multiplicity_factorial(k))))
            .sum()
    }

    /// Apply the same linear map to every slot.
    ///
    /// `local` lists the input points (sorted, covering the support), and
    /// `matrix[o][j]` is the image of `local[j]` at output coordinate `o`.
    /// Returns the symmetric output tensor over output coordinates, with keys
    /// in output-coordinate indices.
    pub fn map_slots(&self, local: &[u32], matrix: &[Vec<C64>], out_dim: usize) -> Result<SymTensor> {
        let n = self.grade;
        let s = local.len();
        let mut out = SymTensor::new(n);
        if n == 0 {
            if let Some(v) = self.entries.get(&Vec::new()) {
                out.entries.insert(Vec::new(), *v);
            }
            return Ok(out);
        }
        let biggest = (s.max(out_dim) as u64).saturating_pow(n as u32);
        if biggest > DENSE_ENTRY_LIMIT {
            return Err(Error::Budget { estimated: biggest, limit: DENSE_ENTRY_LIMIT });
        }
        let position: HashMap<u32, usize> = local.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        // Dense input over local^n.
        let mut dense = vec![ZERO; s.pow(n as u32)];
        for (key, v) in &self.entries {
            for ord in distinct_orderings(key) {
                let mut idx = 0usize;
                for p in &ord {
                    let j = *position.get(p).ok_or_else(|| {
                        Error::Input(format!("point {p} is missing from the local index"))
                    })?;
                    idx = idx * s + j;
                }
                dense[idx] += *v;
            }
        }
        // Mode products, one slot at a time.
        let mut pre = 1usize;
        for axis in 0..n {
            let post = s.pow((n - axis - 1) as u32);
            let mut next = vec![ZERO; pre * out_dim * post];
            for a in 0..pre {
                for j in 0..s {
                    let src = &dense[(a * s + j) * post..(a * s + j + 1) * post];
                    if src.iter().all(|v| *v == ZERO) {
                        continue;
                    }
                    for (o, row) in matrix.iter().enumerate() {
                        let m = row[j];
                        if m == ZERO {
                            continue;
                        }
                        let dst = &mut next[(a * out_dim + o) * post..(a * out_dim + o + 1) * post];
                        for (d, v) in dst.iter_mut().zip(src) {
                            *d += m * v;
                        }
                    }
                }
            }
            dense = next;
            pre *= out_dim;
        }
        // Read the symmetric entries at sorted coordinate multisets.
        let mut key = vec![0u32; n];
        loop {
            let idx = key.iter().fold(0usize, |acc, &c| acc * out_dim + c as usize);
            let v = dense[idx];
            if v != ZERO {
                out.entries.insert(key.clone(), v);
            }
            // Next non-decreasing sequence over 0..out_dim.
            let mut i = n;
            loop {
                if i == 0 {
                    return Ok(out);
                }
                i -= 1;
                if (key[i] as usize) + 1 < out_dim {
                    key[i] += 1;
                    let v = key[i];
                    for k in &mut key[i + 1..] {
                        *k = v;
                    }
                    break;
                }
            }
        }
    }

    /// Expand to the ordered form: one entry per distinct ordering.
    pub fn to_ordered(&self) -> OrderedTensor {
        let mut out = OrderedTensor::new(self.grade);
        for (key, v) in &self.entries {
            for ord in distinct_orderings(key) {
                out.entries.insert(ord, *v);
            }
        }
        out
    }

    pub fn relabel<F: Fn(u32) -> u32>(&self, f: F) -> SymTensor {
        let mut out = SymTensor::new(self.grade);
        for (k, v) in &self.entries {
            let mapped: Vec<u32> = k.iter().map(|&p| f(p)).collect();
            out.add(&mapped, *v);
        }
        out
    }
}

/// Sparse tensor without symmetry: keys are point sequences in slot order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OrderedTensor {
    grade: usize,
    entries: BTreeMap<Key, C64>,
}

impl OrderedTensor {
    pub fn new(grade: usize) -> Self {
        Self { grade, entries: BTreeMap::new() }
    }

    pub fn grade(&self) -> usize {
        self.grade
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &[u32]) -> C64 {
        self.entries.get(key).copied().unwrap_or(ZERO)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &C64)> {
        self.entries.iter()
    }

    pub fn add(&mut self, key: Key, value: C64) {
        assert_eq!(key.len(), self.grade, "key length must match the grade");
        *self.entries.entry(key).or_insert(ZERO) += value;
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Replace slot `slot` through a sparse column map: each point `y` in that
    /// slot is sent to `sum_x column(y)[x] e_x`.
    pub fn map_slot<F>(&self, slot: usize, column: F) -> OrderedTensor
    where
        F: Fn(u32) -> Vec<(u32, C64)>,
    {
        assert!(slot < self.grade, "slot {slot} out of range for grade {}", self.grade);
        let mut out = OrderedTensor::new(self.grade);
        let mut cache: HashMap<u32, Vec<(u32, C64)>> = HashMap::new();
        for (key, v) in &self.entries {
            let col = cache.entry(key[slot]).or_insert_with(|| column(key[slot]));
            for &(x, c) in col.iter() {
                let mut k = key.clone();
                k[slot] = x;
                *out.entries.entry(k).or_insert(ZERO) += v * c;
            }
        }
        out.entries.retain(|_, v| *v != ZERO);
        out
    }

    /// Symmetrization `S f = (1/n!) sum_pi f o pi`.
    pub fn symmetrize(&self) -> SymTensor {
        let mut acc: BTreeMap<Key, C64> = BTreeMap::new();
        for (key, v) in &self.entries {
            let mut k = key.clone();
            k.sort_unstable();
            *acc.entry(k).or_insert(ZERO) += *v;
        }
        let n = factorial(self.grade);
        let entries = acc
            .into_iter()
            .map(|(k, v)| {
                let w = multiplicity_factorial(&k) / n;
                (k, v * w)
            })
            .collect();
        SymTensor { grade: self.grade, entries }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        self.entries.iter().all(|(k, v)| {
            distinct_orderings(k).iter().all(|o| (self.get(o) - v).norm() <= tol * scale)
        })
    }
}
