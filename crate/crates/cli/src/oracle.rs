//! Reference computations that share no code with the algebra they check:
//! literal Wick expansion of monomials, brute-force pairing counts and
//! light cones from the distance formula.

use std::collections::BTreeMap;

use timeslice_core::{LatticeSpacetime, Point, Region, Topology, WickElement, C64};

/// Number of ways to pair `k` of `m` slots with `k` of `l` slots, found by
/// walking every partial matching.
pub fn pairing_count(m: usize, l: usize, k: usize) -> u64 {
    fn walk(i: usize, m: usize, used: &mut Vec<bool>, left: usize) -> u64 {
        if left == 0 {
            return 1;
        }
        if m - i < left {
            return 0;
        }
        // Slot i stays unpaired.
        let mut total = walk(i + 1, m, used, left);
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                total += walk(i + 1, m, used, left - 1);
                used[j] = false;
            }
        }
        total
    }
    if k > m || k > l {
        return 0;
    }
    walk(0, m, &mut vec![false; l], k)
}

fn fact(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn multiplicity_fact(key: &[u32]) -> f64 {
    let mut out = 1.0;
    let mut run = 1;
    for w in key.windows(2) {
        if w[0] == w[1] {
            run += 1;
            out *= run as f64;
        } else {
            run = 1;
        }
    }
    out
}

/// Coefficients of `a` on normal-ordered monomials `:phi(x_1)...phi(x_n):`,
/// keyed by the sorted point list. A symmetric tensor value `c` on a key
/// stands for `dV^n c` times each of its distinct orderings.
pub fn to_monomials(a: &WickElement, dv: f64) -> BTreeMap<Vec<u32>, C64> {
    let mut out = BTreeMap::new();
    for (n, t) in a.grades() {
        for (key, v) in t.iter() {
            let orderings = fact(n) / multiplicity_fact(key);
            *out.entry(key.clone()).or_insert(C64::new(0.0, 0.0)) += v * dv.powi(n as i32) * orderings;
        }
    }
    out
}

/// Inverse of [`to_monomials`].
pub fn from_monomials(m: &BTreeMap<Vec<u32>, C64>, dv: f64) -> WickElement {
    let mut out = WickElement::zero();
    for (key, v) in m {
        let n = key.len();
        let orderings = fact(n) / multiplicity_fact(key);
        out.add_entry(key, v / (dv.powi(n as i32) * orderings));
    }
    out
}

/// Wick's theorem for two normal-ordered monomials, by enumerating every
/// partial matching of the slots of `x` with the slots of `y`.
pub fn monomial_product<W: Fn(u32, u32) -> C64>(x: &[u32], y: &[u32], omega: &W) -> BTreeMap<Vec<u32>, C64> {
    fn walk<W: Fn(u32, u32) -> C64>(
        i: usize,
        x: &[u32],
        y: &[u32],
        used: &mut Vec<bool>,
        rest: &mut Vec<u32>,
        weight: C64,
        omega: &W,
        out: &mut BTreeMap<Vec<u32>, C64>,
    ) {
        if i == x.len() {
            let mut key = rest.clone();
            key.extend(y.iter().zip(used.iter()).filter(|(_, u)| !**u).map(|(p, _)| *p));
            key.sort_unstable();
            *out.entry(key).or_insert(C64::new(0.0, 0.0)) += weight;
            return;
        }
        rest.push(x[i]);
        walk(i + 1, x, y, used, rest, weight, omega, out);
        rest.pop();
        for j in 0..y.len() {
            if !used[j] {
                used[j] = true;
                walk(i + 1, x, y, used, rest, weight * omega(x[i], y[j]), omega, out);
                used[j] = false;
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(0, x, y, &mut vec![false; y.len()], &mut Vec::new(), C64::new(1.0, 0.0), omega, &mut out);
    out
}

/// Star product through the monomial expansion.
pub fn star_product<W: Fn(u32, u32) -> C64>(a: &WickElement, b: &WickElement, dv: f64, omega: &W) -> WickElement {
    let ma = to_monomials(a, dv);
    let mb = to_monomials(b, dv);
    let mut acc: BTreeMap<Vec<u32>, C64> = BTreeMap::new();
    for (x, va) in &ma {
        for (y, vb) in &mb {
            for (k, w) in monomial_product(x, y, omega) {
                *acc.entry(k).or_insert(C64::new(0.0, 0.0)) += va * vb * w;
            }
        }
    }
    from_monomials(&acc, dv)
}

/// Spatial distance on the ring or the segment, from the formula.
pub fn distance(topology: Topology, n_x: usize, a: usize, b: usize) -> usize {
    let d = a.abs_diff(b);
    match topology {
        Topology::Periodic => d.min(n_x - d),
        Topology::Reflecting => d,
    }
}

/// `J-(k)` as the set of points `q` with `|x_q - x_p| <= t_p - t_q` for some
/// `p` in `k`.
pub fn causal_past(st: &LatticeSpacetime, k: &Region) -> Region {
    let mut out = Region::new();
    for q in st.all_points() {
        let inside = k.iter().any(|p: Point| {
            p.t >= q.t && distance(st.topology(), st.n_x(), p.x, q.x) <= p.t - q.t
        });
        if inside {
            out.insert(q);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairing_counts_match_closed_form() {
        for m in 0..=4 {
            for l in 0..=4 {
                for k in 0..=m.min(l) {
                    let closed = fact(m) * fact(l) / (fact(m - k) * fact(l - k) * fact(k));
                    assert_eq!(pairing_count(m, l, k) as f64, closed, "{m} {l} {k}");
                }
            }
        }
        assert_eq!(pairing_count(2, 1, 2), 0);
    }

    #[test]
    fn two_fields_give_one_contraction() {
        let omega = |a: u32, b: u32| C64::new((10 * a + b) as f64, 0.0);
        let p = monomial_product(&[1], &[2], &omega);
        assert_eq!(p[&vec![1, 2]], C64::new(1.0, 0.0));
        assert_eq!(p[&vec![]], C64::new(12.0, 0.0));
        // :phi(1)^2: :phi(1)^2: has four single and two double contractions.
        let p = monomial_product(&[1, 1], &[1, 1], &omega);
        assert_eq!(p[&vec![1, 1]], C64::new(44.0, 0.0));
        assert_eq!(p[&vec![]], C64::new(2.0 * 121.0, 0.0));
    }

    #[test]
    fn monomial_round_trip() {
        let mut a = WickElement::scalar(C64::new(0.5, 0.0));
        a.add_entry(&[3, 3, 5], C64::new(1.0, 2.0));
        a.add_entry(&[4], C64::new(-1.0, 0.0));
        let back = from_monomials(&to_monomials(&a, 0.5), 0.5);
        assert!(a.max_abs_diff(&back) < 1e-15);
    }
}
