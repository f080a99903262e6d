//! Seeded random inputs. Every suite gets its own stream derived from the
//! run seed and the suite name, so adding a suite never shifts another's.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use timeslice_core::perturbation::CouplingFunction;
use timeslice_core::{LatticeSpacetime, Point, Region, WickElement, C64};

pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let bytes: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(bytes)
}

pub fn complex<R: Rng>(rng: &mut R) -> C64 {
    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

/// `count` distinct points drawn from `rows` (inclusive) over all columns.
pub fn points<R: Rng>(rng: &mut R, st: &LatticeSpacetime, rows: (usize, usize), count: usize) -> Vec<Point> {
    let mut all: Vec<Point> = (rows.0..=rows.1).flat_map(|t| (0..st.n_x()).map(move |x| Point::new(t, x))).collect();
    all.shuffle(rng);
    all.truncate(count);
    all.sort();
    all
}

/// Points of `r` in random order, at most `count` of them.
pub fn points_in<R: Rng>(rng: &mut R, r: &Region, count: usize) -> Vec<Point> {
    let mut all: Vec<Point> = r.iter().collect();
    all.shuffle(rng);
    all.truncate(count);
    all.sort();
    all
}

/// Dense test function with complex values on `support`.
pub fn test_function<R: Rng>(rng: &mut R, st: &LatticeSpacetime, support: &[Point]) -> Vec<C64> {
    let mut f = vec![C64::new(0.0, 0.0); st.num_points()];
    for &p in support {
        f[st.index(p)] = complex(rng);
    }
    f
}

/// Random element with every grade from 0 to `max_grade`, `entries` keys per
/// positive grade, keys drawn from `support`.
pub fn element<R: Rng>(
    rng: &mut R,
    st: &LatticeSpacetime,
    support: &[Point],
    max_grade: usize,
    entries: usize,
) -> WickElement {
    let mut a = WickElement::scalar(complex(rng));
    for n in 1..=max_grade {
        for _ in 0..entries {
            let key: Vec<u32> = (0..n).map(|_| st.index(*support.choose(rng).expect("non-empty support")) as u32).collect();
            a.add_entry(&key, complex(rng));
        }
    }
    a
}

/// Coupling with random real values for monomial `monomial` on `support`.
pub fn coupling<R: Rng>(rng: &mut R, support: &[Point], monomial: usize, scale: f64) -> CouplingFunction {
    let mut c = CouplingFunction::new();
    for &p in support {
        c.set(p, monomial, C64::new(scale * rng.gen_range(0.2..1.0), 0.0));
    }
    c
}
