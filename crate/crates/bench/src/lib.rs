//! Shared fixtures for the benchmarks.

use timeslice_core::perturbation::{CouplingFunction, VertexSpec};
use timeslice_core::{FreeField, KleinGordonOperator, LatticeSpacetime, Point, Topology, WickElement, C64};

pub fn operator(n_t: usize, n_x: usize) -> KleinGordonOperator {
    let st = LatticeSpacetime::new(n_t, n_x, 0.5, 1.0, Topology::Periodic).expect("lattice");
    KleinGordonOperator::with_constant_potential(st, 0.5, 0.0).expect("operator")
}

pub fn field(n_t: usize, n_x: usize) -> FreeField {
    FreeField::new(operator(n_t, n_x)).expect("free field")
}

/// Deterministic element of grade up to `max_grade` on interior rows.
pub fn element(field: &FreeField, points: usize, max_grade: usize) -> WickElement {
    let st = field.spacetime();
    let (lo, hi) = st.interior_rows();
    let span = (hi - lo + 1) * st.n_x();
    let support: Vec<u32> = (0..points).map(|i| (lo * st.n_x() + (7 * i + 3) % span) as u32).collect();
    let mut a = WickElement::scalar(C64::new(1.0, 0.0));
    for n in 1..=max_grade {
        for (i, w) in support.windows(n).enumerate() {
            a.add_entry(w, C64::new(0.1 * (i + n) as f64, 0.05 * n as f64));
        }
    }
    a
}

/// Cubic coupling on `points` sites starting at row `t`.
pub fn coupling(points: usize, t: usize, n_x: usize) -> CouplingFunction {
    let mut g = CouplingFunction::new();
    for i in 0..points {
        g.set(Point::new(t + i / n_x, i % n_x), 1, C64::new(0.3, 0.0));
    }
    g
}

pub fn vertex() -> VertexSpec {
    VertexSpec::source_and_power(3).expect("vertex")
}
