//! Discrete Klein-Gordon operator and its fundamental solutions.
//!
//! The operator is `K = D_t^2 + A` where `D_t^2` is the centred second
//! difference in time and `A = -D_x^2 + m^2 + V(x)` acts on each time row.
//! Kernels are stored as densities: a test function `f` is smeared as
//! `sum_x dV f(x) phi(x)` with `dV = dt * dx`, so `K G = delta / dV` and every
//! pairing carries one `dV` per summed point.
//!
//! The two-point kernel is built from the eigenmodes of `A` with the discrete
//! dispersion `sin^2(w dt / 2) = dt^2 lambda / 4`, which makes every mode an
//! exact solution of the leapfrog stencil. Modes with `dt^2 lambda > 4` grow
//! geometrically under the stencil; for those a non-stationary quasifree
//! choice (hyperbolic cosine/sine pair centred on the middle row) is used so
//! that the commutator identity still holds exactly.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lattice::{LatticeSpacetime, Point};

/// Width of the excluded band around the marginal dispersion `dt^2 lambda = 4`.
pub const STABILITY_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Retarded,
    Advanced,
    Commutator,
    TwoPoint,
    Feynman,
}

impl KernelKind {
    pub const ALL: [KernelKind; 5] = [
        KernelKind::Retarded,
        KernelKind::Advanced,
        KernelKind::Commutator,
        KernelKind::TwoPoint,
        KernelKind::Feynman,
    ];

    pub fn tag(self) -> u32 {
        match self {
            KernelKind::Retarded => 0,
            KernelKind::Advanced => 1,
            KernelKind::Commutator => 2,
            KernelKind::TwoPoint => 3,
            KernelKind::Feynman => 4,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Retarded => "retarded",
            KernelKind::Advanced => "advanced",
            KernelKind::Commutator => "commutator",
            KernelKind::TwoPoint => "two_point",
            KernelKind::Feynman => "feynman",
        }
    }
}

/// How a spatial eigenmode evolves under the time stencil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeEvolution {
    /// `dt^2 lambda < 4`: oscillating with phase `theta = w dt` per step.
    Oscillating { theta: f64 },
    /// `dt^2 lambda > 4`: `(-1)^t exp(+-phi t)`.
    Growing { phi: f64 },
}

#[derive(Debug, Clone)]
pub struct SpatialMode {
    pub eigenvalue: f64,
    /// Orthonormal with respect to `sum_x dx u(x) v(x)`.
    pub profile: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct KleinGordonOperator {
    st: LatticeSpacetime,
    mass_sq: f64,
    potential: Vec<f64>,
    modes: Vec<SpatialMode>,
}

impl KleinGordonOperator {
    pub fn new(st: LatticeSpacetime, mass_sq: f64, potential: Vec<f64>) -> Result<Self> {
        if !(mass_sq.is_finite() && mass_sq >= 0.0) {
            return Err(Error::Configuration(format!("mass_sq={mass_sq} must be >= 0")));
        }
        if potential.len() != st.n_x() {
            return Err(Error::DimensionMismatch { expected: st.n_x(), got: potential.len() });
        }
        if potential.iter().any(|v| !v.is_finite()) {
            return Err(Error::Configuration("potential has non-finite entries".into()));
        }
        let mut op = Self { st, mass_sq, potential, modes: Vec::new() };
        op.modes = op.compute_modes()?;
        Ok(op)
    }

    pub fn with_constant_potential(st: LatticeSpacetime, mass_sq: f64, v: f64) -> Result<Self> {
        let n_x = st.n_x();
        Self::new(st, mass_sq, vec![v; n_x])
    }

    pub fn spacetime(&self) -> &LatticeSpacetime {
        &self.st
    }

    pub fn mass_sq(&self) -> f64 {
        self.mass_sq
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn modes(&self) -> &[SpatialMode] {
        &self.modes
    }

    /// Dense matrix of the spatial operator `A`.
    pub fn spatial_matrix(&self) -> DMatrix<f64> {
        let n = self.st.n_x();
        let inv_dx2 = 1.0 / (self.st.dx() * self.st.dx());
        let mut a = DMatrix::<f64>::zeros(n, n);
        for x in 0..n {
            a[(x, x)] += self.mass_sq + self.potential[x];
            for nb in self.st.spatial_neighbours(x) {
                a[(x, x)] += inv_dx2;
                a[(x, nb)] -= inv_dx2;
            }
        }
        a
    }

    fn compute_modes(&self) -> Result<Vec<SpatialMode>> {
        let a = self.spatial_matrix();
        if (&a - a.transpose()).amax() > 0.0 {
            return Err(Error::Configuration("spatial operator is not symmetric".into()));
        }
        let eig = SymmetricEigen::new(a);
        let scale = 1.0 / self.st.dx().sqrt();
        let mut modes: Vec<SpatialMode> = (0..self.st.n_x())
            .map(|j| {
                let col = eig.eigenvectors.column(j);
                // Fix the sign so the largest-magnitude entry is positive.
                let pivot = col.iter().fold(0.0f64, |m, &v| if v.abs() > m.abs() { v } else { m });
                let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
                SpatialMode {
                    eigenvalue: eig.eigenvalues[j],
                    profile: col.iter().map(|v| sign * v * scale).collect(),
                }
            })
            .collect();
        modes.sort_by(|a, b| a.eigenvalue.total_cmp(&b.eigenvalue));
        let tol = 1e-12 * modes.iter().map(|m| m.eigenvalue.abs()).fold(1.0, f64::max);
        if let Some(m) = modes.iter().find(|m| m.eigenvalue < -tol) {
            return Err(Error::Configuration(format!(
                "spatial operator is not positive semidefinite (eigenvalue {})",
                m.eigenvalue
            )));
        }
        for m in &mut modes {
            if m.eigenvalue.abs() <= tol {
                m.eigenvalue = 0.0;
            }
        }
        Ok(modes)
    }

    /// `(A f)(x)` for one time row.
    pub fn apply_spatial(&self, row: &[C64]) -> Vec<C64> {
        let inv_dx2 = 1.0 / (self.st.dx() * self.st.dx());
        (0..self.st.n_x())
            .map(|x| {
                let mut acc = row[x] * (self.mass_sq + self.potential[x]);
                for nb in self.st.spatial_neighbours(x) {
                    acc += (row[x] - row[nb]) * inv_dx2;
                }
                acc
            })
            .collect()
    }

    fn apply_spatial_real(&self, row: &[f64], out: &mut [f64]) {
        let inv_dx2 = 1.0 / (self.st.dx() * self.st.dx());
        for x in 0..self.st.n_x() {
            let mut acc = row[x] * (self.mass_sq + self.potential[x]);
            for nb in self.st.spatial_neighbours(x) {
                acc += (row[x] - row[nb]) * inv_dx2;
            }
            out[x] = acc;
        }
    }

    pub fn mode_evolution(&self, eigenvalue: f64) -> Result<ModeEvolution> {
        let dt = self.st.dt();
        let r = dt * dt * eigenvalue / 4.0;
        if eigenvalue <= 0.0 {
            return Err(Error::Configuration(format!(
                "spatial operator has a non-positive eigenvalue {eigenvalue}; shift the potential"
            )));
        }
        if (r - 1.0).abs() < STABILITY_MARGIN {
            return Err(Error::Configuration(format!(
                "eigenvalue {eigenvalue} sits on the marginal dispersion dt^2*lambda = 4"
            )));
        }
        if r < 1.0 {
            Ok(ModeEvolution::Oscillating { theta: 2.0 * r.sqrt().asin() })
        } else {
            Ok(ModeEvolution::Growing { phi: (2.0 * r - 1.0).acosh() })
        }
    }

    /// SHA-256 over the parameters that determine every kernel.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"klein-gordon/v1");
        h.update((self.st.n_t() as u64).to_le_bytes());
        h.update((self.st.n_x() as u64).to_le_bytes());
        h.update(self.st.dt().to_le_bytes());
        h.update(self.st.dx().to_le_bytes());
        h.update([self.st.topology().tag()]);
        h.update(self.mass_sq.to_le_bytes());
        for v in &self.potential {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }
}

/// Two-point array over spacetime points, row-major in `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    kind: KernelKind,
    n_points: usize,
    cell_volume: f64,
    values: Vec<C64>,
}

impl Kernel {
    pub fn from_values(
        kind: KernelKind,
        n_points: usize,
        cell_volume: f64,
        values: Vec<C64>,
    ) -> Result<Self> {
        if values.len() != n_points * n_points {
            return Err(Error::DimensionMismatch { expected: n_points * n_points, got: values.len() });
        }
        Ok(Self { kind, n_points, cell_volume, values })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> C64 {
        self.values[x * self.n_points + y]
    }

    pub fn row(&self, x: usize) -> &[C64] {
        &self.values[x * self.n_points..(x + 1) * self.n_points]
    }

    /// `(k f)(x) = sum_y dV k(x, y) f(y)`.
    pub fn apply(&self, f: &[C64]) -> Result<Vec<C64>> {
        check_len(f, self.n_points)?;
        let support: Vec<usize> = (0..self.n_points).filter(|&y| f[y] != C64::new(0.0, 0.0)).collect();
        Ok((0..self.n_points)
            .map(|x| {
                let row = self.row(x);
                support.iter().map(|&y| row[y] * f[y]).sum::<C64>() * self.cell_volume
            })
            .collect())
    }

    /// Bilinear smearing `k(f, g) = sum_{x,y} dV^2 f(x) k(x, y) g(y)`.
    pub fn pair(&self, f: &[C64], g: &[C64]) -> Result<C64> {
        check_len(g, self.n_points)?;
        let kg = self.apply(g)?;
        Ok(f.iter().zip(&kg).map(|(a, b)| a * b).sum::<C64>() * self.cell_volume)
    }

    pub fn transpose(&self) -> Kernel {
        let n = self.n_points;
        let mut values = vec![C64::new(0.0, 0.0); n * n];
        for x in 0..n {
            for y in 0..n {
                values[y * n + x] = self.values[x * n + y];
            }
        }
        Kernel { kind: self.kind, n_points: n, cell_volume: self.cell_volume, values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Max absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Kernel) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

fn check_len<T>(f: &[T], n: usize) -> Result<()> {
    if f.len() == n {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: n, got: f.len() })
    }
}

/// `(K f)(t, x)` with the centred time stencil. Boundary rows are closed by
/// extending `f` with the exact stencil evolution of its two outermost rows,
/// which makes `K f` vanish there; every mode solution is annihilated on the
/// whole lattice.
pub fn apply_k(op: &KleinGordonOperator, f: &[C64]) -> Result<Vec<C64>> {
    let st = op.spacetime();
    let (n_t, n_x) = (st.n_t(), st.n_x());
    check_len(f, n_t * n_x)?;
    let inv_dt2 = 1.0 / (st.dt() * st.dt());
    let mut out = vec![C64::new(0.0, 0.0); n_t * n_x];
    for t in 1..n_t - 1 {
        let row = &f[t * n_x..(t + 1) * n_x];
        let a_row = op.apply_spatial(row);
        for x in 0..n_x {
            let i = t * n_x + x;
            out[i] = (f[i + n_x] - f[i] * 2.0 + f[i - n_x]) * inv_dt2 + a_row[x];
        }
    }
    Ok(out)
}

/// Nonzero entries `(x, K(x, y))` of column `y` of the stencil matrix, in
/// increasing `x`. Boundary rows carry no entries, matching [`apply_k`].
pub fn stencil_column(op: &KleinGordonOperator, y: usize) -> Vec<(usize, f64)> {
    let st = op.spacetime();
    let (n_t, n_x) = (st.n_t(), st.n_x());
    let p = st.point(y);
    let inv_dt2 = 1.0 / (st.dt() * st.dt());
    let inv_dx2 = 1.0 / (st.dx() * st.dx());
    let mut out = Vec::with_capacity(6);
    let interior = |t: usize| t >= 1 && t + 1 < n_t;
    if p.t >= 1 && interior(p.t - 1) {
        out.push(((p.t - 1) * n_x + p.x, inv_dt2));
    }
    if interior(p.t) {
        // Row t of K applied to e_y: A(x, y) - 2/dt^2 on the diagonal.
        let mut row = vec![0.0; n_x];
        row[p.x] += op.mass_sq + op.potential[p.x] - 2.0 * inv_dt2;
        for x in 0..n_x {
            for nb in st.spatial_neighbours(x) {
                if x == p.x {
                    row[x] += inv_dx2;
                }
                if nb == p.x {
                    row[x] -= inv_dx2;
                }
            }
        }
        out.extend(row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(x, v)| (p.t * n_x + x, *v)));
    }
    if interior(p.t + 1) {
        out.push(((p.t + 1) * n_x + p.x, inv_dt2));
    }
    out
}

/// Retarded or advanced fundamental solution by explicit time stepping from
/// delta source data. `kind` must be `Retarded` or `Advanced`.
pub fn green_kernel(op: &KleinGordonOperator, kind: KernelKind) -> Result<Kernel> {
    let forward = match kind {
        KernelKind::Retarded => true,
        KernelKind::Advanced => false,
        other => {
            return Err(Error::Input(format!("green_kernel cannot build a {} kernel", other.name())))
        }
    };
    let st = op.spacetime();
    let (n_t, n_x) = (st.n_t(), st.n_x());
    let n = n_t * n_x;
    let columns: Vec<Vec<f64>> =
        (0..n).into_par_iter().map(|src| green_column(op, st.point(src), forward)).collect();
    if columns.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Configuration("Green kernel overflowed during time stepping".into()));
    }
    let mut values = vec![C64::new(0.0, 0.0); n * n];
    for (y, col) in columns.iter().enumerate() {
        for (x, &v) in col.iter().enumerate() {
            values[x * n + y] = C64::new(v, 0.0);
        }
    }
    Kernel::from_values(kind, n, st.cell_volume(), values)
}

/// One column `G(., y)` of the retarded (`forward`) or advanced kernel.
fn green_column(op: &KleinGordonOperator, src: Point, forward: bool) -> Vec<f64> {
    let st = op.spacetime();
    let (n_t, n_x) = (st.n_t(), st.n_x());
    let dt2 = st.dt() * st.dt();
    let mut g = vec![0.0; n_t * n_x];
    let first = if forward { src.t + 1 } else { src.t.wrapping_sub(1) };
    if first >= n_t {
        return g;
    }
    // K G = delta/dV at the source row fixes the first nonzero row.
    g[first * n_x + src.x] = dt2 / st.cell_volume();
    let mut a_row = vec![0.0; n_x];
    let mut cur = first;
    let mut prev_row = vec![0.0; n_x];
    loop {
        let next = if forward { cur + 1 } else { cur.wrapping_sub(1) };
        if next >= n_t {
            break;
        }
        let cur_row: Vec<f64> = g[cur * n_x..(cur + 1) * n_x].to_vec();
        op.apply_spatial_real(&cur_row, &mut a_row);
        for x in 0..n_x {
            g[next * n_x + x] = 2.0 * cur_row[x] - prev_row[x] - dt2 * a_row[x];
        }
        prev_row = cur_row;
        cur = next;
    }
    g
}

/// `Delta = G_adv - G_ret`, the sign for which `[phi(f), phi(g)] = i Delta(f, g)`
/// holds with the positive-frequency two-point kernel.
pub fn commutator_from(retarded: &Kernel, advanced: &Kernel) -> Result<Kernel> {
    if retarded.kind != KernelKind::Retarded || advanced.kind != KernelKind::Advanced {
        return Err(Error::Input("commutator needs a retarded and an advanced kernel".into()));
    }
    let values = advanced.values.iter().zip(&retarded.values).map(|(a, r)| a - r).collect();
    Kernel::from_values(KernelKind::Commutator, retarded.n_points, retarded.cell_volume, values)
}

pub fn commutator_kernel(op: &KleinGordonOperator) -> Result<Kernel> {
    let ret = green_kernel(op, KernelKind::Retarded)?;
    let adv = green_kernel(op, KernelKind::Advanced)?;
    commutator_from(&ret, &adv)
}

/// Per-point mode amplitudes `Q(x)_j = u_j(x_sp) q_j(t_x)` with
/// `omega_2(x, y) = sum_j Q(x)_j conj(Q(y)_j)`.
fn mode_amplitudes(op: &KleinGordonOperator) -> Result<Vec<Vec<C64>>> {
    let st = op.spacetime();
    let (n_t, n_x, dt) = (st.n_t(), st.n_x(), st.dt());
    let t_mid = (n_t as f64 - 1.0) / 2.0;
    let mut temporal: Vec<Vec<C64>> = Vec::with_capacity(n_x);
    for mode in op.modes() {
        let q: Vec<C64> = match op.mode_evolution(mode.eigenvalue)? {
            ModeEvolution::Oscillating { theta } => {
                let nu = theta.sin() / dt;
                let norm = 1.0 / (2.0 * nu).sqrt();
                (0..n_t).map(|t| C64::from_polar(norm, -theta * t as f64)).collect()
            }
            ModeEvolution::Growing { phi } => {
                let kappa = 2.0 * phi.sinh() / dt;
                let norm = 1.0 / kappa.sqrt();
                (0..n_t)
                    .map(|t| {
                        let s = if t % 2 == 0 { 1.0 } else { -1.0 };
                        let u = phi * (t as f64 - t_mid);
                        C64::new(u.cosh(), u.sinh()) * (s * norm)
                    })
                    .collect()
            }
        };
        temporal.push(q);
    }
    Ok(st
        .all_points()
        .map(|p| {
            op.modes()
                .iter()
                .zip(&temporal)
                .map(|(m, q)| q[p.t] * m.profile[p.x])
                .collect()
        })
        .collect())
}

/// Quasifree two-point kernel built from the spatial eigenmodes. Requires `A`
/// strictly positive.
pub fn vacuum_two_point(op: &KleinGordonOperator) -> Result<Kernel> {
    let amps = mode_amplitudes(op)?;
    let st = op.spacetime();
    let n = st.num_points();
    let rows: Vec<Vec<C64>> = (0..n)
        .into_par_iter()
        .map(|x| {
            (0..n)
                .map(|y| amps[x].iter().zip(&amps[y]).map(|(a, b)| a * b.conj()).sum())
                .collect()
        })
        .collect();
    Kernel::from_values(KernelKind::TwoPoint, n, st.cell_volume(), rows.concat())
}

/// Time-ordered contraction kernel: `omega_2(x, y)` when `x` is later,
/// `omega_2(y, x)` when `y` is later, and the symmetrized value at equal times.
pub fn feynman_from(st: &LatticeSpacetime, two_point: &Kernel) -> Result<Kernel> {
    if two_point.kind != KernelKind::TwoPoint {
        return Err(Error::Input("feynman kernel needs the two-point kernel".into()));
    }
    let n = two_point.n_points;
    let mut values = vec![C64::new(0.0, 0.0); n * n];
    for x in 0..n {
        let tx = st.point(x).t;
        for y in 0..n {
            let ty = st.point(y).t;
            let xy = two_point.get(x, y);
            let yx = two_point.get(y, x);
            values[x * n + y] = match tx.cmp(&ty) {
                std::cmp::Ordering::Greater => xy,
                std::cmp::Ordering::Less => yx,
                std::cmp::Ordering::Equal => (xy + yx) * 0.5,
            };
        }
    }
    Kernel::from_values(KernelKind::Feynman, n, two_point.cell_volume, values)
}

pub fn feynman_kernel(op: &KleinGordonOperator) -> Result<Kernel> {
    feynman_from(op.spacetime(), &vacuum_two_point(op)?)
}

/// Everything derived from one Klein-Gordon operator.
#[derive(Debug, Clone)]
pub struct FreeField {
    pub op: KleinGordonOperator,
    pub retarded: Kernel,
    pub advanced: Kernel,
    pub commutator: Kernel,
    pub two_point: Kernel,
    pub feynman: Kernel,
}

impl FreeField {
    pub fn new(op: KleinGordonOperator) -> Result<Self> {
        let retarded = green_kernel(&op, KernelKind::Retarded)?;
        let advanced = green_kernel(&op, KernelKind::Advanced)?;
        let two_point = vacuum_two_point(&op)?;
        Self::from_kernels(op, retarded, advanced, two_point)
    }

    /// Assemble from precomputed retarded, advanced and two-point kernels.
    pub fn from_kernels(
        op: KleinGordonOperator,
        retarded: Kernel,
        advanced: Kernel,
        two_point: Kernel,
    ) -> Result<Self> {
        let n = op.spacetime().num_points();
        for k in [&retarded, &advanced, &two_point] {
            if k.n_points != n {
                return Err(Error::DimensionMismatch { expected: n, got: k.n_points });
            }
        }
        let commutator = commutator_from(&retarded, &advanced)?;
        let feynman = feynman_from(op.spacetime(), &two_point)?;
        Ok(Self { op, retarded, advanced, commutator, two_point, feynman })
    }

    pub fn spacetime(&self) -> &LatticeSpacetime {
        self.op.spacetime()
    }

    pub fn kernel(&self, kind: KernelKind) -> &Kernel {
        match kind {
            KernelKind::Retarded => &self.retarded,
            KernelKind::Advanced => &self.advanced,
            KernelKind::Commutator => &self.commutator,
            KernelKind::TwoPoint => &self.two_point,
            KernelKind::Feynman => &self.feynman,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{causal_shadow, Direction, Region, Topology};

    fn op(n_t: usize, n_x: usize, dt: f64, m2: f64, topology: Topology) -> KleinGordonOperator {
        let st = LatticeSpacetime::new(n_t, n_x, dt, 1.0, topology).unwrap();
        KleinGordonOperator::with_constant_potential(st, m2, 0.0).unwrap()
    }

    fn delta(st: &LatticeSpacetime, p: Point) -> Vec<C64> {
        let mut f = vec![C64::new(0.0, 0.0); st.num_points()];
        f[st.index(p)] = C64::new(1.0, 0.0);
        f
    }

    #[test]
    fn k_of_zero_is_zero() {
        let op = op(8, 4, 0.5, 0.3, Topology::Periodic);
        let f = vec![C64::new(0.0, 0.0); 32];
        assert!(apply_k(&op, &f).unwrap().iter().all(|v| v.norm() == 0.0));
        assert!(matches!(apply_k(&op, &f[..5]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn stencil_column_matches_apply_k() {
        for topology in [Topology::Periodic, Topology::Reflecting] {
            let op = op(8, 3, 0.5, 0.3, topology);
            let st = op.spacetime().clone();
            for y in 0..st.num_points() {
                let dense = apply_k(&op, &delta(&st, st.point(y))).unwrap();
                let mut sparse = vec![C64::new(0.0, 0.0); st.num_points()];
                for (x, v) in stencil_column(&op, y) {
                    sparse[x] += v;
                }
                for (a, b) in dense.iter().zip(&sparse) {
                    assert!((a - b).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn k_of_delta_is_stencil() {
        let op = op(10, 5, 0.5, 0.3, Topology::Periodic);
        let st = op.spacetime().clone();
        let p = Point::new(4, 2);
        let kf = apply_k(&op, &delta(&st, p)).unwrap();
        let a = op.spatial_matrix();
        let inv_dt2 = 1.0 / (st.dt() * st.dt());
        assert!((kf[st.index(p)].re - (-2.0 * inv_dt2 + a[(2, 2)])).abs() < 1e-12);
        assert!((kf[st.index(Point::new(5, 2))].re - inv_dt2).abs() < 1e-12);
        assert!((kf[st.index(Point::new(3, 2))].re - inv_dt2).abs() < 1e-12);
        assert!((kf[st.index(Point::new(4, 1))].re - a[(1, 2)]).abs() < 1e-12);
        assert_eq!(kf[st.index(Point::new(4, 0))].norm(), 0.0);
    }

    #[test]
    fn exact_mode_is_annihilated() {
        let op = op(12, 6, 0.5, 0.7, Topology::Periodic);
        let st = op.spacetime().clone();
        for mode in op.modes() {
            let ModeEvolution::Oscillating { theta } = op.mode_evolution(mode.eigenvalue).unwrap()
            else {
                panic!("expected a stable mode");
            };
            let f: Vec<C64> = st
                .all_points()
                .map(|p| C64::from_polar(mode.profile[p.x], -theta * p.t as f64))
                .collect();
            let kf = apply_k(&op, &f).unwrap();
            let scale = mode.eigenvalue.max(1.0);
            assert!(kf.iter().all(|v| v.norm() < 1e-12 * scale), "residual too large");
        }
    }

    #[test]
    fn green_kernels_have_causal_support_and_invert_k() {
        for topology in [Topology::Periodic, Topology::Reflecting] {
            let op = op(10, 5, 0.5, 0.4, topology);
            let st = op.spacetime().clone();
            let ret = green_kernel(&op, KernelKind::Retarded).unwrap();
            let adv = green_kernel(&op, KernelKind::Advanced).unwrap();
            for y in 0..st.num_points() {
                let py = st.point(y);
                let fut = causal_shadow(&st, &Region::from_points([py]), Direction::Future).unwrap();
                let past = causal_shadow(&st, &Region::from_points([py]), Direction::Past).unwrap();
                for x in 0..st.num_points() {
                    let px = st.point(x);
                    if !fut.contains(px) {
                        assert_eq!(ret.get(x, y).norm(), 0.0);
                    }
                    if !past.contains(px) {
                        assert_eq!(adv.get(x, y).norm(), 0.0);
                    }
                    assert!((adv.get(x, y) - ret.get(y, x)).norm() <= 1e-13 * ret.max_abs());
                }
                if st.is_interior(py) {
                    let col: Vec<C64> = (0..st.num_points()).map(|x| ret.get(x, y)).collect();
                    let kg = apply_k(&op, &col).unwrap();
                    for (x, v) in kg.iter().enumerate() {
                        let expected = if x == y { 1.0 / st.cell_volume() } else { 0.0 };
                        assert!((v.re - expected).abs() < 1e-10, "K G^ret != delta");
                    }
                }
            }
        }
    }

    #[test]
    fn wrong_kind_for_green_kernel() {
        let op = op(8, 3, 0.5, 0.4, Topology::Periodic);
        assert!(green_kernel(&op, KernelKind::TwoPoint).is_err());
    }

    #[test]
    fn commutator_is_real_antisymmetric_and_vanishes_at_equal_times() {
        let op = op(10, 6, 0.5, 0.4, Topology::Periodic);
        let st = op.spacetime().clone();
        let d = commutator_kernel(&op).unwrap();
        let n = st.num_points();
        let tol = 1e-13 * d.max_abs();
        for x in 0..n {
            assert_eq!(d.get(x, x).norm(), 0.0);
            for y in 0..n {
                assert_eq!(d.get(x, y).im, 0.0);
                assert!((d.get(x, y) + d.get(y, x)).norm() <= tol);
                let (px, py) = (st.point(x), st.point(y));
                if px.t == py.t {
                    assert_eq!(d.get(x, y).norm(), 0.0);
                }
                if !st.causally_precedes(px, py) && !st.causally_precedes(py, px) {
                    assert_eq!(d.get(x, y).norm(), 0.0);
                }
            }
        }
        // Equal-time CCR: the forward time difference of Delta pairs to delta/dV.
        let t = 4;
        for x in 0..st.n_x() {
            for y in 0..st.n_x() {
                let later = d.get(st.index(Point::new(t + 1, x)), st.index(Point::new(t, y)));
                let expected = if x == y { -st.dt() * st.dt() / st.cell_volume() } else { 0.0 };
                assert!((later.re - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_site_two_point_formula() {
        let st = LatticeSpacetime::new(9, 2, 0.5, 1.0, Topology::Reflecting).unwrap();
        // Uniform potential on two reflecting sites: the constant mode has
        // lambda = mu^2.
        let mu2 = 0.8;
        let op = KleinGordonOperator::with_constant_potential(st.clone(), mu2, 0.0).unwrap();
        let w = vacuum_two_point(&op).unwrap();
        let theta = 2.0 * (st.dt() * mu2.sqrt() / 2.0).asin();
        let nu = theta.sin() / st.dt();
        let lam2 = op.modes()[1].eigenvalue;
        let theta2 = 2.0 * (st.dt() * lam2.sqrt() / 2.0).asin();
        let nu2 = theta2.sin() / st.dt();
        for t in 0..9 {
            for s in 0..9 {
                let x = st.index(Point::new(t, 0));
                let y = st.index(Point::new(s, 0));
                let tau = (t as f64) - (s as f64);
                // Constant mode u = 1/sqrt(2 dx), second mode u = +-1/sqrt(2 dx).
                let expected = C64::from_polar(1.0 / (2.0 * nu), -theta * tau) * 0.5
                    + C64::from_polar(1.0 / (2.0 * nu2), -theta2 * tau) * 0.5;
                assert!((w.get(x, y) - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn two_point_antisymmetric_part_is_commutator() {
        for (dt, m2) in [(0.5, 0.4), (1.0, 0.5)] {
            let op = op(12, 6, dt, m2, Topology::Periodic);
            let w = vacuum_two_point(&op).unwrap();
            let d = commutator_kernel(&op).unwrap();
            let n = w.n_points();
            let scale = w.max_abs().max(d.max_abs());
            for x in 0..n {
                for y in 0..n {
                    let lhs = w.get(x, y) - w.get(y, x);
                    let rhs = C64::new(0.0, 1.0) * d.get(x, y);
                    assert!((lhs - rhs).norm() < 1e-10 * scale, "dt={dt}: {lhs} vs {rhs}");
                }
            }
        }
    }

    #[test]
    fn two_point_is_bisolution() {
        let op = op(12, 5, 1.0, 0.5, Topology::Periodic);
        let st = op.spacetime().clone();
        let w = vacuum_two_point(&op).unwrap();
        let n = st.num_points();
        for y in 0..n {
            let col: Vec<C64> = (0..n).map(|x| w.get(x, y)).collect();
            let kw = apply_k(&op, &col).unwrap();
            let scale = col.iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(kw.iter().all(|v| v.norm() < 1e-10 * scale.max(1.0)));
        }
    }

    #[test]
    fn zero_mode_is_rejected() {
        let op = op(8, 4, 0.5, 0.0, Topology::Periodic);
        match vacuum_two_point(&op) {
            Err(Error::Configuration(msg)) => assert!(msg.contains("eigenvalue")),
            other => panic!("expected configuration error, got {other:?}"),
        }
    }

    #[test]
    fn marginal_mode_is_rejected() {
        // Two periodic sites: eigenvalues m^2 and 4 + m^2; dt = 1 with m^2 = 0
        // would be a zero mode, so put the upper one exactly on dt^2 lambda = 4.
        let st = LatticeSpacetime::new(8, 2, 1.0, 1.0, Topology::Reflecting).unwrap();
        let op = KleinGordonOperator::with_constant_potential(st, 2.0, 0.0).unwrap();
        assert!(matches!(vacuum_two_point(&op), Err(Error::Configuration(_))));
    }

    #[test]
    fn feynman_is_symmetric_and_time_ordered() {
        let op = op(10, 4, 0.5, 0.4, Topology::Periodic);
        let st = op.spacetime().clone();
        let w = vacuum_two_point(&op).unwrap();
        let f = feynman_from(&st, &w).unwrap();
        let n = st.num_points();
        for x in 0..n {
            for y in 0..n {
                assert_eq!(f.get(x, y), f.get(y, x));
                if st.point(x).t > st.point(y).t {
                    assert_eq!(f.get(x, y), w.get(x, y));
                }
            }
        }
    }

    #[test]
    fn content_hash_tracks_parameters() {
        let a = op(8, 4, 0.5, 0.4, Topology::Periodic);
        let b = op(8, 4, 0.5, 0.41, Topology::Periodic);
        let c = op(8, 4, 0.5, 0.4, Topology::Reflecting);
        assert_eq!(a.content_hash(), a.clone().content_hash());
        assert_ne!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), c.content_hash());
    }
}
