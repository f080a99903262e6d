//! Finite (time x space) lattice with the causal structure of the leapfrog
//! stencil.
//!
//! Constant-time rows play the role of Cauchy surfaces. A point `q` is in the
//! causal future of `p` when `q.t >= p.t` and the spatial lattice distance
//! between them is at most `q.t - p.t` (one site per time step, which is the
//! dependence cone of the nearest-neighbour Klein-Gordon stencil). In physical
//! units this is `|dx_phys| <= (dx/dt) * dt_phys`.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Slabs thinner than this cannot hold a cutoff transition that keeps the
/// second-order time stencil inside the slab.
pub const MIN_SLAB_THICKNESS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    Periodic,
    Reflecting,
}

impl Topology {
    pub fn tag(self) -> u8 {
        match self {
            Topology::Periodic => 0,
            Topology::Reflecting => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Past,
    Future,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Point {
    pub t: usize,
    pub x: usize,
}

impl Point {
    pub const fn new(t: usize, x: usize) -> Self {
        Self { t, x }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpacetime {
    n_t: usize,
    n_x: usize,
    dt: f64,
    dx: f64,
    topology: Topology,
}

impl LatticeSpacetime {
    pub fn new(n_t: usize, n_x: usize, dt: f64, dx: f64, topology: Topology) -> Result<Self> {
        if !(dt.is_finite() && dx.is_finite() && dt > 0.0 && dx > 0.0) {
            return Err(Error::InvalidLattice(format!(
                "spacings must be positive and finite (dt={dt}, dx={dx})"
            )));
        }
        if dt > dx {
            return Err(Error::InvalidLattice(format!(
                "dt={dt} exceeds dx={dx}; the stencil cone would be slower than light"
            )));
        }
        if n_t < 8 {
            return Err(Error::InvalidLattice(format!("n_t={n_t} < 8")));
        }
        if n_x < 2 {
            return Err(Error::InvalidLattice(format!("n_x={n_x} < 2")));
        }
        if n_t.checked_mul(n_x).is_none_or(|p| p > u32::MAX as usize) {
            return Err(Error::InvalidLattice("lattice too large".into()));
        }
        Ok(Self { n_t, n_x, dt, dx, topology })
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn num_points(&self) -> usize {
        self.n_t * self.n_x
    }

    /// Spacetime volume element attached to each lattice point.
    pub fn cell_volume(&self) -> f64 {
        self.dt * self.dx
    }

    /// Flat index `t * n_x + x`.
    pub fn index(&self, p: Point) -> usize {
        p.t * self.n_x + p.x
    }

    pub fn point(&self, index: usize) -> Point {
        Point::new(index / self.n_x, index % self.n_x)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.t < self.n_t && p.x < self.n_x
    }

    pub fn check(&self, p: Point) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::OutOfBounds { t: p.t, x: p.x, n_t: self.n_t, n_x: self.n_x })
        }
    }

    /// First and last row on which test functions and couplings may live.
    pub fn interior_rows(&self) -> (usize, usize) {
        (2, self.n_t - 3)
    }

    pub fn is_interior(&self, p: Point) -> bool {
        let (lo, hi) = self.interior_rows();
        self.contains(p) && p.t >= lo && p.t <= hi
    }

    /// Spatial lattice distance, with wraparound on periodic lattices.
    pub fn spatial_distance(&self, a: usize, b: usize) -> usize {
        let d = a.abs_diff(b);
        match self.topology {
            Topology::Periodic => d.min(self.n_x - d),
            Topology::Reflecting => d,
        }
    }

    /// Spatial neighbours of a site under the lattice topology. On a periodic
    /// lattice with two sites both neighbours coincide and are reported twice,
    /// matching the stencil.
    pub fn spatial_neighbours(&self, x: usize) -> Vec<usize> {
        let n = self.n_x;
        match self.topology {
            Topology::Periodic => vec![(x + n - 1) % n, (x + 1) % n],
            Topology::Reflecting => {
                let mut out = Vec::with_capacity(2);
                if x > 0 {
                    out.push(x - 1);
                }
                if x + 1 < n {
                    out.push(x + 1);
                }
                out
            }
        }
    }

    /// `q` lies in the causal future of `p` (reflexive).
    pub fn causally_precedes(&self, p: Point, q: Point) -> bool {
        q.t >= p.t && self.spatial_distance(p.x, q.x) <= q.t - p.t
    }

    pub fn all_points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.n_t).flat_map(move |t| (0..self.n_x).map(move |x| Point::new(t, x)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Region {
    points: BTreeSet<Point>,
}

impl Region {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points<I: IntoIterator<Item = Point>>(points: I) -> Self {
        Self { points: points.into_iter().collect() }
    }

    /// Product region `[t_lo, t_hi] x [x_lo, x_hi]`, bounds inclusive.
    pub fn product(t_lo: usize, t_hi: usize, x_lo: usize, x_hi: usize) -> Self {
        Self::from_points(
            (t_lo..=t_hi).flat_map(|t| (x_lo..=x_hi).map(move |x| Point::new(t, x))),
        )
    }

    pub fn rows(st: &LatticeSpacetime, t_lo: usize, t_hi: usize) -> Self {
        Self::product(t_lo, t_hi.min(st.n_t() - 1), 0, st.n_x() - 1)
    }

    pub fn full(st: &LatticeSpacetime) -> Self {
        Self::from_points(st.all_points())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.points.contains(&p)
    }

    pub fn insert(&mut self, p: Point) -> bool {
        self.points.insert(p)
    }

    pub fn iter(&self) -> impl Iterator<Item = Point> + '_ {
        self.points.iter().copied()
    }

    pub fn union(&self, other: &Region) -> Region {
        Region { points: self.points.union(&other.points).copied().collect() }
    }

    pub fn intersection(&self, other: &Region) -> Region {
        Region { points: self.points.intersection(&other.points).copied().collect() }
    }

    pub fn difference(&self, other: &Region) -> Region {
        Region { points: self.points.difference(&other.points).copied().collect() }
    }

    pub fn is_subset(&self, other: &Region) -> bool {
        self.points.is_subset(&other.points)
    }

    pub fn is_disjoint(&self, other: &Region) -> bool {
        self.points.is_disjoint(&other.points)
    }

    pub fn min_t(&self) -> Option<usize> {
        self.points.iter().map(|p| p.t).min()
    }

    pub fn max_t(&self) -> Option<usize> {
        self.points.iter().map(|p| p.t).max()
    }

    pub fn check_within(&self, st: &LatticeSpacetime) -> Result<()> {
        self.points.iter().try_for_each(|&p| st.check(p))
    }

    /// Grow the region by one lattice step in time and space, clipped to the
    /// lattice.
    pub fn dilate(&self, st: &LatticeSpacetime) -> Region {
        let mut out = self.clone();
        for p in self.iter() {
            let ts = [p.t.checked_sub(1), Some(p.t), (p.t + 1 < st.n_t()).then_some(p.t + 1)];
            let mut xs = st.spatial_neighbours(p.x);
            xs.push(p.x);
            for t in ts.into_iter().flatten() {
                for &x in &xs {
                    out.insert(Point::new(t, x));
                }
            }
        }
        out
    }
}

impl FromIterator<Point> for Region {
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        Self::from_points(iter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slab {
    pub t_lo: usize,
    pub t_hi: usize,
}

impl Slab {
    pub fn new(t_lo: usize, t_hi: usize) -> Result<Self> {
        if t_hi <= t_lo {
            return Err(Error::InvalidSlab(format!("t_hi={t_hi} must exceed t_lo={t_lo}")));
        }
        if t_hi - t_lo < MIN_SLAB_THICKNESS {
            return Err(Error::InvalidSlab(format!(
                "thickness {} is below the minimum of {MIN_SLAB_THICKNESS} rows",
                t_hi - t_lo
            )));
        }
        Ok(Self { t_lo, t_hi })
    }

    pub fn thickness(&self) -> usize {
        self.t_hi - self.t_lo
    }

    pub fn contains_row(&self, t: usize) -> bool {
        t >= self.t_lo && t <= self.t_hi
    }

    pub fn contains_slab(&self, inner: &Slab) -> bool {
        inner.t_lo >= self.t_lo && inner.t_hi <= self.t_hi
    }

    pub fn region(&self, st: &LatticeSpacetime) -> Region {
        Region::rows(st, self.t_lo, self.t_hi)
    }

    /// Both boundary rows must lie within the interior rows of the lattice.
    pub fn check_interior(&self, st: &LatticeSpacetime) -> Result<()> {
        let (lo, hi) = st.interior_rows();
        if self.t_lo < lo || self.t_hi > hi {
            return Err(Error::BoundarySupport(format!(
                "slab [{}, {}] leaves the interior rows [{lo}, {hi}]",
                self.t_lo, self.t_hi
            )));
        }
        Ok(())
    }
}

/// Causal future or past `J±(r)`: every point reachable from `r` by lattice
/// causal steps. Computed by row-wise dilation, one site per time step.
pub fn causal_shadow(st: &LatticeSpacetime, r: &Region, direction: Direction) -> Result<Region> {
    r.check_within(st)?;
    let n_t = st.n_t();
    let n_x = st.n_x();
    let mut rows: Vec<Vec<bool>> = vec![vec![false; n_x]; n_t];
    for p in r.iter() {
        rows[p.t][p.x] = true;
    }
    let order: Vec<usize> = match direction {
        Direction::Future => (0..n_t).collect(),
        Direction::Past => (0..n_t).rev().collect(),
    };
    for w in order.windows(2) {
        let (from, to) = (w[0], w[1]);
        let spread: Vec<usize> = (0..n_x)
            .filter(|&x| rows[from][x])
            .flat_map(|x| {
                let mut v = st.spatial_neighbours(x);
                v.push(x);
                v
            })
            .collect();
        for x in spread {
            rows[to][x] = true;
        }
    }
    Ok(rows
        .iter()
        .enumerate()
        .flat_map(|(t, row)| {
            row.iter().enumerate().filter(|(_, &on)| on).map(move |(x, _)| Point::new(t, x))
        })
        .collect())
}

/// Points `y` on row `sigma_t` whose past cones together cover `k`, chosen
/// greedily (most newly covered points first, lowest `x` on ties).
pub fn past_cover(st: &LatticeSpacetime, k: &Region, sigma_t: usize) -> Result<Vec<Point>> {
    k.check_within(st)?;
    if sigma_t >= st.n_t() {
        return Err(Error::OutOfBounds { t: sigma_t, x: 0, n_t: st.n_t(), n_x: st.n_x() });
    }
    if let Some(t_max) = k.max_t() {
        if sigma_t <= t_max {
            return Err(Error::Geometry(format!(
                "row {sigma_t} is not in the future of the compact set (max t = {t_max})"
            )));
        }
    }
    let candidates: Vec<(Point, Vec<Point>)> = (0..st.n_x())
        .map(|x| {
            let y = Point::new(sigma_t, x);
            let covered = k.iter().filter(|&p| st.causally_precedes(p, y)).collect();
            (y, covered)
        })
        .collect();
    let mut uncovered: BTreeSet<Point> = k.iter().collect();
    let mut cover = Vec::new();
    while !uncovered.is_empty() {
        let (y, gain) = candidates
            .iter()
            .map(|(y, pts)| (*y, pts.iter().filter(|p| uncovered.contains(p)).count()))
            .fold((Point::new(sigma_t, 0), 0), |best, cur| if cur.1 > best.1 { cur } else { best });
        // The point straight above any uncovered point covers it.
        assert!(gain > 0, "no finite cover of the compact set on row {sigma_t}");
        cover.push(y);
        uncovered.retain(|&p| !st.causally_precedes(p, y));
    }
    Ok(cover)
}

/// Superset of `J-(k) ∩ p` built from a finite cover of `k` by past cones of
/// points on the row `sigma_t`: the union over the cover of `J-(y) ∩ p`.
pub fn prop2_cover_bound(
    st: &LatticeSpacetime,
    k: &Region,
    p: &Region,
    sigma_t: usize,
) -> Result<Region> {
    p.check_within(st)?;
    let cover = past_cover(st, k, sigma_t)?;
    let mut bound = Region::new();
    for y in cover {
        let cone = causal_shadow(st, &Region::from_points([y]), Direction::Past)?;
        bound = bound.union(&cone.intersection(p));
    }
    Ok(bound)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(topology: Topology) -> LatticeSpacetime {
        LatticeSpacetime::new(12, 9, 1.0, 1.0, topology).unwrap()
    }

    #[test]
    fn rejects_bad_lattices() {
        assert!(LatticeSpacetime::new(12, 8, 1.5, 1.0, Topology::Periodic).is_err());
        assert!(LatticeSpacetime::new(7, 8, 1.0, 1.0, Topology::Periodic).is_err());
        assert!(LatticeSpacetime::new(8, 1, 1.0, 1.0, Topology::Periodic).is_err());
        assert!(LatticeSpacetime::new(8, 2, 0.0, 1.0, Topology::Periodic).is_err());
    }

    #[test]
    fn single_point_past_cone_is_discrete_light_cone() {
        let st = lattice(Topology::Reflecting);
        let p = Point::new(7, 4);
        let cone = causal_shadow(&st, &Region::from_points([p]), Direction::Past).unwrap();
        for q in st.all_points() {
            let expected = q.t <= p.t && q.x.abs_diff(p.x) <= p.t - q.t;
            assert_eq!(cone.contains(q), expected, "{q:?}");
        }
    }

    #[test]
    fn periodic_cone_wraps() {
        let st = lattice(Topology::Periodic);
        let p = Point::new(3, 0);
        let cone = causal_shadow(&st, &Region::from_points([p]), Direction::Future).unwrap();
        assert!(cone.contains(Point::new(4, 8)));
        assert!(cone.contains(Point::new(5, 7)));
        assert!(!cone.contains(Point::new(5, 6)));
        assert!(!cone.contains(Point::new(2, 0)));
    }

    #[test]
    fn empty_region_has_empty_shadow() {
        let st = lattice(Topology::Periodic);
        assert!(causal_shadow(&st, &Region::new(), Direction::Past).unwrap().is_empty());
        assert!(prop2_cover_bound(&st, &Region::new(), &Region::full(&st), 5)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn out_of_bounds_is_rejected() {
        let st = lattice(Topology::Periodic);
        let r = Region::from_points([Point::new(12, 0)]);
        assert!(matches!(
            causal_shadow(&st, &r, Direction::Past),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn two_point_shadow_is_union_of_cones() {
        let st = lattice(Topology::Periodic);
        let a = Point::new(6, 1);
        let b = Point::new(9, 6);
        let both = causal_shadow(&st, &Region::from_points([a, b]), Direction::Past).unwrap();
        let union: Region = st
            .all_points()
            .filter(|&q| st.causally_precedes(q, a) || st.causally_precedes(q, b))
            .collect();
        assert_eq!(both, union);
    }

    #[test]
    fn single_point_cover_is_point_above() {
        let st = lattice(Topology::Reflecting);
        let k = Region::from_points([Point::new(4, 3)]);
        let cover = past_cover(&st, &k, 8).unwrap();
        assert_eq!(cover.len(), 1);
        assert!(st.causally_precedes(Point::new(4, 3), cover[0]));
        let full = Region::full(&st);
        let bound = prop2_cover_bound(&st, &k, &full, 8).unwrap();
        let shadow = causal_shadow(&st, &k, Direction::Past).unwrap();
        assert!(shadow.is_subset(&bound));
    }

    #[test]
    fn cover_row_must_be_in_the_future() {
        let st = lattice(Topology::Reflecting);
        let k = Region::from_points([Point::new(4, 3)]);
        assert!(matches!(past_cover(&st, &k, 4), Err(Error::Geometry(_))));
    }

    #[test]
    fn slab_thickness_is_enforced() {
        assert!(Slab::new(4, 7).is_err());
        assert!(Slab::new(4, 4).is_err());
        let s = Slab::new(4, 8).unwrap();
        assert_eq!(s.thickness(), 4);
        let st = lattice(Topology::Periodic);
        assert!(s.check_interior(&st).is_ok());
        assert!(Slab::new(1, 6).unwrap().check_interior(&st).is_err());
    }
}
