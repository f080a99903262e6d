//! Compression of Wick polynomials into a slab around a Cauchy row.
//!
//! Each slot of a tensor is acted on by
//! `alpha h = h - K(chi * G_adv h)`, which leaves the solution `Delta h`
//! unchanged (the subtracted term lies in the image of `K`) and removes every
//! row above the slab. A mirrored pass with `G_ret` and `1 - chi` clears the
//! rows below it.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field_solver::{apply_k, FreeField, Kernel};
use crate::lattice::{LatticeSpacetime, Slab};
use crate::wick_algebra::{OrderedTensor, SymTensor, WickElement, ZERO};

#[derive(Debug, Clone, PartialEq)]
pub struct CutoffProfile {
    values: Vec<f64>,
    sigma0_t: usize,
    sigma1_t: usize,
}

impl CutoffProfile {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sigma0_t(&self) -> usize {
        self.sigma0_t
    }

    pub fn sigma1_t(&self) -> usize {
        self.sigma1_t
    }

    pub fn at(&self, t: usize) -> f64 {
        self.values[t]
    }
}

fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

/// `chi = 0` up to `slab.t_lo`, `chi = 1` from `slab.t_hi`, smoothstep between.
pub fn build_cutoff(st: &LatticeSpacetime, slab: &Slab) -> Result<CutoffProfile> {
    if slab.t_hi >= st.n_t() {
        return Err(Error::InvalidSlab(format!("slab row {} is outside the lattice", slab.t_hi)));
    }
    let width = (slab.t_hi - slab.t_lo) as f64;
    let values = (0..st.n_t())
        .map(|t| {
            if t <= slab.t_lo {
                0.0
            } else if t >= slab.t_hi {
                1.0
            } else {
                smoothstep((t - slab.t_lo) as f64 / width)
            }
        })
        .collect();
    Ok(CutoffProfile { values, sigma0_t: slab.t_lo, sigma1_t: slab.t_hi })
}

/// Which side of the slab a pass clears.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    /// Advanced kernel with `chi`; clears rows above the slab.
    FromFuture,
    /// Retarded kernel with `1 - chi`; clears rows below the slab.
    FromPast,
}

/// One application of the slot operator to a full test function.
#[derive(Debug, Clone)]
pub struct SlotImage {
    pub values: Vec<C64>,
    /// Largest value removed on the cleared side, relative to the largest
    /// value of the image before removal. Zero in exact arithmetic.
    pub residual: f64,
}

/// The single-slot operator of one pass.
pub struct SlotMap<'a> {
    field: &'a FreeField,
    chi: &'a CutoffProfile,
    pass: Pass,
}

impl<'a> SlotMap<'a> {
    pub fn new(field: &'a FreeField, chi: &'a CutoffProfile, pass: Pass) -> Self {
        Self { field, chi, pass }
    }

    fn kernel(&self) -> &Kernel {
        match self.pass {
            Pass::FromFuture => &self.field.advanced,
            Pass::FromPast => &self.field.retarded,
        }
    }

    fn weight(&self, t: usize) -> f64 {
        match self.pass {
            Pass::FromFuture => self.chi.at(t),
            Pass::FromPast => 1.0 - self.chi.at(t),
        }
    }

    fn cleared(&self, t: usize) -> bool {
        match self.pass {
            Pass::FromFuture => t > self.chi.sigma1_t,
            Pass::FromPast => t < self.chi.sigma0_t,
        }
    }

    /// `h - K(w * G h)` with the cleared rows set to zero.
    pub fn apply(&self, h: &[C64]) -> Result<SlotImage> {
        let st = self.field.spacetime();
        let n_x = st.n_x();
        let mut u = self.kernel().apply(h)?;
        for (i, v) in u.iter_mut().enumerate() {
            *v *= self.weight(i / n_x);
        }
        let ku = apply_k(&self.field.op, &u)?;
        let mut values: Vec<C64> = h.iter().zip(&ku).map(|(a, b)| a - b).collect();
        let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let mut removed: f64 = 0.0;
        for (i, v) in values.iter_mut().enumerate() {
            if self.cleared(i / n_x) {
                removed = removed.max(v.norm());
                *v = ZERO;
            }
        }
        let residual = if scale > 0.0 { removed / scale } else { 0.0 };
        Ok(SlotImage { values, residual })
    }
}

fn check_support(st: &LatticeSpacetime, points: &[u32]) -> Result<()> {
    for &p in points {
        let q = st.point(p as usize);
        if !st.is_interior(q) {
            return Err(Error::BoundarySupport(format!("support point (t={}, x={})", q.t, q.x)));
        }
    }
    Ok(())
}

fn unit_vector(n: usize, i: usize) -> Vec<C64> {
    let mut e = vec![ZERO; n];
    e[i] = C64::new(1.0, 0.0);
    e
}

/// `f - K_i(chi_i G_adv_i f)` on slot `slot`, with the rows above the slab
/// cleared. The result is no longer symmetric.
pub fn alpha_slot(f: &SymTensor, slot: usize, chi: &CutoffProfile, field: &FreeField) -> Result<OrderedTensor> {
    if slot >= f.grade() {
        return Err(Error::Input(format!("slot {slot} out of range for grade {}", f.grade())));
    }
    let st = field.spacetime();
    let points: Vec<u32> = f.points().collect();
    check_support(st, &points)?;
    let map = SlotMap::new(field, chi, Pass::FromFuture);
    let mut columns = HashMap::new();
    for &p in &points {
        if let Entry::Vacant(vacant) = columns.entry(p) {
            let img = map.apply(&unit_vector(st.num_points(), p as usize))?;
            let col: Vec<(u32, C64)> = img
                .values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != ZERO)
                .map(|(x, v)| (x as u32, *v))
                .collect();
            vacant.insert(col);
        }
    }
    Ok(f.to_ordered().map_slot(slot, |y| columns[&y].clone()))
}

/// Output of [`compress_with_diagnostics`].
#[derive(Debug, Clone)]
pub struct Compressed {
    pub element: WickElement,
    /// Largest relative value removed by the exact-support clearing.
    pub max_residual: f64,
}

/// Move `a` into `slab` without changing its class modulo the on-shell ideal.
pub fn compress(a: &WickElement, slab: &Slab, field: &FreeField) -> Result<WickElement> {
    Ok(compress_with_diagnostics(a, slab, field)?.element)
}

pub fn compress_with_diagnostics(a: &WickElement, slab: &Slab, field: &FreeField) -> Result<Compressed> {
    let st = field.spacetime();
    slab.check_interior(st)?;
    let support = a.support();
    check_support(st, &support)?;
    let chi = build_cutoff(st, slab)?;
    let future = SlotMap::new(field, &chi, Pass::FromFuture);
    let past = SlotMap::new(field, &chi, Pass::FromPast);
    let n = st.num_points();
    let base = slab.t_lo * st.n_x();
    let out_dim = (slab.t_hi - slab.t_lo + 1) * st.n_x();

    let columns: Vec<(Vec<C64>, f64)> = support
        .par_iter()
        .map(|&p| -> Result<(Vec<C64>, f64)> {
            let first = future.apply(&unit_vector(n, p as usize))?;
            let second = past.apply(&first.values)?;
            Ok((second.values[base..base + out_dim].to_vec(), first.residual.max(second.residual)))
        })
        .collect::<Result<_>>()?;
    let max_residual = columns.iter().map(|c| c.1).fold(0.0, f64::max);
    let matrix: Vec<Vec<C64>> = (0..out_dim).map(|o| columns.iter().map(|c| c.0[o]).collect()).collect();

    let mut element = WickElement::zero();
    for (_, t) in a.grades() {
        let mut img = t.map_slots(&support, &matrix, out_dim)?.relabel(|c| base as u32 + c);
        img.cleanup();
        element.add_tensor(img);
    }
    Ok(Compressed { element, max_residual })
}
