use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use timeslice_core::wick_algebra::{
    adjoint, apply_k_slot, cauchy_point, onshell_normal_form, star_product, OnShellSymbol,
};
use timeslice_core::{Kernel, KernelKind, LatticeSpacetime, Point, WickElement, C64};

use super::{id, rel};
use crate::context::Context;
use crate::oracle;
use crate::report::{InputsDigest, Recorder, SuiteReport};
use crate::sample;
use crate::CliError;

const MAX_WEIGHT_GRADE: usize = 3;

pub fn run(ctx: &Context) -> Result<SuiteReport, CliError> {
    let mut rec = Recorder::new(ctx.config);
    weights(&mut rec)?;
    products(ctx, &mut rec)?;
    ideal(ctx, &mut rec)?;
    Ok(rec.finish("wick-algebra"))
}

/// For each `(m, l, k)`, the star product of two monomials on distinct points
/// with a constant unit two-point kernel. The grade `m + l - 2k` part,
/// summed over monomials, counts the k-fold contractions.
fn weights(rec: &mut Recorder) -> Result<(), CliError> {
    let n = 2 * MAX_WEIGHT_GRADE;
    let ones = Kernel::from_values(KernelKind::TwoPoint, n, 1.0, vec![C64::new(1.0, 0.0); n * n])?;
    for m in 0..=MAX_WEIGHT_GRADE {
        for l in 0..=MAX_WEIGHT_GRADE {
            let x: Vec<u32> = (0..m as u32).collect();
            let y: Vec<u32> = (0..l as u32).map(|i| i + MAX_WEIGHT_GRADE as u32).collect();
            let a = oracle::from_monomials(&BTreeMap::from([(x, C64::new(1.0, 0.0))]), 1.0);
            let b = oracle::from_monomials(&BTreeMap::from([(y, C64::new(1.0, 0.0))]), 1.0);
            let product = oracle::to_monomials(&star_product(&a, &b, &ones), 1.0);
            for k in 0..=m.min(l) {
                let started = Instant::now();
                let grade = m + l - 2 * k;
                let total: f64 = product.iter().filter(|(key, _)| key.len() == grade).map(|(_, v)| v.re).sum();
                let expected = oracle::pairing_count(m, l, k);
                let rounded = total.round();
                // A non-integer total cannot match; report its distance instead.
                let dev = if (total - rounded).abs() > 1e-9 * rounded.max(1.0) {
                    (total - expected as f64).abs().max(f64::MIN_POSITIVE)
                } else {
                    (rounded - expected as f64).abs()
                };
                let check = format!("wick-algebra.weight.m{m}-l{l}-k{k}");
                let digest = InputsDigest::new(&check).u64(expected).finish();
                rec.push(check, "contraction weight m! l! / ((m-k)! (l-k)! k!)", digest, dev, 0.0, started);
            }
        }
    }
    Ok(())
}

fn random_element(
    rng: &mut rand_chacha::ChaCha8Rng,
    st: &LatticeSpacetime,
    points: usize,
    max_grade: usize,
) -> WickElement {
    let (lo, hi) = st.interior_rows();
    let support: Vec<Point> = sample::points(rng, st, (lo, hi), points);
    sample::element(rng, st, &support, max_grade, 3)
}

fn products(ctx: &Context, rec: &mut Recorder) -> Result<(), CliError> {
    let params = &ctx.config.params.wick;
    let field = ctx.field()?;
    let st = field.spacetime();
    let w = &field.two_point;
    let dv = st.cell_volume();
    let mut rng = sample::stream(ctx.seed, "wick-algebra.products");

    let omega = |x: u32, y: u32| w.get(x as usize, y as usize);
    for i in 0..params.oracle_samples {
        let started = Instant::now();
        let a = random_element(&mut rng, st, params.support_points, params.max_grade);
        let b = random_element(&mut rng, st, params.support_points, params.max_grade);
        let dev = star_product(&a, &b, w).relative_deviation(&oracle::star_product(&a, &b, dv, &omega));
        let digest = InputsDigest::new("wick-algebra.oracle").element(&a).element(&b).finish();
        rec.push(id("wick-algebra.oracle", i), "star product equals the Wick expansion of monomials", digest, dev, 1e-12, started);
    }

    let mut adjoint_dev: f64 = 0.0;
    let adjoint_started = Instant::now();
    let mut adjoint_digest = InputsDigest::new("wick-algebra.adjoint");
    for i in 0..params.associativity_samples {
        let started = Instant::now();
        let a = random_element(&mut rng, st, params.support_points, params.max_grade);
        let b = random_element(&mut rng, st, params.support_points, params.max_grade);
        let c = random_element(&mut rng, st, params.support_points, params.max_grade);
        let ab = star_product(&a, &b, w);
        let left = star_product(&ab, &c, w);
        let right = star_product(&a, &star_product(&b, &c, w), w);
        let digest = InputsDigest::new("wick-algebra.associativity").element(&a).element(&b).element(&c).finish();
        rec.push(
            id("wick-algebra.associativity", i),
            "star product is associative",
            digest,
            left.relative_deviation(&right),
            1e-10,
            started,
        );
        let swapped = star_product(&adjoint(&b), &adjoint(&a), w);
        adjoint_dev = adjoint_dev.max(adjoint(&ab).relative_deviation(&swapped));
        adjoint_digest = adjoint_digest.element(&a).element(&b);
    }
    if params.associativity_samples > 0 {
        rec.push("wick-algebra.adjoint", "(a * b)^* = b^* * a^*", adjoint_digest.finish(), adjoint_dev, 1e-10, adjoint_started);
    }
    Ok(())
}

/// Bound on the normal form of `a` without cancellation: every coefficient
/// times the largest Cauchy-data entry to the power of its grade.
fn cancellation_scale(a: &WickElement, m_max: f64) -> Vec<(usize, f64)> {
    a.grades()
        .map(|(n, t)| (n, t.iter().map(|(_, v)| v.norm()).sum::<f64>() * m_max.powi(n as i32)))
        .collect()
}

/// Largest normal-form coefficient relative to [`cancellation_scale`].
fn vanishing(nf: &OnShellSymbol, a: &WickElement, m_max: f64) -> f64 {
    cancellation_scale(a, m_max)
        .into_iter()
        .map(|(n, scale)| rel(nf.grade(n).map_or(0.0, |t| t.max_abs()), scale))
        .fold(0.0, f64::max)
}

/// No-cancellation bound on any normal-form coefficient of `a * b`: every
/// contraction pattern with the largest pairing weight `w_max`.
fn product_scale(a: &WickElement, b: &WickElement, m_max: f64, w_max: f64) -> f64 {
    let l1 = |t: &timeslice_core::SymTensor| t.iter().map(|(_, v)| v.norm()).sum::<f64>();
    let mut worst: f64 = 0.0;
    for (m, ta) in a.grades() {
        for (l, tb) in b.grades() {
            for k in 0..=m.min(l) {
                let patterns = oracle::pairing_count(m, l, k) as f64;
                let n = (m + l - 2 * k) as i32;
                worst = worst.max(patterns * l1(ta) * l1(tb) * w_max.powi(k as i32) * m_max.powi(n));
            }
        }
    }
    worst
}

fn ideal(ctx: &Context, rec: &mut Recorder) -> Result<(), CliError> {
    let params = &ctx.config.params.wick;
    let field = ctx.field()?;
    let st = field.spacetime();
    let w = &field.two_point;
    let dv = st.cell_volume();
    let d = &field.commutator;
    let mut rng = sample::stream(ctx.seed, "wick-algebra.ideal");
    let mut m_max: f64 = 0.0;
    for c in 0..2 * st.n_x() {
        m_max = m_max.max(d.row(cauchy_point(st, c)).iter().map(|v| v.norm() * dv).fold(0.0, f64::max));
    }

    for i in 0..params.ideal_samples {
        let started = Instant::now();
        let h = random_element(&mut rng, st, params.support_points, params.max_grade.max(1) + 1);
        let kh = apply_k_slot(&h, 0, &field.op);
        let nf = onshell_normal_form(&kh, d, st)?;
        let digest = InputsDigest::new("wick-algebra.ideal").element(&h).finish();
        rec.push(id("wick-algebra.ideal", i), "normal form of S K_1 h vanishes", digest, vanishing(&nf, &kh, m_max), 1e-10, started);

        let started = Instant::now();
        let b = random_element(&mut rng, st, params.support_points, params.max_grade);
        let bound = product_scale(&b, &kh, m_max, w.max_abs() * dv * dv);
        let mut dev: f64 = 0.0;
        for x in [star_product(&b, &kh, w), star_product(&kh, &b, w)] {
            let nf = onshell_normal_form(&x, d, st)?;
            dev = dev.max(rel(nf.max_abs(), bound));
        }
        let digest = InputsDigest::new("wick-algebra.absorbency").element(&h).element(&b).finish();
        rec.push(id("wick-algebra.absorbency", i), "b * (S K_1 h) and (S K_1 h) * b lie in the ideal", digest, dev, 1e-10, started);
    }

    // The quotient must not be degenerate: grade-one elements supported on
    // four rows reach every Cauchy datum.
    let started = Instant::now();
    let (lo, _) = st.interior_rows();
    let columns: Vec<usize> = (lo * st.n_x()..(lo + 4).min(st.n_t()) * st.n_x()).collect();
    let dim = 2 * st.n_x();
    let m = DMatrix::from_fn(dim, columns.len(), |c, j| dv * d.get(cauchy_point(st, c), columns[j]).re);
    let sv = m.singular_values();
    let top = sv.max();
    let rank = sv.iter().filter(|s| **s > 1e-10 * top).count();
    let digest = InputsDigest::new("wick-algebra.quotient.rank").str(ctx.config_digest).finish();
    rec.push(
        "wick-algebra.quotient.rank",
        "on-shell quotient separates all Cauchy data",
        digest,
        (dim - rank.min(dim)) as f64,
        0.0,
        started,
    );
    Ok(())
}
