use std::time::Instant;

use timeslice_core::field_solver::apply_k;
use timeslice_core::wick_algebra::{generator, star_product};
use timeslice_core::{WickElement, C64};

use super::{id, norm_max, rel, scaled_diff};
use crate::context::Context;
use crate::report::{InputsDigest, Recorder, SuiteReport};
use crate::sample;
use crate::CliError;

const I: C64 = C64::new(0.0, 1.0);

pub fn run(ctx: &Context) -> Result<SuiteReport, CliError> {
    let params = &ctx.config.params.ccr;
    let field = ctx.field()?;
    let st = field.spacetime();
    let mut rng = sample::stream(ctx.seed, "ccr");
    let mut rec = Recorder::new(ctx.config);
    let (lo, hi) = st.interior_rows();

    let mut smearings = Vec::with_capacity(params.samples);
    for i in 0..params.samples {
        let started = Instant::now();
        let pf = sample::points(&mut rng, st, (lo, hi), params.support_points);
        let pg = sample::points(&mut rng, st, (lo, hi), params.support_points);
        let f = sample::test_function(&mut rng, st, &pf);
        let g = sample::test_function(&mut rng, st, &pg);
        let (a, b) = (generator(st, &f)?, generator(st, &g)?);
        let fg = star_product(&a, &b, &field.two_point);
        let gf = star_product(&b, &a, &field.two_point);
        // Delta(f, g) straight from the two Green kernels.
        let delta = field.advanced.pair(&f, &g)? - field.retarded.pair(&f, &g)?;
        let expected = WickElement::scalar(I * delta);
        let dev = scaled_diff(&fg.sub(&gf), &expected, fg.max_abs().max(gf.max_abs()));
        let digest = InputsDigest::new("ccr.commutator").u64(ctx.seed).values(&f).values(&g).finish();
        rec.push(id("ccr.commutator", i), "CCR [phi(f), phi(g)] = i Delta(f, g) 1", digest, dev, 1e-10, started);
        smearings.push(f);
    }

    let started = Instant::now();
    let w = &field.two_point;
    let d = &field.commutator;
    let n = st.num_points();
    let mut worst: f64 = 0.0;
    for x in 0..n {
        for y in 0..n {
            worst = worst.max((w.get(x, y) - w.get(y, x) - I * d.get(x, y)).norm());
        }
    }
    let digest = InputsDigest::new("ccr.two-point.antisymmetric").str(ctx.config_digest).finish();
    rec.push(
        "ccr.two-point.antisymmetric",
        "antisymmetric part of the two-point function is i Delta",
        digest,
        rel(worst, d.max_abs()),
        1e-10,
        started,
    );

    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for y in 0..n {
        let col: Vec<C64> = (0..n).map(|x| w.get(x, y)).collect();
        worst = worst.max(norm_max(&apply_k(&field.op, &col)?));
    }
    let digest = InputsDigest::new("ccr.two-point.bisolution").str(ctx.config_digest).finish();
    let scale = w.max_abs() / (st.dt() * st.dt());
    rec.push("ccr.two-point.bisolution", "two-point function solves K in each argument", digest, rel(worst, scale), 1e-10, started);

    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut digest = InputsDigest::new("ccr.two-point.positive").u64(ctx.seed);
    for f in &smearings {
        let conj: Vec<C64> = f.iter().map(|c| c.conj()).collect();
        let value = w.pair(&conj, f)?;
        let bound: f64 = {
            let dv2 = st.cell_volume() * st.cell_volume();
            let mut s = 0.0;
            for (x, fx) in f.iter().enumerate().filter(|(_, v)| v.norm() > 0.0) {
                for (y, fy) in f.iter().enumerate().filter(|(_, v)| v.norm() > 0.0) {
                    s += dv2 * fx.norm() * w.get(x, y).norm() * fy.norm();
                }
            }
            s
        };
        worst = worst.max(rel((-value.re).max(0.0) + value.im.abs(), bound));
        digest = digest.values(f);
    }
    rec.push("ccr.two-point.positive", "omega_2(conj f, f) >= 0", digest.finish(), worst, 1e-10, started);

    Ok(rec.finish("ccr"))
}
