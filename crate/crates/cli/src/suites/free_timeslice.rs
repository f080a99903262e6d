use std::time::Instant;

use timeslice_core::timeslice::compress_with_diagnostics;
use timeslice_core::wick_algebra::{expectation_of_product, onshell_normal_form};
use timeslice_core::WickElement;

use super::{id, rel};
use crate::context::Context;
use crate::report::{InputsDigest, Recorder, SuiteReport};
use crate::sample;
use crate::CliError;

pub fn run(ctx: &Context) -> Result<SuiteReport, CliError> {
    let params = &ctx.config.params.free_timeslice;
    let slab = ctx.config.slab(&params.slab)?;
    let field = ctx.field()?;
    let st = field.spacetime();
    let (lo, hi) = st.interior_rows();
    let [rows_lo, rows_hi] = params.support_rows;
    if rows_lo > rows_hi || rows_lo < lo || rows_hi > hi {
        return Err(CliError::Config(format!(
            "free-timeslice support_rows [{rows_lo}, {rows_hi}] must lie in the interior rows [{lo}, {hi}]"
        )));
    }
    let mut rng = sample::stream(ctx.seed, "free-timeslice");
    let mut rec = Recorder::new(ctx.config);

    let probes: Vec<WickElement> = (0..params.probes)
        .map(|_| {
            let support = sample::points(&mut rng, st, (lo, hi), params.support_points + 2);
            sample::element(&mut rng, st, &support, params.max_grade, 3)
        })
        .collect();

    for i in 0..params.samples {
        let support = sample::points(&mut rng, st, (rows_lo, rows_hi), params.support_points);
        let f = sample::element(&mut rng, st, &support, params.max_grade, 3);
        let digest = |check: &str| InputsDigest::new(check).u64(slab.t_lo as u64).u64(slab.t_hi as u64).element(&f);

        let started = Instant::now();
        let compressed = compress_with_diagnostics(&f, &slab, field)?;
        let g = &compressed.element;
        let outside = g.support().into_iter().filter(|&p| !slab.contains_row(st.point(p as usize).t)).count();
        rec.push(
            id("free-timeslice.support", i),
            "compressed element is supported in the slab",
            digest("free-timeslice.support").finish(),
            outside as f64,
            0.0,
            started,
        );
        rec.push(
            id("free-timeslice.clearing", i),
            "rows cleared by compression carry only roundoff",
            digest("free-timeslice.clearing").finish(),
            compressed.max_residual,
            1e-10,
            started,
        );

        let started = Instant::now();
        let before = onshell_normal_form(&f, &field.commutator, st)?;
        let after = onshell_normal_form(g, &field.commutator, st)?;
        rec.push(
            id("free-timeslice.normal-form", i),
            "compression preserves the class modulo the on-shell ideal",
            digest("free-timeslice.normal-form").finish(),
            before.relative_deviation(&after),
            1e-8,
            started,
        );

        let started = Instant::now();
        let (mut diff, mut scale): (f64, f64) = (0.0, 0.0);
        let mut d = digest("free-timeslice.expectation");
        for h in &probes {
            let ef = expectation_of_product(&f, h, &field.two_point);
            let eg = expectation_of_product(g, h, &field.two_point);
            diff = diff.max((ef - eg).norm());
            scale = scale.max(ef.norm()).max(eg.norm());
            d = d.element(h);
        }
        rec.push(
            id("free-timeslice.expectation", i),
            "omega(g * h) = omega(f * h) for the compressed g",
            d.finish(),
            rel(diff, scale),
            1e-8,
            started,
        );
    }
    Ok(rec.finish("free-timeslice"))
}
