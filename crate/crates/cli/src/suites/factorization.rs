use std::time::Instant;

use timeslice_core::perturbation::{CouplingFunction, Engine};

use crate::context::Context;
use crate::report::{InputsDigest, Recorder, SuiteReport};
use crate::CliError;

const ANCHOR: &str = "causal factorization S(f+g+h) = S(f+g) S(g)^-1 S(g+h)";

pub fn run(ctx: &Context) -> Result<SuiteReport, CliError> {
    let params = &ctx.config.params.factorization;
    let vertex = ctx.config.vertex_spec()?;
    let f = ctx.config.coupling(&params.f, &vertex)?;
    let g = ctx.config.coupling(&params.g, &vertex)?;
    let h = ctx.config.coupling(&params.h, &vertex)?;
    let field = ctx.field()?;
    let engine = Engine::new(field, vertex);
    let order = ctx.order;
    let mut rec = Recorder::new(ctx.config);
    let digest = |check: &str, g: &CouplingFunction| {
        InputsDigest::new(check).u64(order as u64).coupling(&f).coupling(g).coupling(&h).finish()
    };

    let started = Instant::now();
    let report = engine.verify_causal_factorization(&f, &g, &h, order)?;
    for (n, dev) in report.per_order.iter().enumerate().skip(1) {
        let check = format!("factorization.causal.order-{n}");
        rec.push(check.clone(), ANCHOR, digest(&check, &g), *dev, 1e-9, started);
    }

    let started = Instant::now();
    let zero = CouplingFunction::new();
    let report = engine.verify_causal_factorization(&f, &zero, &h, order)?;
    rec.push(
        "factorization.no-middle",
        "S(f+h) = S(f) S(h) for f later than h",
        digest("factorization.no-middle", &zero),
        report.deviation,
        1e-9,
        started,
    );

    let started = Instant::now();
    let left = engine.relative_s(&g, &f.add(&h), order)?;
    let right = engine.multiply(&engine.relative_s(&g, &f, order)?, &engine.relative_s(&g, &h, order)?);
    rec.push(
        "factorization.relative",
        "S_g(f+h) = S_g(f) S_g(h) for f later than h",
        digest("factorization.relative", &g),
        left.max_deviation(&right),
        1e-9,
        started,
    );
    Ok(rec.finish("factorization"))
}
