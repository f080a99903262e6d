use std::time::Instant;

use timeslice_core::lattice::causal_shadow;
use timeslice_core::perturbation::Engine;
use timeslice_core::Direction;

use crate::config::product_region;
use crate::context::Context;
use crate::report::{InputsDigest, Recorder, SuiteReport};
use crate::CliError;

pub fn run(ctx: &Context) -> Result<SuiteReport, CliError> {
    let params = &ctx.config.params.b_independence;
    let vertex = ctx.config.vertex_spec()?;
    let g = ctx.config.coupling(&params.g, &vertex)?;
    let f = ctx.config.coupling(&params.f, &vertex)?;
    let st = ctx.config.spacetime()?;
    let k = product_region(&st, params.k, "b-independence K")?;
    if !f.support().is_subset(&k) {
        return Err(CliError::Config(format!("coupling '{}' is not supported in K", params.f)));
    }
    let field = ctx.field()?;
    let engine = Engine::new(field, vertex);
    let order = ctx.order;
    let mut rec = Recorder::new(ctx.config);

    let started = Instant::now();
    let mut wide = k.clone();
    for _ in 0..params.enlargement {
        wide = wide.dilate(&st);
    }
    let b = g.restrict(&causal_shadow(&st, &k, Direction::Past)?);
    let b_tilde = g.restrict(&causal_shadow(&st, &wide, Direction::Past)?);
    if b == b_tilde {
        return Err(CliError::Config(
            "both restrictions of g coincide; choose g with support near the past cone of K".into(),
        ));
    }
    let first = engine.relative_s_past_compact(&g, &f, &k, order)?;
    let second = engine.relative_s(&b_tilde, &f, order)?;
    let digest = InputsDigest::new("b-independence").u64(order as u64).coupling(&g).coupling(&f).region(&k).finish();
    for (n, dev) in first.deviations(&second).iter().enumerate().skip(1) {
        rec.push(
            format!("b-independence.order-{n}"),
            "S_b(f) does not depend on the admissible restriction b of g",
            digest.clone(),
            *dev,
            1e-9,
            started,
        );
    }
    Ok(rec.finish("b-independence"))
}
