use std::time::Instant;

use timeslice_core::field_solver::apply_k;
use timeslice_core::{Kernel, C64};

use super::rel;
use crate::context::Context;
use crate::oracle::distance;
use crate::report::{InputsDigest, Recorder, SuiteReport};
use crate::CliError;

pub fn run(ctx: &Context) -> Result<SuiteReport, CliError> {
    let field = ctx.field()?;
    let st = field.spacetime();
    let n = st.num_points();
    let mut rec = Recorder::new(ctx.config);
    let digest = |check: &str| InputsDigest::new(check).str(ctx.config_digest).finish();
    // x lies in the causal future of y.
    let future = |x: usize, y: usize| {
        let (px, py) = (st.point(x), st.point(y));
        px.t >= py.t && distance(st.topology(), st.n_x(), px.x, py.x) <= px.t - py.t
    };

    let started = Instant::now();
    let mut outside: f64 = 0.0;
    for x in 0..n {
        for y in (0..n).filter(|&y| !future(x, y)) {
            outside = outside.max(field.retarded.get(x, y).norm());
        }
    }
    rec.push("green.retarded.support", "supp G_ret(., y) in J+(y)", digest("green.retarded.support"), outside, 0.0, started);

    let started = Instant::now();
    let mut outside: f64 = 0.0;
    for x in 0..n {
        for y in (0..n).filter(|&y| !future(y, x)) {
            outside = outside.max(field.advanced.get(x, y).norm());
        }
    }
    rec.push("green.advanced.support", "supp G_adv(., y) in J-(y)", digest("green.advanced.support"), outside, 0.0, started);

    for (name, kernel) in [("retarded", &field.retarded), ("advanced", &field.advanced)] {
        let started = Instant::now();
        let check = format!("green.{name}.inverse");
        let dev = inverse_residual(ctx, kernel)?;
        rec.push(check.clone(), "K G = id on interior sources", digest(&check), dev, 1e-10, started);
    }

    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for x in 0..n {
        for y in 0..n {
            worst = worst.max((field.advanced.get(x, y) - field.retarded.get(y, x)).norm());
        }
    }
    rec.push(
        "green.adjoint",
        "G_adv is the transpose of G_ret",
        digest("green.adjoint"),
        rel(worst, field.retarded.max_abs()),
        1e-12,
        started,
    );

    Ok(rec.finish("green"))
}

/// `max |dV (K G)(x, y) - delta(x, y)|` over interior sources `y`.
fn inverse_residual(ctx: &Context, g: &Kernel) -> Result<f64, CliError> {
    let field = ctx.field()?;
    let st = field.spacetime();
    let n = st.num_points();
    let dv = st.cell_volume();
    let mut worst: f64 = 0.0;
    for y in (0..n).filter(|&y| st.is_interior(st.point(y))) {
        let col: Vec<C64> = (0..n).map(|x| g.get(x, y)).collect();
        for (x, v) in apply_k(&field.op, &col)?.iter().enumerate() {
            let expected = if x == y { 1.0 } else { 0.0 };
            worst = worst.max((v * dv - expected).norm());
        }
    }
    Ok(worst)
}
