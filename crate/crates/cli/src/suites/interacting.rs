use std::time::Instant;

use rand::Rng;
use timeslice_core::lattice::causal_shadow;
use timeslice_core::perturbation::{
    interacting_endomorphism, verify_inverse_endomorphism, CouplingFunction, Engine, InteractingSetup, PrimeChoice,
};
use timeslice_core::{Direction, Point, Region, C64};

use super::id;
use crate::config::product_region;
use crate::context::Context;
use crate::report::{InputsDigest, Recorder, SuiteReport};
use crate::sample;
use crate::CliError;

const COUPLING_SCALE: f64 = 0.5;

/// Random coupling on `points` in every monomial of the vertex.
fn random_coupling(rng: &mut impl Rng, points: &[Point], monomials: usize) -> CouplingFunction {
    let mut c = CouplingFunction::new();
    for &p in points {
        for m in 0..monomials {
            c.set(p, m, C64::new(COUPLING_SCALE * rng.gen_range(-1.0..1.0), 0.0));
        }
    }
    c
}

pub fn run(ctx: &Context) -> Result<SuiteReport, CliError> {
    let params = &ctx.config.params.interacting;
    let vertex = ctx.config.vertex_spec()?;
    let g = ctx.config.coupling(&params.g, &vertex)?;
    let st = ctx.config.spacetime()?;
    let setup = InteractingSetup {
        g,
        sigma1_t: params.sigma1_t,
        n: ctx.config.slab(&params.n)?,
        n_inner: ctx.config.slab(&params.n_inner)?,
        k: product_region(&st, params.k, "interacting-timeslice K")?,
    };
    setup.check(&st)?;
    if params.sigma2_t + 1 >= params.sigma1_t || params.sigma2_t < st.interior_rows().0 {
        return Err(CliError::Config(format!(
            "sigma2_t = {} must be an interior row below sigma1_t = {}",
            params.sigma2_t, params.sigma1_t
        )));
    }
    let field = ctx.field()?;
    let monomials = vertex.len();
    let engine = Engine::new(field, vertex);
    let order = ctx.order;
    let mut rng = sample::stream(ctx.seed, "interacting-timeslice");
    let mut rec = Recorder::new(ctx.config);
    let n_region = setup.n.region(&st);
    let k_points: Vec<Point> = setup.k.iter().collect();

    for i in 0..params.generators {
        let f = random_coupling(&mut rng, &k_points, monomials);
        let digest = |check: &str| InputsDigest::new(check).u64(order as u64).coupling(&setup.g).coupling(&f).finish();

        let started = Instant::now();
        let alpha = interacting_endomorphism(&engine, &setup, &f, PrimeChoice::PastOfK, order)?;
        rec.push(
            id("interacting-timeslice.a", i),
            "S_{g,g'}(f) = S(b_-)^-1 S(f) S(b_-)",
            digest("interacting-timeslice.a"),
            alpha.lhs.max_deviation(&alpha.rhs),
            1e-8,
            started,
        );

        let started = Instant::now();
        let outside = alpha.b_prime.support().union(&alpha.b_prime.neg().add(&f).support()).difference(&n_region).len();
        rec.push(
            id("interacting-timeslice.support", i),
            "supp b' and supp(f - b') lie in N",
            digest("interacting-timeslice.support"),
            outside as f64,
            0.0,
            started,
        );

        let started = Instant::now();
        let whole = interacting_endomorphism(&engine, &setup, &f, PrimeChoice::Whole, order)?;
        rec.push(
            id("interacting-timeslice.b", i),
            "S_{g,g'}(f) does not depend on the choice of b'",
            digest("interacting-timeslice.b"),
            alpha.lhs.max_deviation(&whole.lhs),
            1e-9,
            started,
        );

        let started = Instant::now();
        let back = engine.conjugate_inverse(&alpha.b_minus, &alpha.lhs)?;
        rec.push(
            id("interacting-timeslice.c", i),
            "alpha_{b_-}^-1 (alpha S(f)) = S(f)",
            digest("interacting-timeslice.c"),
            back.max_deviation(&alpha.s_f),
            1e-8,
            started,
        );
    }

    // Inverse map: h near the top of the region S = rows [sigma2, sigma1]
    // inside J-(K); the candidates for b_- agree on J+(supp h).
    let past_k = causal_shadow(&st, &setup.k, Direction::Past)?;
    let s_region = Region::rows(&st, params.sigma2_t, params.sigma1_t).intersection(&past_k);
    let g_minus = setup.g_minus();
    for i in 0..params.inverse_samples {
        let started = Instant::now();
        let top = Region::rows(&st, params.sigma1_t - 1, params.sigma1_t).intersection(&s_region);
        let points = sample::points_in(&mut rng, &top, 1);
        let h = random_coupling(&mut rng, &points, monomials);
        let future_h = causal_shadow(&st, &h.support(), Direction::Future)?;
        let b_near = g_minus.restrict(&future_h);
        if b_near == g_minus {
            return Err(CliError::Config(
                "every point of g_- lies in the causal future of h; the inverse check would be vacuous".into(),
            ));
        }
        let report = verify_inverse_endomorphism(&engine, &h, &b_near, &g_minus, params.sigma1_t, order)?;
        let digest = InputsDigest::new("interacting-timeslice.d").u64(order as u64).coupling(&g_minus).coupling(&h).finish();
        rec.push(
            id("interacting-timeslice.d", i),
            "S(b_- + h) S(b_-)^-1 does not depend on b_- outside J+(supp h)",
            digest.clone(),
            report.deviation,
            1e-9,
            started,
        );
        rec.push(
            id("interacting-timeslice.d-conjugation", i),
            "S(b_- + h) S(b_-)^-1 = S(b_-) S(h) S(b_-)^-1",
            digest,
            report.conjugation_deviation,
            1e-9,
            started,
        );
    }
    Ok(rec.finish("interacting-timeslice"))
}
