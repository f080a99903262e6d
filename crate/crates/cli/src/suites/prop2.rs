use std::time::Instant;

use rand::Rng;
use timeslice_core::lattice::prop2_cover_bound;
use timeslice_core::{LatticeSpacetime, Point, Region};

use super::id;
use crate::context::Context;
use crate::oracle::causal_past;
use crate::report::{InputsDigest, Recorder, SuiteReport};
use crate::sample;
use crate::CliError;

/// Points of `J-(k) ∩ p` that the cover bound misses.
fn misses(st: &LatticeSpacetime, k: &Region, p: &Region, sigma_t: usize) -> Result<usize, CliError> {
    let bound = prop2_cover_bound(st, k, p, sigma_t)?;
    Ok(causal_past(st, k).intersection(p).difference(&bound).len())
}

pub fn run(ctx: &Context) -> Result<SuiteReport, CliError> {
    let st = ctx.config.spacetime()?;
    let params = &ctx.config.params.prop2;
    let mut rec = Recorder::new(ctx.config);
    let full = Region::full(&st);

    let started = Instant::now();
    let mut missed = 0;
    let mut cases = 0u64;
    for q in st.all_points() {
        let k = Region::from_points([q]);
        for sigma_t in q.t + 1..st.n_t() {
            missed += misses(&st, &k, &full, sigma_t)?;
            cases += 1;
        }
    }
    let digest = InputsDigest::new("prop2.singletons").str(ctx.config_digest).u64(cases).finish();
    rec.push("prop2.singletons", "J-(K) ∩ P is inside the cover bound", digest, missed as f64, 0.0, started);

    let mut rng = sample::stream(ctx.seed, "prop2");
    for i in 0..params.random_samples {
        let started = Instant::now();
        let count = rng.gen_range(1..=4);
        let k = Region::from_points(sample::points(&mut rng, &st, (0, st.n_t() - 2), count));
        let p: Region = st.all_points().filter(|_| rng.gen_bool(0.5)).collect::<Vec<Point>>().into_iter().collect();
        let t_max = k.max_t().expect("non-empty K");
        let sigma_t = rng.gen_range(t_max + 1..st.n_t());
        let digest = InputsDigest::new("prop2.random").region(&k).region(&p).u64(sigma_t as u64).finish();
        let dev = misses(&st, &k, &p, sigma_t)? as f64;
        rec.push(id("prop2.random", i), "J-(K) ∩ P is inside the cover bound", digest, dev, 0.0, started);
    }
    Ok(rec.finish("prop2"))
}
