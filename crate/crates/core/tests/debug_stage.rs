use akforge_core::diffeo::{ChainMap, ConjugatedMap, Direction, IdentityMap};
use akforge_core::measure::{c0_distance_diff_padded, sampled_lipschitz, GridSpec};
use akforge_core::rational::ReducedFraction;
use akforge_core::scheme::*;
use num_traits::ToPrimitive;

#[test]
fn debug_stage_one() {
    let mut c = ConstructionConfig::defaults(Mode::DenseOrbit);
    c.stages = 1;
    c.epsilon0 = 0.6;
    c.grids = GridSettings {
        distance: (48, 192),
        density: (48, 192),
        lipschitz: (24, 96),
        screen: (24, 96),
        conj_samples: (16, 16),
    };
    let state = init(&c).unwrap();
    let profile = c.profile().unwrap();
    let plan = plan_density_targets(&state, &c, 1, None).unwrap();
    eprintln!("eta={} grid={} sources={} clearance={} rows={} cols={}",
        plan.eta, plan.grid_points.len(), plan.sources.len(), plan.clearance, plan.rows, plan.cols);
    let h1 = build_hn(&state, &c, &plan, None).unwrap();
    eprintln!("h1 primitives: {}", h1.primitive_count());
    let h_cur = state.h.concat(&h1);
    let lip_grid = GridSpec::new(24, 96, c.annulus, 0);
    let l_cur = sampled_lipschitz(&ChainMap { chain: &h_cur, direction: Direction::Forward, profile: &profile }, &lip_grid).max(1.0);
    eprintln!("L(H1) sampled = {l_cur}");
    let delta = c.epsilon(1) / (2.0 * l_cur);
    eprintln!("delta = {delta}, q_orbit_min = {}", (std::f64::consts::PI * 0.5 / delta).ceil());
    let screen = GridSpec::new(24, 96, c.sweep_region().unwrap(), 0);
    for eps_pow in 0..10 {
        let eps = 0.5f64 / (2.0 * std::f64::consts::TAU * 0.9 * l_cur) * 0.5f64.powi(eps_pow);
        let cand = akforge_core::rational::approx_with_divisible_numerator(&c.alpha1, 2, eps).unwrap();
        let f = ConjugatedMap { h: &h_cur, turns: cand.clone(), profile: &profile };
        let g = ConjugatedMap { h: &state.h, turns: c.alpha1.clone(), profile: &profile };
        let rep = c0_distance_diff_padded(&f, &g, &screen);
        let q = cand.denominator().to_i64().unwrap();
        let conj = ConjugatedMap { h: &h_cur, turns: ReducedFraction::new(1, q).unwrap(), profile: &profile };
        let rep2 = c0_distance_diff_padded(&IdentityMap, &conj, &screen);
        eprintln!("eps={eps:.3e} cand={} cauchy: lower={:.3e} padded={:.3e} ldiff={:.3e} | subseq padded={:.3e}",
            cand, rep.lower_bound, rep.padded_estimate, rep.lipschitz_estimate, rep2.padded_estimate);
    }
}
