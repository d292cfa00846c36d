//! The inductive conjugation engine.
//!
//! Stage n turns H_{n−1} and αₙ into hₙ (an equivariant lift of a
//! quotient multi-mover), Hₙ = H_{n−1} ∘ hₙ, and the next rotation number
//! αₙ₊₁, shrinking |αₙ₊₁ − αₙ| until every stage predicate holds. Each
//! completed stage emits a machine-checkable certificate; a failed
//! mandatory check aborts the stage instead.

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffeo::planner::{
    equivariant_lift, make_multi_mover, PlanRegion, Sector, TwistStyle,
};
use crate::diffeo::{ChainMap, ConjugatedMap, DiffeoChain, Direction, IdentityMap, PointMap};
use crate::error::{CoreError, Result};
use crate::geometry::{
    circle_action_exact, invariant_shells, separated_pair, AngularProfile, AnnulusRegion,
    PlanePoint, ShellPair, TAU,
};
use crate::measure::{
    c0_distance_diff_padded, density_radius, sampled_lipschitz, verify_conjugation_identity,
    DensityReport, DistanceReport, GridSpec,
};
use crate::rational::{
    check_alpha_constraints, next_alpha_min_gap, AlphaConstraintReport, ReducedFraction,
};

pub const CERTIFICATE_FORMAT_VERSION: u32 = 1;
/// Pointwise identity tolerances (conjugation identity, pinning, orbit
/// containment, homomorphism audit).
pub const EVAL_TOL: f64 = 1e-9;
/// Retry budget of the geometric shrink loop on |αₙ₊₁ − αₙ|.
pub const ALPHA_RETRIES: u32 = 40;
/// Screen-resolution predicates pass only below this fraction of the
/// certificate bound, leaving room for the full-resolution re-measure.
const SCREEN_MARGIN: f64 = 0.6;
/// Largest quotient grid the planner will attempt per stage.
const GRID_BUDGET: usize = 50_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    DenseOrbit,
    NonC0,
}

/// Grid resolutions (radial, angular) for the measurement sweeps.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GridSettings {
    pub distance: (usize, usize),
    pub density: (usize, usize),
    pub lipschitz: (usize, usize),
    pub screen: (usize, usize),
    pub conj_samples: (usize, usize),
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            distance: (256, 1024),
            density: (128, 512),
            lipschitz: (64, 256),
            screen: (48, 192),
            conj_samples: (32, 32),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstructionConfig {
    pub mode: Mode,
    pub stages: u64,
    pub annulus: AnnulusRegion,
    pub ramp_width: f64,
    pub smoothness_order: u32,
    pub epsilon0: f64,
    /// Separation target c of the non-continuity mode; the certified
    /// displacement bound is 2c.
    pub separation_c: f64,
    pub alpha1: ReducedFraction,
    pub seed: u64,
    pub qn_cap: u64,
    pub grids: GridSettings,
    /// Surrogate metric order r ∈ {0, 1}.
    pub metric_order: u8,
}

impl ConstructionConfig {
    pub fn defaults(mode: Mode) -> Self {
        ConstructionConfig {
            mode,
            stages: match mode {
                Mode::DenseOrbit => 3,
                Mode::NonC0 => 5,
            },
            annulus: AnnulusRegion { r_in: 0.1, r_out: 0.9 },
            ramp_width: 0.05,
            smoothness_order: 4,
            epsilon0: match mode {
                Mode::DenseOrbit => 0.3,
                Mode::NonC0 => 1.6,
            },
            separation_c: 0.2,
            alpha1: ReducedFraction::new(1, 81).expect("valid"),
            seed: 7,
            qn_cap: 100_000,
            grids: GridSettings::default(),
            metric_order: 0,
        }
    }

    pub fn profile(&self) -> Result<AngularProfile> {
        AngularProfile::new(self.annulus, self.ramp_width, self.smoothness_order)
    }

    /// εₙ = ε₀·2⁻ⁿ.
    pub fn epsilon(&self, n: u64) -> f64 {
        self.epsilon0 * (0.5f64).powi(n as i32)
    }

    /// Region the C⁰ sweeps cover: the support annulus of the action.
    pub fn sweep_region(&self) -> Result<AnnulusRegion> {
        let pr = self.profile()?;
        AnnulusRegion::new(pr.support_inner().max(1e-6), pr.support_outer())
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(CoreError::Config("stages must be ≥ 1".into()));
        }
        if !(self.epsilon0 > 0.0) {
            return Err(CoreError::Config("epsilon0 must be positive".into()));
        }
        if self.metric_order > 1 {
            return Err(CoreError::Config("metric_order must be 0 or 1".into()));
        }
        self.profile()?;
        if !self.alpha1.is_positive() {
            return Err(CoreError::Config("alpha1 must be positive".into()));
        }
        let q1 = den_u64(&self.alpha1)?;
        if q1 > self.qn_cap {
            return Err(CoreError::Config(format!(
                "alpha1 denominator {q1} exceeds the q cap {}",
                self.qn_cap
            )));
        }
        match self.mode {
            Mode::NonC0 => {
                use num_traits::One;
                if !self.alpha1.numerator().is_one() {
                    return Err(CoreError::Config(format!(
                        "non_c0 requires p₁ = 1 (p₁ ∈ 𝒵₁); got numerator {}",
                        self.alpha1.numerator()
                    )));
                }
                if !(self.separation_c > 0.0) {
                    return Err(CoreError::Config("separation_c must be positive".into()));
                }
                // The shell offset must exist for this geometry.
                shell_offset(&self.annulus, self.separation_c)?;
            }
            Mode::DenseOrbit => {}
        }
        Ok(())
    }
}

fn den_u64(alpha: &ReducedFraction) -> Result<u64> {
    alpha
        .denominator()
        .to_u64()
        .ok_or_else(|| CoreError::Resource("denominator exceeds u64".into()))
}

fn factorial_u64(n: u64) -> i64 {
    (2..=n as i64).product::<i64>().max(1)
}

/// Smallest shell offset b such that the first stage's gap pair is
/// separated by more than 2c with working slack.
pub fn shell_offset(u: &AnnulusRegion, c: f64) -> Result<u64> {
    let min_idx = (2.0 / u.span()).floor() as u64 + 1;
    let needed = 2.0 * c;
    for b in min_idx..min_idx + 500 {
        let d = u.span() - 1.0 / b as f64 - 1.0 / (b + 1) as f64;
        if d > needed * 1.01 {
            return Ok(b);
        }
    }
    Err(CoreError::Config(format!(
        "no shell gap of the annulus {u:?} separates beyond 2c = {needed}"
    )))
}

/// All data of one stage of the induction.
#[derive(Clone, Debug)]
pub struct StageState {
    /// Completed stages.
    pub n: u64,
    /// αₙ₊₁ (α₁ right after init).
    pub alpha_next: ReducedFraction,
    /// Hₙ = h₁ ∘ … ∘ hₙ in paper order Hₙ = H_{n−1} ∘ hₙ.
    pub h: DiffeoChain,
    pub h_history: Vec<DiffeoChain>,
    pub orbit_circle_radius: f64,
    pub base_point: PlanePoint,
    pub eta: f64,
    pub shell_offset: u64,
    pub pinned: Option<ShellPair>,
    pub certificates: Vec<Certificate>,
}

/// n = 0 state: H₀ = id, α₁ from the configuration.
pub fn init(config: &ConstructionConfig) -> Result<StageState> {
    config.validate()?;
    let offset = match config.mode {
        Mode::NonC0 => shell_offset(&config.annulus, config.separation_c)?,
        Mode::DenseOrbit => 0,
    };
    let r_c = config.annulus.midradius();
    Ok(StageState {
        n: 0,
        alpha_next: config.alpha1.clone(),
        h: DiffeoChain::identity(),
        h_history: Vec::new(),
        orbit_circle_radius: r_c,
        base_point: PlanePoint::new(r_c, 0.0),
        eta: 0.0,
        shell_offset: offset,
        pinned: None,
        certificates: Vec::new(),
    })
}

/// Φₙ(λ) evaluated at p.
pub fn phi_eval(
    state: &StageState,
    lambda: &ReducedFraction,
    p: &PlanePoint,
    profile: &AngularProfile,
) -> PlanePoint {
    ConjugatedMap {
        h: &state.h,
        turns: lambda.mul(&state.alpha_next),
        profile,
    }
    .apply(p)
}

/// Output of the target-planning step.
#[derive(Clone, Debug)]
pub struct TargetPlan {
    pub eta: f64,
    pub lipschitz_prev: f64,
    /// Density region: U in dense-orbit mode, the support shell otherwise.
    pub density_region: AnnulusRegion,
    /// Support region movers must stay inside.
    pub support_region: AnnulusRegion,
    pub window: Sector,
    pub grid_points: Vec<PlanePoint>,
    pub sources: Vec<PlanePoint>,
    pub clearance: f64,
    pub rows: usize,
    pub cols: usize,
}

/// Pinned-point data of a non-continuity stage with n+1 prime.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PinData {
    pub prime: u64,
    pub x: [f64; 2],
    pub s: [f64; 2],
    pub y_eff: [f64; 2],
    pub d_xy: f64,
    pub landing_budget: f64,
    pub gap_outer: (f64, f64),
    pub gap_inner: (f64, f64),
}

pub struct StagePins {
    pub pair: ShellPair,
    pub data: PinData,
    /// Window representatives handed to the planner.
    pub x: PlanePoint,
    pub s_rep: PlanePoint,
    pub y_rep: PlanePoint,
}

fn stage_region(state: &StageState, config: &ConstructionConfig, n: u64) -> Result<AnnulusRegion> {
    match config.mode {
        Mode::DenseOrbit => Ok(config.annulus),
        Mode::NonC0 => invariant_shells(&config.annulus, n + state.shell_offset),
    }
}

/// Window centre chosen so every pinned representative sits inside one
/// fundamental sector with slack.
fn stage_window(q: u64, pin_rep_angle: Option<f64>) -> Sector {
    let allowed = std::f64::consts::PI / q as f64;
    match pin_rep_angle {
        None => Sector {
            center: 0.0,
            half_width: allowed * 0.98,
        },
        Some(rep) => Sector {
            center: rep / 2.0,
            half_width: allowed * 0.98,
        },
    }
}

/// Angle of the in-sector representative of `p` for the q-fold quotient,
/// in [−π/q, π/q).
fn sector_representative_angle(p: &PlanePoint, q: u64) -> f64 {
    let w = TAU / q as f64;
    let a = p.angle();
    let m = (a / w).round();
    a - m * w
}

/// ηₙ, the quotient grid F₁, and the designated arc sources for stage n.
pub fn plan_density_targets(
    state: &StageState,
    config: &ConstructionConfig,
    n: u64,
    pins: Option<&StagePins>,
) -> Result<TargetPlan> {
    let profile = config.profile()?;
    let q_n = den_u64(&state.alpha_next)?;
    let eps_n = config.epsilon(n);
    let lip_grid = GridSpec::new(
        config.grids.lipschitz.0,
        config.grids.lipschitz.1,
        config.annulus,
        0,
    );
    let h_prev_map = ChainMap {
        chain: &state.h,
        direction: Direction::Forward,
        profile: &profile,
    };
    let l_hat = if state.h.is_empty() {
        1.0
    } else {
        sampled_lipschitz(&h_prev_map, &lip_grid).max(1.0)
    };
    let eta = eps_n / (2.0 * l_hat);

    let support_region = stage_region(state, config, n)?;
    let density_region = support_region;
    let window = stage_window(
        q_n,
        pins.map(|p| sector_representative_angle(&PlanePoint::new(p.data.s[0], p.data.s[1]), q_n)),
    );

    let mut cell = eta;
    for _attempt in 0..8 {
        let plan = layout_grid(
            state,
            config,
            &support_region,
            &density_region,
            &window,
            q_n,
            cell,
            eta,
            l_hat,
            pins,
        )?;
        // Verified ηₙ-density of the full preimage (all q rotated copies).
        let copies = rotated_copies(&plan.grid_points, q_n);
        let dgrid = GridSpec::new(
            config.grids.density.0,
            config.grids.density.1,
            density_region,
            0,
        );
        let rep = density_radius(&copies, &dgrid);
        if rep.padded_estimate <= eta {
            return Ok(plan);
        }
        cell *= 0.8;
    }
    Err(CoreError::Resource(format!(
        "stage {n}: could not reach η = {eta:.3e} density with the grid budget"
    )))
}

fn rotated_copies(points: &[PlanePoint], q: u64) -> Vec<PlanePoint> {
    let mut out = Vec::with_capacity(points.len() * q as usize);
    for j in 0..q {
        let ang = TAU * j as f64 / q as f64;
        for p in points {
            out.push(p.rotated(ang));
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn layout_grid(
    state: &StageState,
    config: &ConstructionConfig,
    support_region: &AnnulusRegion,
    density_region: &AnnulusRegion,
    window: &Sector,
    q_n: u64,
    cell: f64,
    eta: f64,
    l_hat: f64,
    pins: Option<&StagePins>,
) -> Result<TargetPlan> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed ^ (state.n + 1));

    let margin = (0.02 * support_region.span()).max(cell * 0.5);
    let r_lo = support_region.r_in + margin;
    let r_hi = support_region.r_out - margin;
    if r_hi <= r_lo {
        return Err(CoreError::Resource(
            "support region too thin for the grid margin".into(),
        ));
    }
    let rows = ((r_hi - r_lo) / cell).ceil().max(1.0) as usize;
    let copies_gap = TAU * support_region.r_out / q_n as f64;
    let cols = (copies_gap / cell).ceil().max(1.0) as usize;
    if rows * cols > GRID_BUDGET {
        return Err(CoreError::Resource(format!(
            "quotient grid needs {} cells, budget is {GRID_BUDGET}",
            rows * cols
        )));
    }
    // Columns live inside the window with edge margin for mover supports.
    let col_margin_ang = (4.0 * cell / support_region.r_out).min(window.half_width * 0.2);
    let usable = window.half_width - col_margin_ang;
    let dth = if cols > 1 {
        let dth = cell / support_region.r_out;
        if (cols as f64 - 1.0) * dth > 2.0 * usable {
            return Err(CoreError::Resource(format!(
                "window cannot host {cols} grid columns at cell {cell:.3e}; q = {q_n} too small"
            )));
        }
        dth
    } else {
        0.0
    };

    let jit = 0.02 * cell;
    let mut grid_points = Vec::with_capacity(rows * cols);
    let dr = (r_hi - r_lo) / rows as f64;
    for i in 0..rows {
        let r = r_lo + (i as f64 + 0.5) * dr + rng.gen_range(-jit..=jit);
        for j in 0..cols {
            let th = window.center + (j as f64 - (cols as f64 - 1.0) / 2.0) * dth
                + rng.gen_range(-jit..=jit) / support_region.r_out;
            grid_points.push(PlanePoint::polar(r, th));
        }
    }

    // Keep the pinned artifacts clear of grid targets.
    if let Some(p) = pins {
        let excl = 1.5 * cell;
        grid_points
            .retain(|g| g.dist(&p.x) > excl && g.dist(&p.s_rep) > excl && g.dist(&p.y_rep) > excl);
        if grid_points.is_empty() {
            return Err(CoreError::Resource(
                "pin exclusion removed the whole grid".into(),
            ));
        }
    }

    // Designated sources on the C-arc inside the window.
    let r_c = state.orbit_circle_radius;
    let m = grid_points.len();
    let arc_half = window.half_width * 0.8;
    let src_jit = 0.04 * (2.0 * arc_half) / m as f64;
    let mut sources = Vec::with_capacity(m);
    for i in 0..m {
        let th = window.center - arc_half
            + (i as f64 + 0.5) * (2.0 * arc_half) / m as f64
            + rng.gen_range(-src_jit..=src_jit);
        sources.push(PlanePoint::polar(r_c, th));
    }

    let source_spacing = 2.0 * arc_half * r_c / m as f64;
    let clearance = source_spacing.min(cell) / 3.5;

    let _ = (eta, l_hat);
    Ok(TargetPlan {
        eta,
        lipschitz_prev: l_hat,
        density_region: *density_region,
        support_region: *support_region,
        window: *window,
        grid_points,
        sources,
        clearance,
        rows,
        cols,
    })
}

pub fn stage_pins(
    state: &StageState,
    config: &ConstructionConfig,
    n: u64,
) -> Result<Option<StagePins>> {
    if config.mode != Mode::NonC0 || !crate::rational::is_prime_u128((n + 1) as u128) {
        return Ok(None);
    }
    let profile = config.profile()?;
    let q_n = den_u64(&state.alpha_next)?;
    let gap_index = n - 1 + state.shell_offset;
    let two_c = 2.0 * config.separation_c;
    let pair = separated_pair(&config.annulus, gap_index, two_c * 1.01)?;

    let x = pair.inner_point;
    let s = circle_action_exact(&state.alpha_next.div_int((n + 1) as i64)?, &x, &profile);
    // In-sector representative of s and the radially-aligned pin target.
    let rep_angle = sector_representative_angle(&s, q_n);
    let s_rep = PlanePoint::polar(s.radius(), rep_angle);
    let y_rep = PlanePoint::polar(pair.outer_point.radius(), rep_angle);
    // hₙ maps s itself onto the rotated copy of y_rep in s's sector.
    let back = s.angle() - rep_angle;
    let y_eff = y_rep.rotated(back);

    let d_xy = x.dist(&y_eff);
    if d_xy <= two_c {
        return Err(CoreError::Config(format!(
            "pinned pair separation {d_xy:.6} does not exceed 2c = {two_c}"
        )));
    }
    let un = invariant_shells(&config.annulus, n + state.shell_offset)?;
    let un_prev = invariant_shells(&config.annulus, gap_index)?;
    let gap_outer = (un_prev.r_out, un.r_out);
    let gap_inner = (un.r_in, un_prev.r_in);
    let landing_budget = (0.5 * (d_xy - two_c)).min(0.25 * (gap_outer.1 - gap_outer.0));
    Ok(Some(StagePins {
        pair,
        data: PinData {
            prime: n + 1,
            x: [x.x, x.y],
            s: [s.x, s.y],
            y_eff: [y_eff.x, y_eff.y],
            d_xy,
            landing_budget,
            gap_outer,
            gap_inner,
        },
        x,
        s_rep,
        y_rep,
    }))
}

/// Build hₙ: the lift of the quotient multi-mover for this stage.
pub fn build_hn(
    state: &StageState,
    config: &ConstructionConfig,
    plan: &TargetPlan,
    pins: Option<&StagePins>,
) -> Result<DiffeoChain> {
    let profile = config.profile()?;
    let q_n = den_u64(&state.alpha_next)?;
    let mut sources = Vec::new();
    let mut targets = Vec::new();
    if let Some(p) = pins {
        sources.push(p.x);
        targets.push(p.x);
        sources.push(p.s_rep);
        targets.push(p.y_rep);
    }
    sources.extend(plan.sources.iter().copied());
    targets.extend(plan.grid_points.iter().copied());

    let region = PlanRegion {
        radial: plan.support_region,
        window: Some(plan.window),
    };
    let style = TwistStyle {
        order: config.smoothness_order,
        ..TwistStyle::default()
    };
    let base = make_multi_mover(&sources, &targets, &region, plan.clearance, &style)?;
    let mut h_n = equivariant_lift(base, q_n, plan.window.center)?;
    h_n.declared_support = Some(plan.support_region);

    // Audit: designated sources land on their grid targets.
    let mut worst = 0.0f64;
    for (s, t) in sources.iter().zip(&targets) {
        let got = h_n.eval(s, Direction::Forward, &profile);
        worst = worst.max(got.dist(t));
    }
    if worst > EVAL_TOL {
        return Err(CoreError::Stage {
            stage: state.n + 1,
            check: "mover_exactness".into(),
            detail: format!("worst landing residual {worst:.3e}"),
        });
    }
    // Audit: pinning through the lift (s lives in another sector copy).
    if let Some(p) = pins {
        let s = PlanePoint::new(p.data.s[0], p.data.s[1]);
        let y_eff = PlanePoint::new(p.data.y_eff[0], p.data.y_eff[1]);
        let sx = h_n.eval(&p.x, Direction::Forward, &profile);
        let sy = h_n.eval(&s, Direction::Forward, &profile);
        if sx.dist(&p.x) > EVAL_TOL || sy.dist(&y_eff) > EVAL_TOL {
            return Err(CoreError::Stage {
                stage: state.n + 1,
                check: "pinning".into(),
                detail: format!(
                    "x residual {:.3e}, s→y residual {:.3e}",
                    sx.dist(&p.x),
                    sy.dist(&y_eff)
                ),
            });
        }
    }
    Ok(h_n)
}

/// Everything recorded about the αₙ₊₁ search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlphaSearchRecord {
    pub eps_final: f64,
    pub retries: u32,
    pub q_next: u64,
}

#[allow(clippy::too_many_arguments)]
fn choose_next_alpha(
    state: &StageState,
    config: &ConstructionConfig,
    n: u64,
    h_cur: &DiffeoChain,
    h_n: &DiffeoChain,
    pins: Option<&StagePins>,
    l_cur: f64,
) -> Result<(ReducedFraction, AlphaSearchRecord, f64)> {
    let profile = config.profile()?;
    let alpha_n = &state.alpha_next;
    let eps_n = config.epsilon(n);
    let delta = eps_n / (2.0 * l_cur);
    let bound_c = (0.5f64).powi(n as i32);
    let screen = GridSpec::new(
        config.grids.screen.0,
        config.grids.screen.1,
        config.sweep_region()?,
        0,
    );
    let r_c = state.orbit_circle_radius;

    // Minimum q for the orbit to come δ-close to every designated source.
    let q_orbit_min = (std::f64::consts::PI * r_c / delta).ceil() as u64;
    // Minimum q for the next stage's grid to be a single angular column.
    let q_column_min = if n < config.stages {
        let eta_next = config.epsilon(n + 1) / (2.0 * l_cur);
        (TAU * config.annulus.r_out / eta_next).ceil() as u64
    } else {
        0
    };

    let mut eps = bound_c / (2.0 * TAU * config.annulus.r_out * l_cur);
    let mut last_fail = String::new();
    for retry in 0..ALPHA_RETRIES {
        let candidate =
            next_alpha_min_gap(alpha_n, n + 1, eps, config.mode == Mode::NonC0)?;
        let q_next = den_u64(&candidate)?;
        if q_next > config.qn_cap {
            return Err(CoreError::Resource(format!(
                "stage {n}: required denominator {q_next} exceeds the cap {}",
                config.qn_cap
            )));
        }

        let mut ok = true;
        if q_next < q_orbit_min {
            ok = false;
            last_fail = format!("orbit spacing: q {q_next} < {q_orbit_min}");
        }
        if ok && q_next < q_column_min {
            ok = false;
            last_fail = format!("column density: q {q_next} < {q_column_min}");
        }
        // (a) Cauchy screen for k = 1..n.
        if ok {
            for k in 1..=n {
                let f = ConjugatedMap {
                    h: h_cur,
                    turns: candidate.div_int(k as i64)?,
                    profile: &profile,
                };
                let g = ConjugatedMap {
                    h: &state.h,
                    turns: alpha_n.div_int(k as i64)?,
                    profile: &profile,
                };
                let rep = c0_distance_diff_padded(&f, &g, &screen);
                if rep.padded_estimate > SCREEN_MARGIN * bound_c {
                    ok = false;
                    last_fail = format!(
                        "cauchy screen k={k}: {:.3e} > {:.3e}",
                        rep.padded_estimate,
                        SCREEN_MARGIN * bound_c
                    );
                    break;
                }
            }
        }
        // (c) Pinned landing and gap membership.
        if ok {
            if let Some(p) = pins {
                let x = PlanePoint::new(p.data.x[0], p.data.x[1]);
                let y_eff = PlanePoint::new(p.data.y_eff[0], p.data.y_eff[1]);
                let s_cand =
                    circle_action_exact(&candidate.div_int((n + 1) as i64)?, &x, &profile);
                let img = h_n.eval(&s_cand, Direction::Forward, &profile);
                let landing = img.dist(&y_eff);
                let r_img = img.radius();
                if landing >= p.data.landing_budget {
                    ok = false;
                    last_fail = format!(
                        "pin landing {landing:.3e} ≥ budget {:.3e}",
                        p.data.landing_budget
                    );
                } else if !(r_img > p.data.gap_outer.0 && r_img < p.data.gap_outer.1) {
                    ok = false;
                    last_fail = format!("pinned image radius {r_img:.6} left the shell gap");
                }
            }
        }
        // (d) Next stage's subsequence pre-bound via the commutation
        // identity H_{n+1} S_{1/q_{n+1}} H_{n+1}⁻¹ = Hₙ S_{1/q_{n+1}} Hₙ⁻¹.
        if ok && config.mode == Mode::NonC0 && n < config.stages {
            let conj = ConjugatedMap {
                h: h_cur,
                turns: ReducedFraction::new(1, q_next as i64)?,
                profile: &profile,
            };
            let rep = c0_distance_diff_padded(&IdentityMap, &conj, &screen);
            let next_bound = (0.5f64).powi(n as i32 + 1);
            if rep.padded_estimate > SCREEN_MARGIN * next_bound {
                ok = false;
                last_fail = format!(
                    "subsequence pre-bound {:.3e} > {:.3e}",
                    rep.padded_estimate,
                    SCREEN_MARGIN * next_bound
                );
            }
        }
        if ok {
            return Ok((
                candidate,
                AlphaSearchRecord {
                    eps_final: eps,
                    retries: retry,
                    q_next,
                },
                delta,
            ));
        }
        eps *= 0.5;
    }
    Err(CoreError::Stage {
        stage: n,
        check: "alpha_shrink_loop".into(),
        detail: format!("retry budget exhausted; last failure: {last_fail}"),
    })
}

// ---------------------------------------------------------------------
// Certificates
// ---------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricSurrogate {
    pub order: u8,
    pub kind: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConjugationCheck {
    pub residual: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CauchyCheck {
    pub k: u64,
    pub lower_bound: f64,
    pub padded_estimate: f64,
    pub diff_lipschitz: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityCheck {
    pub epsilon: f64,
    pub lower_bound: f64,
    pub padded_estimate: f64,
    pub mesh_cover: f64,
    pub orbit_len: u64,
    pub region: AnnulusRegion,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContainmentCheck {
    pub ell: u64,
    pub max_mismatch: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HomomorphismCheck {
    pub residual: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeparationCheck {
    pub prime: u64,
    pub x: [f64; 2],
    pub image: [f64; 2],
    pub y_eff: [f64; 2],
    pub distance: f64,
    pub bound: f64,
    pub landing_gap: f64,
    pub eval_identity_residual: f64,
    pub eval_identity_bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubsequenceCheck {
    pub q: u64,
    pub lower_bound: f64,
    pub padded_estimate: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlphaConstraintsCheck {
    pub report: AlphaConstraintReport,
    pub pass: bool,
}

/// Machine-checkable record of every verified inequality at one stage.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Certificate {
    pub format_version: u32,
    pub stage: u64,
    pub mode: Mode,
    pub metric_surrogate: MetricSurrogate,
    pub alpha_current: ReducedFraction,
    pub alpha_next: ReducedFraction,
    pub q_current: u64,
    pub q_next: u64,
    pub epsilon: f64,
    pub eta: f64,
    pub delta: f64,
    pub lipschitz_prev: f64,
    pub lipschitz_current: f64,
    pub base_point: [f64; 2],
    pub orbit_base: [f64; 2],
    pub grid_count: usize,
    pub conjugation: ConjugationCheck,
    pub cauchy: Vec<CauchyCheck>,
    pub density: DensityCheck,
    pub containment: Vec<ContainmentCheck>,
    pub homomorphism: HomomorphismCheck,
    pub separation: Option<SeparationCheck>,
    pub subsequence: Option<SubsequenceCheck>,
    pub alpha_constraints: AlphaConstraintsCheck,
    pub alpha_search: AlphaSearchRecord,
    pub pass: bool,
}

impl Certificate {
    pub fn mandatory_pass(&self) -> bool {
        self.conjugation.pass
            && self.cauchy.iter().all(|c| c.pass)
            && self.density.pass
            && self.containment.iter().all(|c| c.pass)
            && self.homomorphism.pass
            && self.separation.as_ref().map(|s| s.pass).unwrap_or(true)
            && self.subsequence.as_ref().map(|s| s.pass).unwrap_or(true)
            && self.alpha_constraints.pass
    }
}

/// Conjugated rotation orbit {Hₙ(S_{j·ℓ·αₙ₊₁}(x₀))}: the orbit of Φₙ(ℓ)
/// through Hₙ(x₀), evaluated in closed form.
pub fn conjugated_orbit(
    h: &DiffeoChain,
    alpha: &ReducedFraction,
    ell: i64,
    x0: &PlanePoint,
    count: usize,
    profile: &AngularProfile,
) -> Vec<PlanePoint> {
    (0..count)
        .into_par_iter()
        .map(|j| {
            let steps = ReducedFraction::from_big(
                BigInt::from(ell) * BigInt::from(j as u64),
                BigInt::from(1),
            )
            .expect("denominator 1");
            let turns = alpha.mul(&steps);
            let on_circle = circle_action_exact(&turns, x0, profile);
            h.eval(&on_circle, Direction::Forward, profile)
        })
        .collect()
}

/// Run one full stage: plan → build hₙ → choose αₙ₊₁ → verify → certify.
pub fn step(
    state: &StageState,
    config: &ConstructionConfig,
) -> Result<(StageState, Certificate, DiffeoChain)> {
    let n = state.n + 1;
    let profile = config.profile()?;
    let alpha_n = state.alpha_next.clone();
    let q_n = den_u64(&alpha_n)?;
    let eps_n = config.epsilon(n);
    let bound_c = (0.5f64).powi(n as i32);

    let pins = stage_pins(state, config, n)?;
    let plan = plan_density_targets(state, config, n, pins.as_ref())?;
    let h_n = build_hn(state, config, &plan, pins.as_ref())?;
    let h_cur = state.h.concat(&h_n);

    let lip_grid = GridSpec::new(
        config.grids.lipschitz.0,
        config.grids.lipschitz.1,
        config.annulus,
        0,
    );
    let l_cur = sampled_lipschitz(
        &ChainMap {
            chain: &h_cur,
            direction: Direction::Forward,
            profile: &profile,
        },
        &lip_grid,
    )
    .max(1.0);

    let (alpha_next, search, delta) =
        choose_next_alpha(state, config, n, &h_cur, &h_n, pins.as_ref(), l_cur)?;
    let q_next = search.q_next;

    // --- full-resolution verifications ---
    let sweep = config.sweep_region()?;
    let dist_grid = GridSpec::new(config.grids.distance.0, config.grids.distance.1, sweep, 0);
    let conj_grid = GridSpec::new(
        config.grids.conj_samples.0,
        config.grids.conj_samples.1,
        sweep,
        0,
    );

    // (2.1): H_{n−1} S_{αₙ/k} H_{n−1}⁻¹ = Hₙ S_{αₙ/k} Hₙ⁻¹.
    let conj_residual =
        verify_conjugation_identity(&state.h, &h_cur, &alpha_n, n, &conj_grid, &profile);
    let conjugation = ConjugationCheck {
        residual: conj_residual,
        bound: EVAL_TOL,
        pass: conj_residual <= EVAL_TOL,
    };

    // Cauchy surrogates at λ = 1/k.
    let surrogate_kind = if config.metric_order == 0 {
        "c0_grid_sup_diff_lipschitz_padded"
    } else {
        "c1_grid_sup_plus_jacobian_gap"
    };
    let mut cauchy = Vec::new();
    for k in 1..=n {
        let f = ConjugatedMap {
            h: &h_cur,
            turns: alpha_next.div_int(k as i64)?,
            profile: &profile,
        };
        let g = ConjugatedMap {
            h: &state.h,
            turns: alpha_n.div_int(k as i64)?,
            profile: &profile,
        };
        let rep: DistanceReport = c0_distance_diff_padded(&f, &g, &dist_grid);
        let measured = if config.metric_order == 0 {
            rep.padded_estimate
        } else {
            rep.padded_estimate.max(rep.lipschitz_estimate)
        };
        cauchy.push(CauchyCheck {
            k,
            lower_bound: rep.lower_bound,
            padded_estimate: measured,
            diff_lipschitz: rep.lipschitz_estimate,
            bound: bound_c,
            pass: measured <= bound_c,
        });
    }

    // Orbit density of Φₙ(n!) through Hₙ(x₀).
    let orbit_base = h_cur.eval(&state.base_point, Direction::Forward, &profile);
    let nf = factorial_u64(n);
    let orbit_pts = conjugated_orbit(
        &h_cur,
        &alpha_next,
        nf,
        &state.base_point,
        q_next as usize,
        &profile,
    );
    let dgrid = GridSpec::new(
        config.grids.density.0,
        config.grids.density.1,
        plan.density_region,
        0,
    );
    let drep: DensityReport = density_radius(&orbit_pts, &dgrid);
    let density = DensityCheck {
        epsilon: eps_n,
        lower_bound: drep.lower_bound,
        padded_estimate: drep.padded_estimate,
        mesh_cover: drep.mesh_cover,
        orbit_len: q_next,
        region: plan.density_region,
        pass: drep.padded_estimate <= eps_n,
    };

    // 𝒪(Φₙ(n!)) ⊆ 𝒪(Φₙ(ℓ)) for ℓ | n!.
    let mut containment = Vec::new();
    for ell in 1..=n.min(6) {
        let b = conjugated_orbit(
            &h_cur,
            &alpha_next,
            ell as i64,
            &state.base_point,
            q_next as usize,
            &profile,
        );
        let index_b = crate::measure::BucketGrid::build(&b, 1e-6);
        let mismatch = orbit_pts
            .par_iter()
            .map(|p| index_b.nearest_dist(p))
            .reduce(|| 0.0, f64::max);
        containment.push(ContainmentCheck {
            ell,
            max_mismatch: mismatch,
            bound: EVAL_TOL,
            pass: mismatch <= EVAL_TOL,
        });
    }

    // Homomorphism spot audit: Φ(1/2)∘Φ(1/3) = Φ(5/6).
    let homomorphism = {
        let fa = ConjugatedMap {
            h: &h_cur,
            turns: ReducedFraction::new(1, 2)?.mul(&alpha_next),
            profile: &profile,
        };
        let fb = ConjugatedMap {
            h: &h_cur,
            turns: ReducedFraction::new(1, 3)?.mul(&alpha_next),
            profile: &profile,
        };
        let fab = ConjugatedMap {
            h: &h_cur,
            turns: ReducedFraction::new(5, 6)?.mul(&alpha_next),
            profile: &profile,
        };
        let residual = conj_grid
            .nodes()
            .par_iter()
            .map(|p| fa.apply(&fb.apply(p)).dist(&fab.apply(p)))
            .reduce(|| 0.0, f64::max);
        HomomorphismCheck {
            residual,
            bound: EVAL_TOL,
            pass: residual <= EVAL_TOL,
        }
    };

    // Separation and the evaluation identity at the pinned point.
    let separation = match &pins {
        Some(p) => {
            let x = PlanePoint::new(p.data.x[0], p.data.x[1]);
            let y_eff = PlanePoint::new(p.data.y_eff[0], p.data.y_eff[1]);
            let img = ConjugatedMap {
                h: &h_cur,
                turns: alpha_next.div_int((n + 1) as i64)?,
                profile: &profile,
            }
            .apply(&x);
            let s_cand = circle_action_exact(&alpha_next.div_int((n + 1) as i64)?, &x, &profile);
            let direct = h_n.eval(&s_cand, Direction::Forward, &profile);
            let eval_identity_residual = img.dist(&direct);
            let distance = x.dist(&img);
            let bound = 2.0 * config.separation_c;
            Some(SeparationCheck {
                prime: n + 1,
                x: p.data.x,
                image: [img.x, img.y],
                y_eff: p.data.y_eff,
                distance,
                bound,
                landing_gap: img.dist(&y_eff),
                eval_identity_residual,
                eval_identity_bound: EVAL_TOL,
                pass: distance > bound && eval_identity_residual <= EVAL_TOL,
            })
        }
        None => None,
    };

    // Subsequence bound d̂(id, Hₙ S_{1/qₙ} Hₙ⁻¹) ≤ 2⁻ⁿ.
    let subsequence = if config.mode == Mode::NonC0 {
        let conj = ConjugatedMap {
            h: &h_cur,
            turns: ReducedFraction::new(1, q_n as i64)?,
            profile: &profile,
        };
        let rep = c0_distance_diff_padded(&IdentityMap, &conj, &dist_grid);
        Some(SubsequenceCheck {
            q: q_n,
            lower_bound: rep.lower_bound,
            padded_estimate: rep.padded_estimate,
            bound: bound_c,
            pass: rep.padded_estimate <= bound_c,
        })
    } else {
        None
    };

    // Number-theory postconditions recomputed by factorization.
    let report = check_alpha_constraints(&alpha_next, &alpha_n, n + 1, &alpha_n, search.eps_final);
    let alpha_constraints = AlphaConstraintsCheck {
        pass: match config.mode {
            Mode::NonC0 => report.pass(),
            Mode::DenseOrbit => report.pass_divisibility_only(),
        },
        report,
    };

    let mut certificate = Certificate {
        format_version: CERTIFICATE_FORMAT_VERSION,
        stage: n,
        mode: config.mode,
        metric_surrogate: MetricSurrogate {
            order: config.metric_order,
            kind: surrogate_kind.into(),
        },
        alpha_current: alpha_n.clone(),
        alpha_next: alpha_next.clone(),
        q_current: q_n,
        q_next,
        epsilon: eps_n,
        eta: plan.eta,
        delta,
        lipschitz_prev: plan.lipschitz_prev,
        lipschitz_current: l_cur,
        base_point: [state.base_point.x, state.base_point.y],
        orbit_base: [orbit_base.x, orbit_base.y],
        grid_count: plan.grid_points.len(),
        conjugation,
        cauchy,
        density,
        containment,
        homomorphism,
        separation,
        subsequence,
        alpha_constraints,
        alpha_search: search,
        pass: false,
    };
    certificate.pass = certificate.mandatory_pass();
    if !certificate.pass {
        let (check, detail) = failing_check(&certificate);
        return Err(CoreError::Stage {
            stage: n,
            check,
            detail,
        });
    }

    let mut st = state.clone();
    st.n = n;
    st.alpha_next = alpha_next;
    st.h = h_cur;
    st.h_history.push(h_n.clone());
    st.eta = plan.eta;
    st.pinned = pins.map(|p| p.pair);
    st.certificates.push(certificate.clone());
    Ok((st, certificate, h_n))
}

fn failing_check(c: &Certificate) -> (String, String) {
    if !c.conjugation.pass {
        return (
            "conjugation_identity".into(),
            format!("residual {:.3e}", c.conjugation.residual),
        );
    }
    for k in &c.cauchy {
        if !k.pass {
            return (
                format!("cauchy_k{}", k.k),
                format!("padded {:.3e} > {:.3e}", k.padded_estimate, k.bound),
            );
        }
    }
    if !c.density.pass {
        return (
            "density".into(),
            format!(
                "padded {:.3e} > ε {:.3e}",
                c.density.padded_estimate, c.density.epsilon
            ),
        );
    }
    for t in &c.containment {
        if !t.pass {
            return (
                format!("containment_ell{}", t.ell),
                format!("mismatch {:.3e}", t.max_mismatch),
            );
        }
    }
    if !c.homomorphism.pass {
        return (
            "homomorphism".into(),
            format!("residual {:.3e}", c.homomorphism.residual),
        );
    }
    if let Some(s) = &c.separation {
        if !s.pass {
            return (
                "separation".into(),
                format!(
                    "distance {:.6} vs bound {:.6}, identity residual {:.3e}",
                    s.distance, s.bound, s.eval_identity_residual
                ),
            );
        }
    }
    if let Some(s) = &c.subsequence {
        if !s.pass {
            return (
                "subsequence".into(),
                format!("padded {:.3e} > {:.3e}", s.padded_estimate, s.bound),
            );
        }
    }
    if !c.alpha_constraints.pass {
        return (
            "alpha_constraints".into(),
            format!("{:?}", c.alpha_constraints.report),
        );
    }
    ("unknown".into(), "unclassified failure".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dense_config() -> ConstructionConfig {
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
        c
    }

    #[test]
    fn init_accepts_and_rejects_alpha1_by_mode() {
        let mut c = ConstructionConfig::defaults(Mode::NonC0);
        c.alpha1 = ReducedFraction::new(1, 5).unwrap();
        assert!(init(&c).is_ok());
        c.alpha1 = ReducedFraction::new(2, 5).unwrap();
        assert!(init(&c).is_err());
        let mut d = ConstructionConfig::defaults(Mode::DenseOrbit);
        d.alpha1 = ReducedFraction::new(2, 5).unwrap();
        assert!(init(&d).is_ok());
    }

    #[test]
    fn phi_of_initial_state_is_the_rigid_rotation() {
        let c = small_dense_config();
        let state = init(&c).unwrap();
        let profile = c.profile().unwrap();
        let p = PlanePoint::new(0.5, 0.0);
        let got = phi_eval(&state, &ReducedFraction::new(1, 1).unwrap(), &p, &profile);
        let expect = circle_action_exact(&c.alpha1, &p, &profile);
        assert!(got.dist(&expect) < 1e-15);
        let fixed = phi_eval(&state, &ReducedFraction::zero(), &p, &profile);
        assert!(fixed.dist(&p) < 1e-15);
    }

    #[test]
    fn shell_offset_matches_hand_computation() {
        // U = (0.1, 0.9), c = 0.2: need span − 1/b − 1/(b+1) > 0.404.
        let u = AnnulusRegion::new(0.1, 0.9).unwrap();
        assert_eq!(shell_offset(&u, 0.2).unwrap(), 5);
    }

    #[test]
    fn eta_is_half_epsilon_at_stage_one() {
        let c = small_dense_config();
        let state = init(&c).unwrap();
        let plan = plan_density_targets(&state, &c, 1, None).unwrap();
        assert!((plan.lipschitz_prev - 1.0).abs() < 1e-9);
        assert!((plan.eta - c.epsilon(1) / 2.0).abs() < 1e-9);
        assert_eq!(plan.grid_points.len(), plan.sources.len());
    }

    #[test]
    fn dense_stage_one_completes_with_passing_certificate() {
        let c = small_dense_config();
        let state = init(&c).unwrap();
        let (st, cert, h1) = step(&state, &c).unwrap();
        assert!(cert.pass);
        assert_eq!(st.n, 1);
        assert!(!h1.is_empty());
        assert!(cert.conjugation.residual <= EVAL_TOL);
        assert_eq!(cert.cauchy.len(), 1);
        assert!(cert.cauchy[0].padded_estimate <= 0.5);
        assert!(cert.density.padded_estimate <= cert.density.epsilon);
        assert!(cert.q_next > cert.q_current);
    }
}
