//! Exact, invertible, area-preserving building blocks and their
//! compositions.
//!
//! Three primitives: profile rotations S_t, radial twists (rotation about
//! an arbitrary centre by an angle depending only on the distance to that
//! centre), and equivariant blocks (q disjointly-supported conjugated
//! copies of a small-support base, the lift of a quotient map). All are
//! exactly area-preserving with closed-form inverses, so deep chains
//! accumulate only floating rounding.

pub mod planner;
pub mod serial;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{circle_action_exact, smoothstep, AngularProfile, AnnulusRegion, PlanePoint, TAU};
use crate::rational::ReducedFraction;

/// Fraction of the twist band occupied by each smoothstep ramp; the
/// middle tenth is the exact plateau the moved point rides.
pub const TWIST_RAMP_FRAC: f64 = 0.45;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Forward => Direction::Inverse,
            Direction::Inverse => Direction::Forward,
        }
    }
}

/// Rotation of each circle |p − center| = ρ by the bump angle φ(ρ).
///
/// φ vanishes outside the band, equals `twist_angle` on the plateau, and
/// ramps with an order-k smoothstep. Radius about the centre is
/// preserved, so the inverse is the twist by −φ, exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialTwist {
    pub center: PlanePoint,
    pub twist_angle: f64,
    pub band: (f64, f64),
    pub order: u32,
}

impl RadialTwist {
    pub fn new(center: PlanePoint, twist_angle: f64, band: (f64, f64), order: u32) -> Result<Self> {
        if !(0.0 < band.0 && band.0 < band.1) {
            return Err(CoreError::Domain(format!(
                "twist band must satisfy 0 < a < b, got {band:?}"
            )));
        }
        Ok(RadialTwist {
            center,
            twist_angle,
            band,
            order,
        })
    }

    /// Bump amplitude at band coordinate u ∈ [0, 1].
    fn bump(&self, u: f64) -> f64 {
        if u <= 0.0 || u >= 1.0 {
            0.0
        } else if u < TWIST_RAMP_FRAC {
            smoothstep(self.order, u / TWIST_RAMP_FRAC)
        } else if u <= 1.0 - TWIST_RAMP_FRAC {
            1.0
        } else {
            smoothstep(self.order, (1.0 - u) / TWIST_RAMP_FRAC)
        }
    }

    pub fn angle_at(&self, rho: f64) -> f64 {
        let (a, b) = self.band;
        self.twist_angle * self.bump((rho - a) / (b - a))
    }

    pub fn eval(&self, p: &PlanePoint, dir: Direction) -> PlanePoint {
        let d = p.sub(&self.center);
        let rho2 = d.x * d.x + d.y * d.y;
        let (a, b) = self.band;
        if rho2 <= a * a || rho2 >= b * b {
            return *p;
        }
        let mut angle = self.angle_at(rho2.sqrt());
        if dir == Direction::Inverse {
            angle = -angle;
        }
        self.center.add(&d.rotated(angle))
    }

    /// Outer radius of the support disk around the centre.
    pub fn support_radius(&self) -> f64 {
        self.band.1
    }

    /// Angular half-width of the support as seen from the origin, or
    /// `None` when the support disk contains the origin.
    pub fn angular_half_width(&self) -> Option<f64> {
        let d = self.center.radius();
        if self.band.1 >= d {
            None
        } else {
            Some((self.band.1 / d).asin())
        }
    }

    /// Radial interval (about the origin) touched by the support.
    pub fn radial_interval(&self) -> (f64, f64) {
        let d = self.center.radius();
        ((d - self.band.1).max(0.0), d + self.band.1)
    }
}

/// q conjugated copies ∏_{j=0}^{q−1} S_{j/q} ∘ base ∘ S_{−j/q} of a base
/// supported in an angular sector of width < 2π/q.
///
/// Copies have pairwise disjoint supports, so evaluation locates the one
/// sector copy a point can meet. Base supports live on the plateau, where
/// S_{j/q} is the rigid rotation by 2πj/q.
#[derive(Clone, Debug)]
pub struct EquivariantBlock {
    pub q: u64,
    pub sector_center: f64,
    pub sector_half_width: f64,
    pub base: DiffeoChain,
    radial_span: (f64, f64),
}

impl EquivariantBlock {
    pub fn new(q: u64, sector_center: f64, sector_half_width: f64, base: DiffeoChain) -> Result<Self> {
        if q == 0 {
            return Err(CoreError::Domain("block order q must be ≥ 1".into()));
        }
        if q > 1 && 2.0 * sector_half_width >= TAU / q as f64 {
            return Err(CoreError::Domain(format!(
                "sector width {} is not below 2π/q = {}",
                2.0 * sector_half_width,
                TAU / q as f64
            )));
        }
        let radial_span = base.radial_span();
        Ok(EquivariantBlock {
            q,
            sector_center,
            sector_half_width,
            base,
            radial_span,
        })
    }

    pub fn radial_span(&self) -> (f64, f64) {
        self.radial_span
    }

    fn eval(&self, p: &PlanePoint, dir: Direction, profile: &AngularProfile) -> PlanePoint {
        let (lo, hi) = self.radial_span;
        let r2 = p.x * p.x + p.y * p.y;
        if r2 <= lo * lo || r2 >= hi * hi {
            return *p;
        }
        if self.q == 1 {
            return self.base.eval_dir(p, dir, profile);
        }
        let w = TAU / self.q as f64;
        let sector_lo = self.sector_center - self.sector_half_width;
        let mut delta = p.angle() - sector_lo;
        delta -= TAU * (delta / TAU).floor();
        let mut j = (delta / w).floor() as i64;
        if j >= self.q as i64 {
            j = self.q as i64 - 1;
        }
        let offset = delta - j as f64 * w;
        // A copy occupies [0, 2·half_width] of its sector (small slack for
        // the angle rounding at the seam).
        if offset > 2.0 * self.sector_half_width + 1e-12 {
            return *p;
        }
        let back = TAU * (j as f64 / self.q as f64);
        let local = p.rotated(-back);
        let moved = self.base.eval_dir(&local, dir, profile);
        moved.rotated(back)
    }
}

/// One factor of a composition chain.
#[derive(Clone, Debug)]
pub enum Primitive {
    /// The ambient action S_t with exact rational t.
    Rotation { turns: ReducedFraction },
    Twist(RadialTwist),
    Block(Box<EquivariantBlock>),
}

impl Primitive {
    fn eval(&self, p: &PlanePoint, dir: Direction, profile: &AngularProfile) -> PlanePoint {
        match self {
            Primitive::Rotation { turns } => {
                let t = match dir {
                    Direction::Forward => turns.clone(),
                    Direction::Inverse => turns.neg(),
                };
                circle_action_exact(&t, p, profile)
            }
            Primitive::Twist(t) => t.eval(p, dir),
            Primitive::Block(b) => b.eval(p, dir, profile),
        }
    }

    fn radial_interval(&self, profile_hint: Option<&AngularProfile>) -> (f64, f64) {
        match self {
            Primitive::Rotation { .. } => match profile_hint {
                Some(pr) => (pr.support_inner(), pr.support_outer()),
                None => (0.0, f64::INFINITY),
            },
            Primitive::Twist(t) => t.radial_interval(),
            Primitive::Block(b) => b.radial_span(),
        }
    }
}

/// Circle bound used to skip whole sub-chains during evaluation.
#[derive(Clone, Copy, Debug)]
pub struct BoundingCircle {
    pub center: PlanePoint,
    pub radius: f64,
}

impl BoundingCircle {
    pub fn contains(&self, p: &PlanePoint) -> bool {
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        dx * dx + dy * dy < self.radius * self.radius
    }
}

/// Finite composition of primitives; the left factor applies last.
#[derive(Clone, Debug, Default)]
pub struct DiffeoChain {
    pub factors: Vec<Primitive>,
    pub declared_support: Option<AnnulusRegion>,
    bbox: Option<BoundingCircle>,
}

impl DiffeoChain {
    pub fn identity() -> Self {
        DiffeoChain::default()
    }

    pub fn from_factors(factors: Vec<Primitive>) -> Self {
        DiffeoChain {
            factors,
            declared_support: None,
            bbox: None,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Number of radial twists, descending through groups and blocks.
    pub fn primitive_count(&self) -> usize {
        self.factors
            .iter()
            .map(|f| match f {
                Primitive::Block(b) => b.base.primitive_count(),
                _ => 1,
            })
            .sum()
    }

    pub fn set_bbox(&mut self, bbox: Option<BoundingCircle>) {
        self.bbox = bbox;
    }

    pub fn bbox(&self) -> Option<BoundingCircle> {
        self.bbox
    }

    /// Recompute the bounding circle from the factor supports.
    pub fn computed_bbox(&self) -> Option<BoundingCircle> {
        let mut pts: Vec<(PlanePoint, f64)> = Vec::new();
        for f in &self.factors {
            match f {
                Primitive::Twist(t) => pts.push((t.center, t.support_radius())),
                _ => return None,
            }
        }
        let first = pts.first()?;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for (c, _) in &pts {
            cx += c.x;
            cy += c.y;
        }
        let center = PlanePoint::new(cx / pts.len() as f64, cy / pts.len() as f64);
        let mut radius: f64 = first.1;
        for (c, r) in &pts {
            radius = radius.max(center.dist(c) + r);
        }
        Some(BoundingCircle {
            center,
            radius: radius * (1.0 + 1e-12) + 1e-15,
        })
    }

    /// Union bound of the factors' radial intervals about the origin.
    pub fn radial_span(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for f in &self.factors {
            let (a, b) = f.radial_interval(None);
            lo = lo.min(a);
            hi = hi.max(b);
        }
        if self.factors.is_empty() {
            (0.0, 0.0)
        } else {
            (lo, hi)
        }
    }

    /// A ∘ B as chains: self applied after `rhs`.
    pub fn concat(&self, rhs: &DiffeoChain) -> DiffeoChain {
        let mut factors = self.factors.clone();
        factors.extend(rhs.factors.iter().cloned());
        DiffeoChain {
            factors,
            declared_support: merge_support(self.declared_support, rhs.declared_support),
            bbox: None,
        }
    }

    pub fn eval(&self, p: &PlanePoint, dir: Direction, profile: &AngularProfile) -> PlanePoint {
        self.eval_dir(p, dir, profile)
    }

    fn eval_dir(&self, p: &PlanePoint, dir: Direction, profile: &AngularProfile) -> PlanePoint {
        if let Some(bb) = &self.bbox {
            if !bb.contains(p) {
                return *p;
            }
        }
        let mut cur = *p;
        match dir {
            Direction::Forward => {
                for f in self.factors.iter().rev() {
                    cur = f.eval(&cur, dir, profile);
                }
            }
            Direction::Inverse => {
                for f in self.factors.iter() {
                    cur = f.eval(&cur, dir, profile);
                }
            }
        }
        cur
    }

    /// Maximum angular half-extent of the twist supports around
    /// `center_angle`, measured from the origin. Errors on non-twist
    /// factors other than nested q=1 groups.
    pub fn angular_extent_about(&self, center_angle: f64) -> Result<f64> {
        let mut max_ext = 0.0f64;
        for f in &self.factors {
            match f {
                Primitive::Twist(t) => {
                    let hw = t.angular_half_width().ok_or_else(|| {
                        CoreError::Domain("twist support disk reaches the origin".into())
                    })?;
                    let mut rel = t.center.angle() - center_angle;
                    rel = (rel + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI;
                    max_ext = max_ext.max(rel.abs() + hw);
                }
                Primitive::Block(b) if b.q == 1 => {
                    max_ext = max_ext.max(b.base.angular_extent_about(center_angle)?);
                }
                _ => {
                    return Err(CoreError::Domain(
                        "angular extent is only defined for twist groups".into(),
                    ))
                }
            }
        }
        Ok(max_ext)
    }
}

fn merge_support(a: Option<AnnulusRegion>, b: Option<AnnulusRegion>) -> Option<AnnulusRegion> {
    match (a, b) {
        (Some(x), Some(y)) => Some(AnnulusRegion {
            r_in: x.r_in.min(y.r_in),
            r_out: x.r_out.max(y.r_out),
        }),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Anything that maps plane points; the measurement sweeps are generic
/// over this.
pub trait PointMap: Sync {
    fn apply(&self, p: &PlanePoint) -> PlanePoint;
}

pub struct IdentityMap;

impl PointMap for IdentityMap {
    fn apply(&self, p: &PlanePoint) -> PlanePoint {
        *p
    }
}

pub struct ChainMap<'a> {
    pub chain: &'a DiffeoChain,
    pub direction: Direction,
    pub profile: &'a AngularProfile,
}

impl PointMap for ChainMap<'_> {
    fn apply(&self, p: &PlanePoint) -> PlanePoint {
        self.chain.eval(p, self.direction, self.profile)
    }
}

/// The ambient action S_t as a map.
pub struct ActionMap<'a> {
    pub turns: ReducedFraction,
    pub profile: &'a AngularProfile,
}

impl PointMap for ActionMap<'_> {
    fn apply(&self, p: &PlanePoint) -> PlanePoint {
        circle_action_exact(&self.turns, p, self.profile)
    }
}

/// Conjugated action H ∘ S_t ∘ H⁻¹; with t = λ·αₙ₊₁ this is Φₙ(λ).
pub struct ConjugatedMap<'a> {
    pub h: &'a DiffeoChain,
    pub turns: ReducedFraction,
    pub profile: &'a AngularProfile,
}

impl PointMap for ConjugatedMap<'_> {
    fn apply(&self, p: &PlanePoint) -> PlanePoint {
        let inner = self.h.eval(p, Direction::Inverse, self.profile);
        let rotated = circle_action_exact(&self.turns, &inner, self.profile);
        self.h.eval(&rotated, Direction::Forward, self.profile)
    }
}

/// Central-difference 2×2 Jacobian determinant.
pub fn jacobian_det(map: &dyn PointMap, p: &PlanePoint, step: f64) -> f64 {
    let fxp = map.apply(&PlanePoint::new(p.x + step, p.y));
    let fxm = map.apply(&PlanePoint::new(p.x - step, p.y));
    let fyp = map.apply(&PlanePoint::new(p.x, p.y + step));
    let fym = map.apply(&PlanePoint::new(p.x, p.y - step));
    let j11 = (fxp.x - fxm.x) / (2.0 * step);
    let j21 = (fxp.y - fxm.y) / (2.0 * step);
    let j12 = (fyp.x - fym.x) / (2.0 * step);
    let j22 = (fyp.y - fym.y) / (2.0 * step);
    j11 * j22 - j12 * j21
}

/// Central-difference Jacobian operator norm (largest singular value).
pub fn jacobian_opnorm(map: &dyn PointMap, p: &PlanePoint, step: f64) -> f64 {
    let fxp = map.apply(&PlanePoint::new(p.x + step, p.y));
    let fxm = map.apply(&PlanePoint::new(p.x - step, p.y));
    let fyp = map.apply(&PlanePoint::new(p.x, p.y + step));
    let fym = map.apply(&PlanePoint::new(p.x, p.y - step));
    let a = (fxp.x - fxm.x) / (2.0 * step);
    let c = (fxp.y - fxm.y) / (2.0 * step);
    let b = (fyp.x - fym.x) / (2.0 * step);
    let d = (fyp.y - fym.y) / (2.0 * step);
    opnorm_2x2(a, b, c, d)
}

pub fn opnorm_2x2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    // Singular values of [[a, b], [c, d]] via the trace/det of JᵀJ.
    let t = a * a + b * b + c * c + d * d;
    let det = a * d - b * c;
    let disc = (t * t - 4.0 * det * det).max(0.0).sqrt();
    (0.5 * (t + disc)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AnnulusRegion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn profile() -> AngularProfile {
        AngularProfile::new(AnnulusRegion::new(0.1, 0.9).unwrap(), 0.05, 4).unwrap()
    }

    fn quarter_twist() -> RadialTwist {
        RadialTwist::new(
            PlanePoint::new(0.0, 0.0),
            std::f64::consts::FRAC_PI_2,
            (0.4, 0.6),
            4,
        )
        .unwrap()
    }

    #[test]
    fn empty_chain_is_identity() {
        let pr = profile();
        let chain = DiffeoChain::identity();
        let p = PlanePoint::new(0.3, -0.2);
        assert_eq!(chain.eval(&p, Direction::Forward, &pr), p);
    }

    #[test]
    fn quarter_turn_at_plateau_radius() {
        let pr = profile();
        let chain = DiffeoChain::from_factors(vec![Primitive::Twist(quarter_twist())]);
        let q = chain.eval(&PlanePoint::new(0.5, 0.0), Direction::Forward, &pr);
        assert!((q.x - 0.0).abs() < 1e-15);
        assert!((q.y - 0.5).abs() < 1e-15);
    }

    #[test]
    fn twist_fixes_points_outside_band() {
        let pr = profile();
        let chain = DiffeoChain::from_factors(vec![Primitive::Twist(quarter_twist())]);
        for p in [PlanePoint::new(0.3, 0.0), PlanePoint::new(0.7, 0.1)] {
            assert_eq!(chain.eval(&p, Direction::Forward, &pr), p);
        }
    }

    #[test]
    fn deep_mixed_chain_round_trips() {
        let pr = profile();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut factors = Vec::new();
        for i in 0..50 {
            if i % 7 == 0 {
                factors.push(Primitive::Rotation {
                    turns: ReducedFraction::new(rng.gen_range(1..40), rng.gen_range(41..97)).unwrap(),
                });
            } else {
                let d = rng.gen_range(0.25..0.75);
                let theta = rng.gen_range(0.0..TAU);
                let b = rng.gen_range(0.01..0.05_f64).min(d - 0.11);
                let a = b * rng.gen_range(0.1..0.5);
                factors.push(Primitive::Twist(
                    RadialTwist::new(
                        PlanePoint::polar(d, theta),
                        rng.gen_range(-1.5..1.5),
                        (a, b),
                        4,
                    )
                    .unwrap(),
                ));
            }
        }
        let chain = DiffeoChain::from_factors(factors);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let p = PlanePoint::polar(rng.gen_range(0.12..0.88), rng.gen_range(0.0..TAU));
            let fwd = chain.eval(&p, Direction::Forward, &pr);
            let back = chain.eval(&fwd, Direction::Inverse, &pr);
            worst = worst.max(back.dist(&p));
        }
        assert!(worst < 1e-9, "round trip residual {worst}");
    }

    #[test]
    fn group_law_of_concat() {
        let pr = profile();
        let a = DiffeoChain::from_factors(vec![Primitive::Twist(quarter_twist())]);
        let b = DiffeoChain::from_factors(vec![Primitive::Rotation {
            turns: ReducedFraction::new(1, 3).unwrap(),
        }]);
        let ab = a.concat(&b);
        let p = PlanePoint::new(0.52, 0.07);
        let via = a.eval(&b.eval(&p, Direction::Forward, &pr), Direction::Forward, &pr);
        let direct = ab.eval(&p, Direction::Forward, &pr);
        assert!(via.dist(&direct) < 1e-12);
    }

    #[test]
    fn identity_chain_jacobian_is_one() {
        let det = jacobian_det(&IdentityMap, &PlanePoint::new(0.4, 0.2), 1e-5);
        assert!((det - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rotation_jacobian_is_one_on_plateau() {
        let pr = profile();
        let chain = DiffeoChain::from_factors(vec![Primitive::Rotation {
            turns: ReducedFraction::new(2, 7).unwrap(),
        }]);
        let map = ChainMap {
            chain: &chain,
            direction: Direction::Forward,
            profile: &pr,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = PlanePoint::polar(rng.gen_range(0.15..0.85), rng.gen_range(0.0..TAU));
            let det = jacobian_det(&map, &p, 1e-5);
            assert!((det - 1.0).abs() < 1e-6, "det {det} at {p:?}");
        }
    }

    #[test]
    fn twist_area_preserving_even_on_ramps() {
        let pr = profile();
        let chain = DiffeoChain::from_factors(vec![Primitive::Twist(quarter_twist())]);
        let map = ChainMap {
            chain: &chain,
            direction: Direction::Forward,
            profile: &pr,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst = 0.0f64;
        for _ in 0..2000 {
            let p = PlanePoint::polar(rng.gen_range(0.41..0.59), rng.gen_range(0.0..TAU));
            worst = worst.max((jacobian_det(&map, &p, 1e-5) - 1.0).abs());
        }
        assert!(worst < 1e-5, "jacobian drift {worst}");
    }

    #[test]
    fn block_with_q_one_acts_as_group() {
        let pr = profile();
        let base = DiffeoChain::from_factors(vec![Primitive::Twist(quarter_twist())]);
        let block = EquivariantBlock::new(1, 0.0, std::f64::consts::PI, base.clone()).unwrap();
        let chain = DiffeoChain::from_factors(vec![Primitive::Block(Box::new(block))]);
        let p = PlanePoint::new(0.5, 0.0);
        let via_base = base.eval(&p, Direction::Forward, &pr);
        let via_block = chain.eval(&p, Direction::Forward, &pr);
        assert!(via_base.dist(&via_block) < 1e-15);
    }

    #[test]
    fn opnorm_matches_known_matrices() {
        assert!((opnorm_2x2(1.0, 0.0, 0.0, 1.0) - 1.0).abs() < 1e-14);
        assert!((opnorm_2x2(2.0, 0.0, 0.0, 0.5) - 2.0).abs() < 1e-14);
        // Shear [[1, 1], [0, 1]] has largest singular value (1+√5)/2.
        let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
        assert!((opnorm_2x2(1.0, 1.0, 0.0, 1.0) - golden).abs() < 1e-12);
    }
}
