//! Constructive point transport: movers built from radial-twist hops.
//!
//! A mover carries one point along a planned polyline; each hop is a
//! single radial twist whose plateau contains the hop chord, so the moved
//! point lands exactly and the map stays exactly area-preserving. Hops
//! adapt their length to the free space around them; every twist support
//! keeps `clearance` from every forbidden point and fits inside the
//! region (and the angular window when the mover is built for a lift).

use crate::error::{CoreError, Result};
use crate::geometry::{AnnulusRegion, PlanePoint, TAU};

use super::{DiffeoChain, EquivariantBlock, Primitive, RadialTwist};

/// Twist-shape constants shared by all hops of a run.
#[derive(Clone, Copy, Debug)]
pub struct TwistStyle {
    /// Turn radius as a multiple of the hop length.
    pub turn_radius_factor: f64,
    /// Band half-width as a multiple of the hop length.
    pub band_half_factor: f64,
    /// Smoothstep order of the twist ramps.
    pub order: u32,
}

impl Default for TwistStyle {
    fn default() -> Self {
        TwistStyle {
            turn_radius_factor: 2.5,
            band_half_factor: 2.2,
            order: 4,
        }
    }
}

impl TwistStyle {
    /// Outer support radius of a hop twist, as a multiple of hop length.
    pub fn support_factor(&self) -> f64 {
        self.turn_radius_factor + self.band_half_factor
    }
}

/// Angular window a lifted base must stay inside.
#[derive(Clone, Copy, Debug)]
pub struct Sector {
    pub center: f64,
    pub half_width: f64,
}

impl Sector {
    /// Signed angular offset of `angle` from the window centre, in (−π, π].
    pub fn offset(&self, angle: f64) -> f64 {
        wrap_pi(angle - self.center)
    }

    pub fn contains(&self, angle: f64, margin: f64) -> bool {
        self.offset(angle).abs() + margin <= self.half_width
    }
}

fn wrap_pi(a: f64) -> f64 {
    let mut x = a.rem_euclid(TAU);
    if x > std::f64::consts::PI {
        x -= TAU;
    }
    x
}

/// Where a mover is allowed to act.
#[derive(Clone, Copy, Debug)]
pub struct PlanRegion {
    pub radial: AnnulusRegion,
    pub window: Option<Sector>,
}

impl PlanRegion {
    pub fn whole(radial: AnnulusRegion) -> Self {
        PlanRegion {
            radial,
            window: None,
        }
    }
}

const POSITION_TOL: f64 = 1e-13;
const MAX_HOPS_PER_MOVER: usize = 400_000;

/// Build a chain carrying `a` to `b`, identity within `clearance` of every
/// forbidden point and identity outside the region.
pub fn make_mover(
    a: &PlanePoint,
    b: &PlanePoint,
    region: &PlanRegion,
    forbidden: &[PlanePoint],
    clearance: f64,
    style: &TwistStyle,
) -> Result<DiffeoChain> {
    if !(clearance > 0.0) {
        return Err(CoreError::Domain("clearance must be positive".into()));
    }
    if a.dist(b) < POSITION_TOL {
        return Ok(DiffeoChain::identity());
    }
    // Concentric fast path: a single origin-centred twist when both points
    // share a radius and the full annulus band is unobstructed.
    if region.window.is_none() {
        if let Some(t) = concentric_twist(a, b, region, forbidden, clearance, style) {
            return Ok(group_chain(vec![t]));
        }
    }
    let polyline = plan_polyline(a, b, region, forbidden, clearance)?;
    let twists = hopify(&polyline, region, forbidden, clearance, style)?;
    Ok(group_chain(twists))
}

fn group_chain(twists: Vec<RadialTwist>) -> DiffeoChain {
    if twists.is_empty() {
        return DiffeoChain::identity();
    }
    let mut inner = DiffeoChain::from_factors(
        twists.into_iter().rev().map(Primitive::Twist).collect(),
    );
    let bbox = inner.computed_bbox();
    inner.set_bbox(bbox);
    let block = EquivariantBlock::new(1, 0.0, std::f64::consts::PI, inner)
        .expect("q=1 block is always valid");
    DiffeoChain::from_factors(vec![Primitive::Block(Box::new(block))])
}

fn concentric_twist(
    a: &PlanePoint,
    b: &PlanePoint,
    region: &PlanRegion,
    forbidden: &[PlanePoint],
    clearance: f64,
    style: &TwistStyle,
) -> Option<RadialTwist> {
    let ra = a.radius();
    let rb = b.radius();
    if (ra - rb).abs() > 1e-12 {
        return None;
    }
    let dtheta = wrap_pi(b.angle() - a.angle());
    let arc = ra * dtheta.abs();
    let w = clearance.min(arc).min(0.5 * (ra - region.radial.r_in)).min(0.5 * (region.radial.r_out - ra));
    if w <= 0.0 {
        return None;
    }
    let band = (ra - 0.5 * w, ra + 0.5 * w);
    if band.0 <= region.radial.r_in || band.1 >= region.radial.r_out {
        return None;
    }
    for f in forbidden {
        if (f.radius() - ra).abs() < 0.5 * w + clearance {
            return None;
        }
    }
    RadialTwist::new(PlanePoint::new(0.0, 0.0), dtheta, band, style.order).ok()
}

/// Straight-line routing with perpendicular detours around blockers.
fn plan_polyline(
    a: &PlanePoint,
    b: &PlanePoint,
    region: &PlanRegion,
    forbidden: &[PlanePoint],
    clearance: f64,
) -> Result<Vec<PlanePoint>> {
    let mut verts = vec![*a, *b];
    let split_budget = 64 + 16 * forbidden.len();
    let mut splits = 0usize;
    let mut i = 0usize;
    while i + 1 < verts.len() {
        let u = verts[i];
        let v = verts[i + 1];
        match first_blocker(&u, &v, forbidden, clearance) {
            None => i += 1,
            Some(f) => {
                splits += 1;
                if splits > split_budget {
                    return Err(CoreError::Planner {
                        pair_index: 0,
                        detail: format!(
                            "detour budget exhausted between ({:.6},{:.6}) and ({:.6},{:.6})",
                            u.x, u.y, v.x, v.y
                        ),
                    });
                }
                let via = detour_via(&u, &v, &f, region, forbidden, clearance).ok_or_else(|| {
                    CoreError::Planner {
                        pair_index: 0,
                        detail: format!(
                            "no admissible detour around ({:.6},{:.6})",
                            f.x, f.y
                        ),
                    }
                })?;
                verts.insert(i + 1, via);
            }
        }
    }
    Ok(verts)
}

fn first_blocker(
    u: &PlanePoint,
    v: &PlanePoint,
    forbidden: &[PlanePoint],
    clearance: f64,
) -> Option<PlanePoint> {
    let mut best: Option<(f64, PlanePoint)> = None;
    for f in forbidden {
        let (d, t) = segment_distance(u, v, f);
        if d <= clearance * 1.1 {
            match best {
                Some((bt, _)) if bt <= t => {}
                _ => best = Some((t, *f)),
            }
        }
    }
    best.map(|(_, f)| f)
}

/// Distance from `p` to segment uv and the parameter of the closest point.
fn segment_distance(u: &PlanePoint, v: &PlanePoint, p: &PlanePoint) -> (f64, f64) {
    let d = v.sub(u);
    let len2 = d.x * d.x + d.y * d.y;
    if len2 == 0.0 {
        return (u.dist(p), 0.0);
    }
    let t = (((p.x - u.x) * d.x + (p.y - u.y) * d.y) / len2).clamp(0.0, 1.0);
    let c = PlanePoint::new(u.x + t * d.x, u.y + t * d.y);
    (c.dist(p), t)
}

fn detour_via(
    u: &PlanePoint,
    v: &PlanePoint,
    blocker: &PlanePoint,
    region: &PlanRegion,
    forbidden: &[PlanePoint],
    clearance: f64,
) -> Option<PlanePoint> {
    let d = v.sub(u);
    let len = u.dist(v);
    if len < POSITION_TOL {
        return None;
    }
    let t = segment_distance(u, v, blocker).1;
    let foot = PlanePoint::new(u.x + t * d.x, u.y + t * d.y);
    let n = PlanePoint::new(-d.y / len, d.x / len);
    let mut offset = clearance * 1.9;
    for _ in 0..8 {
        for side in [1.0, -1.0] {
            let via = foot.add(&n.scale(side * offset));
            let admissible = region
                .radial
                .contains_radius(via.radius())
                && region
                    .window
                    .map(|w| w.contains(via.angle(), 0.0))
                    .unwrap_or(true)
                && forbidden.iter().all(|f| f.dist(&via) > clearance * 1.2)
                && via.dist(u) > POSITION_TOL
                && via.dist(v) > POSITION_TOL;
            if admissible {
                return Some(via);
            }
        }
        offset *= 1.6;
    }
    None
}

/// Walk a polyline with free-space-adaptive hops.
fn hopify(
    polyline: &[PlanePoint],
    region: &PlanRegion,
    forbidden: &[PlanePoint],
    clearance: f64,
    style: &TwistStyle,
) -> Result<Vec<RadialTwist>> {
    let sf = style.support_factor();
    let span = region.radial.span();
    let hop_cap = span / 8.0;
    let hop_floor = (clearance / (4.0 * sf)).max(1e-12);
    let mut twists = Vec::new();
    let mut cur = polyline[0];
    for target in &polyline[1..] {
        loop {
            let remaining = cur.dist(target);
            if remaining < POSITION_TOL {
                break;
            }
            if twists.len() > MAX_HOPS_PER_MOVER {
                return Err(CoreError::Resource(format!(
                    "mover exceeded {MAX_HOPS_PER_MOVER} hops"
                )));
            }
            // Keep the support within half the free room so tubes of
            // neighbouring movers never stack their ramp zones.
            let mut h = free_room(&cur, region, forbidden, clearance) / (2.0 * sf + 1.2);
            h = h.clamp(hop_floor, hop_cap).min(remaining);
            let dir = target.sub(&cur).scale(1.0 / remaining);
            // Shrink until the hop twist validates.
            let mut placed = false;
            for _ in 0..60 {
                let next = if (h - remaining).abs() < POSITION_TOL * 0.5 || h >= remaining {
                    *target
                } else {
                    cur.add(&dir.scale(h))
                };
                match hop_twist(&cur, &next, region, forbidden, clearance, style) {
                    Some(t) => {
                        twists.push(t);
                        cur = next;
                        placed = true;
                        break;
                    }
                    None => {
                        h *= 0.5;
                        if h < 1e-13 {
                            break;
                        }
                    }
                }
            }
            if !placed {
                return Err(CoreError::Planner {
                    pair_index: 0,
                    detail: format!(
                        "hop blocked at ({:.9},{:.9}) heading to ({:.9},{:.9})",
                        cur.x, cur.y, target.x, target.y
                    ),
                });
            }
        }
    }
    Ok(twists)
}

fn free_room(
    p: &PlanePoint,
    region: &PlanRegion,
    forbidden: &[PlanePoint],
    clearance: f64,
) -> f64 {
    let r = p.radius();
    let mut room = (r - region.radial.r_in).min(region.radial.r_out - r);
    if let Some(w) = region.window {
        let ang_room = w.half_width - w.offset(p.angle()).abs();
        room = room.min(ang_room.max(0.0) * r);
    }
    for f in forbidden {
        room = room.min(f.dist(p) - clearance);
    }
    room.max(0.0)
}

/// Construct and validate the twist for one hop u → v.
fn hop_twist(
    u: &PlanePoint,
    v: &PlanePoint,
    region: &PlanRegion,
    forbidden: &[PlanePoint],
    clearance: f64,
    style: &TwistStyle,
) -> Option<RadialTwist> {
    let h = u.dist(v);
    if h < 1e-15 {
        return None;
    }
    let rho = style.turn_radius_factor * h;
    let half_band = style.band_half_factor * h;
    let support = rho + half_band;
    let mid = PlanePoint::new(0.5 * (u.x + v.x), 0.5 * (u.y + v.y));
    let d = v.sub(u).scale(1.0 / h);
    let n = PlanePoint::new(-d.y, d.x);
    let ell = (rho * rho - 0.25 * h * h).sqrt();

    let mut best: Option<(f64, RadialTwist)> = None;
    for side in [1.0f64, -1.0] {
        let center = mid.add(&n.scale(side * ell));
        let cr = center.radius();
        // Support must sit strictly inside the region annulus.
        if cr - support <= region.radial.r_in || cr + support >= region.radial.r_out {
            continue;
        }
        if let Some(w) = region.window {
            if support >= cr {
                continue;
            }
            let half = (support / cr).asin();
            if !w.contains(center.angle(), half) {
                continue;
            }
        }
        // Forbidden points stay `clearance` away from the support annulus.
        let mut score = f64::INFINITY;
        let mut ok = true;
        for f in forbidden {
            let gap = (f.dist(&center) - rho).abs() - half_band;
            if gap <= clearance {
                ok = false;
                break;
            }
            score = score.min(gap);
        }
        if !ok {
            continue;
        }
        let ua = u.sub(&center);
        let va = v.sub(&center);
        let angle = (ua.x * va.y - ua.y * va.x).atan2(ua.x * va.x + ua.y * va.y);
        let twist = RadialTwist::new(center, angle, (rho - half_band, rho + half_band), style.order)
            .ok()?;
        match &best {
            Some((s, _)) if *s >= score => {}
            _ => best = Some((score, twist)),
        }
    }
    best.map(|(_, t)| t)
}

/// Transport each source to its target, processing pairs lexicographically
/// by target angle then radius, with already-placed targets and
/// not-yet-moved sources forbidden for every mover.
pub fn make_multi_mover(
    sources: &[PlanePoint],
    targets: &[PlanePoint],
    region: &PlanRegion,
    clearance: f64,
    style: &TwistStyle,
) -> Result<DiffeoChain> {
    if sources.len() != targets.len() {
        return Err(CoreError::Domain(format!(
            "sources ({}) and targets ({}) differ in cardinality",
            sources.len(),
            targets.len()
        )));
    }
    for (i, s) in sources.iter().enumerate() {
        for t in &sources[i + 1..] {
            if s.dist(t) < POSITION_TOL {
                return Err(CoreError::Domain("sources are not pairwise distinct".into()));
            }
        }
    }
    for (i, s) in targets.iter().enumerate() {
        for t in &targets[i + 1..] {
            if s.dist(t) < POSITION_TOL {
                return Err(CoreError::Domain("targets are not pairwise distinct".into()));
            }
        }
    }
    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.sort_by(|&i, &j| {
        let a = (targets[i].angle(), targets[i].radius());
        let b = (targets[j].angle(), targets[j].radius());
        a.partial_cmp(&b).unwrap().then(i.cmp(&j))
    });

    let mut moved = vec![false; sources.len()];
    let mut movers: Vec<DiffeoChain> = Vec::new();
    for &idx in &order {
        let mut forbidden: Vec<PlanePoint> = Vec::new();
        for k in 0..sources.len() {
            if k == idx {
                continue;
            }
            if moved[k] {
                forbidden.push(targets[k]);
            } else {
                forbidden.push(sources[k]);
            }
        }
        let mover = make_mover(&sources[idx], &targets[idx], region, &forbidden, clearance, style)
            .map_err(|e| match e {
                CoreError::Planner { detail, .. } => CoreError::Planner {
                    pair_index: idx,
                    detail,
                },
                other => other,
            })?;
        moved[idx] = true;
        if !mover.is_empty() {
            movers.push(mover);
        }
    }
    let mut factors = Vec::new();
    for m in movers.into_iter().rev() {
        factors.extend(m.factors);
    }
    Ok(DiffeoChain::from_factors(factors))
}

/// Lift a sector-supported base to the commuting block
/// ∏_{j=0}^{q−1} S_{j/q} ∘ base ∘ S_{−j/q}.
pub fn equivariant_lift(base: DiffeoChain, q: u64, sector_center: f64) -> Result<DiffeoChain> {
    if base.is_empty() {
        return Ok(DiffeoChain::identity());
    }
    let extent = base.angular_extent_about(sector_center)?;
    let allowed = std::f64::consts::PI / q as f64;
    if q > 1 && extent >= allowed * 0.999 {
        return Err(CoreError::Domain(format!(
            "base angular half-extent {extent:.6e} does not fit the sector half-width {allowed:.6e}"
        )));
    }
    let half_width = if q == 1 {
        std::f64::consts::PI
    } else {
        (extent * (1.0 + 1e-9) + 1e-15).min(allowed * 0.9995)
    };
    let block = EquivariantBlock::new(q, sector_center, half_width, base)?;
    Ok(DiffeoChain::from_factors(vec![Primitive::Block(Box::new(block))]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffeo::{ChainMap, Direction, PointMap};
    use crate::geometry::AngularProfile;
    use crate::rational::ReducedFraction;

    fn profile() -> AngularProfile {
        AngularProfile::new(AnnulusRegion::new(0.1, 0.9).unwrap(), 0.05, 4).unwrap()
    }

    fn region() -> PlanRegion {
        PlanRegion::whole(AnnulusRegion::new(0.1, 0.9).unwrap())
    }

    #[test]
    fn mover_to_self_is_empty() {
        let a = PlanePoint::new(0.5, 0.0);
        let m = make_mover(&a, &a, &region(), &[], 0.02, &TwistStyle::default()).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn concentric_hop_is_a_single_origin_twist() {
        let a = PlanePoint::new(0.5, 0.0);
        let b = PlanePoint::new(0.5 * 0.2f64.cos(), 0.5 * 0.2f64.sin());
        let m = make_mover(&a, &b, &region(), &[], 0.05, &TwistStyle::default()).unwrap();
        assert_eq!(m.primitive_count(), 1);
        let pr = profile();
        let got = m.eval(&a, Direction::Forward, &pr);
        assert!(got.dist(&b) < 1e-12, "landing error {}", got.dist(&b));
    }

    #[test]
    fn radial_mover_avoids_forbidden_point() {
        let pr = profile();
        let a = PlanePoint::new(0.3, 0.0);
        let b = PlanePoint::new(0.7, 0.0);
        let f = PlanePoint::new(0.5, 0.05);
        let m = make_mover(&a, &b, &region(), &[f], 0.02, &TwistStyle::default()).unwrap();
        let got = m.eval(&a, Direction::Forward, &pr);
        assert!(got.dist(&b) < 1e-9, "landing error {}", got.dist(&b));
        let f_img = m.eval(&f, Direction::Forward, &pr);
        assert!(f_img.dist(&f) < 1e-12, "forbidden moved by {}", f_img.dist(&f));
        // Round trip.
        let back = m.eval(&got, Direction::Inverse, &pr);
        assert!(back.dist(&a) < 1e-9);
    }

    #[test]
    fn mover_blocked_head_on_detours() {
        let pr = profile();
        let a = PlanePoint::new(0.3, 0.0);
        let b = PlanePoint::new(0.7, 0.0);
        let f = PlanePoint::new(0.5, 0.0);
        let m = make_mover(&a, &b, &region(), &[f], 0.02, &TwistStyle::default()).unwrap();
        let got = m.eval(&a, Direction::Forward, &pr);
        assert!(got.dist(&b) < 1e-9);
        assert!(m.eval(&f, Direction::Forward, &pr).dist(&f) < 1e-12);
    }

    #[test]
    fn multi_mover_sends_circle_points_to_polar_grid() {
        let pr = profile();
        let mut sources = Vec::new();
        let mut targets = Vec::new();
        for i in 0..6 {
            let theta = 0.35 + 0.35 * i as f64;
            sources.push(PlanePoint::polar(0.5, theta));
            let r = 0.3 + 0.15 * (i % 3) as f64;
            let ang = 0.8 + 1.9 * (i / 3) as f64;
            targets.push(PlanePoint::polar(r, ang));
        }
        let m = make_multi_mover(&sources, &targets, &region(), 0.01, &TwistStyle::default())
            .unwrap();
        for (s, t) in sources.iter().zip(&targets) {
            let got = m.eval(s, Direction::Forward, &pr);
            assert!(got.dist(t) < 1e-9, "residual {}", got.dist(t));
        }
    }

    #[test]
    fn multi_mover_identity_permutation_is_empty() {
        let pts: Vec<PlanePoint> = (0..4).map(|i| PlanePoint::polar(0.5, 0.3 * i as f64)).collect();
        let m = make_multi_mover(&pts, &pts, &region(), 0.01, &TwistStyle::default()).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn lift_of_identity_is_identity() {
        let lifted = equivariant_lift(DiffeoChain::identity(), 5, 0.0).unwrap();
        assert!(lifted.is_empty());
    }

    #[test]
    fn lift_commutes_with_rotation() {
        let pr = profile();
        let q = 7u64;
        let window = Sector {
            center: 0.0,
            half_width: std::f64::consts::PI / q as f64 * 0.9,
        };
        let reg = PlanRegion {
            radial: AnnulusRegion::new(0.1, 0.9).unwrap(),
            window: Some(window),
        };
        let a = PlanePoint::polar(0.5, -0.05);
        let b = PlanePoint::polar(0.62, 0.08);
        let base = make_mover(&a, &b, &reg, &[], 0.01, &TwistStyle::default()).unwrap();
        let lifted = equivariant_lift(base, q, 0.0).unwrap();
        let rot = ReducedFraction::new(1, q as i64).unwrap();

        let mut worst = 0.0f64;
        for i in 0..1000 {
            let r = 0.12 + 0.76 * (i % 37) as f64 / 37.0;
            let th = TAU * (i as f64) / 1000.0;
            let p = PlanePoint::polar(r, th);
            let ls = {
                let s = crate::geometry::circle_action_exact(&rot, &p, &pr);
                lifted.eval(&s, Direction::Forward, &pr)
            };
            let sl = {
                let l = lifted.eval(&p, Direction::Forward, &pr);
                crate::geometry::circle_action_exact(&rot, &l, &pr)
            };
            worst = worst.max(ls.dist(&sl));
        }
        assert!(worst < 1e-9, "commutation residual {worst}");

        // The lift moves every rotated copy of the base pair consistently.
        for j in 0..q {
            let ang = TAU * j as f64 / q as f64;
            let src = a.rotated(ang);
            let dst = b.rotated(ang);
            let got = lifted.eval(&src, Direction::Forward, &pr);
            assert!(got.dist(&dst) < 1e-9, "copy {j} residual {}", got.dist(&dst));
        }
    }

    #[test]
    fn lift_refuses_wide_bases() {
        let reg = region();
        let a = PlanePoint::polar(0.5, 0.0);
        let b = PlanePoint::polar(0.55, 1.2);
        // Build without a window, then try to lift with a large q.
        let base = make_mover(&a, &b, &reg, &[], 0.01, &TwistStyle::default()).unwrap();
        let err = equivariant_lift(base, 64, 0.0).unwrap_err();
        assert!(err.to_string().contains("does not fit"), "{err}");
    }

    #[test]
    fn mover_eval_cost_uses_bounding_circles() {
        let pr = profile();
        let a = PlanePoint::new(0.3, 0.0);
        let b = PlanePoint::new(0.7, 0.0);
        let m = make_mover(&a, &b, &region(), &[], 0.02, &TwistStyle::default()).unwrap();
        let far = PlanePoint::new(-0.5, 0.0);
        let map = ChainMap {
            chain: &m,
            direction: Direction::Forward,
            profile: &pr,
        };
        assert_eq!(map.apply(&far), far);
    }
}
