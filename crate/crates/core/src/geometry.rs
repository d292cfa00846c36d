//! The geometric stage: the plane with its area form, the invariant
//! annulus, the angular-velocity profile of the circle action, and the
//! invariant shells with separated point pairs.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rational::ReducedFraction;

pub const TAU: f64 = std::f64::consts::TAU;

/// A point of the plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

impl PlanePoint {
    pub fn new(x: f64, y: f64) -> Self {
        PlanePoint { x, y }
    }

    pub fn polar(r: f64, theta: f64) -> Self {
        PlanePoint {
            x: r * theta.cos(),
            y: r * theta.sin(),
        }
    }

    pub fn radius(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Angle in [0, 2π).
    pub fn angle(&self) -> f64 {
        let a = self.y.atan2(self.x);
        if a < 0.0 {
            a + TAU
        } else {
            a
        }
    }

    pub fn dist(&self, other: &PlanePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn sub(&self, other: &PlanePoint) -> PlanePoint {
        PlanePoint::new(self.x - other.x, self.y - other.y)
    }

    pub fn add(&self, other: &PlanePoint) -> PlanePoint {
        PlanePoint::new(self.x + other.x, self.y + other.y)
    }

    pub fn scale(&self, s: f64) -> PlanePoint {
        PlanePoint::new(self.x * s, self.y * s)
    }

    pub fn rotated(&self, angle: f64) -> PlanePoint {
        let (s, c) = angle.sin_cos();
        PlanePoint::new(self.x * c - self.y * s, self.x * s + self.y * c)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Open annulus r_in < |p| < r_out centred at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusRegion {
    pub r_in: f64,
    pub r_out: f64,
}

impl AnnulusRegion {
    pub fn new(r_in: f64, r_out: f64) -> Result<Self> {
        if !(0.0 < r_in && r_in < r_out) {
            return Err(CoreError::Domain(format!(
                "annulus needs 0 < r_in < r_out, got ({r_in}, {r_out})"
            )));
        }
        Ok(AnnulusRegion { r_in, r_out })
    }

    pub fn contains(&self, p: &PlanePoint) -> bool {
        let r = p.radius();
        self.r_in < r && r < self.r_out
    }

    pub fn contains_radius(&self, r: f64) -> bool {
        self.r_in < r && r < self.r_out
    }

    pub fn midradius(&self) -> f64 {
        0.5 * (self.r_in + self.r_out)
    }

    pub fn span(&self) -> f64 {
        self.r_out - self.r_in
    }

    /// Shrink both radial bounds inward by `margin`.
    pub fn shrunk(&self, margin: f64) -> Result<Self> {
        AnnulusRegion::new(self.r_in + margin, self.r_out - margin)
    }
}

/// Polynomial smoothstep of order k: first k derivatives vanish at 0 and 1.
pub fn smoothstep(k: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let kk = k as i64;
    let mut acc = 0.0;
    for j in 0..=kk {
        let c = (binomial(kk + j, j) * binomial(2 * kk + 1, kk - j)) as f64;
        acc += c * (-x).powi(j as i32) ;
    }
    acc * x.powi((kk + 1) as i32)
}

fn binomial(n: i64, k: i64) -> i64 {
    if k < 0 || k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: i64 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Angular-velocity profile ν(r) of the circle action.
///
/// ν ≡ 1 on the plateau annulus, ν ≡ 0 at distance ≥ ramp_width outside
/// it, glued with order-k smoothsteps. The action S_t rotates by
/// 2π·t·ν(r), which is exactly area-preserving and restricts to the rigid
/// unit-period rotation on the plateau.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularProfile {
    pub plateau: AnnulusRegion,
    pub ramp_width: f64,
    pub smoothness_order: u32,
}

impl AngularProfile {
    pub fn new(plateau: AnnulusRegion, ramp_width: f64, smoothness_order: u32) -> Result<Self> {
        if !(ramp_width > 0.0) {
            return Err(CoreError::Domain("ramp_width must be positive".into()));
        }
        if smoothness_order < 2 {
            return Err(CoreError::Domain("smoothness_order must be ≥ 2".into()));
        }
        if plateau.r_in - ramp_width <= 0.0 {
            return Err(CoreError::Domain(
                "inner ramp must not reach the origin".into(),
            ));
        }
        Ok(AngularProfile {
            plateau,
            ramp_width,
            smoothness_order,
        })
    }

    /// Angular velocity at radius r, in [0, 1].
    pub fn nu(&self, r: f64) -> f64 {
        let a = self.plateau.r_in;
        let b = self.plateau.r_out;
        let w = self.ramp_width;
        if r >= a && r <= b {
            1.0
        } else if r <= a - w || r >= b + w {
            0.0
        } else if r < a {
            smoothstep(self.smoothness_order, (r - (a - w)) / w)
        } else {
            smoothstep(self.smoothness_order, ((b + w) - r) / w)
        }
    }

    pub fn support_outer(&self) -> f64 {
        self.plateau.r_out + self.ramp_width
    }

    pub fn support_inner(&self) -> f64 {
        self.plateau.r_in - self.ramp_width
    }

    pub fn on_plateau(&self, r: f64) -> bool {
        r >= self.plateau.r_in && r <= self.plateau.r_out
    }
}

/// The flow S_t: rotation about the origin by 2π·t·ν(|p|).
pub fn circle_action(t: f64, p: &PlanePoint, profile: &AngularProfile) -> PlanePoint {
    let r = p.radius();
    let nu = profile.nu(r);
    if nu == 0.0 {
        return *p;
    }
    p.rotated(TAU * t * nu)
}

/// S_t for rational t; the plateau branch discards the integer part of t
/// exactly so huge rotation numbers stay precise where the action is
/// 1-periodic.
pub fn circle_action_exact(t: &ReducedFraction, p: &PlanePoint, profile: &AngularProfile) -> PlanePoint {
    let r = p.radius();
    if profile.on_plateau(r) {
        return p.rotated(TAU * t.frac_part_f64());
    }
    let nu = profile.nu(r);
    if nu == 0.0 {
        return *p;
    }
    p.rotated(TAU * t.to_f64() * nu)
}

/// Separated pair in the interior of U_{n+1}∖U_n (one point per component).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ShellPair {
    pub n: u64,
    pub inner_point: PlanePoint,
    pub outer_point: PlanePoint,
    pub separation_floor: f64,
}

/// Invariant shell Uₙ = { r_in + 1/n < r < r_out − 1/n }.
///
/// S-invariant because the condition is radial only.
pub fn invariant_shells(u: &AnnulusRegion, n: u64) -> Result<AnnulusRegion> {
    if n == 0 {
        return Err(CoreError::Domain("shell index must be ≥ 1".into()));
    }
    let inv = 1.0 / n as f64;
    if !(inv < u.span() / 2.0) {
        let min_n = (2.0 / u.span()).floor() as u64 + 1;
        return Err(CoreError::Domain(format!(
            "shell U_{n} is empty; minimal valid index is {min_n}"
        )));
    }
    AnnulusRegion::new(u.r_in + inv, u.r_out - inv)
}

/// Midradius points of the two components of U_{n+1}∖U_n, both at angle 0.
pub fn separated_pair(u: &AnnulusRegion, n: u64, c: f64) -> Result<ShellPair> {
    let un = invariant_shells(u, n)?;
    let un1 = invariant_shells(u, n + 1)?;
    let inner_mid = 0.5 * (un1.r_in + un.r_in);
    let outer_mid = 0.5 * (un.r_out + un1.r_out);
    let x = PlanePoint::new(inner_mid, 0.0);
    let y = PlanePoint::new(outer_mid, 0.0);
    let d = x.dist(&y);
    if !(d > c) {
        return Err(CoreError::Config(format!(
            "separation {d:.6} does not exceed the floor {c} at shell gap {n}"
        )));
    }
    Ok(ShellPair {
        n,
        inner_point: x,
        outer_point: y,
        separation_floor: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn default_profile() -> AngularProfile {
        AngularProfile::new(AnnulusRegion::new(0.1, 0.9).unwrap(), 0.05, 4).unwrap()
    }

    #[test]
    fn smoothstep_matches_classical_polynomials() {
        // k=1: 3x² − 2x³, k=2: 10x³ − 15x⁴ + 6x⁵.
        for &x in &[0.0, 0.25, 0.5, 0.75, 1.0] {
            assert_abs_diff_eq!(smoothstep(1, x), 3.0 * x * x - 2.0 * x * x * x, epsilon = 1e-14);
            assert_abs_diff_eq!(
                smoothstep(2, x),
                x.powi(3) * (10.0 - 15.0 * x + 6.0 * x * x),
                epsilon = 1e-14
            );
        }
        assert_eq!(smoothstep(4, -0.5), 0.0);
        assert_eq!(smoothstep(4, 1.5), 1.0);
    }

    #[test]
    fn profile_is_one_on_plateau_zero_outside() {
        let pr = default_profile();
        assert_eq!(pr.nu(0.5), 1.0);
        assert_eq!(pr.nu(0.1), 1.0);
        assert_eq!(pr.nu(0.9), 1.0);
        assert_eq!(pr.nu(0.04), 0.0);
        assert_eq!(pr.nu(0.96), 0.0);
        let mid_ramp = pr.nu(0.925);
        assert!(mid_ramp > 0.0 && mid_ramp < 1.0);
    }

    #[test]
    fn half_turn_on_plateau() {
        let pr = default_profile();
        let p = circle_action(0.5, &PlanePoint::new(0.5, 0.0), &pr);
        assert_abs_diff_eq!(p.x, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn full_turn_is_identity_on_plateau() {
        let pr = default_profile();
        let p0 = PlanePoint::polar(0.7, 1.2345);
        let p1 = circle_action(1.0, &p0, &pr);
        assert!(p0.dist(&p1) < 1e-12);
    }

    #[test]
    fn flow_additivity_of_thirds() {
        let pr = default_profile();
        let p0 = PlanePoint::polar(0.6, 0.3);
        let mut p = p0;
        for _ in 0..3 {
            p = circle_action(1.0 / 3.0, &p, &pr);
        }
        let whole = circle_action(1.0, &p0, &pr);
        assert!(p.dist(&whole) < 1e-12);
    }

    #[test]
    fn exact_action_discards_integer_turns_on_plateau() {
        let pr = default_profile();
        let t = ReducedFraction::new(1_000_000_007, 3).unwrap();
        let p0 = PlanePoint::polar(0.5, 0.0);
        let got = circle_action_exact(&t, &p0, &pr);
        // 1000000007/3 mod 1 = 2/3.
        let expect = circle_action(2.0 / 3.0, &p0, &pr);
        assert!(got.dist(&expect) < 1e-12);
    }

    #[test]
    fn radius_preserved_by_action() {
        let pr = default_profile();
        for i in 0..100 {
            let r = 0.02 + 0.96 * (i as f64) / 100.0;
            let p = PlanePoint::polar(r, 1.0 + i as f64);
            let q = circle_action(0.37, &p, &pr);
            assert!((q.radius() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn shells_unroll_to_radial_bounds() {
        let u = AnnulusRegion::new(0.1, 0.9).unwrap();
        let s = invariant_shells(&u, 10).unwrap();
        assert_abs_diff_eq!(s.r_in, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(s.r_out, 0.8, epsilon = 1e-15);
    }

    #[test]
    fn empty_shell_reports_minimal_index() {
        let u = AnnulusRegion::new(0.1, 0.9).unwrap();
        let err = invariant_shells(&u, 2).unwrap_err();
        assert!(err.to_string().contains("minimal valid index is 3"), "{err}");
    }

    #[test]
    fn shells_are_nested() {
        let u = AnnulusRegion::new(0.1, 0.9).unwrap();
        for n in 3..40 {
            let a = invariant_shells(&u, n).unwrap();
            let b = invariant_shells(&u, n + 1).unwrap();
            assert!(b.r_in < a.r_in && a.r_out < b.r_out);
        }
    }

    #[test]
    fn separated_pair_frozen_midradii() {
        // Components of U₁₁∖U₁₀ for U = (0.1, 0.9): inner (0.19090.., 0.2),
        // outer (0.8, 0.80909..); both midradius points at angle 0.
        let u = AnnulusRegion::new(0.1, 0.9).unwrap();
        let pair = separated_pair(&u, 10, 0.3).unwrap();
        assert_abs_diff_eq!(pair.inner_point.x, 0.19545454545454546, epsilon = 1e-15);
        assert_abs_diff_eq!(pair.outer_point.x, 0.8045454545454546, epsilon = 1e-15);
        let d = pair.inner_point.dist(&pair.outer_point);
        assert_abs_diff_eq!(d, 0.6090909090909091, epsilon = 1e-14);
        assert!(d > 0.3);
        // Collinear points at angle 0: distance is the radial difference.
        assert_abs_diff_eq!(
            d,
            (pair.outer_point.radius() - pair.inner_point.radius()).abs(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn impossible_separation_is_a_config_error() {
        let u = AnnulusRegion::new(0.1, 0.9).unwrap();
        assert!(separated_pair(&u, 10, 0.9).is_err());
    }
}
