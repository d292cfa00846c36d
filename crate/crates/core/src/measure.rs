//! Metric and orbit measurements backing the certificates.
//!
//! Grid sups are rigorous lower bounds; "close to" claims add Lipschitz
//! times mesh padding and are labelled heuristic upper bounds. Sweeps are
//! data-parallel over grid nodes and reduce with max only, so results are
//! independent of the partition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffeo::{jacobian_opnorm, opnorm_2x2, ConjugatedMap, DiffeoChain, PointMap};
use crate::geometry::{AngularProfile, AnnulusRegion, PlanePoint, TAU};
use crate::rational::ReducedFraction;

/// Polar sampling grid over an annulus; nodes sit at cell centres with an
/// optional seeded jitter.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GridSpec {
    pub radial: usize,
    pub angular: usize,
    pub region: AnnulusRegion,
    pub jitter_seed: u64,
}

impl GridSpec {
    pub fn new(radial: usize, angular: usize, region: AnnulusRegion, jitter_seed: u64) -> Self {
        GridSpec {
            radial: radial.max(1),
            angular: angular.max(1),
            region,
            jitter_seed,
        }
    }

    pub fn nodes(&self) -> Vec<PlanePoint> {
        let dr = self.region.span() / self.radial as f64;
        let dth = TAU / self.angular as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.jitter_seed);
        let jitter = if self.jitter_seed == 0 { 0.0 } else { 0.25 };
        let mut out = Vec::with_capacity(self.radial * self.angular);
        for i in 0..self.radial {
            let r = self.region.r_in + (i as f64 + 0.5) * dr;
            for j in 0..self.angular {
                let th = (j as f64 + 0.5) * dth;
                let (jr, jt) = if jitter > 0.0 {
                    (
                        rng.gen_range(-jitter..jitter) * dr,
                        rng.gen_range(-jitter..jitter) * dth,
                    )
                } else {
                    (0.0, 0.0)
                };
                out.push(PlanePoint::polar(r + jr, th + jt));
            }
        }
        out
    }

    /// Max distance from any region point to its nearest node (half the
    /// cell diagonal at the outer radius), jitter-free closed form.
    pub fn mesh_cover_radius(&self) -> f64 {
        let dr = self.region.span() / self.radial as f64;
        let arc = self.region.r_out * TAU / self.angular as f64;
        0.5 * (dr * dr + arc * arc).sqrt()
    }
}

/// Two-sided distance estimate between maps.
///
/// `lower_bound` is the rigorous grid max; `padded_estimate` adds the
/// Lipschitz-times-mesh term and is the heuristic upper bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistanceReport {
    pub lower_bound: f64,
    pub padded_estimate: f64,
    pub lipschitz_estimate: f64,
    pub mesh_cover: f64,
    pub grid_radial: usize,
    pub grid_angular: usize,
}

const LIPSCHITZ_STEP: f64 = 1e-7;

/// Max over grid nodes of the Jacobian operator norm of `map`.
pub fn sampled_lipschitz(map: &dyn PointMap, grid: &GridSpec) -> f64 {
    grid.nodes()
        .par_iter()
        .map(|p| jacobian_opnorm(map, p, LIPSCHITZ_STEP))
        .reduce(|| 0.0, f64::max)
}

/// C⁰ distance report with the (L_f + L_g)·mesh/2 padding.
pub fn c0_distance(f: &dyn PointMap, g: &dyn PointMap, grid: &GridSpec) -> DistanceReport {
    let nodes = grid.nodes();
    let lower = nodes
        .par_iter()
        .map(|p| f.apply(p).dist(&g.apply(p)))
        .reduce(|| 0.0, f64::max);
    let lip_grid = lipschitz_subgrid(grid);
    let lf = sampled_lipschitz(f, &lip_grid);
    let lg = sampled_lipschitz(g, &lip_grid);
    let mesh = grid.mesh_cover_radius();
    DistanceReport {
        lower_bound: lower,
        padded_estimate: lower + 0.5 * (lf + lg) * mesh,
        lipschitz_estimate: lf.max(lg),
        mesh_cover: mesh,
        grid_radial: grid.radial,
        grid_angular: grid.angular,
    }
}

/// C⁰ distance padded with the sampled Lipschitz constant of the
/// difference map x ↦ f(x) − g(x).
///
/// For two conjugations of nearby rotations the individual Lipschitz
/// constants grow with the stage while the difference stays uniformly
/// small; the difference modulus is the one that interpolates sup|f−g|
/// between grid nodes.
pub fn c0_distance_diff_padded(
    f: &dyn PointMap,
    g: &dyn PointMap,
    grid: &GridSpec,
) -> DistanceReport {
    let nodes = grid.nodes();
    let lower = nodes
        .par_iter()
        .map(|p| f.apply(p).dist(&g.apply(p)))
        .reduce(|| 0.0, f64::max);
    let lip_grid = lipschitz_subgrid(grid);
    let ldiff = lip_grid
        .nodes()
        .par_iter()
        .map(|p| {
            let h = LIPSCHITZ_STEP;
            let diff = |q: PlanePoint| {
                let a = f.apply(&q);
                let b = g.apply(&q);
                a.sub(&b)
            };
            let fxp = diff(PlanePoint::new(p.x + h, p.y));
            let fxm = diff(PlanePoint::new(p.x - h, p.y));
            let fyp = diff(PlanePoint::new(p.x, p.y + h));
            let fym = diff(PlanePoint::new(p.x, p.y - h));
            opnorm_2x2(
                (fxp.x - fxm.x) / (2.0 * h),
                (fyp.x - fym.x) / (2.0 * h),
                (fxp.y - fxm.y) / (2.0 * h),
                (fyp.y - fym.y) / (2.0 * h),
            )
        })
        .reduce(|| 0.0, f64::max);
    let mesh = grid.mesh_cover_radius();
    DistanceReport {
        lower_bound: lower,
        padded_estimate: lower + ldiff * mesh,
        lipschitz_estimate: ldiff,
        mesh_cover: mesh,
        grid_radial: grid.radial,
        grid_angular: grid.angular,
    }
}

fn lipschitz_subgrid(grid: &GridSpec) -> GridSpec {
    GridSpec::new(
        (grid.radial / 2).max(16),
        (grid.angular / 2).max(32),
        grid.region,
        grid.jitter_seed,
    )
}

/// Forward orbit [x₀, map(x₀), map²(x₀), …] of length `count`.
pub fn orbit(map: &dyn PointMap, x0: &PlanePoint, count: usize) -> Vec<PlanePoint> {
    let mut out = Vec::with_capacity(count);
    let mut cur = *x0;
    for _ in 0..count {
        out.push(cur);
        cur = map.apply(&cur);
    }
    out
}

/// Uniform-bucket spatial index for nearest-neighbour queries.
pub struct BucketGrid {
    cell: f64,
    nx: usize,
    ny: usize,
    x0: f64,
    y0: f64,
    buckets: Vec<Vec<PlanePoint>>,
}

impl BucketGrid {
    pub fn build(points: &[PlanePoint], cell_hint: f64) -> Self {
        assert!(!points.is_empty(), "bucket grid needs at least one point");
        let mut x0 = f64::INFINITY;
        let mut y0 = f64::INFINITY;
        let mut x1 = f64::NEG_INFINITY;
        let mut y1 = f64::NEG_INFINITY;
        for p in points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let extent = (x1 - x0).max(y1 - y0).max(1e-9);
        // Aim for O(1) points per bucket without exploding memory.
        let target = (points.len() as f64).sqrt().ceil().max(8.0);
        let cell = (extent / target).max(cell_hint.max(1e-9));
        let nx = ((x1 - x0) / cell).ceil() as usize + 1;
        let ny = ((y1 - y0) / cell).ceil() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for p in points {
            let ix = ((p.x - x0) / cell) as usize;
            let iy = ((p.y - y0) / cell) as usize;
            buckets[iy * nx + ix].push(*p);
        }
        BucketGrid {
            cell,
            nx,
            ny,
            x0,
            y0,
            buckets,
        }
    }

    /// Distance to the nearest stored point, by expanding ring search.
    pub fn nearest_dist(&self, p: &PlanePoint) -> f64 {
        let fx = (p.x - self.x0) / self.cell;
        let fy = (p.y - self.y0) / self.cell;
        let cx = fx.floor().clamp(0.0, (self.nx - 1) as f64) as i64;
        let cy = fy.floor().clamp(0.0, (self.ny - 1) as f64) as i64;
        let mut best = f64::INFINITY;
        let max_ring = self.nx.max(self.ny) as i64;
        for ring in 0..=max_ring {
            // Once a hit exists, one extra ring settles boundary effects.
            if best.is_finite() && (ring as f64 - 1.0) * self.cell > best {
                break;
            }
            for dy in -ring..=ring {
                for dx in -ring..=ring {
                    if dx.abs() != ring && dy.abs() != ring {
                        continue;
                    }
                    let ix = cx + dx;
                    let iy = cy + dy;
                    if ix < 0 || iy < 0 || ix >= self.nx as i64 || iy >= self.ny as i64 {
                        continue;
                    }
                    for q in &self.buckets[iy as usize * self.nx + ix as usize] {
                        best = best.min(p.dist(q));
                    }
                }
            }
        }
        best
    }
}

/// Density measurement: grid max of the nearest-point distance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityReport {
    pub lower_bound: f64,
    pub padded_estimate: f64,
    pub mesh_cover: f64,
    pub point_count: usize,
}

/// Max over grid nodes of the distance to the nearest of `points`.
pub fn density_radius(points: &[PlanePoint], grid: &GridSpec) -> DensityReport {
    let index = BucketGrid::build(points, grid.mesh_cover_radius() * 0.5);
    let lower = grid
        .nodes()
        .par_iter()
        .map(|p| index.nearest_dist(p))
        .reduce(|| 0.0, f64::max);
    let mesh = grid.mesh_cover_radius();
    DensityReport {
        lower_bound: lower,
        padded_estimate: lower + mesh,
        mesh_cover: mesh,
        point_count: points.len(),
    }
}

/// Max residual of the stage-n conjugation identity
/// H_{n−1} S_{λαₙ} H_{n−1}⁻¹ = Hₙ S_{λαₙ} Hₙ⁻¹ over λ = 1/k, k ≤ n.
pub fn verify_conjugation_identity(
    h_prev: &DiffeoChain,
    h_cur: &DiffeoChain,
    alpha_n: &ReducedFraction,
    n: u64,
    grid: &GridSpec,
    profile: &AngularProfile,
) -> f64 {
    let mut worst = 0.0f64;
    for k in 1..=n.max(1) {
        let turns = alpha_n.div_int(k as i64).expect("k ≥ 1");
        let lhs = ConjugatedMap {
            h: h_prev,
            turns: turns.clone(),
            profile,
        };
        let rhs = ConjugatedMap {
            h: h_cur,
            turns,
            profile,
        };
        let res = grid
            .nodes()
            .par_iter()
            .map(|p| lhs.apply(p).dist(&rhs.apply(p)))
            .reduce(|| 0.0, f64::max);
        worst = worst.max(res);
    }
    worst
}
