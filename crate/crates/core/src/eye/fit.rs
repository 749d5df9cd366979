//! Algebraic least-squares sphere fit and its RANSAC wrapper.
//!
//! Rearranging `‖p − p₀‖² = r²` gives the linear system `f = A c` with rows
//! `[2pᵢᵀ, 1]`, right-hand side `‖pᵢ‖²` and unknowns `c = [p₀; r² − ‖p₀‖²]`.
//! Points are shifted to their centroid first, which keeps the system well
//! conditioned for spheres far from the origin.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EyeGeometry;
use crate::se3::Vec3;

const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("point set is rank deficient (fewer than 4 points or coplanar)")]
    RankDeficient,
    #[error("inconsistent data: fitted radius squared is not positive")]
    NegativeRadiusSquared,
    #[error("no consensus: best inlier set has {0} points")]
    NoConsensus(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub eye: EyeGeometry,
    pub inlier_mask: Vec<bool>,
    /// RMS radial residual over inliers, mm.
    pub rms_residual: f64,
}

impl FitResult {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// mm.
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            inlier_threshold: 0.1,
            max_iterations: 2000,
            seed: 0,
        }
    }
}

pub fn fit_sphere_lsq(points: &[Vec3]) -> Result<EyeGeometry, FitError> {
    let n = points.len();
    if n < 4 {
        return Err(FitError::RankDeficient);
    }
    let centroid = points.iter().sum::<Vec3>() / n as f64;
    let mut a = DMatrix::<f64>::zeros(n, 4);
    let mut f = DVector::<f64>::zeros(n);
    for (i, p) in points.iter().enumerate() {
        let q = p - centroid;
        a[(i, 0)] = 2.0 * q.x;
        a[(i, 1)] = 2.0 * q.y;
        a[(i, 2)] = 2.0 * q.z;
        a[(i, 3)] = 1.0;
        f[i] = q.norm_squared();
    }
    let svd = a.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_max > 0.0) || s_min <= RANK_TOLERANCE * s_max {
        return Err(FitError::RankDeficient);
    }
    let c = svd.solve(&f, 0.0).map_err(|_| FitError::RankDeficient)?;
    let offset = Vec3::new(c[0], c[1], c[2]);
    let r2 = c[3] + offset.norm_squared();
    if !(r2 > 0.0) {
        return Err(FitError::NegativeRadiusSquared);
    }
    Ok(EyeGeometry {
        center: centroid + offset,
        radius: r2.sqrt(),
    })
}

fn residual(eye: &EyeGeometry, p: &Vec3) -> f64 {
    eye.surface_distance(p)
}

/// Inlier mask and its residual sum for a hypothesis.
fn consensus(eye: &EyeGeometry, points: &[Vec3], threshold: f64) -> (Vec<bool>, usize, f64) {
    let mut mask = vec![false; points.len()];
    let mut count = 0;
    let mut sum = 0.0;
    for (m, p) in mask.iter_mut().zip(points) {
        let r = residual(eye, p);
        if r <= threshold {
            *m = true;
            count += 1;
            sum += r;
        }
    }
    (mask, count, sum)
}

fn select(points: &[Vec3], mask: &[bool]) -> Vec<Vec3> {
    points
        .iter()
        .zip(mask)
        .filter_map(|(p, &m)| m.then_some(*p))
        .collect()
}

/// Samples 4-point minimal subsets, keeps the hypothesis with the largest
/// consensus (ties broken by residual sum), then refits on the consensus set
/// until the inlier set stops changing.
pub fn fit_sphere_ransac(points: &[Vec3], cfg: &RansacConfig) -> Result<FitResult, FitError> {
    let n = points.len();
    if n < 4 {
        return Err(FitError::NoConsensus(n));
    }
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut best: Option<(Vec<bool>, usize, f64)> = None;
    let mut sample = [Vec3::zeros(); 4];

    for _ in 0..cfg.max_iterations {
        let idx = rand::seq::index::sample(&mut rng, n, 4);
        for (slot, i) in sample.iter_mut().zip(idx.iter()) {
            *slot = points[i];
        }
        let Ok(hypothesis) = fit_sphere_lsq(&sample) else {
            continue;
        };
        let (mask, count, sum) = consensus(&hypothesis, points, cfg.inlier_threshold);
        let better = match &best {
            None => true,
            Some((_, c, s)) => count > *c || (count == *c && sum < *s),
        };
        if better {
            let all = count == n;
            best = Some((mask, count, sum));
            if all {
                break;
            }
        }
    }

    let (mut mask, count, _) = best.unwrap_or((vec![false; n], 0, 0.0));
    if count < 4 {
        return Err(FitError::NoConsensus(count));
    }

    let mut eye = fit_sphere_lsq(&select(points, &mask))?;
    for _ in 0..10 {
        let (refit_mask, refit_count, _) = consensus(&eye, points, cfg.inlier_threshold);
        if refit_mask == mask || refit_count < 4 {
            break;
        }
        mask = refit_mask;
        eye = fit_sphere_lsq(&select(points, &mask))?;
    }
    // The last refit may move some members slightly past the threshold.
    let (final_mask, final_count, _) = consensus(&eye, points, cfg.inlier_threshold);
    if final_count < 4 {
        return Err(FitError::NoConsensus(final_count));
    }
    let inliers = select(points, &final_mask);
    let rms = (inliers.iter().map(|p| residual(&eye, p).powi(2)).sum::<f64>() / inliers.len() as f64).sqrt();
    Ok(FitResult {
        eye,
        inlier_mask: final_mask,
        rms_residual: rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn sphere_points(eye: &EyeGeometry, n: usize, rng: &mut StdRng) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                let d = Vec3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                )
                .normalize();
                eye.center + eye.radius * d
            })
            .collect()
    }

    /// Lower-hemisphere cap below `max_polar` radians from the bottom pole.
    fn cap_points(eye: &EyeGeometry, n: usize, max_polar: f64, rng: &mut StdRng) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                let polar = max_polar * rng.random::<f64>().sqrt();
                let az = std::f64::consts::TAU * rng.random::<f64>();
                let d = Vec3::new(polar.sin() * az.cos(), polar.sin() * az.sin(), -polar.cos());
                eye.center + eye.radius * d
            })
            .collect()
    }

    /// Independent geometric refit: Gauss-Newton on `‖p − c‖ − r`.
    fn geometric_refit(points: &[Vec3], start: EyeGeometry) -> EyeGeometry {
        let mut c = start.center;
        let mut r = start.radius;
        for _ in 0..50 {
            let mut jtj = nalgebra::Matrix4::<f64>::zeros();
            let mut jtr = nalgebra::Vector4::<f64>::zeros();
            for p in points {
                let d = p - c;
                let n = d.norm();
                let res = n - r;
                let j = nalgebra::Vector4::new(-d.x / n, -d.y / n, -d.z / n, -1.0);
                jtj += j * j.transpose();
                jtr += j * res;
            }
            let step = jtj.cholesky().unwrap().solve(&(-jtr));
            c += Vec3::new(step[0], step[1], step[2]);
            r += step[3];
            if step.norm() < 1e-14 {
                break;
            }
        }
        EyeGeometry { center: c, radius: r }
    }

    #[test]
    fn four_points_on_unit_sphere() {
        let pts = [
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(-1.0, 0.0, 0.0),
        ];
        let eye = fit_sphere_lsq(&pts).unwrap();
        assert!(eye.center.amax() < 1e-12);
        assert!((eye.radius - 1.0).abs() < 1e-12);
    }

    #[test]
    fn thirty_points_on_phantom_sphere() {
        let truth = EyeGeometry::phantom(Vec3::new(39.26, -89.58, -14.32));
        let mut rng = StdRng::seed_from_u64(3);
        let eye = fit_sphere_lsq(&sphere_points(&truth, 30, &mut rng)).unwrap();
        assert!((eye.radius - 12.7).abs() < 1e-9);
        assert!((eye.center - truth.center).amax() < 1e-9);
    }

    #[test]
    fn noisy_fit_agrees_with_geometric_refit() {
        let truth = EyeGeometry::phantom(Vec3::new(0.5, -0.2, 0.1));
        let mut rng = StdRng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let pts: Vec<Vec3> = sphere_points(&truth, 100, &mut rng)
            .into_iter()
            .map(|p| p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
            .collect();
        let algebraic = fit_sphere_lsq(&pts).unwrap();
        let geometric = geometric_refit(&pts, truth);
        assert!((algebraic.center - geometric.center).amax() < 0.02);
        assert!((algebraic.radius - geometric.radius).abs() < 0.02);
    }

    #[test]
    fn coplanar_points_are_rank_deficient() {
        let pts: Vec<Vec3> = (0..12)
            .map(|k| {
                let a = k as f64 * 0.5;
                Vec3::new(3.0 * a.cos(), 3.0 * a.sin(), 1.0)
            })
            .collect();
        assert_eq!(fit_sphere_lsq(&pts), Err(FitError::RankDeficient));
        assert_eq!(fit_sphere_lsq(&pts[..3]), Err(FitError::RankDeficient));
        let same = vec![Vec3::new(1.0, 2.0, 3.0); 30];
        assert_eq!(fit_sphere_lsq(&same), Err(FitError::RankDeficient));
    }

    #[test]
    fn ransac_on_clean_data_matches_lsq() {
        let truth = EyeGeometry::phantom(Vec3::zeros());
        let mut rng = StdRng::seed_from_u64(5);
        let pts = cap_points(&truth, 40, 0.9, &mut rng);
        let fit = fit_sphere_ransac(&pts, &RansacConfig::default()).unwrap();
        let lsq = fit_sphere_lsq(&pts).unwrap();
        assert!(fit.inlier_mask.iter().all(|&m| m));
        assert!((fit.eye.center - lsq.center).amax() < 1e-12);
        assert!((fit.eye.radius - lsq.radius).abs() < 1e-12);
    }

    #[test]
    fn ransac_excludes_gross_outliers() {
        let truth = EyeGeometry::phantom(Vec3::new(1.0, 2.0, -3.0));
        let mut rng = StdRng::seed_from_u64(8);
        let mut pts = cap_points(&truth, 30, 1.0, &mut rng);
        let outliers: Vec<Vec3> = cap_points(&truth, 5, 1.0, &mut rng)
            .into_iter()
            .map(|p| p + 5.0 * (truth.center - p).normalize())
            .collect();
        pts.extend(&outliers);
        // Ground truth labelling: exhaustive residual check against the true sphere.
        let truth_mask: Vec<bool> = pts.iter().map(|p| truth.surface_distance(p) <= 0.1).collect();
        assert_eq!(truth_mask.iter().filter(|&&m| !m).count(), 5);
        let fit = fit_sphere_ransac(&pts, &RansacConfig::default()).unwrap();
        assert_eq!(fit.inlier_mask, truth_mask);
        assert!(fit.rms_residual <= 0.1);
    }

    #[test]
    fn ransac_is_deterministic_per_seed() {
        let truth = EyeGeometry::phantom(Vec3::zeros());
        let mut rng = StdRng::seed_from_u64(2);
        let noise = Normal::new(0.0, 0.03).unwrap();
        let mut pts: Vec<Vec3> = cap_points(&truth, 50, 0.8, &mut rng)
            .into_iter()
            .map(|p| p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
            .collect();
        pts.push(Vec3::new(0.0, 0.0, 0.0));
        let cfg = RansacConfig {
            seed: 99,
            ..RansacConfig::default()
        };
        assert_eq!(fit_sphere_ransac(&pts, &cfg), fit_sphere_ransac(&pts, &cfg));
    }

    #[test]
    fn ransac_without_consensus_fails() {
        let pts = vec![Vec3::new(1.0, 0.0, 0.0); 3];
        assert_eq!(fit_sphere_ransac(&pts, &RansacConfig::default()), Err(FitError::NoConsensus(3)));
        let coplanar: Vec<Vec3> = (0..20).map(|k| Vec3::new(k as f64, (k * k) as f64, 0.0)).collect();
        assert!(matches!(
            fit_sphere_ransac(&coplanar, &RansacConfig::default()),
            Err(FitError::NoConsensus(_))
        ));
    }

    #[test]
    fn ransac_breakdown_with_forty_percent_outliers() {
        let noise = Normal::new(0.0, 0.02).unwrap();
        let mut passes = 0;
        for trial in 0..100u64 {
            let mut rng = StdRng::seed_from_u64(1000 + trial);
            let truth = EyeGeometry::new(
                Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
                rng.random_range(10.0..15.0),
            )
            .unwrap();
            let mut pts: Vec<Vec3> = cap_points(&truth, 60, 1.2, &mut rng)
                .into_iter()
                .map(|p| p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
                .collect();
            for p in cap_points(&truth, 40, 1.2, &mut rng) {
                let offset = rng.random_range(1.0..5.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
                pts.push(p + offset * (p - truth.center).normalize());
            }
            let cfg = RansacConfig {
                max_iterations: 5000,
                seed: trial,
                ..RansacConfig::default()
            };
            let fit = fit_sphere_ransac(&pts, &cfg).unwrap();
            if (fit.eye.center - truth.center).norm() <= 0.05 {
                passes += 1;
            }
        }
        assert!(passes >= 95, "{passes}/100 trials within 0.05 mm");
    }

    proptest! {
        #[test]
        fn exact_on_noiseless_samples(
            cx in -100.0f64..100.0, cy in -100.0f64..100.0, cz in -100.0f64..100.0,
            r in 5.0f64..50.0, n in 8usize..60, seed in 0u64..1000,
        ) {
            let truth = EyeGeometry::new(Vec3::new(cx, cy, cz), r).unwrap();
            let mut rng = StdRng::seed_from_u64(seed);
            let pts = sphere_points(&truth, n, &mut rng);
            let eye = fit_sphere_lsq(&pts).unwrap();
            prop_assert!((eye.center - truth.center).amax() <= 1e-9);
            prop_assert!((eye.radius - truth.radius).abs() <= 1e-9);
        }

        #[test]
        fn translation_equivariance(
            tx in -50.0f64..50.0, ty in -50.0f64..50.0, tz in -50.0f64..50.0, seed in 0u64..1000,
        ) {
            let mut rng = StdRng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 0.1).unwrap();
            let truth = EyeGeometry::phantom(Vec3::new(1.0, -1.0, 2.0));
            let pts: Vec<Vec3> = sphere_points(&truth, 25, &mut rng)
                .into_iter()
                .map(|p| p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
                .collect();
            let t = Vec3::new(tx, ty, tz);
            let moved: Vec<Vec3> = pts.iter().map(|p| p + t).collect();
            let a = fit_sphere_lsq(&pts).unwrap();
            let b = fit_sphere_lsq(&moved).unwrap();
            prop_assert!((b.center - a.center - t).amax() <= 1e-9);
            prop_assert!((b.radius - a.radius).abs() <= 1e-9);
        }
    }
}
