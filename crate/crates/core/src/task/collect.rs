use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::eye::{EyeGeometry, Pixel};
use crate::se3::{ToolState, Vec3};

use super::Scenario;

/// Eye displacement range: ±0.30 mm for the phantom stage, ±0.5 mm in simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterMode {
    Phantom,
    Simulation,
}

impl JitterMode {
    pub fn half_range_mm(self) -> f64 {
        match self {
            JitterMode::Phantom => 0.30,
            JitterMode::Simulation => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionSample {
    pub start: ToolState,
    pub goal: Pixel,
    pub goal_point: Vec3,
    pub scenario: Scenario,
}

/// Randomized demonstration setups: random tip and port, a goal drawn
/// uniformly over the visible retinal disc, and a displaced eye.
pub fn generate_collection_scenarios(base: &Scenario, n: usize, seed: u64, mode: JitterMode) -> Vec<CollectionSample> {
    let mut rng = StdRng::seed_from_u64(seed);
    let jitter = mode.half_range_mm();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let eye = EyeGeometry {
            center: base.true_eye.center + Vec3::from_fn(|_, _| rng.random_range(-jitter..=jitter)),
            radius: base.true_eye.radius,
        };
        let r = eye.radius;

        let polar = rng.random_range(30f64.to_radians()..=60f64.to_radians());
        let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
        let port_dir = Vec3::new(polar.sin() * azimuth.cos(), polar.sin() * azimuth.sin(), polar.cos());
        let sclera_point = eye.center + (r + 0.5) * port_dir;

        let tip = eye.center
            + Vec3::new(
                rng.random_range(-4.0..=4.0),
                rng.random_range(-4.0..=4.0),
                rng.random_range(-0.8 * r..=-0.5 * r),
            );

        let scenario = Scenario {
            true_eye: eye,
            sclera_point,
            initial_tip: tip,
            ..*base
        };
        let centre = scenario.eye_pixel();
        let disc = scenario.camera.mm_to_pixel(0.9 * r);
        let (goal, goal_point) = loop {
            let rho = disc * rng.random::<f64>().sqrt();
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let g = Pixel::new(centre.x + rho * theta.cos(), centre.y + rho * theta.sin());
            if let Ok(p) = scenario.target_point(&g) {
                break (g, p);
            }
        };
        out.push(CollectionSample {
            start: scenario.initial_state(),
            goal,
            goal_point,
            scenario,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_jitter_stays_within_bounds() {
        let base = Scenario::default();
        let samples = generate_collection_scenarios(&base, 500, 1, JitterMode::Phantom);
        assert_eq!(samples.len(), 500);
        for s in &samples {
            let d = s.scenario.true_eye.center - base.true_eye.center;
            assert!(d.amax() <= 0.30);
            s.scenario.validate().unwrap();
            assert!(s.scenario.camera.contains(&s.goal));
            assert!((s.scenario.true_eye.surface_distance(&s.goal_point)) < 1e-9);
        }
    }

    #[test]
    fn simulation_jitter_reaches_half_millimetre() {
        let base = Scenario::default();
        let samples = generate_collection_scenarios(&base, 500, 2, JitterMode::Simulation);
        let worst = samples
            .iter()
            .map(|s| (s.scenario.true_eye.center - base.true_eye.center).amax())
            .fold(0.0, f64::max);
        assert!(worst <= 0.5 && worst > 0.4);
    }

    #[test]
    fn same_seed_same_samples() {
        let base = Scenario::default();
        assert_eq!(
            generate_collection_scenarios(&base, 20, 7, JitterMode::Phantom),
            generate_collection_scenarios(&base, 20, 7, JitterMode::Phantom)
        );
        assert_ne!(
            generate_collection_scenarios(&base, 20, 7, JitterMode::Phantom),
            generate_collection_scenarios(&base, 20, 8, JitterMode::Phantom)
        );
    }
}
