use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::eye::{fit_sphere_lsq, fit_sphere_ransac, EyeGeometry, FitError, FitResult, Pixel, RansacConfig};
use crate::oracle::{OracleConfig, OracleError, PerceptionOracle};
use crate::se3::{ToolState, Vec3};

use super::report::{LocalizationEntry, RunReport, TaskKind};
use super::{derive_seed, PixelGrid, Scenario, TaskError, TaskSettings};

/// Base-frame surface points from oracle predictions made at a stationary
/// tool. Pixels whose prediction is unusable (off the retina or outside the
/// bin range) are skipped.
pub fn localization_points(
    scenario: &Scenario,
    tool: &ToolState,
    pixels: &[Pixel],
    settings: &TaskSettings,
) -> Result<Vec<Vec3>, TaskError> {
    let mut oracle = PerceptionOracle::new(settings.bins, settings.oracle)?;
    let scene = scenario.scene(*tool);
    let mut points = Vec::with_capacity(pixels.len());
    for g in pixels {
        match oracle.predict(&scene, g) {
            Ok(p) => points.push(p.goal_in_base(tool)),
            Err(OracleError::GoalOffRetina | OracleError::PixelOutOfBounds(..) | OracleError::OutOfRange { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(points)
}

/// Reconstructs the eye from predictions at `pixels` and scores it against the scenario.
pub fn run_localization(
    scenario: &Scenario,
    tool: &ToolState,
    pixels: &[Pixel],
    settings: &TaskSettings,
    ransac: &RansacConfig,
) -> Result<(FitResult, RunReport), TaskError> {
    scenario.validate()?;
    let points = localization_points(scenario, tool, pixels, settings)?;
    // A degenerate full set cannot have a well-posed subset either.
    if let Err(e @ FitError::RankDeficient) = fit_sphere_lsq(&points) {
        return Err(e.into());
    }
    let fit = fit_sphere_ransac(&points, ransac)?;
    let mut report = RunReport::empty(TaskKind::Localization, ransac.seed, settings, scenario);
    report.localization = Some(LocalizationEntry::new(pixels.len(), points.len(), &fit, scenario));
    Ok((fit, report))
}

/// Seeded repeated localization. Trial `i` displaces the eye uniformly
/// within `±eye_jitter` per axis, starts the tool from a randomized pose and
/// samples `grid` around the projection of the nominal eye centre.
pub fn run_localization_trials(
    base: &Scenario,
    grid: &PixelGrid,
    settings: &TaskSettings,
    ransac: &RansacConfig,
    trials: usize,
    seed: u64,
) -> Result<RunReport, TaskError> {
    base.validate()?;
    let pixels = grid.pixels(&base.camera, &base.camera.project(&base.true_eye.center));
    let j = base.eye_jitter;
    let mut entries = Vec::with_capacity(trials);
    for i in 0..trials as u64 {
        let mut rng = StdRng::seed_from_u64(derive_seed(seed, 4, i));
        let offset = if j > 0.0 {
            Vec3::from_fn(|_, _| rng.random_range(-j..=j))
        } else {
            Vec3::zeros()
        };
        let scenario = Scenario {
            true_eye: EyeGeometry::new(base.true_eye.center + offset, base.true_eye.radius)?,
            ..*base
        };
        let tool = scenario.start_state(&mut rng);
        let trial_settings = TaskSettings {
            oracle: OracleConfig {
                seed: derive_seed(seed ^ settings.oracle.seed, 5, i),
                ..settings.oracle
            },
            ..settings.clone()
        };
        let trial_ransac = RansacConfig {
            seed: derive_seed(seed ^ ransac.seed, 6, i),
            ..*ransac
        };
        let (_, report) = run_localization(&scenario, &tool, &pixels, &trial_settings, &trial_ransac)?;
        entries.extend(report.localization);
    }
    let mut report = RunReport::empty(TaskKind::Localization, seed, settings, base);
    report.trials = entries;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eye::EyeGeometry;
    use crate::oracle::OracleConfig;
    use crate::task::PixelGrid;

    fn grid(scenario: &Scenario) -> Vec<Pixel> {
        PixelGrid::localization(6, 6).pixels(&scenario.camera, &scenario.eye_pixel())
    }

    #[test]
    fn zero_noise_recovers_the_phantom() {
        let scenario = Scenario {
            true_eye: EyeGeometry::phantom(Vec3::new(0.2, -0.1, 0.15)),
            ..Scenario::default()
        };
        let (fit, report) = run_localization(
            &scenario,
            &scenario.initial_state(),
            &grid(&scenario),
            &TaskSettings::default(),
            &RansacConfig::default(),
        )
        .unwrap();
        let loc = report.localization.unwrap();
        assert_eq!(loc.usable, 36);
        assert!(loc.center_error_norm_mm <= 0.05, "{loc:?}");
        assert!(loc.radius_error_mm <= 0.05);
        assert_eq!(fit.inlier_count(), 36);
    }

    #[test]
    fn one_pixel_repeated_is_rank_deficient() {
        let scenario = Scenario::default();
        let pixels = vec![Pixel::new(330.0, 250.0); 40];
        let err = run_localization(
            &scenario,
            &scenario.initial_state(),
            &pixels,
            &TaskSettings::default(),
            &RansacConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err, TaskError::Fit(FitError::RankDeficient));
    }

    #[test]
    fn gross_outliers_are_rejected() {
        let scenario = Scenario::default();
        let settings = TaskSettings {
            oracle: OracleConfig {
                gross_outlier_rate: 0.2,
                gross_outlier_mm: 2.0,
                seed: 5,
                ..OracleConfig::default()
            },
            ..TaskSettings::default()
        };
        let pixels = PixelGrid::localization(8, 8).pixels(&scenario.camera, &scenario.eye_pixel());
        let (_, report) = run_localization(
            &scenario,
            &scenario.initial_state(),
            &pixels,
            &settings,
            &RansacConfig::default(),
        )
        .unwrap();
        let loc = report.localization.unwrap();
        assert!(loc.center_error_norm_mm <= 0.1, "{loc:?}");
        assert!(loc.inliers < loc.usable);
    }

    #[test]
    fn trials_are_seeded_and_independent() {
        let scenario = Scenario::default();
        let grid = PixelGrid::localization(6, 6);
        let settings = TaskSettings::default();
        let ransac = RansacConfig::default();
        let a = run_localization_trials(&scenario, &grid, &settings, &ransac, 5, 3).unwrap();
        let b = run_localization_trials(&scenario, &grid, &settings, &ransac, 5, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials.len(), 5);
        assert_ne!(a.trials[0].true_center_mm, a.trials[1].true_center_mm);
        assert!(a.trials.iter().all(|t| t.true_center_mm.amax() <= scenario.eye_jitter));
        let c = run_localization_trials(&scenario, &grid, &settings, &ransac, 5, 4).unwrap();
        assert_ne!(a, c);
    }
}
