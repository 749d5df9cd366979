use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::eye::{CameraModel, FitResult, Pixel};
use crate::se3::Vec3;

use super::{Scenario, TaskError, TaskSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Navigation,
    Localization,
    Vessel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalEntry {
    pub index: usize,
    pub pixel: [f64; 2],
    pub target_mm: Option<Vec3>,
    pub landing_mm: Option<Vec3>,
    pub error_x_px: f64,
    pub error_y_px: f64,
    pub error_x_mm: f64,
    pub error_y_mm: f64,
    pub error_xy_mm: f64,
    /// Along the camera axis.
    pub error_z_mm: f64,
    pub mean_sclera_mm: f64,
    pub max_sclera_mm: f64,
    pub replans: usize,
    pub solver_iterations: usize,
    pub sim_steps: u64,
    pub terminated: bool,
    pub failure: Option<String>,
}

impl GoalEntry {
    /// Landing errors in image coordinates, converted with the camera scale.
    #[allow(clippy::too_many_arguments)]
    pub fn landed(
        index: usize,
        g: &Pixel,
        target: &Vec3,
        landing: &Vec3,
        camera: &CameraModel,
        sclera: &[f64],
        replans: usize,
        solver_iterations: usize,
        sim_steps: u64,
    ) -> Self {
        let land_px = camera.project(landing);
        let error_x_px = (land_px.x - g.x).abs();
        let error_y_px = (land_px.y - g.y).abs();
        let error_x_mm = camera.pixel_to_mm(error_x_px);
        let error_y_mm = camera.pixel_to_mm(error_y_px);
        Self {
            index,
            pixel: [g.x, g.y],
            target_mm: Some(*target),
            landing_mm: Some(*landing),
            error_x_px,
            error_y_px,
            error_x_mm,
            error_y_mm,
            error_xy_mm: error_x_mm.hypot(error_y_mm),
            error_z_mm: (landing - target).dot(&camera.view_direction).abs(),
            mean_sclera_mm: mean(sclera),
            max_sclera_mm: sclera.iter().copied().fold(0.0, f64::max),
            replans,
            solver_iterations,
            sim_steps,
            terminated: true,
            failure: None,
        }
    }

    pub fn failed(index: usize, g: &Pixel, target: Option<Vec3>, error: &TaskError) -> Self {
        Self {
            index,
            pixel: [g.x, g.y],
            target_mm: target,
            landing_mm: None,
            error_x_px: 0.0,
            error_y_px: 0.0,
            error_x_mm: 0.0,
            error_y_mm: 0.0,
            error_xy_mm: 0.0,
            error_z_mm: 0.0,
            mean_sclera_mm: 0.0,
            max_sclera_mm: 0.0,
            replans: 0,
            solver_iterations: 0,
            sim_steps: 0,
            terminated: false,
            failure: Some(error.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigationSummary {
    pub goals: usize,
    pub failures: usize,
    pub mean_x_mm: f64,
    pub mean_y_mm: f64,
    pub mean_x_px: f64,
    pub mean_y_px: f64,
    pub mean_xy_mm: f64,
    pub max_xy_mm: f64,
    pub mean_z_mm: f64,
    pub mean_sclera_mm: f64,
    pub max_sclera_mm: f64,
}

impl NavigationSummary {
    pub fn from_entries(entries: &[GoalEntry]) -> Self {
        let ok: Vec<&GoalEntry> = entries.iter().filter(|e| e.terminated).collect();
        let avg = |f: fn(&GoalEntry) -> f64| mean(&ok.iter().map(|e| f(e)).collect::<Vec<_>>());
        let max = |f: fn(&GoalEntry) -> f64| ok.iter().map(|e| f(e)).fold(0.0, f64::max);
        Self {
            goals: entries.len(),
            failures: entries.len() - ok.len(),
            mean_x_mm: avg(|e| e.error_x_mm),
            mean_y_mm: avg(|e| e.error_y_mm),
            mean_x_px: avg(|e| e.error_x_px),
            mean_y_px: avg(|e| e.error_y_px),
            mean_xy_mm: avg(|e| e.error_xy_mm),
            max_xy_mm: max(|e| e.error_xy_mm),
            mean_z_mm: avg(|e| e.error_z_mm),
            mean_sclera_mm: avg(|e| e.mean_sclera_mm),
            max_sclera_mm: max(|e| e.max_sclera_mm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationEntry {
    pub samples: usize,
    pub usable: usize,
    pub inliers: usize,
    pub fitted_center_mm: Vec3,
    pub fitted_radius_mm: f64,
    pub true_center_mm: Vec3,
    pub true_radius_mm: f64,
    /// Absolute per-axis centre error.
    pub center_error_mm: Vec3,
    pub center_error_norm_mm: f64,
    pub radius_error_mm: f64,
    pub rms_residual_mm: f64,
}

impl LocalizationEntry {
    pub fn new(samples: usize, usable: usize, fit: &FitResult, scenario: &Scenario) -> Self {
        let diff = fit.eye.center - scenario.true_eye.center;
        Self {
            samples,
            usable,
            inliers: fit.inlier_count(),
            fitted_center_mm: fit.eye.center,
            fitted_radius_mm: fit.eye.radius,
            true_center_mm: scenario.true_eye.center,
            true_radius_mm: scenario.true_eye.radius,
            center_error_mm: diff.abs(),
            center_error_norm_mm: diff.norm(),
            radius_error_mm: (fit.eye.radius - scenario.true_eye.radius).abs(),
            rms_residual_mm: fit.rms_residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselEntry {
    pub waypoints: usize,
    pub hover_radius_mm: f64,
    /// Largest absolute per-axis deviation from the waypoints at their scheduled times.
    pub max_tracking_error_mm: Vec3,
    pub mean_tracking_error_mm: Vec3,
    pub mean_sclera_mm: f64,
    pub max_sclera_mm: f64,
    /// Executed states outside the true sphere.
    pub penetrations: usize,
    /// Smallest distance from the fitted centre at waypoint times.
    pub min_waypoint_radius_mm: f64,
    pub max_radius_mm: f64,
    pub solver_iterations: usize,
    pub converged: bool,
}

/// Deterministic effort counters; wall-clock time is kept out of the file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub sim_steps: u64,
    pub sim_time_s: f64,
    pub replans: usize,
    pub solver_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: TaskKind,
    pub seed: u64,
    pub noise_sigma_mm: Vec3,
    pub sclera_weight: f64,
    pub collision_weight: f64,
    pub mm_per_pixel: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub navigation: Option<NavigationSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub goals: Vec<GoalEntry>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub localization: Option<LocalizationEntry>,
    /// Per-trial results of a repeated localization run.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trials: Vec<LocalizationEntry>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub vessel: Option<VesselEntry>,
    pub timing: Timing,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl RunReport {
    pub fn empty(task: TaskKind, seed: u64, settings: &TaskSettings, scenario: &Scenario) -> Self {
        Self {
            task,
            seed,
            noise_sigma_mm: settings.oracle.noise_sigma,
            sclera_weight: settings.cost.sclera_weight,
            collision_weight: settings.cost.collision_weight,
            mm_per_pixel: scenario.camera.scale,
            navigation: None,
            goals: Vec::new(),
            localization: None,
            trials: Vec::new(),
            vessel: None,
            timing: Timing::default(),
        }
    }

    pub fn navigation(seed: u64, settings: &TaskSettings, scenario: &Scenario, goals: Vec<GoalEntry>) -> Self {
        let mut report = Self::empty(TaskKind::Navigation, seed, settings, scenario);
        report.timing = Timing {
            sim_steps: goals.iter().map(|e| e.sim_steps).sum(),
            sim_time_s: goals.iter().map(|e| e.sim_steps as f64).sum::<f64>() * settings.cost.dt,
            replans: goals.iter().map(|e| e.replans).sum(),
            solver_iterations: goals.iter().map(|e| e.solver_iterations).sum(),
        };
        report.navigation = Some(NavigationSummary::from_entries(&goals));
        report.goals = goals;
        report
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Rows are error categories, the column is this run's task.
    pub fn render_table(&self, wall_clock: Option<Duration>) -> String {
        let mut rows: Vec<(&str, String)> = Vec::new();
        let na = || "NA".to_string();
        let title;
        match self.task {
            TaskKind::Navigation => {
                let s = self.navigation.as_ref();
                title = format!("Navigation to retina ({} positions) (mm, pixels)", self.goals.len());
                rows.push(("x error", s.map_or_else(na, |s| format!("{:.3}, {:.2}", s.mean_x_mm, s.mean_x_px))));
                rows.push(("y error", s.map_or_else(na, |s| format!("{:.3}, {:.2}", s.mean_y_mm, s.mean_y_px))));
                rows.push(("z error", na()));
                rows.push(("xy error", s.map_or_else(na, |s| format!("{:.3} (max {:.3})", s.mean_xy_mm, s.max_xy_mm))));
                rows.push((
                    "sclera error",
                    s.map_or_else(na, |s| format!("{:.3}mm (max {:.3})", s.mean_sclera_mm, s.max_sclera_mm)),
                ));
                rows.push(("radius", na()));
                rows.push(("failures", s.map_or_else(na, |s| s.failures.to_string())));
            }
            TaskKind::Localization if !self.trials.is_empty() => {
                let t = &self.trials;
                let n = t.len() as f64;
                let c = t.iter().fold(Vec3::zeros(), |acc, e| acc + e.center_error_mm) / n;
                title = format!("Eye localization center, radius (mm), mean of {} trials", t.len());
                rows.push(("x error", format!("{:.3}", c.x)));
                rows.push(("y error", format!("{:.3}", c.y)));
                rows.push(("z error", format!("{:.3}", c.z)));
                rows.push(("sclera error", na()));
                rows.push(("radius", format!("{:.3}", t.iter().map(|e| e.radius_error_mm).sum::<f64>() / n)));
                let worst = t
                    .iter()
                    .map(|e| e.center_error_norm_mm.max(e.radius_error_mm))
                    .fold(0.0, f64::max);
                rows.push(("worst trial", format!("{worst:.3}")));
            }
            TaskKind::Localization => {
                let l = self.localization.as_ref();
                title = "Eye localization center, radius (mm)".to_string();
                rows.push(("x error", l.map_or_else(na, |l| format!("{:.3}", l.center_error_mm.x))));
                rows.push(("y error", l.map_or_else(na, |l| format!("{:.3}", l.center_error_mm.y))));
                rows.push(("z error", l.map_or_else(na, |l| format!("{:.3}", l.center_error_mm.z))));
                rows.push(("sclera error", na()));
                rows.push(("radius", l.map_or_else(na, |l| format!("{:.3}", l.radius_error_mm))));
                rows.push(("inliers", l.map_or_else(na, |l| format!("{}/{}", l.inliers, l.usable))));
            }
            TaskKind::Vessel => {
                let v = self.vessel.as_ref();
                title = "Vessel-following trajectory tracking (mm)".to_string();
                rows.push(("x error", v.map_or_else(na, |v| format!("{:.4}", v.max_tracking_error_mm.x))));
                rows.push(("y error", v.map_or_else(na, |v| format!("{:.4}", v.max_tracking_error_mm.y))));
                rows.push(("z error", v.map_or_else(na, |v| format!("{:.4}", v.max_tracking_error_mm.z))));
                rows.push(("sclera error", v.map_or_else(na, |v| format!("{:.3}", v.mean_sclera_mm))));
                rows.push(("radius", na()));
                rows.push(("penetrations", v.map_or_else(na, |v| v.penetrations.to_string())));
            }
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0).max("Error category".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$} | {}", "Error category", title);
        let _ = writeln!(out, "{}-+-{}", "-".repeat(width), "-".repeat(title.len()));
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$} | {v}");
        }
        let _ = writeln!(
            out,
            "sim time {:.2} s, {} replans, {} solver iterations",
            self.timing.sim_time_s, self.timing.replans, self.timing.solver_iterations
        );
        if let Some(d) = wall_clock {
            let _ = writeln!(out, "wall clock {:.2} s", d.as_secs_f64());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_and_mm_columns_agree() {
        let cam = CameraModel::default();
        let g = Pixel::new(320.0, 240.0);
        let landing = cam.pixel_origin(&Pixel::new(321.8, 236.74)) + Vec3::new(0.0, 0.0, -12.0);
        let e = GoalEntry::landed(0, &g, &Vec3::new(0.0, 0.0, -12.7), &landing, &cam, &[0.1, 0.3], 3, 10, 200);
        assert!((e.error_x_px - 1.8).abs() < 1e-9);
        assert!((e.error_x_mm - 0.072).abs() < 1e-12);
        assert!((e.error_y_mm - e.error_y_px * 0.04).abs() < 1e-15);
        assert!((e.error_z_mm - 0.7).abs() < 1e-12);
        assert!((e.mean_sclera_mm - 0.2).abs() < 1e-15);
        assert_eq!(e.max_sclera_mm, 0.3);
    }

    #[test]
    fn json_round_trips() {
        let scenario = Scenario::default();
        let settings = TaskSettings::default();
        let cam = CameraModel::default();
        let g = Pixel::new(300.0, 200.0);
        let entries = vec![
            GoalEntry::landed(0, &g, &Vec3::zeros(), &(cam.pixel_origin(&g) + Vec3::new(0.01, 0.0, -3.0)), &cam, &[0.0], 1, 2, 3),
            GoalEntry::failed(1, &g, None, &TaskError::GoalOffRetina),
        ];
        let report = RunReport::navigation(9, &settings, &scenario, entries);
        let nav = report.navigation.as_ref().unwrap();
        assert_eq!(nav.failures, 1);
        assert!((nav.mean_xy_mm - 0.01).abs() < 1e-12);
        let back = RunReport::from_json(&report.to_json()).unwrap();
        assert_eq!(back, report);
        let table = report.render_table(None);
        assert!(table.contains("x error"));
        assert!(table.contains("sclera error"));
    }
}
