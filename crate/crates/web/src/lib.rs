//! Browser bindings: navigate to a clicked pixel, localize the eye, follow a
//! clicked vessel path. Results are returned as JSON strings.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use retinav_core::eye::{CameraModel, EyeGeometry, Pixel, RansacConfig};
use retinav_core::oracle::OracleConfig;
use retinav_core::se3::Vec3;
use retinav_core::task::{
    closed_loop_navigate, localization_points, run_localization, run_vessel_following, GoalEntry, LocalizationEntry,
    PixelGrid, Scenario, TaskSettings, VesselEntry, VesselPath, VesselSchedule,
};

const PATH_POINTS: usize = 120;

#[derive(Serialize)]
struct SceneView {
    camera: CameraModel,
    eye: EyeGeometry,
    sclera_point: Vec3,
    start_tip: Vec3,
    eye_pixel: Pixel,
}

#[derive(Serialize)]
struct NavigationView {
    /// Executed tip positions, subsampled.
    path: Vec<Vec3>,
    entry: GoalEntry,
}

#[derive(Serialize)]
struct LocalizationView {
    points: Vec<Vec3>,
    fit: EyeGeometry,
    entry: LocalizationEntry,
}

#[derive(Serialize)]
struct VesselView {
    waypoints: Vec<Vec3>,
    path: Vec<Vec3>,
    fit: EyeGeometry,
    entry: VesselEntry,
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn subsample(points: impl ExactSizeIterator<Item = Vec3>) -> Vec<Vec3> {
    let pts: Vec<Vec3> = points.collect();
    let stride = pts.len().div_ceil(PATH_POINTS).max(1);
    let mut out: Vec<Vec3> = pts.iter().step_by(stride).copied().collect();
    if let Some(last) = pts.last() {
        if out.last() != Some(last) {
            out.push(*last);
        }
    }
    out
}

fn settings(sigma: f64, sclera_weight: f64, seed: u64) -> Result<TaskSettings, String> {
    let mut s = TaskSettings::default();
    s.oracle = OracleConfig::with_sigma(sigma, seed);
    s.oracle.validate().map_err(|e| e.to_string())?;
    s.cost.sclera_weight = sclera_weight;
    s.cost.validate().map_err(|e| e.to_string())?;
    Ok(s)
}

pub fn scene_json() -> Result<String, String> {
    let s = Scenario::default();
    to_json(&SceneView {
        camera: s.camera,
        eye: s.true_eye,
        sclera_point: s.sclera_point,
        start_tip: s.initial_tip,
        eye_pixel: s.eye_pixel(),
    })
}

pub fn navigate_json(x: f64, y: f64, sigma: f64, sclera_weight: f64, seed: u64) -> Result<String, String> {
    let scenario = Scenario::default();
    let settings = settings(sigma, sclera_weight, seed)?;
    let out = closed_loop_navigate(&scenario, &scenario.initial_state(), &Pixel::new(x, y), &settings)
        .map_err(|e| e.to_string())?;
    to_json(&NavigationView {
        path: subsample(out.executed.states.iter().map(|s| s.position)),
        entry: out.entry,
    })
}

pub fn localize_json(samples: usize, outlier_rate: f64, seed: u64) -> Result<String, String> {
    let scenario = Scenario::default();
    let mut settings = settings(0.0, TaskSettings::default().cost.sclera_weight, seed)?;
    settings.oracle.gross_outlier_rate = outlier_rate;
    settings.oracle.validate().map_err(|e| e.to_string())?;
    let side = (samples.max(4) as f64).sqrt().ceil() as usize;
    let pixels = PixelGrid::localization(side, side).pixels(&scenario.camera, &scenario.eye_pixel());
    let tool = scenario.initial_state();
    let points = localization_points(&scenario, &tool, &pixels, &settings).map_err(|e| e.to_string())?;
    let ransac = RansacConfig {
        seed,
        ..RansacConfig::default()
    };
    let (fit, report) = run_localization(&scenario, &tool, &pixels, &settings, &ransac).map_err(|e| e.to_string())?;
    to_json(&LocalizationView {
        points,
        fit: fit.eye,
        entry: report.localization.expect("localization entry"),
    })
}

/// `pixels` is a flat `[x0, y0, x1, y1, ...]` list.
pub fn follow_vessel_json(pixels: &[f64], hover_offset: f64) -> Result<String, String> {
    if pixels.len() < 4 || pixels.len() % 2 != 0 {
        return Err("need at least two (x, y) pixels".into());
    }
    let scenario = Scenario::default();
    let settings = TaskSettings::default();
    let tool = scenario.initial_state();
    let grid = PixelGrid::localization(6, 6).pixels(&scenario.camera, &scenario.eye_pixel());
    let (fit, _) =
        run_localization(&scenario, &tool, &grid, &settings, &RansacConfig::default()).map_err(|e| e.to_string())?;
    let path = VesselPath::new(pixels.chunks(2).map(|c| Pixel::new(c[0], c[1])).collect(), hover_offset)
        .map_err(|e| e.to_string())?;
    let (out, report) = run_vessel_following(&scenario, &tool, &path, &fit, &settings, &VesselSchedule::default())
        .map_err(|e| e.to_string())?;
    to_json(&VesselView {
        waypoints: out.waypoints,
        path: subsample(out.executed.iter().map(|s| s.position)),
        fit: fit.eye,
        entry: report.vessel.expect("vessel entry"),
    })
}

#[wasm_bindgen]
pub fn scene() -> Result<String, JsError> {
    scene_json().map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn navigate(x: f64, y: f64, sigma: f64, sclera_weight: f64, seed: u32) -> Result<String, JsError> {
    navigate_json(x, y, sigma, sclera_weight, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn localize(samples: usize, outlier_rate: f64, seed: u32) -> Result<String, JsError> {
    localize_json(samples, outlier_rate, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn follow_vessel(pixels: &[f64], hover_offset: f64) -> Result<String, JsError> {
    follow_vessel_json(pixels, hover_offset).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> serde_json::Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn scene_describes_the_default_setup() {
        let v = parse(&scene_json().unwrap());
        assert_eq!(v["camera"]["width"], 640);
        assert_eq!(v["eye"]["radius"], 12.7);
    }

    #[test]
    fn navigate_lands_near_the_click() {
        let v = parse(&navigate_json(340.0, 230.0, 0.0, 1e4, 1).unwrap());
        assert!(v["entry"]["error_xy_mm"].as_f64().unwrap() < 0.05);
        assert!(v["path"].as_array().unwrap().len() <= PATH_POINTS + 1);
        assert!(navigate_json(1.0, 1.0, 0.0, 1e4, 1).unwrap_err().contains("retina"));
        assert!(navigate_json(320.0, 240.0, -1.0, 1e4, 1).is_err());
    }

    #[test]
    fn localize_and_follow() {
        let v = parse(&localize_json(36, 0.0, 2).unwrap());
        assert!(v["entry"]["center_error_norm_mm"].as_f64().unwrap() <= 0.05);
        assert_eq!(v["points"].as_array().unwrap().len(), 36);
        let v = parse(&follow_vessel_json(&[300.0, 230.0, 320.0, 240.0, 340.0, 255.0], 0.2).unwrap());
        assert_eq!(v["entry"]["penetrations"], 0);
        assert_eq!(v["waypoints"].as_array().unwrap().len(), 3);
        assert!(follow_vessel_json(&[300.0, 230.0], 0.2).is_err());
    }
}
