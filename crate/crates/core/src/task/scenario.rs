use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::eye::{raycast_sphere, CameraModel, EyeGeometry, Pixel, PHANTOM_RADIUS_MM};
use crate::oracle::Scene;
use crate::se3::{ActuatorLimits, ControlInput, IntegrationConfig, ToolState, Vec3};

use super::TaskError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub true_eye: EyeGeometry,
    pub sclera_point: Vec3,
    pub camera: CameraModel,
    /// Nominal tool-tip position; the tool axis passes through the sclera point.
    pub initial_tip: Vec3,
    /// Half-widths (mm) of the uniform box around `initial_tip` for randomized starts.
    pub start_jitter: Vec3,
    /// Half-width (mm) of the per-axis eye displacement used for data collection.
    pub eye_jitter: f64,
    /// Direction of the light casting the tool shadow.
    pub light_direction: Vec3,
}

impl Default for Scenario {
    fn default() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            true_eye: EyeGeometry::default(),
            sclera_point: (PHANTOM_RADIUS_MM + 0.5) * Vec3::new(-s, 0.0, s),
            camera: CameraModel::default(),
            initial_tip: Vec3::new(0.0, 0.0, -9.7),
            start_jitter: Vec3::new(1.5, 1.5, 0.5),
            eye_jitter: 0.30,
            light_direction: Vec3::new(0.3, 0.0, -1.0).normalize(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), TaskError> {
        self.camera.validate()?;
        EyeGeometry::new(self.true_eye.center, self.true_eye.radius)?;
        let r = self.true_eye.radius;
        if (self.sclera_point - self.true_eye.center).norm() <= r {
            return Err(TaskError::InvalidScenario("sclera point must lie outside the eye"));
        }
        if (self.initial_tip - self.true_eye.center).norm() >= r {
            return Err(TaskError::InvalidScenario("initial tip must lie inside the eye"));
        }
        if !self.start_jitter.iter().all(|j| j.is_finite() && *j >= 0.0) || !(self.eye_jitter >= 0.0) {
            return Err(TaskError::InvalidScenario("jitter ranges must be non-negative"));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> ToolState {
        ToolState::through_port(self.initial_tip, self.sclera_point)
    }

    /// Resting tool at a tip drawn uniformly from the start box, aligned with the port.
    pub fn start_state<R: Rng>(&self, rng: &mut R) -> ToolState {
        let mut tip = self.initial_tip;
        for (t, j) in tip.iter_mut().zip(self.start_jitter.iter()) {
            if *j > 0.0 {
                *t += rng.random_range(-*j..=*j);
            }
        }
        ToolState::through_port(tip, self.sclera_point)
    }

    pub fn scene(&self, tool: ToolState) -> Scene {
        Scene {
            tool,
            eye: self.true_eye,
            camera: self.camera,
        }
    }

    /// True retinal point under a pixel.
    pub fn target_point(&self, g: &Pixel) -> Result<Vec3, TaskError> {
        raycast_sphere(&self.camera, g, &self.true_eye).map_err(TaskError::from_goal)
    }

    /// Image location of the eye centre.
    pub fn eye_pixel(&self) -> Pixel {
        self.camera.project(&self.true_eye.center)
    }
}

/// Rectangular grid of goal pixels centred on the eye, spaced evenly in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelGrid {
    /// Columns along image x.
    pub cols: usize,
    /// Rows along image y.
    pub rows: usize,
    pub half_width_mm: f64,
    pub half_height_mm: f64,
}

impl PixelGrid {
    /// Benchmark layout: 5×10 for 50 goals, 10×10 for 100, otherwise the most
    /// square factorization with no more columns than rows.
    pub fn navigation(count: usize) -> Self {
        let cols = match count {
            50 => 5,
            _ => (1..=((count as f64).sqrt() as usize).max(1))
                .rev()
                .find(|c| count % c == 0)
                .unwrap_or(1),
        };
        Self {
            cols,
            rows: count / cols.max(1),
            half_width_mm: 2.0,
            half_height_mm: 4.5,
        }
    }

    /// Sampling layout for eye localization.
    pub fn localization(cols: usize, rows: usize) -> Self {
        Self {
            cols,
            rows,
            half_width_mm: 5.0,
            half_height_mm: 8.0,
        }
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major pixels around `centre`.
    pub fn pixels(&self, camera: &CameraModel, centre: &Pixel) -> Vec<Pixel> {
        let span = |i: usize, n: usize, half: f64| {
            if n <= 1 {
                0.0
            } else {
                -half + 2.0 * half * i as f64 / (n - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(self.len());
        for row in 0..self.rows {
            for col in 0..self.cols {
                out.push(Pixel::new(
                    centre.x + camera.mm_to_pixel(span(col, self.cols, self.half_width_mm)),
                    centre.y + camera.mm_to_pixel(span(row, self.rows, self.half_height_mm)),
                ));
            }
        }
        out
    }
}

/// The plant: rigid-body dynamics with saturated actuators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Simulator {
    pub state: ToolState,
    pub cfg: IntegrationConfig,
    pub limits: ActuatorLimits,
    pub steps: u64,
}

impl Simulator {
    pub fn new(state: ToolState, cfg: IntegrationConfig, limits: ActuatorLimits) -> Result<Self, TaskError> {
        cfg.validate()?;
        Ok(Self {
            state,
            cfg,
            limits,
            steps: 0,
        })
    }

    pub fn step(&mut self, u: &ControlInput) -> Result<ControlInput, TaskError> {
        let applied = u.saturated(&self.limits);
        self.state = crate::se3::step_dynamics(&self.state, &applied, &self.cfg)?;
        self.steps += 1;
        Ok(applied)
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.cfg.dt
    }
}
