//! Stand-in for the goal-prediction network: pixel in, end-effector-frame
//! vector-to-goal out, discretized into uniform bins per axis.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eye::{raycast_sphere, CameraModel, EyeGeometry, GeometryError, Pixel};
use crate::se3::{ToolState, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("goal pixel does not hit the retina")]
    GoalOffRetina,
    #[error("goal pixel ({0}, {1}) is outside the image")]
    PixelOutOfBounds(f64, f64),
    #[error("value {value} on axis {axis} is outside the bin range")]
    OutOfRange { axis: usize, value: f64 },
    #[error("invalid oracle configuration: {0}")]
    InvalidConfig(&'static str),
}

impl From<GeometryError> for OracleError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::PixelOutOfBounds(x, y) => OracleError::PixelOutOfBounds(x, y),
            GeometryError::NoIntersection => OracleError::GoalOffRetina,
            GeometryError::Invalid(msg) => OracleError::InvalidConfig(msg),
        }
    }
}

/// `count` uniform bins over `[min, max]` mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisBins {
    pub count: usize,
    pub min: f64,
    pub max: f64,
}

impl AxisBins {
    pub fn new(count: usize, min: f64, max: f64) -> Result<Self, OracleError> {
        let bins = Self { count, min, max };
        bins.validate()?;
        Ok(bins)
    }

    /// Symmetric range `[-half_range, half_range]`.
    pub fn symmetric(count: usize, half_range: f64) -> Self {
        Self {
            count,
            min: -half_range,
            max: half_range,
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.count == 0 {
            return Err(OracleError::InvalidConfig("bin count must be positive"));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(OracleError::InvalidConfig("bin range must satisfy min < max"));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.max - self.min) / self.count as f64
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }

    /// Bin index of `value`; the upper edge belongs to the last bin.
    pub fn discretize(&self, value: f64) -> Option<usize> {
        if !self.contains(value) {
            return None;
        }
        let i = ((value - self.min) / self.width()).floor() as usize;
        Some(i.min(self.count - 1))
    }

    /// Centre of bin `index`.
    pub fn undiscretize(&self, index: usize) -> Option<f64> {
        (index < self.count).then(|| self.min + (index as f64 + 0.5) * self.width())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscretizationSpec {
    pub x: AxisBins,
    pub y: AxisBins,
    pub z: AxisBins,
}

impl Default for DiscretizationSpec {
    /// 580 / 1345 / 320 bins, each 0.04 mm wide.
    fn default() -> Self {
        Self {
            x: AxisBins::symmetric(580, 11.6),
            y: AxisBins::symmetric(1345, 26.9),
            z: AxisBins::symmetric(320, 6.4),
        }
    }
}

impl DiscretizationSpec {
    pub fn axes(&self) -> [&AxisBins; 3] {
        [&self.x, &self.y, &self.z]
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        self.axes().iter().try_for_each(|a| a.validate())
    }

    pub fn half_widths(&self) -> Vec3 {
        Vec3::new(self.x.width(), self.y.width(), self.z.width()) * 0.5
    }

    pub fn contains(&self, d: &Vec3) -> bool {
        self.axes().iter().zip(d.iter()).all(|(a, v)| a.contains(*v))
    }

    pub fn discretize(&self, d: &Vec3) -> Result<[usize; 3], OracleError> {
        let mut out = [0; 3];
        for (axis, (bins, v)) in self.axes().iter().zip(d.iter()).enumerate() {
            out[axis] = bins
                .discretize(*v)
                .ok_or(OracleError::OutOfRange { axis, value: *v })?;
        }
        Ok(out)
    }

    pub fn undiscretize(&self, idx: &[usize; 3]) -> Result<Vec3, OracleError> {
        let mut out = Vec3::zeros();
        for (axis, bins) in self.axes().iter().enumerate() {
            out[axis] = bins.undiscretize(idx[axis]).ok_or(OracleError::OutOfRange {
                axis,
                value: idx[axis] as f64,
            })?;
        }
        Ok(out)
    }

    /// Componentwise clamp into the representable range.
    pub fn clamp(&self, d: &Vec3) -> Vec3 {
        let mut out = *d;
        for (axis, bins) in self.axes().iter().enumerate() {
            out[axis] = out[axis].clamp(bins.min, bins.max);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Per-axis Gaussian sigma (mm), applied before quantization.
    pub noise_sigma: Vec3,
    pub seed: u64,
    /// Probability that a prediction is replaced by a gross error.
    pub gross_outlier_rate: f64,
    /// Magnitude (mm) of a gross error, in a uniformly random direction.
    pub gross_outlier_mm: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            noise_sigma: Vec3::zeros(),
            seed: 0,
            gross_outlier_rate: 0.0,
            gross_outlier_mm: 2.0,
        }
    }
}

impl OracleConfig {
    pub fn with_sigma(sigma: f64, seed: u64) -> Self {
        Self {
            noise_sigma: Vec3::repeat(sigma),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if !self.noise_sigma.iter().all(|s| s.is_finite() && *s >= 0.0) {
            return Err(OracleError::InvalidConfig("noise sigma must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.gross_outlier_rate) {
            return Err(OracleError::InvalidConfig("outlier rate must lie in [0, 1]"));
        }
        if !(self.gross_outlier_mm.is_finite() && self.gross_outlier_mm >= 0.0) {
            return Err(OracleError::InvalidConfig("outlier magnitude must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalPrediction {
    /// End-effector-frame vector to the goal (mm), at bin centres.
    pub d: Vec3,
    pub bin_indices: [usize; 3],
    pub noise_applied: Vec3,
}

impl GoalPrediction {
    /// Base-frame goal implied by this prediction from `tool`: `p + R·d`.
    pub fn goal_in_base(&self, tool: &ToolState) -> Vec3 {
        tool.position + tool.orientation * self.d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub tool: ToolState,
    pub eye: EyeGeometry,
    pub camera: CameraModel,
}

/// Noise-free end-effector-frame vector from the tool tip to the retina point under `g`.
pub fn true_goal_vector(scene: &Scene, g: &Pixel) -> Result<Vec3, OracleError> {
    let hit = raycast_sphere(&scene.camera, g, &scene.eye)?;
    Ok(scene.tool.orientation.transpose() * (hit - scene.tool.position))
}

fn predict_with(
    scene: &Scene,
    g: &Pixel,
    spec: &DiscretizationSpec,
    cfg: &OracleConfig,
    rng: &mut StdRng,
) -> Result<GoalPrediction, OracleError> {
    let d_true = true_goal_vector(scene, g)?;
    if let Some(axis) = (0..3).find(|&a| !spec.axes()[a].contains(d_true[a])) {
        return Err(OracleError::OutOfRange {
            axis,
            value: d_true[axis],
        });
    }
    let mut noise = Vec3::zeros();
    for (n, sigma) in noise.iter_mut().zip(cfg.noise_sigma.iter()) {
        if *sigma > 0.0 {
            *n = Normal::new(0.0, *sigma).expect("validated sigma").sample(rng);
        }
    }
    if cfg.gross_outlier_rate > 0.0 && rng.random::<f64>() < cfg.gross_outlier_rate {
        let dir: [f64; 3] = UnitSphere.sample(rng);
        noise += Vec3::from(dir) * cfg.gross_outlier_mm;
    }
    let bin_indices = spec.discretize(&spec.clamp(&(d_true + noise)))?;
    Ok(GoalPrediction {
        d: spec.undiscretize(&bin_indices)?,
        bin_indices,
        noise_applied: noise,
    })
}

/// One prediction with a generator seeded from `cfg.seed`.
pub fn predict_goal(
    scene: &Scene,
    g: &Pixel,
    spec: &DiscretizationSpec,
    cfg: &OracleConfig,
) -> Result<GoalPrediction, OracleError> {
    spec.validate()?;
    cfg.validate()?;
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    predict_with(scene, g, spec, cfg, &mut rng)
}

/// Oracle with its own noise stream; successive calls draw fresh noise.
#[derive(Debug, Clone)]
pub struct PerceptionOracle {
    spec: DiscretizationSpec,
    cfg: OracleConfig,
    rng: StdRng,
}

impl PerceptionOracle {
    pub fn new(spec: DiscretizationSpec, cfg: OracleConfig) -> Result<Self, OracleError> {
        spec.validate()?;
        cfg.validate()?;
        Ok(Self {
            spec,
            cfg,
            rng: StdRng::seed_from_u64(cfg.seed),
        })
    }

    pub fn spec(&self) -> &DiscretizationSpec {
        &self.spec
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    pub fn predict(&mut self, scene: &Scene, g: &Pixel) -> Result<GoalPrediction, OracleError> {
        predict_with(scene, g, &self.spec, &self.cfg, &mut self.rng)
    }
}
