//! Pipeline configuration: TOML file, `key=value` overrides and `FM_SEED`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depthproc::SmoothingConfig;
use crate::diffusion::{BoxCodec, NoiseSchedule, SamplingPlan};
use crate::geometry::{PlaneStrata, RepairConfig, RigMode, WarpConfig};
use crate::io;
use crate::matrix::{PoissonConfig, ReinjectMode};

pub const SEED_ENV: &str = "FM_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error("{0}")]
    Parse(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: RigMode,
    pub seed: u64,
    /// Opaque conditioning token forwarded to the denoiser.
    pub condition: u32,
    pub rig: RigConfig,
    pub depth: DepthConfig,
    pub warp: WarpSettings,
    pub schedule: ScheduleConfig,
    pub plan: PlanConfig,
    pub codec: CodecConfig,
    pub oracle: OracleConfig,
    pub outpaint: OutpaintConfig,
    pub reinject: ReinjectConfig,
    pub poisson: PoissonConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: RigMode::Stereo,
            seed: 0,
            condition: 0,
            rig: RigConfig::default(),
            depth: DepthConfig::default(),
            warp: WarpSettings::default(),
            schedule: ScheduleConfig::default(),
            plan: PlanConfig::default(),
            codec: CodecConfig::default(),
            oracle: OracleConfig::default(),
            outpaint: OutpaintConfig::default(),
            reinject: ReinjectConfig::default(),
            poisson: PoissonConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    /// Total stereo columns, left reference included.
    pub stereo_views: usize,
    /// Meters between the leftmost and rightmost stereo cameras.
    pub baseline: f64,
    /// Total spatial columns; the last repeats the first viewpoint.
    pub spatial_views: usize,
    pub radius: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            stereo_views: 6,
            baseline: 0.07,
            spatial_views: 16,
            radius: 0.07,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthConfig {
    pub near: f64,
    pub far: f64,
    /// Map the clip's depth affinely onto `[near, far]`; otherwise depth is
    /// taken as metric and only checked against the range.
    pub normalize: bool,
    pub smoothing: bool,
    pub smoothing_radius: usize,
    pub smoothing_sigma: f64,
}

impl Default for DepthConfig {
    fn default() -> Self {
        let s = SmoothingConfig::default();
        Self {
            near: 1.0,
            far: 10.0,
            normalize: true,
            smoothing: true,
            smoothing_radius: s.radius,
            smoothing_sigma: s.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarpSettings {
    pub planes: usize,
    pub isolated_threshold: f64,
    pub crack_threshold: f64,
    pub crack_sigma: f64,
}

impl Default for WarpSettings {
    fn default() -> Self {
        let r = RepairConfig::default();
        Self {
            planes: 4,
            isolated_threshold: r.isolated_threshold,
            crack_threshold: r.crack_threshold,
            crack_sigma: r.crack_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKeyword {
    /// Stereo: the rightmost column. Spatial: every column.
    Auto,
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ViewRestriction {
    Keyword(ViewKeyword),
    Views(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub steps: usize,
    pub jump: usize,
    /// Resamples per step in the coarse and refinement phases.
    pub resamples: [usize; 2],
    /// Steps numbered at or below this form the refinement phase.
    pub phase_boundary: usize,
    pub refine_views: ViewRestriction,
}

impl Default for PlanConfig {
    fn default() -> Self {
        let p = SamplingPlan::default();
        Self {
            steps: p.outer_steps,
            jump: p.jump,
            resamples: p.resample_counts,
            phase_boundary: p.phase_boundary,
            refine_views: ViewRestriction::Keyword(ViewKeyword::Auto),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    Box,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub kind: CodecKind,
    pub factor: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            kind: CodecKind::Box,
            factor: 8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OracleConfig {
    /// Ground-truth frames laid out as `v###/t###.png`, plus `padded/t###.png`
    /// when outpainting.
    Exact { ground_truth: PathBuf },
    #[default]
    Smoothing,
    Zero,
    Bridge {
        address: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    30_000
}


#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandDepth {
    /// Replicate the nearest known column of each row.
    Nearest,
    /// Fill with `constant_depth`.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutpaintConfig {
    pub enabled: bool,
    pub band_depth: BandDepth,
    pub constant_depth: f64,
}

impl Default for OutpaintConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            band_depth: BandDepth::Nearest,
            constant_depth: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReinjectConfig {
    pub enabled: bool,
    pub mode: ReinjectMode,
}

impl Default for ReinjectConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            mode: ReinjectMode::PerStep,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&io::read_text(path)?).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        self.apply_overrides(&[assignment])
    }

    /// Applies `section.key=value` assignments in order and validates the
    /// result once, so that dependent keys can change together. Each value
    /// is read as a TOML literal, or as a bare string when it does not parse
    /// as one. On error `self` is left unchanged.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, assignments: &[S]) -> Result<(), ConfigError> {
        let mut root = toml::Value::try_from(&*self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for assignment in assignments {
            let assignment = assignment.as_ref();
            let (key, raw) = assignment
                .split_once('=')
                .ok_or_else(|| ConfigError::Parse(format!("override {assignment:?} is not key=value")))?;
            let (key, raw) = (key.trim(), raw.trim());
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            let parts: Vec<&str> = key.split('.').collect();
            let (leaf, path) = parts.split_last().expect("split yields one part");
            let mut table = root.as_table_mut().expect("config is a table");
            for part in path {
                table = table
                    .get_mut(*part)
                    .and_then(toml::Value::as_table_mut)
                    .ok_or_else(|| ConfigError::Parse(format!("unknown config section {part:?} in {key:?}")))?;
            }
            // switching the oracle kind drops the previous variant's fields
            if *leaf == "kind" && path == ["oracle"] {
                table.clear();
            }
            table.insert(leaf.to_string(), value);
        }
        let next: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(format!("override: {}", e.message())))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    /// Replaces the seed when `FM_SEED` is set.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| invalid("seed", format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    /// First 64 bits of SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        io::checksum_bytes(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn views(&self) -> usize {
        match self.mode {
            RigMode::Stereo => self.rig.stereo_views,
            RigMode::Spatial => self.rig.spatial_views,
        }
    }

    /// Baseline in stereo mode, circle radius in spatial mode.
    pub fn extent(&self) -> f64 {
        match self.mode {
            RigMode::Stereo => self.rig.baseline,
            RigMode::Spatial => self.rig.radius,
        }
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule, ConfigError> {
        let s = &self.schedule;
        NoiseSchedule::linear(s.steps, s.beta_start, s.beta_end).map_err(|e| invalid("schedule", e.to_string()))
    }

    pub fn refinement_views(&self) -> Option<Vec<usize>> {
        match (&self.plan.refine_views, self.mode) {
            (ViewRestriction::Keyword(ViewKeyword::Auto), RigMode::Stereo) => Some(vec![self.views() - 1]),
            (ViewRestriction::Keyword(_), _) => None,
            (ViewRestriction::Views(v), _) => Some(v.clone()),
        }
    }

    pub fn sampling_plan(&self) -> SamplingPlan {
        SamplingPlan {
            outer_steps: self.plan.steps,
            jump: self.plan.jump,
            resample_counts: self.plan.resamples,
            phase_boundary: self.plan.phase_boundary,
            refinement_views: self.refinement_views(),
        }
    }

    pub fn warp_config(&self, near: f64, far: f64) -> Result<WarpConfig, ConfigError> {
        Ok(WarpConfig {
            strata: PlaneStrata::new(self.warp.planes, near, far).map_err(|e| invalid("warp.planes", e.to_string()))?,
            repair: RepairConfig {
                isolated_threshold: self.warp.isolated_threshold,
                crack_threshold: self.warp.crack_threshold,
                crack_sigma: self.warp.crack_sigma,
            },
        })
    }

    pub fn smoothing(&self) -> SmoothingConfig {
        SmoothingConfig {
            radius: self.depth.smoothing_radius,
            sigma: self.depth.smoothing_sigma,
        }
    }

    pub fn codec(&self) -> Result<BoxCodec, ConfigError> {
        match self.codec.kind {
            CodecKind::Box => BoxCodec::new(self.codec.factor).map_err(|e| invalid("codec.factor", e.to_string())),
        }
    }

    pub fn reinject_mode(&self) -> Option<ReinjectMode> {
        self.reinject.enabled.then_some(self.reinject.mode)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be a positive finite number, got {v}")))
            }
        };
        let unit = |field, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must lie in (0, 1], got {v}")))
            }
        };
        if self.rig.stereo_views < 2 {
            return Err(invalid("rig.stereo_views", "need at least 2 columns"));
        }
        if self.rig.spatial_views < 3 {
            return Err(invalid("rig.spatial_views", "need at least 3 columns"));
        }
        positive("rig.baseline", self.rig.baseline)?;
        positive("rig.radius", self.rig.radius)?;
        positive("depth.near", self.depth.near)?;
        positive("depth.far", self.depth.far)?;
        if self.depth.far <= self.depth.near {
            return Err(invalid("depth.far", "must exceed depth.near"));
        }
        positive("depth.smoothing_sigma", self.depth.smoothing_sigma)?;
        if self.warp.planes == 0 {
            return Err(invalid("warp.planes", "need at least one plane"));
        }
        unit("warp.isolated_threshold", self.warp.isolated_threshold)?;
        unit("warp.crack_threshold", self.warp.crack_threshold)?;
        positive("warp.crack_sigma", self.warp.crack_sigma)?;
        let sched = self.noise_schedule()?;
        self.sampling_plan()
            .validate(&sched)
            .map_err(|e| invalid("plan", e.to_string()))?;
        if let Some(views) = self.refinement_views() {
            if let Some(v) = views.iter().find(|&&v| v >= self.views()) {
                return Err(invalid("plan.refine_views", format!("view {v} is outside the rig")));
            }
        }
        self.codec()?;
        match &self.oracle {
            OracleConfig::Bridge { address, timeout_ms } => {
                if address.trim().is_empty() {
                    return Err(invalid("oracle.address", "must not be empty"));
                }
                if *timeout_ms == 0 {
                    return Err(invalid("oracle.timeout_ms", "must be positive"));
                }
            }
            OracleConfig::Exact { ground_truth } if ground_truth.as_os_str().is_empty() => {
                return Err(invalid("oracle.ground_truth", "must name a directory"));
            }
            _ => {}
        }
        if self.outpaint.band_depth == BandDepth::Constant {
            positive("outpaint.constant_depth", self.outpaint.constant_depth)?;
        }
        positive("poisson.tol", self.poisson.tol)?;
        if self.poisson.max_iters == 0 {
            return Err(invalid("poisson.max_iters", "must be positive"));
        }
        if !(self.poisson.omega > 0.0 && self.poisson.omega < 2.0) {
            return Err(invalid("poisson.omega", format!("must lie in (0, 2), got {}", self.poisson.omega)));
        }
        Ok(())
    }

    pub fn bridge_timeout(&self) -> Option<Duration> {
        match self.oracle {
            OracleConfig::Bridge { timeout_ms, .. } => Some(Duration::from_millis(timeout_ms)),
            _ => None,
        }
    }
}
