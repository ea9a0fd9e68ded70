//! Adaptive background/foreground frame splitter: each novel frame reuses
//! reference-frame content beyond a distance threshold chosen so the
//! analytical similarity stays above a target, with a fixed-distance
//! baseline for comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::PositionModel;
use crate::moments;
use crate::pose::OrientationModel;
use crate::vis::{self, ViSConfig};

pub const DEFAULT_VIS_THRESHOLD: f64 = 0.945;
pub const DEFAULT_FPS: f64 = 60.0;
pub const DEFAULT_D_STEP: f64 = 0.5;
/// Cap for the automatic reference interval (one second at 60 fps).
pub const DEFAULT_R_MAX: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub fps: f64,
    /// Frames per reference cycle; `None` selects the largest feasible
    /// interval automatically.
    pub reference_interval: Option<u32>,
    pub vis_tr: f64,
    pub d_step: f64,
    pub r_max: u32,
    pub vis_cfg: ViSConfig,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fps: DEFAULT_FPS,
            reference_interval: None,
            vis_tr: DEFAULT_VIS_THRESHOLD,
            d_step: DEFAULT_D_STEP,
            r_max: DEFAULT_R_MAX,
            vis_cfg: ViSConfig::default(),
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        self.vis_cfg.validate()?;
        if !(self.fps > 0.0) {
            return Err(Error::domain(format!("fps must be > 0, got {}", self.fps)));
        }
        if let Some(r) = self.reference_interval {
            if r < 1 {
                return Err(Error::domain("reference interval must be >= 1"));
            }
        }
        if !(self.vis_tr > 0.0 && self.vis_tr < 1.0) {
            return Err(Error::domain(format!("vis_tr must be in (0, 1), got {}", self.vis_tr)));
        }
        if !(self.d_step > 0.0) {
            return Err(Error::domain(format!("d_step must be > 0, got {}", self.d_step)));
        }
        if self.r_max < 1 {
            return Err(Error::domain("r_max must be >= 1"));
        }
        Ok(())
    }
}

/// Role of a frame within its reference cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameRole {
    Reference,
    Novel,
}

/// Background/foreground decision for one frame. Reference frames carry no
/// threshold: everything is foreground there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSplit {
    pub frame_index: u64,
    pub role: FrameRole,
    /// Seconds since the cycle's reference frame (0 for references).
    pub dt_to_reference: f64,
    /// Contents farther than this reuse the reference frame; `None` means
    /// all-foreground (references, or no feasible threshold).
    pub d_tr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub reference_interval: u32,
    pub vis_tr: f64,
    pub frames: Vec<FrameSplit>,
}

impl SplitPlan {
    pub fn reference_count(&self) -> usize {
        self.frames.iter().filter(|f| f.role == FrameRole::Reference).count()
    }
}

/// Distance threshold for one novel frame: the nearest grid distance whose
/// similarity to the reference reaches the target, or the far plane when
/// none does (everything stays foreground).
pub fn split_frame(
    orientation: &OrientationModel,
    position: &PositionModel,
    dt_to_reference: f64,
    cfg: &SplitConfig,
) -> Result<f64> {
    cfg.validate()?;
    if !(dt_to_reference > 0.0) {
        return Err(Error::domain(format!(
            "dt_to_reference must be > 0, got {dt_to_reference}"
        )));
    }
    let table = moments::moments(
        position,
        dt_to_reference,
        cfg.vis_cfg.series_terms + 1,
        moments::DEFAULT_N_MAX,
    )?;
    let eps = cfg
        .vis_cfg
        .epsilon
        .unwrap_or_else(|| vis::auto_epsilon(position, dt_to_reference));
    split_frame_from_table(orientation, &table, eps, cfg)
}

fn split_frame_from_table(
    orientation: &OrientationModel,
    table: &moments::MomentTable,
    epsilon: f64,
    cfg: &SplitConfig,
) -> Result<f64> {
    let mut d = cfg.d_step;
    while d < cfg.vis_cfg.d_fp {
        let point = vis::vis_from_table(orientation, table, epsilon, d, &cfg.vis_cfg)?;
        if point.vis >= cfg.vis_tr {
            return Ok(d);
        }
        d += cfg.d_step;
    }
    Ok(cfg.vis_cfg.d_fp)
}

/// Thresholds for every in-cycle offset 1..R-1, sharing one moment table
/// per distinct dt.
fn cycle_thresholds(
    orientation: &OrientationModel,
    position: &PositionModel,
    r: u32,
    cfg: &SplitConfig,
) -> Result<Vec<f64>> {
    (1..r)
        .map(|offset| {
            let dt = offset as f64 / cfg.fps;
            split_frame(orientation, position, dt, cfg)
        })
        .collect()
}

/// Largest reference interval R <= r_max whose farthest in-cycle frame
/// still admits a threshold below the far plane.
pub fn auto_reference_interval(
    orientation: &OrientationModel,
    position: &PositionModel,
    cfg: &SplitConfig,
) -> Result<u32> {
    cfg.validate()?;
    let mut best = 1;
    for r in 2..=cfg.r_max {
        let dt = (r - 1) as f64 / cfg.fps;
        let d_tr = split_frame(orientation, position, dt, cfg)?;
        if d_tr < cfg.vis_cfg.d_fp {
            best = r;
        } else {
            break;
        }
    }
    Ok(best)
}

/// Full plan: a reference every R frames, thresholds memoized by in-cycle
/// offset.
pub fn plan(
    orientation: &OrientationModel,
    position: &PositionModel,
    n_frames: u64,
    cfg: &SplitConfig,
) -> Result<SplitPlan> {
    cfg.validate()?;
    if n_frames < 1 {
        return Err(Error::domain("plan requires n_frames >= 1"));
    }
    let r = match cfg.reference_interval {
        Some(r) => r,
        None => auto_reference_interval(orientation, position, cfg)?,
    };
    let thresholds = cycle_thresholds(orientation, position, r, cfg)?;
    let mut frames = Vec::with_capacity(n_frames as usize);
    for i in 0..n_frames {
        let offset = (i % r as u64) as u32;
        if offset == 0 {
            frames.push(FrameSplit {
                frame_index: i,
                role: FrameRole::Reference,
                dt_to_reference: 0.0,
                d_tr: None,
            });
        } else {
            let d_tr = thresholds[offset as usize - 1];
            frames.push(FrameSplit {
                frame_index: i,
                role: FrameRole::Novel,
                dt_to_reference: offset as f64 / cfg.fps,
                d_tr: if d_tr < cfg.vis_cfg.d_fp { Some(d_tr) } else { None },
            });
        }
    }
    Ok(SplitPlan { reference_interval: r, vis_tr: cfg.vis_tr, frames })
}

/// Fixed-distance baseline plan: every novel frame uses the same threshold.
pub fn baseline_fixed(
    d_fixed: f64,
    n_frames: u64,
    cfg: &SplitConfig,
) -> Result<SplitPlan> {
    cfg.validate()?;
    if !(d_fixed > 0.0) {
        return Err(Error::domain(format!("d_fixed must be > 0, got {d_fixed}")));
    }
    if n_frames < 1 {
        return Err(Error::domain("plan requires n_frames >= 1"));
    }
    let r = cfg.reference_interval.unwrap_or(DEFAULT_R_MAX);
    let d = d_fixed.min(cfg.vis_cfg.d_fp);
    let mut frames = Vec::with_capacity(n_frames as usize);
    for i in 0..n_frames {
        let offset = (i % r as u64) as u32;
        if offset == 0 {
            frames.push(FrameSplit {
                frame_index: i,
                role: FrameRole::Reference,
                dt_to_reference: 0.0,
                d_tr: None,
            });
        } else {
            frames.push(FrameSplit {
                frame_index: i,
                role: FrameRole::Novel,
                dt_to_reference: offset as f64 / cfg.fps,
                d_tr: if d < cfg.vis_cfg.d_fp { Some(d) } else { None },
            });
        }
    }
    Ok(SplitPlan { reference_interval: r, vis_tr: cfg.vis_tr, frames })
}
