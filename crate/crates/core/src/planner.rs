//! Stage-width planning for memory-constant supernets.
//!
//! Two routes produce a schedule. The closed-form route evaluates the
//! textbook transition formulas verbatim, including their known
//! inconsistency with the layer accounting in [`crate::memory`]. The numeric
//! route bisects directly on the memory model and is the self-consistent one.

use serde::{Deserialize, Serialize};

use crate::error::PlanError;
use crate::memory::{self, build_stage, dominant_layer, stage_peak, stage_stride, DominantLayer, ExpandRatio, MBBlockShape};

/// Widths published for the reference configuration.
pub const PUBLISHED_SCHEDULE: [u32; 8] = [8, 24, 96, 288, 360, 384, 392, 392];

pub const DEFAULT_DIVISOR: u32 = 8;
pub const DEFAULT_STEM_WIDTH: u32 = 8;

fn check_positive(field: &'static str, x: f64) -> Result<(), PlanError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(PlanError::Invalid {
            field,
            reason: format!("{x} is not a positive finite number"),
        })
    }
}

/// Width that keeps a depthwise-dominated peak constant across a transition:
/// `C_in * (I² + 4K² + I²/4) / (2I² + 4K²)`.
pub fn cout_depthwise_dominated(c_in: f64, i: f64, k: f64) -> Result<f64, PlanError> {
    check_positive("c_in", c_in)?;
    check_positive("i", i)?;
    check_positive("k", k)?;
    let (i2, k2) = (i * i, k * k);
    Ok(c_in * (i2 + 4.0 * k2 + i2 / 4.0) / (2.0 * i2 + 4.0 * k2))
}

/// `a·x² + b·x + d = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic {
    pub a: f64,
    pub b: f64,
    pub d: f64,
}

impl Quadratic {
    pub fn discriminant(&self) -> f64 {
        self.b * self.b - 4.0 * self.a * self.d
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.a * x + self.b) * x + self.d
    }

    /// The positive root when `a > 0` and `d < 0`. Uses the product form
    /// `2d / (-b - √Δ)`, which avoids cancellation when `b` is large.
    pub fn positive_root(&self) -> f64 {
        let sq = self.discriminant().sqrt();
        if self.b >= 0.0 {
            2.0 * self.d / (-self.b - sq)
        } else {
            (-self.b + sq) / (2.0 * self.a)
        }
    }
}

/// Depthwise-to-expansion transition quadratic.
pub fn dw_to_exp_quadratic(c_in: f64, i: f64, k: f64, e: f64) -> Result<Quadratic, PlanError> {
    check_positive("c_in", c_in)?;
    check_positive("i", i)?;
    check_positive("k", k)?;
    check_positive("e", e)?;
    let i2 = i * i;
    Ok(Quadratic {
        a: e,
        b: e * i2 / 4.0 + i2 / 4.0,
        d: -e * c_in * (i2 + k * k + i2 / 4.0),
    })
}

pub fn cout_dw_to_exp(c_in: f64, i: f64, k: f64, e: f64) -> Result<f64, PlanError> {
    Ok(dw_to_exp_quadratic(c_in, i, k, e)?.positive_root())
}

/// Expansion-dominated quadratic.
pub fn exp_dominated_quadratic(c_in: f64, i: f64, e: f64) -> Result<Quadratic, PlanError> {
    check_positive("c_in", c_in)?;
    check_positive("i", i)?;
    check_positive("e", e)?;
    let i2 = i * i;
    Ok(Quadratic {
        a: e,
        b: e * i2 / 2.0 + i2 / 4.0,
        d: -c_in * (i2 / 4.0 + e * c_in + e * i2),
    })
}

pub fn cout_exp_dominated(c_in: f64, i: f64, e: f64) -> Result<f64, PlanError> {
    Ok(exp_dominated_quadratic(c_in, i, e)?.positive_root())
}

/// Picks the transition width from the current stage's dominant layer.
/// Projection dominance has no branch of its own and takes the expansion one.
pub fn select_cout(c_in: f64, i: f64, k: f64, e: f64, dominant: DominantLayer) -> Result<f64, PlanError> {
    match dominant {
        DominantLayer::Depthwise => {
            let dw = cout_depthwise_dominated(c_in, i, k)?;
            let dw_exp = cout_dw_to_exp(c_in, i, k, e)?;
            Ok(dw.min(dw_exp))
        }
        DominantLayer::Expansion | DominantLayer::Projection => cout_exp_dominated(c_in, i, e),
    }
}

/// Largest multiple of `divisor` not above `x`.
pub fn quantize(x: f64, divisor: u32) -> Result<u32, PlanError> {
    if divisor == 0 {
        return Err(PlanError::Invalid {
            field: "divisor",
            reason: "must be positive".into(),
        });
    }
    if !x.is_finite() || x < divisor as f64 {
        return Err(PlanError::Infeasible {
            stage: 0,
            reason: format!("width {x:.3} is below one quantum of {divisor}"),
        });
    }
    let steps = (x / divisor as f64).floor();
    if steps * divisor as f64 > u32::MAX as f64 {
        return Err(PlanError::Infeasible {
            stage: 0,
            reason: format!("width {x:.3} overflows"),
        });
    }
    Ok(steps as u32 * divisor)
}

/// Shape of a stage whose width is still to be chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageTemplate {
    /// Channels entering the stage's first block.
    pub c_in: u32,
    pub input_size: u32,
    pub kernel: u32,
    pub expand: ExpandRatio,
    pub depth: u32,
    /// Stride of the first block.
    pub stride: u32,
}

impl StageTemplate {
    pub fn blocks(&self, width: u32) -> Result<Vec<MBBlockShape>, PlanError> {
        let layers = std::iter::repeat_n((self.kernel, self.expand), self.depth as usize);
        Ok(build_stage(self.c_in, width, self.input_size, self.stride, layers)?)
    }

    pub fn peak(&self, width: u32) -> Result<u64, PlanError> {
        Ok(stage_peak(&self.blocks(width)?)?)
    }
}

/// Largest width whose stage peak does not exceed the current stage's peak.
pub fn numeric_balance(current_stage: &[MBBlockShape], next: &StageTemplate) -> Result<u32, PlanError> {
    if next.depth == 0 {
        return Err(PlanError::Invalid {
            field: "depth",
            reason: "must be positive".into(),
        });
    }
    let target = stage_peak(current_stage)?;
    if next.peak(1)? > target {
        return Err(PlanError::Infeasible {
            stage: 0,
            reason: format!("even width 1 exceeds the target peak of {target} items"),
        });
    }
    // Peak is non-decreasing in width, so bracket then bisect.
    let mut lo = 1u32;
    let mut hi = 2u32;
    while next.peak(hi)? <= target {
        lo = hi;
        hi = hi.checked_mul(2).ok_or_else(|| PlanError::Infeasible {
            stage: 0,
            reason: "width search overflowed".into(),
        })?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if next.peak(mid)? <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Uniform configuration the schedule is balanced for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub depth: u32,
    pub kernel: u32,
    pub expand: u32,
    pub resolution: u32,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            depth: 4,
            kernel: 7,
            expand: 4,
            resolution: 224,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanMode {
    ClosedForm,
    NumericBalance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSchedule {
    pub stem_width: u32,
    pub stage_widths: Vec<u32>,
    pub head_width: u32,
    pub divisor: u32,
    pub mode: PlanMode,
}

impl ChannelSchedule {
    pub fn validate(&self) -> Result<(), String> {
        let widths = std::iter::once(self.stem_width)
            .chain(self.stage_widths.iter().copied())
            .chain(std::iter::once(self.head_width));
        if self.divisor == 0 {
            return Err("divisor must be positive".into());
        }
        for w in widths {
            if w == 0 || w % self.divisor != 0 {
                return Err(format!("width {w} is not a positive multiple of {}", self.divisor));
            }
        }
        Ok(())
    }
}

/// One planned transition, for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// 1-based stage index; `num_stages + 1` is the head.
    pub stage: usize,
    pub input_size: u32,
    pub dominant: Option<DominantLayer>,
    pub raw_width: f64,
    pub width: u32,
    /// Peak items of the planned stage (or head layer) at the reference configuration.
    pub peak_items: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub schedule: ChannelSchedule,
    pub reference: ReferenceConfig,
    /// Peak of the stem-width stage the first transition is balanced against.
    pub stem_stage_peak: u64,
    pub transitions: Vec<Transition>,
}

impl PlanReport {
    pub fn stage_peaks(&self) -> Vec<u64> {
        let n = self.schedule.stage_widths.len();
        self.transitions[..n].iter().map(|t| t.peak_items).collect()
    }
}

fn at_stage(err: PlanError, stage: usize) -> PlanError {
    match err {
        PlanError::Infeasible { reason, .. } => PlanError::Infeasible { stage, reason },
        other => other,
    }
}

fn peak_block(blocks: &[MBBlockShape]) -> Result<&MBBlockShape, PlanError> {
    let mut best: Option<(&MBBlockShape, u64)> = None;
    for b in blocks {
        let p = b.peak_items()?;
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((b, p));
        }
    }
    best.map(|(b, _)| b).ok_or(PlanError::Invalid {
        field: "depth",
        reason: "stage has no blocks".into(),
    })
}

/// Walks the stage transitions from the stem forward.
///
/// The stem output is treated as a stage of `stem_width` channels at the
/// stem's output size; stage 1 is balanced against it. Each later stage is
/// balanced against the realised (quantized) peak of the one before. The
/// head width always comes from the closed-form selection on the last stage.
pub fn plan_schedule(
    reference: ReferenceConfig,
    stem_width: u32,
    divisor: u32,
    mode: PlanMode,
    num_stages: usize,
) -> Result<PlanReport, PlanError> {
    if reference.resolution < 2 || !reference.resolution.is_multiple_of(2) {
        return Err(PlanError::Invalid {
            field: "resolution",
            reason: format!("{} is not even", reference.resolution),
        });
    }
    if stem_width == 0 || reference.depth == 0 || num_stages == 0 {
        return Err(PlanError::Invalid {
            field: "stem_width",
            reason: "stem width, depth and stage count must be positive".into(),
        });
    }
    let expand = ExpandRatio::from_int(reference.expand);
    let template = |c_in: u32, input_size: u32, stride: u32| StageTemplate {
        c_in,
        input_size,
        kernel: reference.kernel,
        expand,
        depth: reference.depth,
        stride,
    };
    let (k, e) = (reference.kernel as f64, reference.expand as f64);

    let mut size = reference.resolution / 2;
    let mut width = stem_width;
    let mut blocks = template(stem_width, size, 1).blocks(stem_width)?;
    let stem_stage_peak = stage_peak(&blocks)?;
    let mut transitions = Vec::with_capacity(num_stages + 1);

    for s in 0..num_stages {
        let stage = s + 1;
        let stride = stage_stride(s, num_stages);
        let next = template(width, size, stride);
        let (dominant, raw) = match mode {
            PlanMode::ClosedForm => {
                let dom = dominant_layer(peak_block(&blocks)?)?;
                (Some(dom), select_cout(width as f64, size as f64, k, e, dom)?)
            }
            PlanMode::NumericBalance => {
                let c = numeric_balance(&blocks, &next).map_err(|err| at_stage(err, stage))?;
                (None, c as f64)
            }
        };
        let w = quantize(raw, divisor).map_err(|err| at_stage(err, stage))?;
        blocks = next.blocks(w).map_err(|err| at_stage(err, stage))?;
        transitions.push(Transition {
            stage,
            input_size: size,
            dominant,
            raw_width: raw,
            width: w,
            peak_items: stage_peak(&blocks)?,
        });
        width = w;
        size /= stride;
    }

    let dom = dominant_layer(peak_block(&blocks)?)?;
    let raw = select_cout(width as f64, size as f64, k, e, dom)?;
    let head = quantize(raw, divisor).map_err(|err| at_stage(err, num_stages + 1))?;
    let area = (size as u64).pow(2);
    transitions.push(Transition {
        stage: num_stages + 1,
        input_size: size,
        dominant: Some(dom),
        raw_width: raw,
        width: head,
        peak_items: memory::LayerMemory::new("head", width as u64 * area, width as u64 * head as u64, head as u64 * area)
            .total_items,
    });

    Ok(PlanReport {
        schedule: ChannelSchedule {
            stem_width,
            stage_widths: transitions[..num_stages].iter().map(|t| t.width).collect(),
            head_width: head,
            divisor,
            mode,
        },
        reference,
        stem_stage_peak,
        transitions,
    })
}
