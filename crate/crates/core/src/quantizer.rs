//! Gumbel-Softmax palette selection: counter-based noise, temperature
//! schedules, soft and straight-through voxel colors, and the final argmax.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::math::{counter_hash, Real, Rgb};
use crate::voxgrid::LogitGrid;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("temperature schedule is empty")]
    Empty,
    #[error("temperature schedule must start at iteration 0")]
    NoStart,
    #[error("temperature schedule start iterations must increase strictly")]
    Unsorted,
    #[error("temperature must be positive and finite, got {0}")]
    BadTau(f64),
}

/// Piecewise-constant temperature: each `(start, tau)` pair holds from its
/// start iteration until the next pair's.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "Vec<(u64, f64)>", into = "Vec<(u64, f64)>"))]
pub struct TemperatureSchedule {
    steps: Vec<(u64, f64)>,
}

impl TemperatureSchedule {
    pub fn new(steps: Vec<(u64, f64)>) -> Result<Self, ScheduleError> {
        let first = steps.first().ok_or(ScheduleError::Empty)?;
        if first.0 != 0 {
            return Err(ScheduleError::NoStart);
        }
        if steps.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(ScheduleError::Unsorted);
        }
        if let Some(&(_, t)) = steps.iter().find(|(_, t)| !(t.is_finite() && *t > 0.0)) {
            return Err(ScheduleError::BadTau(t));
        }
        Ok(TemperatureSchedule { steps })
    }

    pub fn steps(&self) -> &[(u64, f64)] {
        &self.steps
    }

    pub fn tau_at(&self, iter: u64) -> f64 {
        let pos = self.steps.partition_point(|&(start, _)| start <= iter);
        self.steps[pos - 1].1
    }

    /// Same schedule with every start iteration multiplied by `factor`
    /// (rounded). Pairs that collapse onto an earlier start are dropped.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut steps: Vec<(u64, f64)> = Vec::with_capacity(self.steps.len());
        for &(start, tau) in &self.steps {
            let s = (start as f64 * factor).round() as u64;
            match steps.last_mut() {
                Some(last) if last.0 == s => last.1 = tau,
                _ => steps.push((s, tau)),
            }
        }
        TemperatureSchedule { steps }
    }
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule {
            steps: vec![(0, 1.0), (1000, 0.8), (3000, 0.3), (4000, 0.6), (5000, 0.3), (6001, 0.1)],
        }
    }
}

impl TryFrom<Vec<(u64, f64)>> for TemperatureSchedule {
    type Error = ScheduleError;
    fn try_from(v: Vec<(u64, f64)>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<TemperatureSchedule> for Vec<(u64, f64)> {
    fn from(s: TemperatureSchedule) -> Self {
        s.steps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SelectionMode {
    Soft,
    StraightThrough,
}

impl SelectionMode {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMode::Soft => "soft",
            SelectionMode::StraightThrough => "st",
        }
    }
}

pub const DEFAULT_SWITCH_ITER: u64 = 3000;

pub fn mode_for(iter: u64, switch_iter: u64) -> SelectionMode {
    if iter < switch_iter {
        SelectionMode::Soft
    } else {
        SelectionMode::StraightThrough
    }
}

/// Bounds of the uniform draw behind each Gumbel sample.
pub const GUMBEL_EPS: f64 = 1e-10;

/// Gumbel(0, 1) noise keyed on `(seed, iteration, voxel, entry)`, so every
/// value is reproducible without a shared generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelSampler {
    pub seed: u64,
    /// Zero noise everywhere.
    pub deterministic: bool,
}

impl GumbelSampler {
    pub fn new(seed: u64) -> Self {
        GumbelSampler { seed, deterministic: false }
    }

    pub fn deterministic() -> Self {
        GumbelSampler { seed: 0, deterministic: true }
    }

    pub fn sample_into(&self, iter: u64, voxel: usize, out: &mut [f64]) {
        for (n, g) in out.iter_mut().enumerate() {
            *g = if self.deterministic { 0.0 } else { self.sample_one(iter, voxel, n) };
        }
    }

    pub fn sample(&self, iter: u64, voxel: usize, c: usize) -> Vec<f64> {
        let mut v = vec![0.0; c];
        self.sample_into(iter, voxel, &mut v);
        v
    }

    fn sample_one(&self, iter: u64, voxel: usize, n: usize) -> f64 {
        let h = counter_hash(self.seed, iter, voxel as u64, n as u64);
        let u = ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        let u = u.clamp(GUMBEL_EPS, 1.0 - GUMBEL_EPS);
        -(-u.ln()).ln()
    }
}

/// Tempered softmax of `logits + noise`, written into `out`.
pub fn soft_weights_into(logits: &[f64], tau: f64, noise: &[f64], out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (l, g) in logits.iter().zip(noise) {
        max = max.max((l + g) / tau);
    }
    let mut sum = 0.0;
    for ((o, l), g) in out.iter_mut().zip(logits).zip(noise) {
        *o = ((l + g) / tau - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn soft_weights(logits: &[f64], tau: f64, noise: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    soft_weights_into(logits, tau, noise, &mut out);
    out
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A sampled voxel color with what its backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelColor {
    pub rgb: Rgb,
    pub weights: Vec<f64>,
    /// Argmax of the soft weights.
    pub index: usize,
    pub tau: f64,
}

pub fn voxel_color(logits: &[f64], palette: &[Rgb], tau: f64, mode: SelectionMode, noise: &[f64]) -> VoxelColor {
    let weights = soft_weights(logits, tau, noise);
    let index = argmax(&weights);
    let rgb = match mode {
        SelectionMode::StraightThrough => palette[index],
        SelectionMode::Soft => mix(&weights, palette),
    };
    VoxelColor { rgb, weights, index, tau }
}

fn mix(weights: &[f64], palette: &[Rgb]) -> Rgb {
    let mut rgb = [0.0; 3];
    for (w, c) in weights.iter().zip(palette) {
        for k in 0..3 {
            rgb[k] += w * c[k];
        }
    }
    rgb
}

impl VoxelColor {
    /// Chains `d_rgb` (dL/dRGB) to dL/dλ through the soft weights. Both modes
    /// use this Jacobian; straight-through only changes the forward value.
    pub fn backprop(&self, palette: &[Rgb], d_rgb: Rgb, out: &mut [f64]) {
        soft_backprop(&self.weights, self.tau, palette, d_rgb, out);
    }
}

/// `dL/dλ_n = s_n (g·c_n − g·Σ_m s_m c_m) / τ`.
pub fn soft_backprop(weights: &[f64], tau: f64, palette: &[Rgb], d_rgb: Rgb, out: &mut [f64]) {
    let dot = |c: &Rgb| d_rgb[0] * c[0] + d_rgb[1] * c[1] + d_rgb[2] * c[2];
    let mean = dot(&mix(weights, palette));
    for ((o, s), c) in out.iter_mut().zip(weights).zip(palette) {
        *o = s * (dot(c) - mean) / tau;
    }
}

/// Per-voxel palette index with the highest logit (lowest index on ties).
pub fn finalize<R: Real>(logits: &LogitGrid<R>) -> Vec<usize> {
    let c = logits.channels;
    let mut row = vec![0.0; c];
    (0..logits.voxel_count())
        .map(|i| {
            for (r, v) in row.iter_mut().zip(logits.logits(i)) {
                *r = v.to_f64();
            }
            argmax(&row)
        })
        .collect()
}
