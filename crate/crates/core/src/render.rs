//! Emission-absorption rendering along exact ray segment lists and its
//! analytic adjoint.
//!
//! For segments `k = 1..N` with activated density `d_k` and length `δ_k`:
//! `α_k = 1 − exp(−d_k δ_k)`, `T_k = exp(−Σ_{j<k} d_j δ_j)`,
//! `C = Σ T_k α_k c_k`, `D = Σ T_k α_k t_mid,k` and `ᾱ = 1 − T_{N+1}`.

use alloc::vec::Vec;

use num_traits::Float;

use crate::math::{Real, Rgb};
use crate::voxgrid::{DensityGrid, Segment};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("render output has no backward cache")]
    MissingCache,
    #[error("gradient buffer sized for {expected} voxels, got {got}")]
    BufferSize { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Stop marching once transmittance falls below this value (0 disables).
    pub min_transmittance: f64,
    /// Keep per-segment values needed by [`backward`].
    pub keep_cache: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { min_transmittance: 0.0, keep_cache: true }
    }
}

/// Per-ray forward values kept for the backward pass. Only the segments that
/// were actually composited are stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RayCache {
    pub segments: Vec<Segment>,
    /// Transmittance before each segment; one extra trailing entry holds the
    /// transmittance after the last one.
    pub trans: Vec<f64>,
    pub alpha: Vec<f64>,
    pub colors: Vec<Rgb>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderOutput {
    pub color: Rgb,
    pub depth: f64,
    pub acc_alpha: f64,
    pub cache: Option<RayCache>,
}

impl RenderOutput {
    /// Pixel value over an opaque background.
    pub fn composite(&self, background: Rgb) -> Rgb {
        let t = 1.0 - self.acc_alpha;
        core::array::from_fn(|k| self.color[k] + t * background[k])
    }
}

/// Renders one ray. `color_of(voxel)` supplies the voxel's RGB.
pub fn render_ray<R: Real>(
    segs: &[Segment],
    density: &DensityGrid<R>,
    mut color_of: impl FnMut(usize) -> Rgb,
    opts: &RenderOptions,
) -> RenderOutput {
    let mut cache = RayCache::default();
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    let mut optical = 0.0;
    let mut trans = 1.0;
    for seg in segs {
        let tau = density.density(seg.voxel) * seg.delta();
        let alpha = -(-tau).exp_m1();
        let w = trans * alpha;
        let c = color_of(seg.voxel);
        for k in 0..3 {
            color[k] += w * c[k];
        }
        depth += w * seg.t_mid();
        if opts.keep_cache {
            cache.segments.push(*seg);
            cache.trans.push(trans);
            cache.alpha.push(alpha);
            cache.colors.push(c);
        }
        optical += tau;
        trans = (-optical).exp();
        if trans < opts.min_transmittance {
            break;
        }
    }
    if opts.keep_cache {
        cache.trans.push(trans);
    }
    RenderOutput { color, depth, acc_alpha: 1.0 - trans, cache: opts.keep_cache.then_some(cache) }
}

/// Expected termination depth alone.
pub fn render_depth<R: Real>(segs: &[Segment], density: &DensityGrid<R>) -> f64 {
    let opts = RenderOptions { min_transmittance: 0.0, keep_cache: false };
    render_ray(segs, density, |_| [0.0; 3], &opts).depth
}

/// Loss gradient with respect to one ray's rendered quantities.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RayGrad {
    pub color: Rgb,
    pub depth: f64,
    pub acc_alpha: f64,
}

impl RayGrad {
    pub fn is_zero(&self) -> bool {
        self.color == [0.0; 3] && self.depth == 0.0 && self.acc_alpha == 0.0
    }
}

/// Gradient contribution of one ray segment: with respect to the voxel's
/// activated density and its RGB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentGrad {
    pub voxel: usize,
    pub density: f64,
    pub color: Rgb,
}

/// Per-voxel gradient accumulators (activated density, RGB).
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub density: Vec<f64>,
    /// Three entries per voxel.
    pub color: Vec<f64>,
}

impl GradBuffer {
    pub fn new(voxels: usize) -> Self {
        GradBuffer { density: alloc::vec![0.0; voxels], color: alloc::vec![0.0; voxels * 3] }
    }

    pub fn voxel_count(&self) -> usize {
        self.density.len()
    }

    pub fn zero(&mut self) {
        self.density.fill(0.0);
        self.color.fill(0.0);
    }

    pub fn add(&mut self, g: &SegmentGrad) {
        self.density[g.voxel] += g.density;
        for k in 0..3 {
            self.color[3 * g.voxel + k] += g.color[k];
        }
    }
}

/// Appends the exact per-segment gradients of one ray to `out`.
pub fn backward_segments(out: &RenderOutput, g: &RayGrad, sink: &mut Vec<SegmentGrad>) -> Result<(), RenderError> {
    let cache = out.cache.as_ref().ok_or(RenderError::MissingCache)?;
    if g.is_zero() {
        return Ok(());
    }
    let n = cache.segments.len();
    let t_end = cache.trans[n];
    // Suffix sums Σ_{m>k} w_m c_m and Σ_{m>k} w_m t_m, walked from the back.
    let mut suffix_c = [0.0; 3];
    let mut suffix_d = 0.0;
    let start = sink.len();
    for k in (0..n).rev() {
        let seg = &cache.segments[k];
        let t_k = cache.trans[k];
        let a_k = cache.alpha[k];
        let c_k = cache.colors[k];
        let t_mid = seg.t_mid();
        // d/dτ_k with τ_k = d_k δ_k.
        let t_after = cache.trans[k + 1];
        let mut d_tau = g.acc_alpha * t_end + g.depth * (t_after * t_mid - suffix_d);
        for ch in 0..3 {
            d_tau += g.color[ch] * (t_after * c_k[ch] - suffix_c[ch]);
        }
        let w = t_k * a_k;
        sink.push(SegmentGrad { voxel: seg.voxel, density: d_tau * seg.delta(), color: g.color.map(|gc| gc * w) });
        for ch in 0..3 {
            suffix_c[ch] += w * c_k[ch];
        }
        suffix_d += w * t_mid;
    }
    sink[start..].reverse();
    Ok(())
}

/// Accumulates one ray's gradients into `grads`.
pub fn backward(out: &RenderOutput, g: &RayGrad, grads: &mut GradBuffer) -> Result<(), RenderError> {
    let mut tmp = Vec::new();
    backward_segments(out, g, &mut tmp)?;
    for s in &tmp {
        if s.voxel >= grads.voxel_count() {
            return Err(RenderError::BufferSize { expected: s.voxel + 1, got: grads.voxel_count() });
        }
        grads.add(s);
    }
    Ok(())
}
