//! Loss values and parameter gradients for one batch of rays. Training and
//! the finite-difference suites share these functions.

use alloc::vec;
use alloc::vec::Vec;

use crate::embed::{EmbedError, Patch, SemanticLoss};
use crate::geometry::Ray;
use crate::losses::{alpha_loss, bg_entropy_loss, depth_loss, pixel_loss, tv_loss, LossParts, Stage2Weights};
use crate::math::{Real, Rgb};
use crate::quantizer::{argmax, soft_backprop, soft_weights_into, GumbelSampler, SelectionMode};
use crate::render::{backward_segments, render_ray, GradBuffer, RayGrad, RenderOptions, RenderOutput, SegmentGrad};
use crate::voxgrid::{traverse_into, ColorGrid, DensityGrid, GridSpec, LogitGrid};

use super::exec::{chunk_count, chunk_range, RayExecutor};

/// Renders every ray with the given per-voxel colors.
pub fn render_rays<R: Real, E: RayExecutor>(
    spec: &GridSpec,
    density: &DensityGrid<R>,
    colors: &[Rgb],
    rays: &[Ray],
    opts: &RenderOptions,
    exec: &E,
) -> Vec<RenderOutput> {
    let chunks = exec.map(chunk_count(rays.len()), &|c| {
        let mut segs = Vec::new();
        chunk_range(c, rays.len())
            .map(|i| {
                traverse_into(spec, rays[i].origin, rays[i].dir, &mut segs);
                render_ray(&segs, density, |v| colors[v], opts)
            })
            .collect::<Vec<_>>()
    });
    chunks.into_iter().flatten().collect()
}

/// Backpropagates per-ray gradients and sums them in ray order.
pub fn accumulate(outputs: &[RenderOutput], grads: &[RayGrad], buf: &mut GradBuffer, exec: &impl RayExecutor) {
    let parts = exec.map(chunk_count(outputs.len()), &|c| {
        let mut sink: Vec<SegmentGrad> = Vec::new();
        for i in chunk_range(c, outputs.len()) {
            backward_segments(&outputs[i], &grads[i], &mut sink).expect("forward pass keeps its cache");
        }
        sink
    });
    for part in parts {
        for s in &part {
            buf.add(s);
        }
    }
}

/// Stage-1 weights: the render term is normally 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Weights {
    pub render: f64,
    pub bg_entropy: f64,
    pub tv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Batch {
    pub rays: Vec<Ray>,
    pub targets: Vec<Rgb>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Eval {
    pub parts: LossParts,
    pub total: f64,
    /// dL/d(raw density).
    pub d_density: Vec<f64>,
    /// dL/d(raw color), three per voxel.
    pub d_color: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn stage1_objective<R: Real, E: RayExecutor>(
    spec: &GridSpec,
    density: &DensityGrid<R>,
    color: &ColorGrid<R>,
    batch: &Stage1Batch,
    w: &Stage1Weights,
    background: Rgb,
    opts: &RenderOptions,
    exec: &E,
) -> Stage1Eval {
    let colors = color.colors();
    let outputs = render_rays(spec, density, &colors, &batch.rays, opts, exec);
    let composited: Vec<Rgb> = outputs.iter().map(|o| o.composite(background)).collect();
    let acc: Vec<f64> = outputs.iter().map(|o| o.acc_alpha).collect();
    let (render, g_pix) = pixel_loss(&composited, &batch.targets);
    let (bg, g_bg) = bg_entropy_loss(&acc);
    let grads: Vec<RayGrad> = (0..outputs.len())
        .map(|i| {
            let gc = g_pix[i].map(|g| g * w.render);
            let through_bg = -(gc[0] * background[0] + gc[1] * background[1] + gc[2] * background[2]);
            RayGrad { color: gc, depth: 0.0, acc_alpha: through_bg + w.bg_entropy * g_bg[i] }
        })
        .collect();

    let n = spec.voxel_count();
    let mut buf = GradBuffer::new(n);
    accumulate(&outputs, &grads, &mut buf, exec);

    let mut tv = 0.0;
    if w.tv != 0.0 {
        let (l, g) = tv_loss(&density.densities(), spec.dims);
        tv = l;
        for (b, gi) in buf.density.iter_mut().zip(&g) {
            *b += w.tv * gi;
        }
    }

    let d_density = (0..n).map(|i| buf.density[i] * density.density_grad(i)).collect();
    let d_color = (0..3 * n)
        .map(|j| {
            let s = colors[j / 3][j % 3];
            buf.color[j] * s * (1.0 - s)
        })
        .collect();
    let parts = LossParts { render, tv, bg_entropy: bg, ..Default::default() };
    let total = w.render * render + w.bg_entropy * bg + w.tv * tv;
    Stage1Eval { parts, total, d_density, d_color }
}

/// Stage-2 ray batch; `target` is zero on background pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Batch {
    pub rays: Vec<Ray>,
    pub target: Vec<Rgb>,
    pub background: Vec<bool>,
    pub depth_gt: Vec<f64>,
    pub depth_mask: Vec<bool>,
}

/// A square block of parallel rays rendered as one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub rays: Vec<Ray>,
    pub target: Patch,
}

/// Per-iteration quantizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantization {
    pub iter: u64,
    pub tau: f64,
    pub mode: SelectionMode,
    pub sampler: GumbelSampler,
}

/// Outcome of the semantic term for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum SemanticStatus {
    Inactive,
    Applied,
    Skipped(EmbedError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Eval {
    pub parts: LossParts,
    pub total: f64,
    pub d_density: Vec<f64>,
    /// dL/dλ, `channels` per voxel.
    pub d_logits: Vec<f64>,
    pub semantic: SemanticStatus,
}

/// Soft weights and forward colors of every voxel.
pub struct VoxelColors {
    pub channels: usize,
    pub weights: Vec<f64>,
    pub colors: Vec<Rgb>,
}

pub fn voxel_colors<R: Real>(logits: &LogitGrid<R>, palette: &[Rgb], q: &Quantization) -> VoxelColors {
    let c = logits.channels;
    let n = logits.voxel_count();
    let mut weights = vec![0.0; n * c];
    let mut colors = vec![[0.0; 3]; n];
    let mut row = vec![0.0; c];
    let mut noise = vec![0.0; c];
    for v in 0..n {
        for (r, l) in row.iter_mut().zip(logits.logits(v)) {
            *r = l.to_f64();
        }
        q.sampler.sample_into(q.iter, v, &mut noise);
        let w = &mut weights[v * c..(v + 1) * c];
        soft_weights_into(&row, q.tau, &noise, w);
        colors[v] = match q.mode {
            SelectionMode::StraightThrough => palette[argmax(w)],
            SelectionMode::Soft => {
                let mut rgb = [0.0; 3];
                for (s, p) in w.iter().zip(palette) {
                    for k in 0..3 {
                        rgb[k] += s * p[k];
                    }
                }
                rgb
            }
        };
    }
    VoxelColors { channels: c, weights, colors }
}

#[allow(clippy::too_many_arguments)]
pub fn stage2_objective<R: Real, E: RayExecutor>(
    spec: &GridSpec,
    density: &DensityGrid<R>,
    logits: &LogitGrid<R>,
    palette: &[Rgb],
    batch: &Stage2Batch,
    patch: Option<&PatchBatch>,
    semantic: Option<&mut dyn SemanticLoss>,
    w: &Stage2Weights,
    q: &Quantization,
    opts: &RenderOptions,
    exec: &E,
) -> Stage2Eval {
    let vc = voxel_colors(logits, palette, q);
    let outputs = render_rays(spec, density, &vc.colors, &batch.rays, opts, exec);
    let rendered: Vec<Rgb> = outputs.iter().map(|o| o.color).collect();
    let depth: Vec<f64> = outputs.iter().map(|o| o.depth).collect();
    let acc: Vec<f64> = outputs.iter().map(|o| o.acc_alpha).collect();
    let (l_pix, g_pix) = pixel_loss(&rendered, &batch.target);
    let (l_depth, g_depth) = depth_loss(&depth, &batch.depth_gt, &batch.depth_mask, &acc);
    let (l_alpha, g_alpha) = alpha_loss(&acc, &batch.background);
    let mut grads: Vec<RayGrad> = (0..outputs.len())
        .map(|i| RayGrad {
            color: g_pix[i].map(|g| g * w.pixel),
            depth: w.depth * g_depth[i],
            acc_alpha: w.alpha * g_alpha[i],
        })
        .collect();
    let mut outputs = outputs;

    let mut parts = LossParts { pixel: l_pix, depth: l_depth, alpha: l_alpha, ..Default::default() };
    let mut status = SemanticStatus::Inactive;
    if let (Some(p), Some(sem), true) = (patch, semantic, w.clip > 0.0) {
        let pout = render_rays(spec, density, &vc.colors, &p.rays, opts, exec);
        let img = Patch { size: p.target.size, pixels: pout.iter().map(|o| o.color).collect() };
        match sem.loss_and_grad(&img, &p.target) {
            Ok((l, g)) if l.is_finite() && g.len() == pout.len() => {
                parts.semantic = l;
                grads.extend(g.iter().map(|gp| RayGrad { color: gp.map(|x| x * w.clip), ..Default::default() }));
                outputs.extend(pout);
                status = SemanticStatus::Applied;
            }
            Ok(_) => status = SemanticStatus::Skipped(EmbedError::NonFinite),
            Err(e) => status = SemanticStatus::Skipped(e),
        }
    }

    let n = spec.voxel_count();
    let mut buf = GradBuffer::new(n);
    accumulate(&outputs, &grads, &mut buf, exec);

    let c = vc.channels;
    let d_density = (0..n).map(|i| buf.density[i] * density.density_grad(i)).collect();
    let mut d_logits = vec![0.0; n * c];
    for v in 0..n {
        let g = [buf.color[3 * v], buf.color[3 * v + 1], buf.color[3 * v + 2]];
        if g != [0.0; 3] {
            soft_backprop(&vc.weights[v * c..(v + 1) * c], q.tau, palette, g, &mut d_logits[v * c..(v + 1) * c]);
        }
    }
    let total = w.pixel * l_pix + w.depth * l_depth + w.alpha * l_alpha + w.clip * parts.semantic;
    Stage2Eval { parts, total, d_density, d_logits, semantic: status }
}
