//! The two optimization stages.
//!
//! Stage 1 fits a density grid and a sigmoid RGB grid to mesh renders from
//! fourteen orthographic views on a white background. Stage 2 replaces the
//! RGB grid with palette logits and fine-tunes against the six pixel-art
//! views with pixel, depth, alpha and semantic terms.

pub mod exec;
pub mod objective;
pub mod views;

use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::{Patch, SemanticLoss};
use crate::geometry::{CanonicalView, Ray};
use crate::losses::{LossParts, LossWeights};
use crate::math::{counter_hash, Real, Rgb};
use crate::optim::{Adam, LrDecay};
use crate::quantizer::{mode_for, GumbelSampler, SelectionMode, TemperatureSchedule, DEFAULT_SWITCH_ITER};
use crate::render::RenderOptions;
use crate::voxgrid::{raw_for_voxel_alpha, ColorGrid, DensityGrid, GridSpec, LogitGrid};

pub use exec::{RayExecutor, Sequential};
use objective::{
    stage1_objective, stage2_objective, PatchBatch, Quantization, SemanticStatus, Stage1Batch, Stage1Weights,
    Stage2Batch,
};
pub use views::{stage1_cameras, PixelSource, Stage1View, Stage2View};

/// Stage-1 background color.
pub const WHITE: Rgb = [1.0; 3];

/// Reference Stage-2 length the default schedules are written for.
pub const REFERENCE_STAGE2_ITERS: u64 = 6500;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("loss became non-finite in stage {stage} at iteration {iter}")]
    Diverged { stage: u8, iter: u64 },
    #[error("stage 1 needs at least 6 views, got {0}")]
    TooFewViews(usize),
    #[error("stage 2 needs a front view")]
    NoFrontView,
    #[error(
        "view {view}: camera {camera:?}, raster {raster:?} and pixel art {art:?} must have the same pixel size"
    )]
    ViewSize { view: &'static str, camera: (usize, usize), raster: (usize, usize), art: (usize, usize) },
    #[error("grid does not match the grid spec")]
    GridMismatch,
    #[error("invalid config: {0}")]
    Config(&'static str),
}

/// All training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub stage1_iters: u64,
    pub stage2_iters: u64,
    pub batch_rays: usize,
    pub lr_density_s1: f64,
    pub lr_color_s1: f64,
    pub lr_density_s2: f64,
    pub lr_logit_s2: f64,
    pub lr_decay: LrDecay,
    /// Stage-2 iteration from which only the front view is supervised.
    pub front_only_after: u64,
    /// Stage-2 iteration of the soft to straight-through switch.
    pub switch_iter: u64,
    pub weights: LossWeights,
    pub tau_schedule: TemperatureSchedule,
    pub seed: u64,
    /// Side of the semantic patch in pixels.
    pub patch_size: usize,
    pub logit_scale: f64,
    /// Per-voxel opacity of the initial Stage-1 density.
    pub init_alpha: f64,
    /// Checkpoint period in iterations (0 disables).
    pub checkpoint_every: u64,
    pub min_transmittance: f64,
    /// Zero Gumbel noise.
    pub deterministic_noise: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_iters: 8000,
            stage2_iters: REFERENCE_STAGE2_ITERS,
            batch_rays: 8192,
            lr_density_s1: 0.1,
            lr_color_s1: 0.1,
            lr_density_s2: 5e-3,
            lr_logit_s2: 0.1,
            lr_decay: LrDecay::default(),
            front_only_after: 4500,
            switch_iter: DEFAULT_SWITCH_ITER,
            weights: LossWeights::default(),
            tau_schedule: TemperatureSchedule::default(),
            seed: 0,
            patch_size: 80,
            logit_scale: crate::voxgrid::DEFAULT_LOGIT_SCALE,
            init_alpha: 0.01,
            checkpoint_every: 1000,
            min_transmittance: 1e-4,
            deterministic_noise: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.front_only_after > self.stage2_iters {
            return Err(TrainError::Config("front_only_after exceeds stage2_iters"));
        }
        let lrs = [self.lr_density_s1, self.lr_color_s1, self.lr_density_s2, self.lr_logit_s2];
        if !lrs.iter().all(|lr| lr.is_finite() && *lr > 0.0) {
            return Err(TrainError::Config("learning rates must be positive"));
        }
        if self.batch_rays == 0 {
            return Err(TrainError::Config("batch_rays must be positive"));
        }
        if !self.weights.is_valid() {
            return Err(TrainError::Config("loss weights must be non-negative"));
        }
        if !(self.init_alpha > 0.0 && self.init_alpha < 1.0) {
            return Err(TrainError::Config("init_alpha must lie in (0, 1)"));
        }
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(TrainError::Config("logit_scale must be positive"));
        }
        Ok(())
    }

    /// Sets `stage2_iters` and rescales every Stage-2 breakpoint (view switch,
    /// quantizer switch, depth and semantic weights, temperatures) so they sit
    /// at the same fractions of the run as in the reference schedule.
    pub fn with_scaled_stage2(mut self, iters: u64) -> Self {
        let f = iters as f64 / self.stage2_iters.max(1) as f64;
        let s = |v: u64| (v as f64 * f).round() as u64;
        self.front_only_after = s(self.front_only_after).min(iters);
        self.switch_iter = s(self.switch_iter);
        self.weights.depth_switch_iter = s(self.weights.depth_switch_iter);
        self.weights.clip_until = s(self.weights.clip_until);
        self.tau_schedule = self.tau_schedule.scaled(f);
        self.stage2_iters = iters;
        self
    }

    fn render_options(&self) -> RenderOptions {
        RenderOptions { min_transmittance: self.min_transmittance, keep_cache: true }
    }

    pub fn sampler(&self) -> GumbelSampler {
        if self.deterministic_noise {
            GumbelSampler::deterministic()
        } else {
            GumbelSampler::new(self.seed)
        }
    }

    /// Views supervised at a Stage-2 iteration.
    pub fn active_views(&self, iter: u64) -> &'static [CanonicalView] {
        if iter >= self.front_only_after {
            &[CanonicalView::Front]
        } else {
            &CanonicalView::ALL
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Record {
    pub iter: u64,
    pub total: f64,
    pub parts: LossParts,
    pub lr_density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Record {
    pub iter: u64,
    pub total: f64,
    pub parts: LossParts,
    pub tau: f64,
    pub mode: SelectionMode,
    pub lambda_depth: f64,
    pub lambda_clip: f64,
    pub active_views: usize,
    pub semantic: SemanticStatus,
}

pub enum Checkpoint<'a, R> {
    Stage1 { iter: u64, density: &'a DensityGrid<R>, color: &'a ColorGrid<R> },
    Stage2 { iter: u64, density: &'a DensityGrid<R>, logits: &'a LogitGrid<R> },
}

/// Receives per-iteration records and periodic checkpoints.
pub trait TrainObserver<R> {
    fn stage1(&mut self, _rec: &Stage1Record) {}
    fn stage2(&mut self, _rec: &Stage2Record) {}
    fn checkpoint(&mut self, _cp: Checkpoint<'_, R>) {}
}

impl<R> TrainObserver<R> for () {}

fn batch_rng(seed: u64, stage: u64, iter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(counter_hash(seed, stage, iter, 0x5eed))
}

/// Picks `(view, pixel)` pairs uniformly over all pixels of `views`.
fn sample_pixels<V: PixelSource>(views: &[&V], count: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut offsets = Vec::with_capacity(views.len() + 1);
    let mut total = 0usize;
    for v in views {
        offsets.push(total);
        total += v.camera().pixel_count();
    }
    (0..count)
        .map(|_| {
            let g = rng.random_range(0..total);
            let view = offsets.partition_point(|&o| o <= g) - 1;
            (view, g - offsets[view])
        })
        .collect()
}

fn initial_stage1<R: Real>(spec: &GridSpec, cfg: &TrainConfig) -> (DensityGrid<R>, ColorGrid<R>) {
    (DensityGrid::filled(spec, raw_for_voxel_alpha(cfg.init_alpha)), ColorGrid::filled(spec, 0.0))
}

pub struct Stage1Output<R> {
    pub density: DensityGrid<R>,
    pub color: ColorGrid<R>,
    pub last: Option<Stage1Record>,
}

pub fn train_stage1<R: Real, E: RayExecutor>(
    views: &[Stage1View],
    spec: &GridSpec,
    cfg: &TrainConfig,
    exec: &E,
    observer: &mut dyn TrainObserver<R>,
) -> Result<Stage1Output<R>, TrainError> {
    if views.len() < 6 {
        return Err(TrainError::TooFewViews(views.len()));
    }
    cfg.validate()?;
    let (mut density, mut color) = initial_stage1::<R>(spec, cfg);
    let mut adam_d = Adam::new(density.len());
    let mut adam_c = Adam::new(color.raw.len());
    let w = Stage1Weights { render: 1.0, bg_entropy: cfg.weights.bg_entropy, tv: cfg.weights.density_tv };
    let opts = cfg.render_options();
    let refs: Vec<&Stage1View> = views.iter().collect();
    let mut last = None;

    for iter in 0..cfg.stage1_iters {
        let mut rng = batch_rng(cfg.seed, 1, iter);
        let picks = sample_pixels(&refs, cfg.batch_rays, &mut rng);
        let batch = Stage1Batch {
            rays: picks.iter().map(|&(v, p)| views[v].pixel_ray(p)).collect(),
            targets: picks.iter().map(|&(v, p)| views[v].target[p]).collect(),
        };
        let eval = stage1_objective(spec, &density, &color, &batch, &w, WHITE, &opts, exec);
        if !eval.total.is_finite() {
            return Err(TrainError::Diverged { stage: 1, iter });
        }
        let lr_d = cfg.lr_decay.lr_at(cfg.lr_density_s1, iter, cfg.stage1_iters);
        let lr_c = cfg.lr_decay.lr_at(cfg.lr_color_s1, iter, cfg.stage1_iters);
        adam_d.step(&mut density.raw, &eval.d_density, lr_d);
        adam_c.step(&mut color.raw, &eval.d_color, lr_c);
        let rec = Stage1Record { iter, total: eval.total, parts: eval.parts, lr_density: lr_d };
        observer.stage1(&rec);
        last = Some(rec);
        if cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 {
            observer.checkpoint(Checkpoint::Stage1 { iter: iter + 1, density: &density, color: &color });
        }
    }
    Ok(Stage1Output { density, color, last })
}

pub struct Stage2Output<R> {
    pub density: DensityGrid<R>,
    pub logits: LogitGrid<R>,
    pub last: Option<Stage2Record>,
}

fn patch_batch<V: PixelSource>(view: &V, mesh_color: &[Rgb], size: usize, rng: &mut ChaCha8Rng) -> PatchBatch {
    let cam = view.camera();
    let p = size.min(cam.width).min(cam.height);
    let x0 = rng.random_range(0..=cam.width - p);
    let y0 = rng.random_range(0..=cam.height - p);
    let mut rays: Vec<Ray> = Vec::with_capacity(p * p);
    let mut pixels = Vec::with_capacity(p * p);
    for y in y0..y0 + p {
        for x in x0..x0 + p {
            rays.push(cam.pixel_ray(x, y));
            pixels.push(mesh_color[y * cam.width + x]);
        }
    }
    PatchBatch { rays, target: Patch { size: p, pixels } }
}

#[allow(clippy::too_many_arguments)]
pub fn train_stage2<R: Real, E: RayExecutor>(
    views: &[Stage2View],
    spec: &GridSpec,
    palette: &[Rgb],
    mut density: DensityGrid<R>,
    mut logits: LogitGrid<R>,
    cfg: &TrainConfig,
    mut semantic: Option<&mut dyn SemanticLoss>,
    exec: &E,
    observer: &mut dyn TrainObserver<R>,
) -> Result<Stage2Output<R>, TrainError> {
    cfg.validate()?;
    if density.dims != spec.dims || logits.dims != spec.dims || logits.channels != palette.len() {
        return Err(TrainError::GridMismatch);
    }
    let by_view = |v: CanonicalView| views.iter().find(|s| s.view == v);
    if by_view(CanonicalView::Front).is_none() {
        return Err(TrainError::NoFrontView);
    }
    let mut adam_d = Adam::new(density.len());
    let mut adam_l = Adam::new(logits.values.len());
    let opts = cfg.render_options();
    let sampler = cfg.sampler();
    let mut last = None;

    for iter in 0..cfg.stage2_iters {
        let active: Vec<&Stage2View> = cfg.active_views(iter).iter().filter_map(|&v| by_view(v)).collect();
        let mut rng = batch_rng(cfg.seed, 2, iter);
        let picks = sample_pixels(&active, cfg.batch_rays, &mut rng);
        let batch = Stage2Batch {
            rays: picks.iter().map(|&(v, p)| active[v].pixel_ray(p)).collect(),
            target: picks.iter().map(|&(v, p)| active[v].target[p]).collect(),
            background: picks.iter().map(|&(v, p)| active[v].background[p]).collect(),
            depth_gt: picks.iter().map(|&(v, p)| active[v].depth_gt[p]).collect(),
            depth_mask: picks.iter().map(|&(v, p)| active[v].coverage[p]).collect(),
        };
        let w = cfg.weights.stage2_at(iter);
        let patch = (w.clip > 0.0 && semantic.is_some()).then(|| {
            let v = active[rng.random_range(0..active.len())];
            patch_batch(v, &v.mesh_color, cfg.patch_size, &mut rng)
        });
        let q = Quantization {
            iter,
            tau: cfg.tau_schedule.tau_at(iter),
            mode: mode_for(iter, cfg.switch_iter),
            sampler,
        };
        let sem: Option<&mut dyn SemanticLoss> = match semantic {
            Some(ref mut s) => Some(&mut **s),
            None => None,
        };
        let eval = stage2_objective(spec, &density, &logits, palette, &batch, patch.as_ref(), sem, &w, &q, &opts, exec);
        if !eval.total.is_finite() {
            return Err(TrainError::Diverged { stage: 2, iter });
        }
        let lr_d = cfg.lr_decay.lr_at(cfg.lr_density_s2, iter, cfg.stage2_iters);
        let lr_l = cfg.lr_decay.lr_at(cfg.lr_logit_s2, iter, cfg.stage2_iters);
        adam_d.step(&mut density.raw, &eval.d_density, lr_d);
        adam_l.step(&mut logits.values, &eval.d_logits, lr_l);
        let rec = Stage2Record {
            iter,
            total: eval.total,
            parts: eval.parts,
            tau: q.tau,
            mode: q.mode,
            lambda_depth: w.depth,
            lambda_clip: w.clip,
            active_views: active.len(),
            semantic: eval.semantic,
        };
        observer.stage2(&rec);
        last = Some(rec);
        if cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 {
            observer.checkpoint(Checkpoint::Stage2 { iter: iter + 1, density: &density, logits: &logits });
        }
    }
    Ok(Stage2Output { density, logits, last })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{box_mesh, normalize_mesh, rasterize};
    use crate::math::Vec3;
    use crate::pixelart::generate_standin;
    use crate::voxgrid::{init_logits, make_grid_spec};

    fn cube_setup(w: usize, cs: usize) -> (GridSpec, crate::geometry::Mesh) {
        let (mesh, bbox) = normalize_mesh(box_mesh(Vec3::ZERO, Vec3::splat(1.0), [1.0, 0.0, 0.0])).unwrap();
        (make_grid_spec(&bbox, w, cs).unwrap(), mesh)
    }

    fn stage1_views(spec: &GridSpec, mesh: &crate::geometry::Mesh) -> Vec<Stage1View> {
        stage1_cameras(spec)
            .unwrap()
            .into_iter()
            .map(|c| Stage1View::from_raster(c, &rasterize(mesh, &c), WHITE))
            .collect()
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let (spec, mesh) = cube_setup(8, 1);
        let cfg = TrainConfig { stage1_iters: 0, ..Default::default() };
        let out = train_stage1::<f32, _>(&stage1_views(&spec, &mesh), &spec, &cfg, &Sequential, &mut ()).unwrap();
        let (d, c) = initial_stage1::<f32>(&spec, &cfg);
        assert_eq!(out.density, d);
        assert_eq!(out.color, c);
    }

    #[test]
    fn default_config_values() {
        let c = TrainConfig::default();
        assert_eq!((c.stage1_iters, c.stage2_iters, c.batch_rays), (8000, 6500, 8192));
        assert_eq!((c.lr_density_s1, c.lr_color_s1, c.lr_density_s2, c.lr_logit_s2), (0.1, 0.1, 5e-3, 0.1));
        assert_eq!(c.front_only_after, 4500);
        assert_eq!(c.active_views(4499).len(), 6);
        assert_eq!(c.active_views(4600), &[CanonicalView::Front]);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn scaled_schedule_keeps_fractions() {
        let c = TrainConfig::default().with_scaled_stage2(1300);
        assert_eq!(c.front_only_after, 900);
        assert_eq!(c.switch_iter, 600);
        assert_eq!(c.weights.clip_until, 1200);
        assert_eq!(c.weights.depth_switch_iter, 900);
        assert!(c.validate().is_ok());
        let z = TrainConfig::default().with_scaled_stage2(0);
        assert_eq!(z.front_only_after, 0);
        assert!(z.validate().is_ok());
    }

    #[test]
    fn red_cube_stage1_fits_front_view() {
        let (spec, mesh) = cube_setup(16, 1);
        let views = stage1_views(&spec, &mesh);
        let cfg = TrainConfig { stage1_iters: 2000, batch_rays: 1024, ..Default::default() };
        let out = train_stage1::<f32, _>(&views, &spec, &cfg, &Sequential, &mut ()).unwrap();
        let front = &views[0];
        let opts = RenderOptions { min_transmittance: 0.0, keep_cache: false };
        let rays: Vec<Ray> = (0..front.camera.pixel_count()).map(|p| front.pixel_ray(p)).collect();
        let outs = objective::render_rays(&spec, &out.density, &out.color.colors(), &rays, &opts, &Sequential);
        let mse: f64 = outs
            .iter()
            .zip(&front.target)
            .map(|(o, t)| {
                let c = o.composite(WHITE);
                (0..3).map(|k| (c[k] - t[k]).powi(2)).sum::<f64>() / 3.0
            })
            .sum::<f64>()
            / outs.len() as f64;
        assert!(mse < 1e-3, "{mse}");
    }

    struct Log(Vec<Stage2Record>);

    impl TrainObserver<f64> for Log {
        fn stage2(&mut self, rec: &Stage2Record) {
            self.0.push(rec.clone());
        }
    }

    #[test]
    fn stage2_is_deterministic_and_follows_schedule() {
        let (spec, mesh) = cube_setup(8, 2);
        let palette = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let views: Vec<Stage2View> = CanonicalView::ALL
            .iter()
            .map(|&v| {
                let cam = spec.canonical_camera(v).unwrap();
                let r = rasterize(&mesh, &cam);
                let art = generate_standin(&r, spec.cell_size, Some(&palette)).unwrap();
                Stage2View::new(v, cam, &r, &art).unwrap()
            })
            .collect();
        let cfg = TrainConfig { batch_rays: 64, patch_size: 8, ..TrainConfig::default() }.with_scaled_stage2(130);
        let density = DensityGrid::<f64>::filled(&spec, 1.0);
        let rgb = ColorGrid::<f64>::filled(&spec, 0.0);
        let logits = init_logits(&spec, &rgb, &palette, 5.0).unwrap();
        let run = || {
            let mut sem = crate::embed::CosineLoss(crate::embed::BuiltinEmbedder);
            let mut log = Log(Vec::new());
            let out = train_stage2(
                &views, &spec, &palette, density.clone(), logits.clone(), &cfg, Some(&mut sem), &Sequential, &mut log,
            )
            .unwrap();
            (out.logits, log.0)
        };
        let (a, log) = run();
        let (b, _) = run();
        assert_eq!(a, b);
        assert_eq!(log.len(), 130);
        for r in &log {
            assert_eq!(r.tau, cfg.tau_schedule.tau_at(r.iter));
            assert_eq!(r.mode, mode_for(r.iter, cfg.switch_iter));
            assert_eq!(r.active_views, cfg.active_views(r.iter).len());
            assert_eq!(r.lambda_clip, cfg.weights.clip_at(r.iter));
            let want = if r.lambda_clip > 0.0 { SemanticStatus::Applied } else { SemanticStatus::Inactive };
            assert_eq!(r.semantic, want);
        }
    }
}
