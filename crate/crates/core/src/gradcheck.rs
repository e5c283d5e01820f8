//! Finite-difference checks of every loss through the full render path.
//!
//! Each term is evaluated on a seeded 4³ grid with 20 random rays (plus an
//! 8×8 patch for the semantic term). Analytic gradients come from the same
//! objective functions training uses, with parameters stored as `R`. The
//! oracle perturbs an `f64` copy of the parameters and uses Richardson
//! extrapolated central differences.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::{BuiltinEmbedder, CosineLoss, Patch};
use crate::geometry::{OrthoCamera, Ray};
use crate::losses::Stage2Weights;
use crate::math::{Aabb, Real, Rgb, Vec3};
use crate::quantizer::{GumbelSampler, SelectionMode};
use crate::render::RenderOptions;
use crate::train::objective::{
    render_rays, stage1_objective, stage2_objective, PatchBatch, Quantization, Stage1Batch, Stage1Weights,
    Stage2Batch,
};
use crate::train::Sequential;
use crate::voxgrid::{make_grid_spec, ColorGrid, DensityGrid, GridSpec, LogitGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Render,
    Pixel,
    Depth,
    Alpha,
    Tv,
    BgEntropy,
    Semantic,
    /// Every stage-1 term with nonzero weight.
    Stage1Total,
    /// Every stage-2 term with the default weights.
    Stage2Total,
}

impl Term {
    pub const ALL: [Term; 9] = [
        Term::Render,
        Term::Pixel,
        Term::Depth,
        Term::Alpha,
        Term::Tv,
        Term::BgEntropy,
        Term::Semantic,
        Term::Stage1Total,
        Term::Stage2Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::Render => "render",
            Term::Pixel => "pixel",
            Term::Depth => "depth",
            Term::Alpha => "alpha",
            Term::Tv => "tv",
            Term::BgEntropy => "bg-entropy",
            Term::Semantic => "semantic-builtin",
            Term::Stage1Total => "stage1-total",
            Term::Stage2Total => "stage2-total",
        }
    }

    pub fn from_name(s: &str) -> Option<Term> {
        Term::ALL.into_iter().find(|t| t.name() == s)
    }

    fn is_stage1(self) -> bool {
        matches!(self, Term::Render | Term::Tv | Term::BgEntropy | Term::Stage1Total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub rays: usize,
    pub grid: usize,
    pub colors: usize,
    /// Negates the analytic gradient of one term (negative control).
    pub fault: Option<Term>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { seed: 0, rays: 20, grid: 4, colors: 4, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermReport {
    pub term: Term,
    pub max_rel_error: f64,
    pub params: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Pass threshold for parameters stored as `R`.
pub fn tolerance<R: Real>() -> f64 {
    if R::NAME == "f32" {
        1e-3
    } else {
        1e-6
    }
}

/// Entries smaller than this fraction of the largest oracle entry are
/// compared against that floor instead of their own magnitude.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// Worst `|a − n| / max(|a|, |n|, floor)` over all entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (RELATIVE_FLOOR * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

struct Fixture {
    spec: GridSpec,
    density: Vec<f64>,
    color: Vec<f64>,
    logits: Vec<f64>,
    palette: Vec<Rgb>,
    s1: Stage1Batch,
    s2: Stage2Batch,
    patch: PatchBatch,
    quant: Quantization,
}

fn random_rgb(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.random(), rng.random(), rng.random()]
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let l = v.length();
        if l > 0.1 && l <= 1.0 {
            return v * (1.0 / l);
        }
    }
}

fn opts() -> RenderOptions {
    RenderOptions { min_transmittance: 0.0, keep_cache: true }
}

fn fixture(cfg: &GradCheckConfig) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bbox = Aabb::new(Vec3::splat(-0.5), Vec3::splat(0.5));
    let spec = make_grid_spec(&bbox, cfg.grid, 1).expect("valid fixture grid");
    let n = spec.voxel_count();
    let c = cfg.colors;
    let density: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..0.5)).collect();
    let color: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let logits: Vec<f64> = (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let palette: Vec<Rgb> = (0..c).map(|_| random_rgb(&mut rng)).collect();
    let d_grid = DensityGrid::from_raw(&spec, density.clone()).expect("sized");

    // Rays aimed through the box; the depth mask threshold must not sit
    // within reach of the finite-difference steps.
    let mut rays = Vec::new();
    let mut outs = Vec::new();
    while rays.len() < cfg.rays {
        let target = Vec3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
        let dir = random_unit(&mut rng);
        let ray = Ray { origin: target - dir * 2.0, dir };
        let o = render_rays(&spec, &d_grid, &alloc::vec![[0.5; 3]; n], &[ray], &opts(), &Sequential).remove(0);
        if (o.acc_alpha - crate::losses::DEPTH_ALPHA_MIN).abs() > 0.02 {
            rays.push(ray);
            outs.push(o);
        }
    }
    let s1 = Stage1Batch { rays: rays.clone(), targets: (0..rays.len()).map(|_| random_rgb(&mut rng)).collect() };
    let depth_gt = outs
        .iter()
        .map(|o| {
            let off = rng.random_range(0.2..0.5);
            if rng.random_bool(0.5) { o.depth + off } else { o.depth - off }
        })
        .collect();
    let s2 = Stage2Batch {
        target: (0..rays.len()).map(|_| random_rgb(&mut rng)).collect(),
        background: (0..rays.len()).map(|_| rng.random_bool(0.5)).collect(),
        depth_gt,
        depth_mask: alloc::vec![true; rays.len()],
        rays,
    };

    let view = random_unit(&mut rng);
    let up = view.cross(random_unit(&mut rng)).normalized();
    let cam = OrthoCamera::framing(view, up, &bbox, 1.0, 8).expect("valid patch camera");
    let patch_rays = (0..64).map(|i| cam.pixel_ray(i % 8, i / 8)).collect();
    let target = Patch { size: 8, pixels: (0..64).map(|_| random_rgb(&mut rng)).collect() };
    let patch = PatchBatch { rays: patch_rays, target };
    let quant = Quantization { iter: 0, tau: 0.7, mode: SelectionMode::Soft, sampler: GumbelSampler::new(cfg.seed) };
    Fixture { spec, density, color, logits, palette, s1, s2, patch, quant }
}

fn stage1_weights(term: Term) -> Stage1Weights {
    let mut w = Stage1Weights { render: 0.0, bg_entropy: 0.0, tv: 0.0 };
    match term {
        Term::Render => w.render = 1.0,
        Term::BgEntropy => w.bg_entropy = 1.0,
        Term::Tv => w.tv = 1.0,
        _ => w = Stage1Weights { render: 1.0, bg_entropy: 0.5, tv: 0.3 },
    }
    w
}

fn stage2_weights(term: Term) -> Stage2Weights {
    let mut w = Stage2Weights { pixel: 0.0, depth: 0.0, alpha: 0.0, clip: 0.0 };
    match term {
        Term::Pixel => w.pixel = 1.0,
        Term::Depth => w.depth = 1.0,
        Term::Alpha => w.alpha = 1.0,
        Term::Semantic => w.clip = 1.0,
        _ => w = Stage2Weights { pixel: 10.0, depth: 20.0, alpha: 20.0, clip: 1.0 },
    }
    w
}

fn to_r<R: Real>(v: &[f64]) -> Vec<R> {
    v.iter().map(|&x| R::from_f64(x)).collect()
}

/// Loss and gradient (density then second parameter block) of one term.
fn evaluate<R: Real>(fx: &Fixture, term: Term, density: &[R], second: &[R]) -> (f64, Vec<f64>) {
    let spec = &fx.spec;
    let d = DensityGrid::from_raw(spec, density.to_vec()).expect("sized");
    if term.is_stage1() {
        let c = ColorGrid::from_raw(spec, second.to_vec()).expect("sized");
        let e = stage1_objective(spec, &d, &c, &fx.s1, &stage1_weights(term), crate::train::WHITE, &opts(), &Sequential);
        let mut g = e.d_density;
        g.extend(e.d_color);
        (e.total, g)
    } else {
        let l = LogitGrid::from_values(spec, fx.palette.len(), second.to_vec()).expect("sized");
        let mut sem = CosineLoss(BuiltinEmbedder);
        let (patch, sem): (Option<&PatchBatch>, Option<&mut dyn crate::embed::SemanticLoss>) =
            if matches!(term, Term::Semantic | Term::Stage2Total) { (Some(&fx.patch), Some(&mut sem)) } else { (None, None) };
        let e = stage2_objective(
            spec,
            &d,
            &l,
            &fx.palette,
            &fx.s2,
            patch,
            sem,
            &stage2_weights(term),
            &fx.quant,
            &opts(),
            &Sequential,
        );
        let mut g = e.d_density;
        g.extend(e.d_logits);
        (e.total, g)
    }
}

const FD_STEP: f64 = 1e-3;

fn numeric_gradient(fx: &Fixture, term: Term, density: &[f64], second: &[f64]) -> Vec<f64> {
    let mut params: Vec<f64> = density.to_vec();
    params.extend_from_slice(second);
    let nd = density.len();
    let f = |p: &[f64]| evaluate::<f64>(fx, term, &p[..nd], &p[nd..]).0;
    let central = |p: &mut Vec<f64>, i: usize, h: f64| {
        let x = p[i];
        p[i] = x + h;
        let up = f(p);
        p[i] = x - h;
        let down = f(p);
        p[i] = x;
        (up - down) / (2.0 * h)
    };
    (0..params.len())
        .map(|i| {
            let coarse = central(&mut params, i, FD_STEP);
            let fine = central(&mut params, i, 0.5 * FD_STEP);
            (4.0 * fine - coarse) / 3.0
        })
        .collect()
}

pub fn check_term<R: Real>(cfg: &GradCheckConfig, term: Term) -> TermReport {
    let fx = fixture(cfg);
    let second = if term.is_stage1() { &fx.color } else { &fx.logits };
    // Parameters as stored by `R`; the oracle sees exactly the same values.
    let d_r: Vec<R> = to_r(&fx.density);
    let s_r: Vec<R> = to_r(second);
    let d64: Vec<f64> = d_r.iter().map(|x| x.to_f64()).collect();
    let s64: Vec<f64> = s_r.iter().map(|x| x.to_f64()).collect();
    let (_, mut analytic) = evaluate::<R>(&fx, term, &d_r, &s_r);
    if cfg.fault == Some(term) {
        analytic.iter_mut().for_each(|g| *g = -*g);
    }
    let numeric = numeric_gradient(&fx, term, &d64, &s64);
    let err = max_relative_error(&analytic, &numeric);
    let tol = tolerance::<R>();
    TermReport { term, max_rel_error: err, params: analytic.len(), tolerance: tol, passed: err < tol }
}

pub fn check_all<R: Real>(cfg: &GradCheckConfig) -> Vec<TermReport> {
    Term::ALL.iter().map(|&t| check_term::<R>(cfg, t)).collect()
}
