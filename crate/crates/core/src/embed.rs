//! Patch embeddings for the semantic loss.
//!
//! The built-in embedder concatenates 8×8 average-pooled RGB (192 values)
//! with a soft orientation histogram of luminance gradients over a 4×4 cell
//! layout with 8 bins (128 values), then L2-normalizes. Every stage is
//! differentiable, and [`Embedder::vjp`] returns exact pixel gradients.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::math::Rgb;

/// Square RGB patch, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub pixels: Vec<Rgb>,
}

impl Patch {
    pub fn filled(size: usize, color: Rgb) -> Self {
        Patch { size, pixels: vec![color; size * size] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.size + x]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("patch sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("patch of size {0} is too small")]
    TooSmall(usize),
    #[error("embedder returned a non-finite value")]
    NonFinite,
    #[error("embedder failed: {0}")]
    Failed(String),
}

/// A differentiable map from a patch to a unit vector.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed(&self, patch: &Patch) -> Vec<f64>;
    /// Pullback of `cotangent` (dL/d embedding) to dL/d pixels.
    fn vjp(&self, patch: &Patch, cotangent: &[f64]) -> Vec<Rgb>;
    /// Smallest accepted patch side.
    fn min_size(&self) -> usize {
        1
    }
}

/// The semantic objective `1 − cos(e(rendered), e(target))` with its pixel
/// gradient. External implementations may fail; callers skip the term then.
pub trait SemanticLoss {
    fn loss_and_grad(&mut self, rendered: &Patch, target: &Patch) -> Result<(f64, Vec<Rgb>), EmbedError>;
}

/// Cosine loss through any in-process [`Embedder`] whose output is unit norm.
#[derive(Debug, Clone, Default)]
pub struct CosineLoss<E>(pub E);

impl<E: Embedder> SemanticLoss for CosineLoss<E> {
    fn loss_and_grad(&mut self, rendered: &Patch, target: &Patch) -> Result<(f64, Vec<Rgb>), EmbedError> {
        if rendered.size != target.size {
            return Err(EmbedError::SizeMismatch(rendered.size, target.size));
        }
        if rendered.size < self.0.min_size() {
            return Err(EmbedError::TooSmall(rendered.size));
        }
        let a = self.0.embed(rendered);
        let b = self.0.embed(target);
        let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let cot: Vec<f64> = b.iter().map(|y| -y).collect();
        let grad = self.0.vjp(rendered, &cot);
        if !cos.is_finite() || grad.iter().flatten().any(|g| !g.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok((1.0 - cos, grad))
    }
}

const POOL: usize = 8;
const CELLS: usize = 4;
const BINS: usize = 8;
const NORM_EPS: f64 = 1e-12;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

pub const BUILTIN_DIM: usize = POOL * POOL * 3 + CELLS * CELLS * BINS;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BuiltinEmbedder;

/// `[start, end)` of bin `i` when `n` pixels are split into `parts` bins.
#[inline]
fn span(i: usize, n: usize, parts: usize) -> (usize, usize) {
    (i * n / parts, (i + 1) * n / parts)
}

struct Gradients {
    gx: Vec<f64>,
    gy: Vec<f64>,
}

fn luminance_gradients(p: &Patch) -> Gradients {
    let n = p.size;
    let luma: Vec<f64> = p.pixels.iter().map(|c| LUMA[0] * c[0] + LUMA[1] * c[1] + LUMA[2] * c[2]).collect();
    let mut gx = vec![0.0; n * n];
    let mut gy = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(n - 1));
            let (ym, yp) = (y.saturating_sub(1), (y + 1).min(n - 1));
            gx[y * n + x] = 0.5 * (luma[y * n + xp] - luma[y * n + xm]);
            gy[y * n + x] = 0.5 * (luma[yp * n + x] - luma[ym * n + x]);
        }
    }
    Gradients { gx, gy }
}

fn bin_dirs() -> [(f64, f64); BINS] {
    core::array::from_fn(|b| {
        let theta = 2.0 * core::f64::consts::PI * b as f64 / BINS as f64;
        (theta.cos(), theta.sin())
    })
}

impl BuiltinEmbedder {
    /// Embedding before normalization.
    fn features(&self, p: &Patch) -> Vec<f64> {
        let n = p.size;
        let mut f = vec![0.0; BUILTIN_DIM];
        for by in 0..POOL {
            let (y0, y1) = span(by, n, POOL);
            for bx in 0..POOL {
                let (x0, x1) = span(bx, n, POOL);
                let area = ((y1 - y0) * (x1 - x0)) as f64;
                let base = 3 * (by * POOL + bx);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let c = p.at(x, y);
                        for k in 0..3 {
                            f[base + k] += c[k] / area;
                        }
                    }
                }
            }
        }
        let g = luminance_gradients(p);
        let dirs = bin_dirs();
        let off = POOL * POOL * 3;
        for cy in 0..CELLS {
            let (y0, y1) = span(cy, n, CELLS);
            for cx in 0..CELLS {
                let (x0, x1) = span(cx, n, CELLS);
                let area = ((y1 - y0) * (x1 - x0)) as f64;
                let base = off + BINS * (cy * CELLS + cx);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let (gx, gy) = (g.gx[y * n + x], g.gy[y * n + x]);
                        for (b, (c, s)) in dirs.iter().enumerate() {
                            let proj = (gx * c + gy * s).max(0.0);
                            f[base + b] += proj * proj / area;
                        }
                    }
                }
            }
        }
        f
    }
}

fn norm(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() + NORM_EPS).sqrt()
}

impl Embedder for BuiltinEmbedder {
    fn dim(&self) -> usize {
        BUILTIN_DIM
    }

    fn min_size(&self) -> usize {
        POOL
    }

    fn embed(&self, patch: &Patch) -> Vec<f64> {
        let f = self.features(patch);
        let n = norm(&f);
        f.into_iter().map(|x| x / n).collect()
    }

    fn vjp(&self, p: &Patch, cotangent: &[f64]) -> Vec<Rgb> {
        let n = p.size;
        let f = self.features(p);
        let nrm = norm(&f);
        let e: Vec<f64> = f.iter().map(|x| x / nrm).collect();
        let proj: f64 = e.iter().zip(cotangent).map(|(a, b)| a * b).sum();
        let df: Vec<f64> = cotangent.iter().zip(&e).map(|(c, ei)| (c - ei * proj) / nrm).collect();

        let mut out = vec![[0.0; 3]; n * n];
        for by in 0..POOL {
            let (y0, y1) = span(by, n, POOL);
            for bx in 0..POOL {
                let (x0, x1) = span(bx, n, POOL);
                let area = ((y1 - y0) * (x1 - x0)) as f64;
                let base = 3 * (by * POOL + bx);
                for y in y0..y1 {
                    for x in x0..x1 {
                        for k in 0..3 {
                            out[y * n + x][k] += df[base + k] / area;
                        }
                    }
                }
            }
        }

        let g = luminance_gradients(p);
        let dirs = bin_dirs();
        let off = POOL * POOL * 3;
        let mut d_luma = vec![0.0; n * n];
        for cy in 0..CELLS {
            let (y0, y1) = span(cy, n, CELLS);
            for cx in 0..CELLS {
                let (x0, x1) = span(cx, n, CELLS);
                let area = ((y1 - y0) * (x1 - x0)) as f64;
                let base = off + BINS * (cy * CELLS + cx);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let i = y * n + x;
                        let (gx, gy) = (g.gx[i], g.gy[i]);
                        let (mut dgx, mut dgy) = (0.0, 0.0);
                        for (b, (c, s)) in dirs.iter().enumerate() {
                            let pr = (gx * c + gy * s).max(0.0);
                            let d = 2.0 * pr * df[base + b] / area;
                            dgx += d * c;
                            dgy += d * s;
                        }
                        let (xm, xp) = (x.saturating_sub(1), (x + 1).min(n - 1));
                        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(n - 1));
                        d_luma[y * n + xp] += 0.5 * dgx;
                        d_luma[y * n + xm] -= 0.5 * dgx;
                        d_luma[yp * n + x] += 0.5 * dgy;
                        d_luma[ym * n + x] -= 0.5 * dgy;
                    }
                }
            }
        }
        for (o, dl) in out.iter_mut().zip(&d_luma) {
            for k in 0..3 {
                o[k] += dl * LUMA[k];
            }
        }
        out
    }
}

/// Flattened pixels, normalized. Useful as a transparent test embedder.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IdentityEmbedder;

impl Embedder for IdentityEmbedder {
    fn dim(&self) -> usize {
        0
    }

    fn embed(&self, patch: &Patch) -> Vec<f64> {
        let flat: Vec<f64> = patch.pixels.iter().flatten().copied().collect();
        let n = norm(&flat);
        flat.into_iter().map(|x| x / n).collect()
    }

    fn vjp(&self, patch: &Patch, cotangent: &[f64]) -> Vec<Rgb> {
        let flat: Vec<f64> = patch.pixels.iter().flatten().copied().collect();
        let n = norm(&flat);
        let proj: f64 = flat.iter().zip(cotangent).map(|(a, b)| a / n * b).sum();
        let d: Vec<f64> = cotangent.iter().zip(&flat).map(|(c, f)| (c - f / n * proj) / n).collect();
        d.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_patch(n: usize, seed: u64) -> Patch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Patch { size: n, pixels: (0..n * n).map(|_| [rng.random(), rng.random(), rng.random()]).collect() }
    }

    fn structured(n: usize, shift: usize) -> Patch {
        let pixels = (0..n * n)
            .map(|i| {
                let (x, y) = ((i % n + n - shift) % n, i / n);
                let on = (x / 10 + y / 10) % 2 == 0 || x * x + y * y < 300;
                if on { [0.9, 0.3, 0.1] } else { [0.1, 0.2, 0.8] }
            })
            .collect();
        Patch { size: n, pixels }
    }

    #[test]
    fn constant_patch() {
        let e = BuiltinEmbedder.embed(&Patch::filled(16, [0.2, 0.4, 0.6]));
        assert!(e[192..].iter().all(|&v| v == 0.0));
        let n: f64 = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        assert!((e[0] / e[1] - 0.5).abs() < 1e-12 && (e[2] / e[1] - 1.5).abs() < 1e-12);
        assert_eq!(e[3..6], e[0..3]);
    }

    #[test]
    fn identical_patches_have_zero_loss() {
        let p = random_patch(16, 1);
        let (l, _) = CosineLoss(BuiltinEmbedder).loss_and_grad(&p, &p.clone()).unwrap();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn orthogonal_under_identity_embedder() {
        let a = Patch { size: 1, pixels: vec![[1.0, 0.0, 0.0]] };
        let b = Patch { size: 1, pixels: vec![[0.0, 1.0, 0.0]] };
        let (l, _) = CosineLoss(IdentityEmbedder).loss_and_grad(&a, &b).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }

    fn check_gradient(e: impl Embedder + Clone, n: usize, tol: f64) {
        let a = random_patch(n, 2);
        let b = random_patch(n, 3);
        let mut loss = CosineLoss(e);
        let (_, grad) = loss.loss_and_grad(&a, &b).unwrap();
        let scale = grad.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
        let mut central = |i: usize, k: usize, h: f64| {
            let mut p = a.clone();
            p.pixels[i][k] += h;
            let mut m = a.clone();
            m.pixels[i][k] -= h;
            (loss.loss_and_grad(&p, &b).unwrap().0 - loss.loss_and_grad(&m, &b).unwrap().0) / (2.0 * h)
        };
        for i in (0..n * n).step_by(7) {
            for k in 0..3 {
                // Richardson extrapolation keeps truncation error below roundoff.
                let fd = (4.0 * central(i, k, 5e-4) - central(i, k, 1e-3)) / 3.0;
                let g = grad[i][k];
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-3 * scale);
                assert!(rel < tol, "pixel {i} ch {k}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn builtin_gradient_matches_finite_differences() {
        check_gradient(BuiltinEmbedder, 8, 1e-3);
        check_gradient(BuiltinEmbedder, 80, 1e-3);
    }

    #[test]
    fn identity_gradient_matches_finite_differences() {
        check_gradient(IdentityEmbedder, 5, 1e-5);
    }

    #[test]
    fn unit_norm_and_translation_sensitivity() {
        for seed in 0..5 {
            let e = BuiltinEmbedder.embed(&random_patch(20, seed));
            let n: f64 = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        let a = BuiltinEmbedder.embed(&structured(80, 0));
        let b = BuiltinEmbedder.embed(&structured(80, 4));
        let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!(cos < 1.0 - 1e-4, "{cos}");
    }
}
