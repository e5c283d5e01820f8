//! Training objectives. Each returns its value and the gradient with respect
//! to its inputs; weighting happens in [`LossWeights`] and the trainer.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::embed::{EmbedError, Patch, SemanticLoss};
use crate::math::Rgb;

/// Mean over rays of the squared error summed over channels.
pub fn pixel_loss(rendered: &[Rgb], target: &[Rgb]) -> (f64, Vec<Rgb>) {
    let b = rendered.len();
    if b == 0 {
        return (0.0, Vec::new());
    }
    let mut loss = 0.0;
    let grad = rendered
        .iter()
        .zip(target)
        .map(|(r, t)| {
            core::array::from_fn(|k| {
                let d = r[k] - t[k];
                loss += d * d;
                2.0 * d / b as f64
            })
        })
        .collect();
    (loss / b as f64, grad)
}

/// Opacity above which a ray's depth is supervised.
pub const DEPTH_ALPHA_MIN: f64 = 0.1;

/// Mean absolute depth error over rays with `mask` set and `ᾱ > 0.1`.
pub fn depth_loss(depth: &[f64], gt: &[f64], mask: &[bool], acc_alpha: &[f64]) -> (f64, Vec<f64>) {
    let valid: Vec<bool> =
        mask.iter().zip(acc_alpha).map(|(&m, &a)| m && a > DEPTH_ALPHA_MIN).collect();
    let count = valid.iter().filter(|&&v| v).count();
    let mut grad = vec![0.0; depth.len()];
    if count == 0 {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for i in 0..depth.len() {
        if valid[i] {
            let d = depth[i] - gt[i];
            loss += d.abs();
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[i] = sign / count as f64;
        }
    }
    (loss / count as f64, grad)
}

/// Mean over the batch of `(M · ᾱ)²`, with `background[i]` the mask value.
pub fn alpha_loss(acc_alpha: &[f64], background: &[bool]) -> (f64, Vec<f64>) {
    let b = acc_alpha.len();
    if b == 0 {
        return (0.0, Vec::new());
    }
    let mut loss = 0.0;
    let grad = acc_alpha
        .iter()
        .zip(background)
        .map(|(&a, &m)| {
            if m {
                loss += a * a;
                2.0 * a / b as f64
            } else {
                0.0
            }
        })
        .collect();
    (loss / b as f64, grad)
}

/// Squared differences of activated density between face-adjacent voxels,
/// averaged per axis and then over the axes that have at least one pair.
pub fn tv_loss(density: &[f64], dims: [usize; 3]) -> (f64, Vec<f64>) {
    let [nx, ny, nz] = dims;
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let mut grad = vec![0.0; density.len()];
    let pairs = [(nx - 1) * ny * nz, nx * (ny - 1) * nz, nx * ny * (nz - 1)];
    let axes = pairs.iter().filter(|&&p| p > 0).count();
    if axes == 0 {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for (axis, &count) in pairs.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let w = 1.0 / (count * axes) as f64;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let (x2, y2, z2) = match axis {
                        0 => (x + 1, y, z),
                        1 => (x, y + 1, z),
                        _ => (x, y, z + 1),
                    };
                    if x2 >= nx || y2 >= ny || z2 >= nz {
                        continue;
                    }
                    let (a, b) = (idx(x, y, z), idx(x2, y2, z2));
                    let d = density[b] - density[a];
                    loss += w * d * d;
                    grad[b] += 2.0 * w * d;
                    grad[a] -= 2.0 * w * d;
                }
            }
        }
    }
    (loss, grad)
}

pub const ENTROPY_CLAMP: f64 = 1e-6;

/// Mean binary entropy of the accumulated opacity.
pub fn bg_entropy_loss(acc_alpha: &[f64]) -> (f64, Vec<f64>) {
    let b = acc_alpha.len();
    if b == 0 {
        return (0.0, Vec::new());
    }
    let mut loss = 0.0;
    let grad = acc_alpha
        .iter()
        .map(|&a| {
            let c = a.clamp(ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP);
            loss -= c * c.ln() + (1.0 - c) * (1.0 - c).ln();
            if a == c {
                ((1.0 - c) / c).ln() / b as f64
            } else {
                0.0
            }
        })
        .collect();
    (loss / b as f64, grad)
}

/// `1 − cos(e(rendered), e(target))` through the given embedder.
pub fn semantic_loss(
    rendered: &Patch,
    target: &Patch,
    embedder: &mut dyn SemanticLoss,
) -> Result<(f64, Vec<Rgb>), EmbedError> {
    embedder.loss_and_grad(rendered, target)
}

/// Loss weights with their iteration schedules.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    pub pixel: f64,
    pub depth: f64,
    /// Depth weight from `depth_switch_iter` on.
    pub depth_late: f64,
    pub depth_switch_iter: u64,
    pub alpha: f64,
    pub clip: f64,
    /// The semantic term is active for iterations below this.
    pub clip_until: u64,
    pub bg_entropy: f64,
    pub density_tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            pixel: 10.0,
            depth: 20.0,
            depth_late: 30.0,
            depth_switch_iter: 4500,
            alpha: 20.0,
            clip: 1.0,
            clip_until: 6000,
            bg_entropy: 0.5,
            density_tv: 0.0,
        }
    }
}

/// Stage-2 weights in effect at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Weights {
    pub pixel: f64,
    pub depth: f64,
    pub alpha: f64,
    pub clip: f64,
}

impl LossWeights {
    pub fn depth_at(&self, iter: u64) -> f64 {
        if iter < self.depth_switch_iter {
            self.depth
        } else {
            self.depth_late
        }
    }

    pub fn clip_at(&self, iter: u64) -> f64 {
        if iter < self.clip_until {
            self.clip
        } else {
            0.0
        }
    }

    pub fn stage2_at(&self, iter: u64) -> Stage2Weights {
        Stage2Weights { pixel: self.pixel, depth: self.depth_at(iter), alpha: self.alpha, clip: self.clip_at(iter) }
    }

    pub fn is_valid(&self) -> bool {
        [self.pixel, self.depth, self.depth_late, self.alpha, self.clip, self.bg_entropy, self.density_tv]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
    }
}

/// Unweighted loss values of one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub render: f64,
    pub tv: f64,
    pub bg_entropy: f64,
    pub pixel: f64,
    pub depth: f64,
    pub alpha: f64,
    pub semantic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

/// Weighted sum of the parts used by `stage` at `iter`.
pub fn total_loss(stage: Stage, iter: u64, parts: &LossParts, w: &LossWeights) -> f64 {
    match stage {
        Stage::One => parts.render + w.density_tv * parts.tv + w.bg_entropy * parts.bg_entropy,
        Stage::Two => {
            let s = w.stage2_at(iter);
            s.pixel * parts.pixel + s.depth * parts.depth + s.alpha * parts.alpha + s.clip * parts.semantic
        }
    }
}
