use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ColorHistogram, Palette, PaletteError, PaletteStrategy};
use crate::math::{nearest_color, rgb_dist2, Rgb};

const MAX_ITERS: usize = 100;
const SHIFT_TOL: f64 = 1e-6;

/// Lloyd's algorithm with k-means++ seeding on weighted points.
///
/// Requires at least `k` distinct points. Empty clusters are re-seeded with
/// the point that currently has the largest weighted squared error.
pub fn weighted_kmeans(colors: &[Rgb], weights: &[f64], k: usize, seed: u64) -> Vec<Rgb> {
    let n = colors.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Rgb> = Vec::with_capacity(k);

    let pick = |rng: &mut ChaCha8Rng, scores: &[f64]| -> usize {
        let total: f64 = scores.iter().sum();
        let mut r = rng.random::<f64>() * total;
        for (i, s) in scores.iter().enumerate() {
            if *s > 0.0 {
                if r < *s {
                    return i;
                }
                r -= s;
            }
        }
        // Rounding fell off the end: last positive score.
        scores.iter().rposition(|s| *s > 0.0).unwrap_or(0)
    };

    centers.push(colors[pick(&mut rng, weights)]);
    let mut d2: Vec<f64> = colors.iter().map(|c| rgb_dist2(c, &centers[0])).collect();
    while centers.len() < k {
        let scores: Vec<f64> = d2.iter().zip(weights).map(|(d, w)| d * w).collect();
        let next = colors[pick(&mut rng, &scores)];
        centers.push(next);
        for (d, c) in d2.iter_mut().zip(colors) {
            *d = d.min(rgb_dist2(c, &next));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..MAX_ITERS {
        for (a, c) in assign.iter_mut().zip(colors) {
            *a = nearest_color(c, &centers);
        }
        let mut sums = vec![[0.0f64; 3]; k];
        let mut mass = vec![0.0f64; k];
        for ((c, w), &a) in colors.iter().zip(weights).zip(&assign) {
            for ch in 0..3 {
                sums[a][ch] += c[ch] * w;
            }
            mass[a] += w;
        }
        let mut shift = 0.0f64;
        for j in 0..k {
            let new = if mass[j] > 0.0 {
                sums[j].map(|s| s / mass[j])
            } else {
                let worst = (0..n)
                    .max_by(|&a, &b| {
                        let ea = weights[a] * rgb_dist2(&colors[a], &centers[assign[a]]);
                        let eb = weights[b] * rgb_dist2(&colors[b], &centers[assign[b]]);
                        ea.total_cmp(&eb).then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                assign[worst] = j;
                colors[worst]
            };
            shift = shift.max(rgb_dist2(&new, &centers[j]).sqrt());
            centers[j] = new;
        }
        if shift < SHIFT_TOL {
            break;
        }
    }
    centers
}

pub fn extract_kmeans(pixels: &[Rgb], c: usize, seed: u64) -> Result<Palette, PaletteError> {
    let hist = ColorHistogram::from_pixels(pixels);
    hist.require(c)?;
    let centers = weighted_kmeans(&hist.colors, &hist.weights, c, seed);
    Palette::new(centers, PaletteStrategy::KMeans, seed)
}

/// K-means where colors rarer than the `boost_quantile` of the frequency
/// distribution are up-weighted so that, together, they weigh as much as the
/// median cluster of a plain k-means run.
pub fn extract_kmeans_rare_boost(
    pixels: &[Rgb],
    c: usize,
    seed: u64,
    boost_quantile: f64,
) -> Result<Palette, PaletteError> {
    let hist = ColorHistogram::from_pixels(pixels);
    hist.require(c)?;
    let plain = weighted_kmeans(&hist.colors, &hist.weights, c, seed);

    let mut sorted = hist.weights.clone();
    sorted.sort_by(f64::total_cmp);
    let q = boost_quantile.clamp(0.0, 1.0);
    let threshold = sorted[((sorted.len() - 1) as f64 * q).floor() as usize];
    let rare: Vec<bool> = hist.weights.iter().map(|w| *w < threshold).collect();
    let rare_weight: f64 = hist.weights.iter().zip(&rare).filter(|(_, &r)| r).map(|(w, _)| w).sum();

    let mut cluster_mass = vec![0.0; c];
    for (col, w) in hist.colors.iter().zip(&hist.weights) {
        cluster_mass[nearest_color(col, &plain)] += w;
    }
    cluster_mass.sort_by(f64::total_cmp);
    let median = if c % 2 == 1 {
        cluster_mass[c / 2]
    } else {
        0.5 * (cluster_mass[c / 2 - 1] + cluster_mass[c / 2])
    };

    let factor = if rare_weight > 0.0 { median / rare_weight } else { 1.0 };
    if factor <= 1.0 {
        return Palette::new(plain, PaletteStrategy::KMeansRareBoost, seed);
    }
    let weights: Vec<f64> =
        hist.weights.iter().zip(&rare).map(|(w, &r)| if r { w * factor } else { *w }).collect();
    let centers = weighted_kmeans(&hist.colors, &weights, c, seed);
    Palette::new(centers, PaletteStrategy::KMeansRareBoost, seed)
}
