use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{maxmin_pick, quantization_energy, ColorHistogram, Palette, PaletteError, PaletteStrategy};
use crate::math::Rgb;

const T0: f64 = 0.1;
const COOLING: f64 = 0.95;

/// Simulated annealing over `c`-subsets of the distinct colors, started from
/// the max-min picks. A move swaps one palette entry for a random unused
/// color; Metropolis acceptance uses the per-pixel energy change. The best
/// subset visited is returned.
pub fn extract_simanneal(pixels: &[Rgb], c: usize, seed: u64, iters: usize) -> Result<Palette, PaletteError> {
    let hist = ColorHistogram::from_pixels(pixels);
    hist.require(c)?;
    let n = hist.distinct();
    let total = hist.total_weight();

    let mut state = maxmin_pick(&hist, c);
    let mut in_palette = vec![false; n];
    for &i in &state {
        in_palette[i] = true;
    }
    let colors_of = |s: &[usize]| -> Vec<Rgb> { s.iter().map(|&i| hist.colors[i]).collect() };
    let mut energy = quantization_energy(&hist, &colors_of(&state));
    let mut best = (state.clone(), energy);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cool_every = (iters / 100).max(1);
    let mut temp = T0;
    let free = n - c;

    for step in 0..iters {
        if step > 0 && step % cool_every == 0 {
            temp *= COOLING;
        }
        if free == 0 {
            break;
        }
        let slot = rng.random_range(0..c);
        let r = rng.random_range(0..free);
        let candidate = (0..n).filter(|&i| !in_palette[i]).nth(r).expect("free colors exist");

        let old = state[slot];
        state[slot] = candidate;
        let e = quantization_energy(&hist, &colors_of(&state));
        let delta = (e - energy) / total;
        let accept = delta <= 0.0 || rng.random::<f64>() < (-delta / temp).exp();
        if accept {
            in_palette[old] = false;
            in_palette[candidate] = true;
            energy = e;
            if e < best.1 {
                best = (state.clone(), e);
            }
        } else {
            state[slot] = old;
        }
    }

    Palette::new(colors_of(&best.0), PaletteStrategy::SimAnneal, seed)
}
