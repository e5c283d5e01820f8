use alloc::vec;
use alloc::vec::Vec;

use super::{ColorHistogram, Palette, PaletteError, PaletteStrategy};
use crate::math::Rgb;

struct ColorBox {
    colors: Vec<Rgb>,
    weights: Vec<f64>,
}

impl ColorBox {
    /// (range, channel) of the widest channel; lowest channel wins ties.
    fn widest(&self) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for ch in 0..3 {
            let lo = self.colors.iter().map(|c| c[ch]).fold(f64::INFINITY, f64::min);
            let hi = self.colors.iter().map(|c| c[ch]).fold(f64::NEG_INFINITY, f64::max);
            if hi - lo > best.0 {
                best = (hi - lo, ch);
            }
        }
        best
    }

    fn mean(&self) -> Rgb {
        // c * w / w can round away from c.
        if let [only] = self.colors[..] {
            return only;
        }
        let total: f64 = self.weights.iter().sum();
        let mut m = [0.0; 3];
        for (c, w) in self.colors.iter().zip(&self.weights) {
            for k in 0..3 {
                m[k] += c[k] * w;
            }
        }
        m.map(|v| v / total)
    }

    fn split(self, ch: usize) -> (ColorBox, ColorBox) {
        let mut order: Vec<usize> = (0..self.colors.len()).collect();
        order.sort_by(|&a, &b| {
            let (ca, cb) = (&self.colors[a], &self.colors[b]);
            ca[ch].total_cmp(&cb[ch]).then_with(|| {
                ca[0].total_cmp(&cb[0]).then(ca[1].total_cmp(&cb[1])).then(ca[2].total_cmp(&cb[2]))
            })
        });
        let total: f64 = self.weights.iter().sum();
        let mut acc = 0.0;
        let mut cut = order.len() - 1;
        for (pos, &i) in order.iter().enumerate() {
            acc += self.weights[i];
            if acc >= 0.5 * total {
                cut = pos + 1;
                break;
            }
        }
        let cut = cut.clamp(1, order.len() - 1);
        let take = |idx: &[usize]| ColorBox {
            colors: idx.iter().map(|&i| self.colors[i]).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
        };
        (take(&order[..cut]), take(&order[cut..]))
    }
}

/// Median cut on a weighted histogram: split the box with the widest channel
/// range at the weighted median of that channel until `c` boxes exist or no
/// box holds two distinct colors. Returns the per-box weighted means.
pub fn median_cut_colors(hist: &ColorHistogram, c: usize) -> Vec<Rgb> {
    if hist.distinct() == 0 || c == 0 {
        return Vec::new();
    }
    let mut boxes = vec![ColorBox { colors: hist.colors.clone(), weights: hist.weights.clone() }];
    while boxes.len() < c {
        let mut target: Option<(usize, f64, usize)> = None;
        for (i, b) in boxes.iter().enumerate() {
            if b.colors.len() < 2 {
                continue;
            }
            let (range, ch) = b.widest();
            if target.is_none_or(|(_, r, _)| range > r) {
                target = Some((i, range, ch));
            }
        }
        let Some((i, _, ch)) = target else { break };
        let (lo, hi) = boxes.remove(i).split(ch);
        boxes.insert(i, hi);
        boxes.insert(i, lo);
    }
    boxes.iter().map(ColorBox::mean).collect()
}

pub fn extract_median_cut(pixels: &[Rgb], c: usize) -> Result<Palette, PaletteError> {
    let hist = ColorHistogram::from_pixels(pixels);
    hist.require(c)?;
    Palette::new(median_cut_colors(&hist, c), PaletteStrategy::MedianCut, 0)
}
