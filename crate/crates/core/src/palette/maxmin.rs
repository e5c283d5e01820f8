use alloc::vec::Vec;

use super::{ColorHistogram, Palette, PaletteError, PaletteStrategy};
use crate::math::{rgb_dist2, Rgb};

/// Greedy farthest-point picking over the histogram's distinct colors.
///
/// The first pick is the color farthest from the pixel mean; every later pick
/// maximizes the minimum distance to the colors already picked. Ties go to
/// the lexicographically lowest (r, g, b), which is histogram order. Returns
/// indices into `hist.colors`.
pub fn maxmin_pick(hist: &ColorHistogram, c: usize) -> Vec<usize> {
    let n = hist.distinct();
    let c = c.min(n);
    let mut picked = Vec::with_capacity(c);
    if c == 0 {
        return picked;
    }
    let mean = hist.mean();
    let first = argmax_first(hist.colors.iter().map(|col| rgb_dist2(col, &mean)));
    picked.push(first);
    let mut nearest: Vec<f64> = hist.colors.iter().map(|col| rgb_dist2(col, &hist.colors[first])).collect();
    while picked.len() < c {
        let next = argmax_first(nearest.iter().copied());
        picked.push(next);
        let p = hist.colors[next];
        for (d, col) in nearest.iter_mut().zip(&hist.colors) {
            *d = d.min(rgb_dist2(col, &p));
        }
    }
    picked
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn extract_maxmin(pixels: &[Rgb], c: usize) -> Result<Palette, PaletteError> {
    let hist = ColorHistogram::from_pixels(pixels);
    hist.require(c)?;
    let colors = maxmin_pick(&hist, c).into_iter().map(|i| hist.colors[i]).collect();
    Palette::new(colors, PaletteStrategy::MaxMin, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn grayscale_line_picks_extremes() {
        let p = extract_maxmin(&[[0.0; 3], [0.5; 3], [1.0; 3]], 2).unwrap();
        let mut c = p.colors;
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(c, vec![[0.0; 3], [1.0; 3]]);
    }

    #[test]
    fn exhausts_distinct_colors() {
        let px = [[0.1, 0.2, 0.3], [0.9, 0.1, 0.1], [0.3, 0.8, 0.2], [0.5, 0.5, 0.5]];
        let mut got = extract_maxmin(&px, 4).unwrap().colors;
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want = px.to_vec();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn duplicates_collapse() {
        let red = [1.0, 0.0, 0.0];
        let blue = [0.0, 0.0, 1.0];
        let mut got = extract_maxmin(&[red, red, blue], 2).unwrap().colors;
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, vec![blue, red]);
    }
}
