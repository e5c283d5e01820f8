//! Palette extraction from pooled pixel-art foreground colors.
//!
//! Every strategy works on a weighted histogram of distinct colors, uses plain
//! Euclidean distance in linear RGB, and is a pure function of its inputs
//! (including the seed where one is taken).

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::math::{rgb_dist2, Rgb};

mod anneal;
mod kmeans;
mod maxmin;
mod median_cut;

pub use anneal::extract_simanneal;
pub use kmeans::{extract_kmeans, extract_kmeans_rare_boost, weighted_kmeans};
pub use maxmin::{extract_maxmin, maxmin_pick};
pub use median_cut::{extract_median_cut, median_cut_colors};

pub const MIN_COLORS: usize = 2;
pub const MAX_COLORS: usize = 256;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PaletteError {
    #[error("insufficient distinct colors: {distinct} available, {requested} requested")]
    InsufficientColors { distinct: usize, requested: usize },
    #[error("palette size {0} outside 2..=256")]
    BadSize(usize),
    #[error("palette colors are not pairwise distinct")]
    Duplicate,
    #[error("unknown palette method {0:?}")]
    UnknownMethod(alloc::string::String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PaletteStrategy {
    #[cfg_attr(feature = "serde", serde(rename = "kmeans"))]
    KMeans,
    #[cfg_attr(feature = "serde", serde(rename = "kmeans-rare"))]
    KMeansRareBoost,
    #[cfg_attr(feature = "serde", serde(rename = "mediancut"))]
    MedianCut,
    #[cfg_attr(feature = "serde", serde(rename = "maxmin"))]
    MaxMin,
    #[cfg_attr(feature = "serde", serde(rename = "anneal"))]
    SimAnneal,
}

impl PaletteStrategy {
    pub const ALL: [PaletteStrategy; 5] = [
        PaletteStrategy::KMeans,
        PaletteStrategy::KMeansRareBoost,
        PaletteStrategy::MedianCut,
        PaletteStrategy::MaxMin,
        PaletteStrategy::SimAnneal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PaletteStrategy::KMeans => "kmeans",
            PaletteStrategy::KMeansRareBoost => "kmeans-rare",
            PaletteStrategy::MedianCut => "mediancut",
            PaletteStrategy::MaxMin => "maxmin",
            PaletteStrategy::SimAnneal => "anneal",
        }
    }

    pub fn from_name(s: &str) -> Result<Self, PaletteError> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| PaletteError::UnknownMethod(s.into()))
    }
}

impl core::fmt::Display for PaletteStrategy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered list of discrete colors and the strategy that produced it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Palette {
    pub colors: Vec<Rgb>,
    pub strategy: PaletteStrategy,
    pub seed: u64,
}

impl Palette {
    pub fn new(colors: Vec<Rgb>, strategy: PaletteStrategy, seed: u64) -> Result<Self, PaletteError> {
        if !(MIN_COLORS..=MAX_COLORS).contains(&colors.len()) {
            return Err(PaletteError::BadSize(colors.len()));
        }
        for i in 0..colors.len() {
            for j in 0..i {
                if colors[i] == colors[j] {
                    return Err(PaletteError::Duplicate);
                }
            }
        }
        Ok(Palette { colors, strategy, seed })
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }
}

/// Tunables of the strategies that have them.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PaletteOptions {
    pub boost_quantile: f64,
    pub anneal_iters: usize,
}

impl Default for PaletteOptions {
    fn default() -> Self {
        PaletteOptions { boost_quantile: 0.1, anneal_iters: 10_000 }
    }
}

/// Distinct colors with multiplicities, sorted lexicographically by (r, g, b).
#[derive(Debug, Clone, PartialEq)]
pub struct ColorHistogram {
    pub colors: Vec<Rgb>,
    pub weights: Vec<f64>,
}

impl ColorHistogram {
    pub fn from_pixels<'a>(pixels: impl IntoIterator<Item = &'a Rgb>) -> Self {
        // Non-negative floats order the same as their bit patterns; `+ 0.0`
        // folds -0.0 into 0.0.
        let mut counts: BTreeMap<[u64; 3], f64> = BTreeMap::new();
        for p in pixels {
            let key = p.map(|c| (c + 0.0).to_bits());
            *counts.entry(key).or_insert(0.0) += 1.0;
        }
        let mut colors = Vec::with_capacity(counts.len());
        let mut weights = Vec::with_capacity(counts.len());
        for (k, w) in counts {
            colors.push(k.map(f64::from_bits));
            weights.push(w);
        }
        ColorHistogram { colors, weights }
    }

    pub fn distinct(&self) -> usize {
        self.colors.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn mean(&self) -> Rgb {
        let total = self.total_weight();
        let mut m = [0.0; 3];
        for (c, w) in self.colors.iter().zip(&self.weights) {
            for k in 0..3 {
                m[k] += c[k] * w;
            }
        }
        m.map(|v| v / total)
    }

    fn require(&self, c: usize) -> Result<(), PaletteError> {
        if !(MIN_COLORS..=MAX_COLORS).contains(&c) {
            return Err(PaletteError::BadSize(c));
        }
        if self.distinct() < c {
            return Err(PaletteError::InsufficientColors { distinct: self.distinct(), requested: c });
        }
        Ok(())
    }
}

/// Sum over pixels of the squared distance to the nearest palette color.
pub fn quantization_energy(hist: &ColorHistogram, palette: &[Rgb]) -> f64 {
    hist.colors
        .iter()
        .zip(&hist.weights)
        .map(|(c, w)| w * palette.iter().map(|p| rgb_dist2(c, p)).fold(f64::INFINITY, f64::min))
        .sum()
}

/// Runs the selected strategy.
pub fn extract_palette(
    pixels: &[Rgb],
    c: usize,
    strategy: PaletteStrategy,
    seed: u64,
    opts: &PaletteOptions,
) -> Result<Palette, PaletteError> {
    match strategy {
        PaletteStrategy::KMeans => extract_kmeans(pixels, c, seed),
        PaletteStrategy::KMeansRareBoost => extract_kmeans_rare_boost(pixels, c, seed, opts.boost_quantile),
        PaletteStrategy::MedianCut => extract_median_cut(pixels, c),
        PaletteStrategy::MaxMin => extract_maxmin(pixels, c),
        PaletteStrategy::SimAnneal => extract_simanneal(pixels, c, seed, opts.anneal_iters),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn histogram_merges_duplicates_and_sorts() {
        let h = ColorHistogram::from_pixels(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [-0.0, 0.0, 1.0]]);
        assert_eq!(h.colors, vec![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]);
        assert_eq!(h.weights, vec![2.0, 2.0]);
    }

    #[test]
    fn palette_invariants() {
        assert_eq!(Palette::new(vec![[0.0; 3]], PaletteStrategy::KMeans, 0), Err(PaletteError::BadSize(1)));
        assert_eq!(
            Palette::new(vec![[0.0; 3], [0.0; 3]], PaletteStrategy::KMeans, 0),
            Err(PaletteError::Duplicate)
        );
    }

    #[test]
    fn method_names_round_trip() {
        for m in PaletteStrategy::ALL {
            assert_eq!(PaletteStrategy::from_name(m.name()), Ok(m));
        }
        assert!(PaletteStrategy::from_name("bogus").is_err());
    }
}
