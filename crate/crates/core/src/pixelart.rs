//! Pixel-art supervision images: one RGB value and one background flag per
//! cell, where a cell covers `cell_size × cell_size` raster pixels and maps to
//! exactly one voxel column.

use alloc::vec::Vec;

use crate::geometry::ViewRaster;
use crate::math::{nearest_color, Rgb};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PixelArtError {
    #[error("image {width}x{height} is not divisible by cell size {cell_size}")]
    Indivisible { width: usize, height: usize, cell_size: usize },
    #[error("cell size must be at least 1")]
    ZeroCellSize,
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    BufferSize { got: usize, expected: usize },
}

/// Cell-resolution RGBA image. `background[i]` is the alpha mask: `true`
/// (mask value 1) for background cells.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelArtView {
    /// Cells per row.
    pub width: usize,
    /// Cells per column.
    pub height: usize,
    pub cell_size: usize,
    pub cells: Vec<Rgb>,
    pub background: Vec<bool>,
}

impl PixelArtView {
    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    /// Cell containing raster pixel (`col`, `row`).
    #[inline]
    pub fn cell_of_pixel(&self, col: usize, row: usize) -> usize {
        self.index(col / self.cell_size, row / self.cell_size)
    }

    pub fn pixel_width(&self) -> usize {
        self.width * self.cell_size
    }

    pub fn pixel_height(&self) -> usize {
        self.height * self.cell_size
    }

    /// Colors of all foreground cells.
    pub fn foreground_colors(&self) -> impl Iterator<Item = &Rgb> + '_ {
        self.cells.iter().zip(&self.background).filter(|(_, &bg)| !bg).map(|(c, _)| c)
    }

    /// Samples one RGBA texel per cell (the cell's top-left corner) from an
    /// 8-bit RGBA buffer. Texels with alpha below 128 mark background cells.
    /// Also returns the number of cells that were not internally uniform.
    pub fn from_rgba8(
        width: usize,
        height: usize,
        rgba: &[u8],
        cell_size: usize,
    ) -> Result<(PixelArtView, usize), PixelArtError> {
        check_dims(width, height, cell_size)?;
        if rgba.len() != width * height * 4 {
            return Err(PixelArtError::BufferSize { got: rgba.len(), expected: width * height * 4 });
        }
        let (cw, ch) = (width / cell_size, height / cell_size);
        let texel = |x: usize, y: usize| {
            let o = (y * width + x) * 4;
            [rgba[o], rgba[o + 1], rgba[o + 2], rgba[o + 3]]
        };
        let mut cells = Vec::with_capacity(cw * ch);
        let mut background = Vec::with_capacity(cw * ch);
        let mut non_uniform = 0;
        for v in 0..ch {
            for u in 0..cw {
                let (x0, y0) = (u * cell_size, v * cell_size);
                let corner = texel(x0, y0);
                let uniform =
                    (y0..y0 + cell_size).all(|y| (x0..x0 + cell_size).all(|x| texel(x, y) == corner));
                if !uniform {
                    non_uniform += 1;
                }
                cells.push([corner[0], corner[1], corner[2]].map(|c| c as f64 / 255.0));
                background.push(corner[3] < 128);
            }
        }
        Ok((PixelArtView { width: cw, height: ch, cell_size, cells, background }, non_uniform))
    }

    /// Expands to an 8-bit RGBA pixel buffer (background is transparent).
    pub fn to_rgba8(&self) -> Vec<u8> {
        let (w, h) = (self.pixel_width(), self.pixel_height());
        let mut out = Vec::with_capacity(w * h * 4);
        for row in 0..h {
            for col in 0..w {
                let i = self.cell_of_pixel(col, row);
                let c = self.cells[i].map(to_u8);
                let a = if self.background[i] { 0 } else { 255 };
                out.extend_from_slice(&[c[0], c[1], c[2], a]);
            }
        }
        out
    }
}

pub fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0 + 0.5) as u8
}

fn check_dims(width: usize, height: usize, cell_size: usize) -> Result<(), PixelArtError> {
    if cell_size == 0 {
        return Err(PixelArtError::ZeroCellSize);
    }
    if width % cell_size != 0 || height % cell_size != 0 {
        return Err(PixelArtError::Indivisible { width, height, cell_size });
    }
    Ok(())
}

/// Fraction of the stretched color blended in before palette snapping.
pub const CONTRAST_STRETCH: f64 = 0.25;

/// Block-average pixel art from a mesh raster. A cell is background when less
/// than half of its pixels are covered. With a palette hint, foreground cells
/// get a light per-channel min-max contrast stretch and are then snapped to the
/// nearest palette color.
pub fn generate_standin(
    raster: &ViewRaster,
    cell_size: usize,
    palette_hint: Option<&[Rgb]>,
) -> Result<PixelArtView, PixelArtError> {
    check_dims(raster.width, raster.height, cell_size)?;
    let (cw, ch) = (raster.width / cell_size, raster.height / cell_size);
    let mut cells = Vec::with_capacity(cw * ch);
    let mut background = Vec::with_capacity(cw * ch);
    let half = (cell_size * cell_size) as f64 * 0.5;
    for v in 0..ch {
        for u in 0..cw {
            let mut sum = [0.0; 3];
            let mut hits = 0usize;
            for row in v * cell_size..(v + 1) * cell_size {
                for col in u * cell_size..(u + 1) * cell_size {
                    let i = raster.index(col, row);
                    if raster.coverage[i] {
                        hits += 1;
                        for k in 0..3 {
                            sum[k] += raster.color[i][k];
                        }
                    }
                }
            }
            let bg = (hits as f64) < half;
            background.push(bg);
            cells.push(if hits == 0 { [0.0; 3] } else { sum.map(|s| s / hits as f64) });
        }
    }

    if let Some(palette) = palette_hint {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for (c, &bg) in cells.iter().zip(&background) {
            if !bg {
                for k in 0..3 {
                    lo[k] = lo[k].min(c[k]);
                    hi[k] = hi[k].max(c[k]);
                }
            }
        }
        for (c, &bg) in cells.iter_mut().zip(&background) {
            if bg {
                continue;
            }
            let stretched: Rgb = core::array::from_fn(|k| {
                let range = hi[k] - lo[k];
                if range > 1e-12 {
                    let s = (c[k] - lo[k]) / range;
                    (1.0 - CONTRAST_STRETCH) * c[k] + CONTRAST_STRETCH * s
                } else {
                    c[k]
                }
            });
            *c = palette[nearest_color(&stretched, palette)];
        }
    }

    Ok(PixelArtView { width: cw, height: ch, cell_size, cells, background })
}
