use alloc::vec::Vec;

use num_traits::Float;

use super::GridSpec;
use crate::math::Vec3;

/// One voxel crossed by a ray, with the parametric entry and exit distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub voxel: usize,
    pub t_in: f64,
    pub t_out: f64,
}

impl Segment {
    #[inline]
    pub fn delta(&self) -> f64 {
        self.t_out - self.t_in
    }

    #[inline]
    pub fn t_mid(&self) -> f64 {
        0.5 * (self.t_in + self.t_out)
    }
}

/// Exact grid traversal (incremental axis stepping) of `origin + t·dir`,
/// `t ≥ 0`. Segments partition the ray's intersection with the grid box, are
/// sorted by `t_in` and all have positive length. A miss yields an empty list.
pub fn traverse(spec: &GridSpec, origin: Vec3, dir: Vec3) -> Vec<Segment> {
    let mut out = Vec::new();
    traverse_into(spec, origin, dir, &mut out);
    out
}

/// [`traverse`] into a reusable buffer (cleared first).
pub fn traverse_into(spec: &GridSpec, origin: Vec3, dir: Vec3, out: &mut Vec<Segment>) {
    out.clear();
    let Some((t0, t1)) = spec.bbox().ray_interval(origin, dir) else {
        return;
    };
    let o = origin.to_array();
    let d = dir.to_array();
    let g = spec.origin.to_array();
    let edge = spec.voxel_edge;

    let entry = origin + dir * t0;
    let mut cell = [0i64; 3];
    for a in 0..3 {
        let f = ((entry.axis(a) - g[a]) / edge).floor() as i64;
        cell[a] = f.clamp(0, spec.dims[a] as i64 - 1);
    }

    let mut t = t0;
    loop {
        let mut t_next = t1;
        let mut axis = None;
        for a in 0..3 {
            if d[a] == 0.0 {
                continue;
            }
            let face = if d[a] > 0.0 { cell[a] + 1 } else { cell[a] };
            let tb = (g[a] + face as f64 * edge - o[a]) / d[a];
            if tb < t_next {
                t_next = tb;
                axis = Some(a);
            }
        }
        if t_next > t {
            let voxel = spec.index(cell[0] as usize, cell[1] as usize, cell[2] as usize);
            out.push(Segment { voxel, t_in: t, t_out: t_next });
            t = t_next;
        }
        let Some(a) = axis else { break };
        cell[a] += if d[a] > 0.0 { 1 } else { -1 };
        if cell[a] < 0 || cell[a] >= spec.dims[a] as i64 {
            break;
        }
    }
    // Rounding can leave the final face a hair short of the box exit.
    if let Some(last) = out.last_mut() {
        if (t1 - last.t_out).abs() < 1e-9 * (1.0 + t1.abs()) {
            last.t_out = t1;
        }
    }
}
