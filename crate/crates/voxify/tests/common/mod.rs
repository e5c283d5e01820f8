#![allow(dead_code)]

use std::path::{Path, PathBuf};

use voxify::meshio::write_ply_mesh;
use voxify_core::geometry::{box_mesh, sphere_mesh, Mesh};
use voxify_core::Vec3;

pub const RED: [f64; 3] = [0.8, 0.2, 0.2];
pub const BLUE: [f64; 3] = [0.2, 0.3, 0.8];

/// Red slab under a blue sphere; the union box is exactly [-0.5, 0.5]³.
pub fn sphere_on_cube() -> Mesh {
    let slab = box_mesh(Vec3::new(-0.5, -0.5, -0.5), Vec3::new(0.5, 0.5, 0.0), RED);
    let ball = sphere_mesh(Vec3::new(0.0, 0.0, 0.25), 0.25, 24, 48, BLUE);
    slab.merged(&ball)
}

pub fn write_mesh(mesh: &Mesh, path: &Path) {
    let mut f = std::fs::File::create(path).unwrap();
    write_ply_mesh(mesh, &mut f).unwrap();
}

pub fn fixture_ply(dir: &Path) -> PathBuf {
    let p = dir.join("sphere_on_cube.ply");
    write_mesh(&sphere_on_cube(), &p);
    p
}

pub fn voxify_bin() -> &'static str {
    env!("CARGO_BIN_EXE_voxify")
}

pub fn stub_bin() -> &'static str {
    env!("CARGO_BIN_EXE_voxify-embed-stub")
}
