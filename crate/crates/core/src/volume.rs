//! The 3D scalar grid every geometry operation works on.
//!
//! Voxels are stored x-fastest (`x + nx * (y + ny * z)`), the same order as
//! the NIfTI payload, so reading and writing never transposes.

use crate::error::{Error, Result};

/// Row-major 4×4 voxel-index → world-mm transform.
pub type Affine = [[f64; 4]; 4];

pub const IDENTITY: Affine = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

const MIN_ABS_DET: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    affine: Affine,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], affine: Affine, data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidVolume(format!("zero-sized dimension in {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidVolume(format!("non-positive spacing {spacing:?}")));
        }
        let det = det3(&affine);
        if !det.is_finite() || det.abs() <= MIN_ABS_DET {
            return Err(Error::NonInvertibleAffine(det));
        }
        let len = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if len != Some(data.len()) {
            return Err(Error::InvalidVolume(format!("data length {} does not match dims {dims:?}", data.len())));
        }
        Ok(Self { dims, spacing, affine, data })
    }

    /// A volume whose affine is `diag(spacing)` with the origin at voxel 0.
    pub fn with_spacing(dims: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        Self::new(dims, spacing, diag_affine(spacing), data)
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], affine: Affine, value: f32) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims, spacing, affine, vec![value; len])
    }

    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        affine: Affine,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, affine, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Same grid, new values.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.affine, data)
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.affine == other.affine
    }

    /// World position (mm) of a voxel index, fractional indices allowed.
    pub fn world(&self, index: [f64; 3]) -> [f64; 3] {
        apply(&self.affine, index)
    }

    /// Three-letter axis code: for each voxel axis, the world direction it
    /// points toward (`R`/`L`, `A`/`P`, `S`/`I`).
    pub fn orientation(&self) -> String {
        axis_codes(&self.affine).iter().collect()
    }
}

pub fn diag_affine(spacing: [f64; 3]) -> Affine {
    let mut a = IDENTITY;
    for (i, s) in spacing.iter().enumerate() {
        a[i][i] = *s;
    }
    a
}

pub fn det3(a: &Affine) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub fn apply(a: &Affine, p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = a[i][0] * p[0] + a[i][1] * p[1] + a[i][2] * p[2] + a[i][3];
    }
    out
}

pub fn matmul(a: &Affine, b: &Affine) -> Affine {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Inverse of an affine transform (last row `[0, 0, 0, 1]`).
pub fn invert(a: &Affine) -> Result<Affine> {
    let det = det3(a);
    if !det.is_finite() || det.abs() <= MIN_ABS_DET {
        return Err(Error::NonInvertibleAffine(det));
    }
    let mut inv = IDENTITY;
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
    inv[0][0] = cof(1, 2, 1, 2) / det;
    inv[0][1] = -cof(0, 2, 1, 2) / det;
    inv[0][2] = cof(0, 1, 1, 2) / det;
    inv[1][0] = -cof(1, 2, 0, 2) / det;
    inv[1][1] = cof(0, 2, 0, 2) / det;
    inv[1][2] = -cof(0, 1, 0, 2) / det;
    inv[2][0] = cof(1, 2, 0, 1) / det;
    inv[2][1] = -cof(0, 2, 0, 1) / det;
    inv[2][2] = cof(0, 1, 0, 1) / det;
    for row in inv.iter_mut().take(3) {
        row[3] = -(0..3).map(|k| row[k] * a[k][3]).sum::<f64>();
    }
    Ok(inv)
}

/// Dominant world axis and sign for each voxel axis.
///
/// Greedy assignment on |a_ij|: the largest remaining entry fixes one
/// (world, voxel) pair, so the result is always a permutation.
pub fn dominant_axes(a: &Affine) -> [(usize, bool); 3] {
    let mut used_world = [false; 3];
    let mut used_voxel = [false; 3];
    let mut out = [(0usize, true); 3];
    for _ in 0..3 {
        let mut best = (0, 0, -1.0f64);
        for (w, used_w) in used_world.iter().enumerate() {
            if *used_w {
                continue;
            }
            for (v, used_v) in used_voxel.iter().enumerate() {
                if *used_v {
                    continue;
                }
                let m = a[w][v].abs();
                if m > best.2 {
                    best = (w, v, m);
                }
            }
        }
        let (w, v, _) = best;
        used_world[w] = true;
        used_voxel[v] = true;
        out[v] = (w, a[w][v] >= 0.0);
    }
    out
}

fn axis_codes(a: &Affine) -> [char; 3] {
    const POS: [char; 3] = ['R', 'A', 'S'];
    const NEG: [char; 3] = ['L', 'P', 'I'];
    dominant_axes(a).map(|(w, positive)| if positive { POS[w] } else { NEG[w] })
}
