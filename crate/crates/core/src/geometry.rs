//! Geometric standardization: canonical reorientation, resampling,
//! centered crop/pad, intensity-based row localization and the left/right
//! split.
//!
//! Axis convention after [`reorient_canonical`]: axis 0 is width (x, toward
//! patient right), axis 1 is height (y, toward anterior), axis 2 is z
//! (toward superior).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Side;
use crate::volume::{dominant_axes, invert, matmul, Affine, Volume, IDENTITY};

pub const HEIGHT_AXIS: usize = 1;
pub const WIDTH_AXIS: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    #[default]
    Trilinear,
    Nearest,
}

/// A contiguous run of rows along `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowWindow {
    pub start: usize,
    pub length: usize,
    pub axis: usize,
}

/// Which patient side the low-x half of a RAS volume belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LateralityConvention {
    /// World +x points to patient right, so low x indices are patient left.
    #[default]
    RasLowXLeft,
    /// Radiological display order: low x indices are patient right.
    LowXRight,
}

impl LateralityConvention {
    pub fn low_x_side(self) -> Side {
        match self {
            LateralityConvention::RasLowXLeft => Side::Left,
            LateralityConvention::LowXRight => Side::Right,
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            LateralityConvention::RasLowXLeft => "ras: x index < width/2 is patient left",
            LateralityConvention::LowXRight => "radiological: x index < width/2 is patient right",
        }
    }
}

fn translate(offset: [f64; 3]) -> Affine {
    let mut t = IDENTITY;
    for i in 0..3 {
        t[i][3] = offset[i];
    }
    t
}

/// Permutes and flips axes so the volume is stored RAS. World coordinates
/// of every voxel are unchanged; an already-RAS volume comes back as-is.
pub fn reorient_canonical(v: &Volume) -> Result<Volume> {
    invert(v.affine())?;
    let axes = dominant_axes(v.affine());
    let mut src = [0usize; 3];
    let mut flip = [false; 3];
    for (voxel_axis, (world_axis, positive)) in axes.iter().enumerate() {
        src[*world_axis] = voxel_axis;
        flip[*world_axis] = !positive;
    }
    if src == [0, 1, 2] && flip == [false; 3] {
        return Ok(v.clone());
    }

    let in_dims = v.dims();
    let out_dims = [in_dims[src[0]], in_dims[src[1]], in_dims[src[2]]];
    // new index -> old index
    let mut t = [[0.0; 4]; 4];
    t[3][3] = 1.0;
    for k in 0..3 {
        let p = src[k];
        if flip[k] {
            t[p][k] = -1.0;
            t[p][3] = (in_dims[p] - 1) as f64;
        } else {
            t[p][k] = 1.0;
        }
    }
    let affine = matmul(v.affine(), &t);
    let in_spacing = v.spacing();
    let spacing = [in_spacing[src[0]], in_spacing[src[1]], in_spacing[src[2]]];

    let in_strides = [1, in_dims[0], in_dims[0] * in_dims[1]];
    let map_axis = |k: usize, i: usize| {
        let p = src[k];
        let old = if flip[k] { in_dims[p] - 1 - i } else { i };
        old * in_strides[p]
    };
    let src_data = v.data();
    let mut data = Vec::with_capacity(v.len());
    for z in 0..out_dims[2] {
        let oz = map_axis(2, z);
        for y in 0..out_dims[1] {
            let oy = map_axis(1, y);
            for x in 0..out_dims[0] {
                data.push(src_data[map_axis(0, x) + oy + oz]);
            }
        }
    }
    Volume::new(out_dims, spacing, affine, data)
}

/// Per-axis sampling table: for output index i the input coordinate is
/// `i * target / source`, edge-clamped.
struct AxisTable {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

impl AxisTable {
    fn new(n_in: usize, n_out: usize, ratio: f64, interp: Interp) -> Self {
        let last = n_in - 1;
        let mut t =
            AxisTable { lo: Vec::with_capacity(n_out), hi: Vec::with_capacity(n_out), frac: Vec::with_capacity(n_out) };
        for i in 0..n_out {
            let x = i as f64 * ratio;
            let (lo, hi, frac) = match interp {
                Interp::Nearest => {
                    let j = (x.round() as usize).min(last);
                    (j, j, 0.0)
                }
                Interp::Trilinear if x >= last as f64 => (last, last, 0.0),
                Interp::Trilinear => {
                    let lo = x.floor() as usize;
                    (lo, lo + 1, x - lo as f64)
                }
            };
            t.lo.push(lo);
            t.hi.push(hi);
            t.frac.push(frac);
        }
        t
    }
}

pub fn resampled_dims(dims: [usize; 3], spacing: [f64; 3], target: [f64; 3]) -> [usize; 3] {
    let mut out = [1usize; 3];
    for i in 0..3 {
        out[i] = ((dims[i] as f64 * spacing[i] / target[i]).round() as usize).max(1);
    }
    out
}

/// Resamples onto a grid with spacing `target` sharing the first voxel
/// centre with the input.
pub fn resample(v: &Volume, target: [f64; 3], interp: Interp) -> Result<Volume> {
    if target.iter().any(|&t| !(t.is_finite() && t > 0.0)) {
        return Err(Error::InvalidVolume(format!("target spacing {target:?}")));
    }
    let spacing = v.spacing();
    if spacing == target {
        return Ok(v.clone());
    }
    let in_dims = v.dims();
    let out_dims = resampled_dims(in_dims, spacing, target);
    let ratio = [target[0] / spacing[0], target[1] / spacing[1], target[2] / spacing[2]];
    let tables: Vec<AxisTable> = (0..3).map(|a| AxisTable::new(in_dims[a], out_dims[a], ratio[a], interp)).collect();

    let mut affine = *v.affine();
    for row in affine.iter_mut().take(3) {
        for (j, r) in ratio.iter().enumerate() {
            row[j] *= r;
        }
    }

    let (nx, ny) = (in_dims[0], in_dims[1]);
    let src = v.data();
    let slice = out_dims[0] * out_dims[1];
    let mut data = vec![0f32; slice * out_dims[2]];
    data.par_chunks_mut(slice).enumerate().for_each(|(z, out)| {
        let (tx, ty, tz) = (&tables[0], &tables[1], &tables[2]);
        let (z0, z1, fz) = (tz.lo[z] * nx * ny, tz.hi[z] * nx * ny, tz.frac[z]);
        for y in 0..out_dims[1] {
            let (y0, y1, fy) = (ty.lo[y] * nx, ty.hi[y] * nx, ty.frac[y]);
            let row = &mut out[y * out_dims[0]..(y + 1) * out_dims[0]];
            match interp {
                Interp::Nearest => {
                    for (x, o) in row.iter_mut().enumerate() {
                        *o = src[tx.lo[x] + y0 + z0];
                    }
                }
                Interp::Trilinear => {
                    for (x, o) in row.iter_mut().enumerate() {
                        let (x0, x1, fx) = (tx.lo[x], tx.hi[x], tx.frac[x]);
                        let at = |i: usize| f64::from(src[i]);
                        let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
                        let c00 = lerp(at(x0 + y0 + z0), at(x1 + y0 + z0), fx);
                        let c10 = lerp(at(x0 + y1 + z0), at(x1 + y1 + z0), fx);
                        let c01 = lerp(at(x0 + y0 + z1), at(x1 + y0 + z1), fx);
                        let c11 = lerp(at(x0 + y1 + z1), at(x1 + y1 + z1), fx);
                        let c0 = lerp(c00, c10, fy);
                        let c1 = lerp(c01, c11, fy);
                        *o = lerp(c0, c1, fz) as f32;
                    }
                }
            }
        }
    });
    Volume::new(out_dims, target, affine, data)
}

/// Nearest-neighbour resampling of `v` onto another grid through world
/// coordinates. Target voxels that fall outside `v` get `outside`.
pub fn nearest_onto(v: &Volume, dims: [usize; 3], affine: &Affine, outside: f32) -> Result<Volume> {
    let to_src = matmul(&invert(v.affine())?, affine);
    let src_dims = v.dims();
    let spacing = {
        let col_norm = |j: usize| (0..3).map(|i| affine[i][j] * affine[i][j]).sum::<f64>().sqrt();
        [col_norm(0), col_norm(1), col_norm(2)]
    };
    let src = v.data();
    let mut data = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = crate::volume::apply(&to_src, [x as f64, y as f64, z as f64]);
                let mut idx = [0usize; 3];
                let mut inside = true;
                for a in 0..3 {
                    let r = p[a].round();
                    if r < 0.0 || r > (src_dims[a] - 1) as f64 || !r.is_finite() {
                        inside = false;
                        break;
                    }
                    idx[a] = r as usize;
                }
                data.push(if inside { src[v.index(idx[0], idx[1], idx[2])] } else { outside });
            }
        }
    }
    Volume::new(dims, spacing, *affine, data)
}

/// Offset of the retained/padded region per axis: negative means padding
/// before, positive means cropping from the low side. Odd differences put
/// the extra voxel on the high-index side.
pub fn crop_pad_offsets(dims: [usize; 3], target: [usize; 3]) -> [i64; 3] {
    let mut start = [0i64; 3];
    for a in 0..3 {
        let (n, t) = (dims[a] as i64, target[a] as i64);
        start[a] = if t >= n { -((t - n) / 2) } else { (n - t) / 2 };
    }
    start
}

pub fn crop_or_pad(v: &Volume, target: [usize; 3], fill: f32) -> Result<Volume> {
    if target.contains(&0) {
        return Err(Error::InvalidVolume(format!("target shape {target:?}")));
    }
    if v.dims() == target {
        return Ok(v.clone());
    }
    let start = crop_pad_offsets(v.dims(), target);
    extract_region(v, start, target, fill)
}

/// Copies the box `[start, start + dims)` (in input index space) into a new
/// volume, filling anything outside the input with `fill`.
fn extract_region(v: &Volume, start: [i64; 3], dims: [usize; 3], fill: f32) -> Result<Volume> {
    let in_dims = v.dims();
    let src = v.data();
    let mut data = Vec::with_capacity(dims.iter().product());
    let inside = |a: usize, o: usize| {
        let i = o as i64 + start[a];
        (i >= 0 && i < in_dims[a] as i64).then_some(i as usize)
    };
    for z in 0..dims[2] {
        let iz = inside(2, z);
        for y in 0..dims[1] {
            let iy = inside(1, y);
            match (iy, iz) {
                (Some(iy), Some(iz)) => {
                    for x in 0..dims[0] {
                        data.push(match inside(0, x) {
                            Some(ix) => src[ix + in_dims[0] * (iy + in_dims[1] * iz)],
                            None => fill,
                        });
                    }
                }
                _ => data.extend(std::iter::repeat_n(fill, dims[0])),
            }
        }
    }
    let affine = matmul(v.affine(), &translate(start.map(|s| s as f64)));
    Volume::new(dims, v.spacing(), affine, data)
}

/// Finds the `window`-row band along the height axis with the largest
/// summed intensity. Ties go to the lowest start.
pub fn localize_rows(v: &Volume, window: usize) -> RowWindow {
    let [nx, ny, nz] = v.dims();
    if ny <= window || window == 0 {
        return RowWindow { start: 0, length: ny, axis: HEIGHT_AXIS };
    }
    let data = v.data();
    let mut rows = vec![0f64; ny];
    for z in 0..nz {
        for (y, r) in rows.iter_mut().enumerate() {
            let base = nx * (y + ny * z);
            *r += data[base..base + nx].iter().map(|&x| f64::from(x)).sum::<f64>();
        }
    }
    // Each window is summed from scratch so the result does not depend on a
    // running-sum drift.
    let mut best = (0usize, f64::NEG_INFINITY);
    for s in 0..=ny - window {
        let sum: f64 = rows[s..s + window].iter().sum();
        if sum > best.1 {
            best = (s, sum);
        }
    }
    RowWindow { start: best.0, length: window, axis: HEIGHT_AXIS }
}

/// Keeps only the rows of `w` along the height axis.
pub fn crop_rows(v: &Volume, w: RowWindow) -> Result<Volume> {
    let mut dims = v.dims();
    if w.axis != HEIGHT_AXIS || w.start + w.length > dims[HEIGHT_AXIS] || w.length == 0 {
        return Err(Error::InvalidVolume(format!("row window {w:?} outside {dims:?}")));
    }
    dims[HEIGHT_AXIS] = w.length;
    extract_region(v, [0, w.start as i64, 0], dims, 0.0)
}

/// Splits along the width axis at `floor(nx / 2)`: returns the low-x half
/// then the high-x half.
pub fn split_lr(v: &Volume) -> Result<(Volume, Volume)> {
    let [nx, ny, nz] = v.dims();
    if nx < 2 {
        return Err(Error::WidthTooSmall(nx));
    }
    let mid = nx / 2;
    let low = extract_region(v, [0, 0, 0], [mid, ny, nz], 0.0)?;
    let high = extract_region(v, [mid as i64, 0, 0], [nx - mid, ny, nz], 0.0)?;
    Ok((low, high))
}

/// The half of a RAS volume holding `side` under `convention`.
pub fn select_side(v: &Volume, side: Side, convention: LateralityConvention) -> Result<Volume> {
    let (low, high) = split_lr(v)?;
    Ok(if convention.low_x_side() == side { low } else { high })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{apply, diag_affine};

    fn ramp(dims: [usize; 3]) -> Volume {
        Volume::from_fn(dims, [1.0; 3], IDENTITY, |x, y, z| (x + 10 * y + 100 * z) as f32).unwrap()
    }

    fn corners(dims: [usize; 3]) -> Vec<[usize; 3]> {
        let mut out = vec![];
        for &x in &[0, dims[0] - 1] {
            for &y in &[0, dims[1] - 1] {
                for &z in &[0, dims[2] - 1] {
                    out.push([x, y, z]);
                }
            }
        }
        out
    }

    /// For every corner of the input, the voxel in the output whose world
    /// position matches must hold the same value.
    fn assert_world_preserved(input: &Volume, output: &Volume) {
        let inv = invert(output.affine()).unwrap();
        for c in corners(input.dims()) {
            let w = input.world(c.map(|i| i as f64));
            let idx = apply(&inv, w);
            let r = idx.map(|i| i.round());
            for a in 0..3 {
                assert!((idx[a] - r[a]).abs() < 1e-6, "{idx:?}");
            }
            let back = output.world(r);
            for a in 0..3 {
                assert!((back[a] - w[a]).abs() < 1e-6);
            }
            assert_eq!(output.get(r[0] as usize, r[1] as usize, r[2] as usize), input.get(c[0], c[1], c[2]));
        }
    }

    #[test]
    fn ras_is_identity() {
        let v = ramp([3, 4, 5]);
        assert_eq!(reorient_canonical(&v).unwrap(), v);
    }

    #[test]
    fn lps_flips_x_and_y() {
        let mut a = diag_affine([0.7, 0.8, 3.0]);
        a[0][0] = -0.7;
        a[1][1] = -0.8;
        a[0][3] = 50.0;
        a[1][3] = 20.0;
        let v = Volume::from_fn([3, 4, 2], [0.7, 0.8, 3.0], a, |x, y, z| (x + 10 * y + 100 * z) as f32).unwrap();
        let r = reorient_canonical(&v).unwrap();
        assert_eq!(r.orientation(), "RAS");
        assert_eq!(r.dims(), [3, 4, 2]);
        assert_eq!(r.get(0, 0, 0), v.get(2, 3, 0));
        assert_world_preserved(&v, &r);
    }

    #[test]
    fn asr_is_transposed() {
        // voxel x -> world y (A), voxel y -> world z (S), voxel z -> world x (R)
        let a = [[0.0, 0.0, 2.0, -3.0], [0.5, 0.0, 0.0, 4.0], [0.0, 1.5, 0.0, 1.0], [0.0, 0.0, 0.0, 1.0]];
        let v = Volume::from_fn([3, 4, 5], [0.5, 1.5, 2.0], a, |x, y, z| (x + 10 * y + 100 * z) as f32).unwrap();
        assert_eq!(v.orientation(), "ASR");
        let r = reorient_canonical(&v).unwrap();
        assert_eq!(r.orientation(), "RAS");
        assert_eq!(r.dims(), [5, 3, 4]);
        assert_eq!(r.spacing(), [2.0, 0.5, 1.5]);
        assert_eq!(r.len(), v.len());
        assert_world_preserved(&v, &r);
        assert_eq!(reorient_canonical(&r).unwrap(), r);
    }

    #[test]
    fn resample_identity_and_constant() {
        let v = ramp([4, 3, 2]);
        assert_eq!(resample(&v, [1.0; 3], Interp::Trilinear).unwrap(), v);
        let c = Volume::filled([5, 6, 7], [1.3, 0.9, 2.5], diag_affine([1.3, 0.9, 2.5]), 4.25).unwrap();
        let r = resample(&c, [0.7, 0.7, 3.0], Interp::Trilinear).unwrap();
        assert_eq!(r.dims(), [9, 8, 6]);
        assert!(r.data().iter().all(|&x| x == 4.25));
    }

    #[test]
    fn ramp_upsample_matches_hand_values() {
        let v = Volume::with_spacing([2, 1, 1], [2.0, 1.0, 1.0], vec![0.0, 1.0]).unwrap();
        let r = resample(&v, [1.0, 1.0, 1.0], Interp::Trilinear).unwrap();
        assert_eq!(r.dims(), [4, 1, 1]);
        assert_eq!(r.data(), &[0.0, 0.5, 1.0, 1.0]);
        assert_eq!(r.affine()[0][0], 1.0);
        let n = resample(&v, [1.0, 1.0, 1.0], Interp::Nearest).unwrap();
        assert_eq!(n.data(), &[0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn resample_rejects_bad_target() {
        let v = ramp([2, 2, 2]);
        assert!(resample(&v, [0.0, 1.0, 1.0], Interp::Nearest).is_err());
    }

    #[test]
    fn pad_and_crop_centering() {
        let v = Volume::with_spacing([2, 1, 1], [1.0; 3], vec![1.0, 2.0]).unwrap();
        let p = crop_or_pad(&v, [4, 1, 1], 0.0).unwrap();
        assert_eq!(p.data(), &[0.0, 1.0, 2.0, 0.0]);
        assert_eq!(p.affine()[0][3], -1.0);

        let v = Volume::with_spacing([5, 1, 1], [1.0; 3], vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = crop_or_pad(&v, [3, 1, 1], 0.0).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 3.0]);
        assert_eq!(c.affine()[0][3], 1.0);
        let c = crop_or_pad(&v, [2, 1, 1], 0.0).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0]);
        let p = crop_or_pad(&v, [8, 1, 1], -1.0).unwrap();
        assert_eq!(p.data(), &[-1.0, 0.0, 1.0, 2.0, 3.0, 4.0, -1.0, -1.0]);
        assert_eq!(crop_or_pad(&v, [5, 1, 1], 0.0).unwrap(), v);
    }

    #[test]
    fn localize_bright_band() {
        let v =
            Volume::from_fn([4, 512, 2], [1.0; 3], IDENTITY, |_, y, _| if (100..300).contains(&y) { 1.0 } else { 0.0 })
                .unwrap();
        let w = localize_rows(&v, 256);
        assert_eq!(w, RowWindow { start: 44, length: 256, axis: 1 });
        let small = Volume::filled([2, 256, 1], [1.0; 3], IDENTITY, 1.0).unwrap();
        assert_eq!(localize_rows(&small, 256).start, 0);
        assert_eq!(localize_rows(&small, 256).length, 256);
        let uniform = Volume::filled([2, 300, 1], [1.0; 3], IDENTITY, 1.0).unwrap();
        assert_eq!(localize_rows(&uniform, 256).start, 0);
    }

    #[test]
    fn crop_rows_keeps_world_positions() {
        let v = ramp([2, 10, 2]);
        let w = RowWindow { start: 3, length: 4, axis: 1 };
        let c = crop_rows(&v, w).unwrap();
        assert_eq!(c.dims(), [2, 4, 2]);
        assert_eq!(c.get(1, 0, 1), v.get(1, 3, 1));
        assert_eq!(c.world([0.0, 0.0, 0.0]), [0.0, 3.0, 0.0]);
        assert!(crop_rows(&v, RowWindow { start: 8, length: 4, axis: 1 }).is_err());
    }

    #[test]
    fn split_halves() {
        let v = ramp([5, 2, 1]);
        let (a, b) = split_lr(&v).unwrap();
        assert_eq!(a.dims()[0], 2);
        assert_eq!(b.dims()[0], 3);
        assert_eq!(b.get(0, 1, 0), v.get(2, 1, 0));
        assert_eq!(b.world([0.0, 0.0, 0.0]), [2.0, 0.0, 0.0]);
        let one = ramp([1, 2, 2]);
        assert!(matches!(split_lr(&one), Err(Error::WidthTooSmall(1))));
        let wide = Volume::filled([512, 1, 1], [1.0; 3], IDENTITY, 0.0).unwrap();
        let (l, r) = split_lr(&wide).unwrap();
        assert_eq!((l.dims()[0], r.dims()[0]), (256, 256));
    }

    #[test]
    fn side_selection_follows_convention() {
        let v = ramp([4, 1, 1]);
        let left = select_side(&v, Side::Left, LateralityConvention::RasLowXLeft).unwrap();
        assert_eq!(left.data(), &[0.0, 1.0]);
        let left = select_side(&v, Side::Left, LateralityConvention::LowXRight).unwrap();
        assert_eq!(left.data(), &[2.0, 3.0]);
    }

    #[test]
    fn nearest_onto_coarser_mask() {
        // mask at 2 mm on a 2x2x1 grid mapped onto a 1 mm 4x4x1 grid
        let mask = Volume::with_spacing([2, 2, 1], [2.0, 2.0, 1.0], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = nearest_onto(&mask, [4, 4, 1], &IDENTITY, 0.0).unwrap();
        // index i at 1 mm -> 0.5 i in mask index space, rounded half away from zero
        let expect = |x: usize, y: usize| {
            let m = |i: usize| ((i as f64) * 0.5).round() as usize;
            let (mx, my) = (m(x), m(y));
            if mx > 1 || my > 1 {
                0.0
            } else {
                mask.get(mx, my, 0)
            }
        };
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(out.get(x, y, 0), expect(x, y), "({x},{y})");
            }
        }
    }
}
