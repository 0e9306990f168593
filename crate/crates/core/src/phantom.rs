//! Synthetic multi-phase breast DCE studies with known labels.
//!
//! Each study has two hemi-ellipsoidal breasts in front of a low-intensity
//! chest block. A lesion side carries a sphere whose enhancement follows
//! the class: malignant lesions peak in the first post-contrast phase and
//! wash out, benign lesions enhance progressively. Normal parenchyma
//! enhances slowly and weakly. Odd-numbered studies are stored LPS so the
//! reorientation path is exercised, and every fifth study ships its mask on
//! a grid twice as coarse.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LesionClass, Side};
use crate::mipbuild::Study;
use crate::rng::{splitmix64, stream_rng};
use crate::tensorio::{atomic_write, write_nifti};
use crate::volume::{Affine, Volume, IDENTITY};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub min_posts: usize,
    pub max_posts: usize,
    pub noise_sigma: f64,
    /// Parenchymal enhancement at the first and the last phase.
    pub background_uptake: [f64; 2],
    /// Lesion peak enhancement range.
    pub lesion_uptake: [f64; 2],
    /// Lesion radius range in mm.
    pub lesion_radius_mm: [f64; 2],
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [128, 112, 16],
            spacing: [2.8, 2.8, 6.0],
            min_posts: 2,
            max_posts: 4,
            noise_sigma: 0.02,
            background_uptake: [0.05, 0.15],
            lesion_uptake: [1.5, 2.5],
            lesion_radius_mm: [12.0, 18.0],
        }
    }
}

/// Relative lesion enhancement at normalized time `t ∈ [0, 1]` (first to
/// last post-contrast phase).
pub fn lesion_curve(class: LesionClass, t: f64) -> f64 {
    match class {
        LesionClass::NoLesion => 0.0,
        // rapid initial enhancement, delayed washout
        LesionClass::Malignant => 1.0 - 0.5 * t,
        // slow, progressive enhancement
        LesionClass::Benign => 0.35 + 0.65 * t,
    }
}

#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub patient_id: String,
    pub label_left: LesionClass,
    pub label_right: LesionClass,
    pub pre: Volume,
    pub posts: Vec<Volume>,
    pub mask: Volume,
    /// World-space lesion centre (mm) and radius, if any.
    pub lesion: Option<([f64; 3], f64)>,
}

impl PhantomCase {
    pub fn label(&self, side: Side) -> LesionClass {
        match side {
            Side::Left => self.label_left,
            Side::Right => self.label_right,
        }
    }

    pub fn into_study(self) -> Study {
        Study {
            patient_id: self.patient_id,
            pre: Some(self.pre),
            posts: self.posts,
            mask: Some(self.mask),
            sources: Vec::new(),
        }
    }
}

struct Ellipsoid {
    centre: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).map(|a| ((p[a] - self.centre[a]) / self.radii[a]).powi(2)).sum::<f64>() <= 1.0
    }
}

pub fn patient_id(index: usize) -> String {
    format!("P{index:03}")
}

/// Study `index` of the set generated from `seed`.
pub fn generate_case(index: usize, seed: u64, cfg: &PhantomConfig) -> Result<PhantomCase> {
    if cfg.min_posts < 2 || cfg.max_posts < cfg.min_posts {
        return Err(Error::Config(format!("phantom posts range [{}, {}]", cfg.min_posts, cfg.max_posts)));
    }
    let case_seed = splitmix64(seed ^ splitmix64(index as u64));
    let mut rng = stream_rng(case_seed, 0);
    let [nx, ny, nz] = cfg.dims;
    let [sx, sy, sz] = cfg.spacing;
    // RAS grid centred on the world origin
    let origin = [-(nx as f64 - 1.0) * sx / 2.0, -(ny as f64 - 1.0) * sy / 2.0, -(nz as f64 - 1.0) * sz / 2.0];
    let world = |x: usize, y: usize, z: usize| {
        [origin[0] + x as f64 * sx, origin[1] + y as f64 * sy, origin[2] + z as f64 * sz]
    };
    let extent = [nx as f64 * sx, ny as f64 * sy, nz as f64 * sz];

    let scale = rng.random_range(0.9..=1.1);
    let chest_front = origin[1] + 0.45 * extent[1];
    let breast_radii = [0.2 * extent[0] * scale, 0.42 * extent[1] * scale, 0.42 * extent[2]];
    // patient left is world -x in RAS
    let breast = |side: Side| Ellipsoid {
        centre: [
            match side {
                Side::Left => -0.23 * extent[0],
                Side::Right => 0.23 * extent[0],
            },
            chest_front,
            0.0,
        ],
        radii: breast_radii,
    };
    let breasts = [breast(Side::Left), breast(Side::Right)];
    let in_breast = |p: [f64; 3]| p[1] >= chest_front && breasts.iter().any(|b| b.contains(p));
    let in_chest = |p: [f64; 3]| p[1] < chest_front && p[1] >= origin[1] + 0.2 * extent[1];

    let class = [LesionClass::NoLesion, LesionClass::Benign, LesionClass::Malignant][index % 3];
    let lesion_side = if rng.random::<bool>() { Side::Left } else { Side::Right };
    let (label_left, label_right) = match lesion_side {
        Side::Left => (class, LesionClass::NoLesion),
        Side::Right => (LesionClass::NoLesion, class),
    };
    let radius = rng.random_range(cfg.lesion_radius_mm[0]..=cfg.lesion_radius_mm[1]);
    let amplitude = rng.random_range(cfg.lesion_uptake[0]..=cfg.lesion_uptake[1]);
    let b = breast(lesion_side);
    let centre = [
        b.centre[0] + rng.random_range(-0.3..=0.3) * b.radii[0],
        b.centre[1] + rng.random_range(0.25..=0.5) * b.radii[1],
        rng.random_range(-0.25..=0.25) * b.radii[2],
    ];
    let lesion = (class != LesionClass::NoLesion).then_some((centre, radius));
    let in_lesion = |p: [f64; 3]| match lesion {
        Some((c, r)) => (0..3).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>() <= r * r,
        None => false,
    };

    let n_posts = rng.random_range(cfg.min_posts..=cfg.max_posts);
    let flip_lps = index % 2 == 1;
    let mut noise_rng = stream_rng(case_seed, 1);
    let normal = Normal::new(0.0, cfg.noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;

    let mut phase = |uptake_bg: f64, uptake_lesion: f64| {
        let mut data = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = world(x, y, z);
                    let base = if in_breast(p) {
                        let mut v = 1.0 + uptake_bg;
                        if in_lesion(p) {
                            v += uptake_lesion;
                        }
                        v
                    } else if in_chest(p) {
                        0.3
                    } else {
                        0.0
                    };
                    let noise = if cfg.noise_sigma > 0.0 { normal.sample(&mut noise_rng) } else { 0.0 };
                    data.push((base + noise) as f32);
                }
            }
        }
        data
    };

    let pre_data = phase(0.0, 0.0);
    let mut post_data = Vec::with_capacity(n_posts);
    for k in 0..n_posts {
        let t = k as f64 / (n_posts - 1) as f64;
        let bg = cfg.background_uptake[0] + (cfg.background_uptake[1] - cfg.background_uptake[0]) * t;
        post_data.push(phase(bg, amplitude * lesion_curve(class, t)));
    }
    let mut mask_data = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                mask_data.push(if in_breast(world(x, y, z)) { 1.0 } else { 0.0 });
            }
        }
    }

    let ras_affine = {
        let mut a = IDENTITY;
        for i in 0..3 {
            a[i][i] = cfg.spacing[i];
            a[i][3] = origin[i];
        }
        a
    };
    let store = |data: Vec<f32>| -> Result<Volume> {
        if !flip_lps {
            return Volume::new(cfg.dims, cfg.spacing, ras_affine, data);
        }
        let mut out = Vec::with_capacity(data.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    out.push(data[(nx - 1 - x) + nx * ((ny - 1 - y) + ny * z)]);
                }
            }
        }
        let mut a: Affine = ras_affine;
        a[0][0] = -sx;
        a[1][1] = -sy;
        a[0][3] = origin[0] + (nx - 1) as f64 * sx;
        a[1][3] = origin[1] + (ny - 1) as f64 * sy;
        Volume::new(cfg.dims, cfg.spacing, a, out)
    };

    let pre = store(pre_data)?;
    let posts = post_data.into_iter().map(store).collect::<Result<Vec<_>>>()?;
    let mut mask = store(mask_data)?;
    if index % 5 == 4 {
        mask = coarsen_mask(&mask)?;
    }
    Ok(PhantomCase { patient_id: patient_id(index), label_left, label_right, pre, posts, mask, lesion })
}

/// Every other voxel along each axis, on a grid with doubled spacing.
fn coarsen_mask(mask: &Volume) -> Result<Volume> {
    let d = mask.dims();
    let dims = d.map(|n| n.div_ceil(2));
    let mut affine = *mask.affine();
    for row in affine.iter_mut().take(3) {
        for v in row.iter_mut().take(3) {
            *v *= 2.0;
        }
    }
    let spacing = mask.spacing().map(|s| s * 2.0);
    Volume::from_fn(dims, spacing, affine, |x, y, z| mask.get(2 * x, 2 * y, 2 * z))
}

/// Writes `n` studies under `out_dir` (one folder per patient) and a
/// `manifest.csv` with paths relative to `out_dir`. Returns the manifest
/// path.
pub fn write_phantom_set(n: usize, seed: u64, cfg: &PhantomConfig, out_dir: &Path) -> Result<PathBuf> {
    if n == 0 {
        return Err(Error::Config("phantom count must be >= 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = csv::Writer::from_writer(Vec::new());
    rows.write_record(["patient_id", "pre_path", "post_paths", "mask_path", "label_left", "label_right"])?;
    for i in 0..n {
        let case = generate_case(i, seed, cfg)?;
        let dir = out_dir.join(&case.patient_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let rel = |name: &str| format!("{}/{name}", case.patient_id);
        write_nifti(&case.pre, dir.join("pre.nii"))?;
        let mut posts = Vec::new();
        for (k, v) in case.posts.iter().enumerate() {
            let name = format!("post{}.nii", k + 1);
            write_nifti(v, dir.join(&name))?;
            posts.push(rel(&name));
        }
        write_nifti(&case.mask, dir.join("mask.nii"))?;
        rows.write_record([
            case.patient_id.as_str(),
            &rel("pre.nii"),
            &posts.join(";"),
            &rel("mask.nii"),
            case.label_left.as_str(),
            case.label_right.as_str(),
        ])?;
    }
    let manifest = out_dir.join("manifest.csv");
    let bytes = rows.into_inner().map_err(|e| Error::io(&manifest, e.into_error()))?;
    atomic_write(&manifest, &bytes)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_match_kinetics() {
        assert!(lesion_curve(LesionClass::Malignant, 0.0) > lesion_curve(LesionClass::Malignant, 1.0));
        assert!(lesion_curve(LesionClass::Benign, 1.0) >= lesion_curve(LesionClass::Benign, 0.0));
        assert_eq!(lesion_curve(LesionClass::NoLesion, 0.5), 0.0);
    }

    #[test]
    fn case_shape_and_labels() {
        let cfg = PhantomConfig::default();
        for i in 0..6 {
            let c = generate_case(i, 11, &cfg).unwrap();
            assert!(c.posts.len() >= 2 && c.posts.len() <= 4);
            let expected = [LesionClass::NoLesion, LesionClass::Benign, LesionClass::Malignant][i % 3];
            assert_eq!(c.label_left.max(c.label_right), expected);
            assert_eq!(c.lesion.is_some(), expected != LesionClass::NoLesion);
            assert_eq!(c.pre.orientation(), if i % 2 == 1 { "LPS" } else { "RAS" });
            assert!(c.mask.data().iter().all(|&m| m == 0.0 || m == 1.0));
        }
        let a = generate_case(3, 11, &cfg).unwrap();
        let b = generate_case(3, 11, &cfg).unwrap();
        assert_eq!(a.posts, b.posts);
        assert_eq!(generate_case(4, 11, &cfg).unwrap().mask.dims(), [64, 56, 8]);
    }
}
