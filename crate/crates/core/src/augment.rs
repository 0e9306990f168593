//! Seeded 2D augmentation of MIP stacks.
//!
//! Transforms run in a fixed order; transform `i` draws its on/off decision
//! and its parameters from ChaCha8 stream `i` of the sample seed. Geometric
//! transforms use the same parameters for all four channels.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mipbuild::{MipStack, NUM_CHANNELS};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotatePolicy {
    pub p: f64,
    pub max_degrees: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffinePolicy {
    pub p: f64,
    /// Inclusive isotropic scale range.
    pub scale: [f64; 2],
    pub max_shear_degrees: f64,
    /// Maximum shift as a fraction of the image size, per axis.
    pub max_translate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrightnessContrastPolicy {
    pub p: f64,
    pub brightness: f64,
    pub contrast: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaPolicy {
    pub p: f64,
    pub max_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutPolicy {
    pub p: f64,
    pub max_holes: usize,
    pub max_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub hflip_p: f64,
    pub vflip_p: f64,
    pub rotate: RotatePolicy,
    pub affine: AffinePolicy,
    pub brightness_contrast: BrightnessContrastPolicy,
    pub gaussian_noise: SigmaPolicy,
    pub gaussian_blur: SigmaPolicy,
    pub coarse_dropout: DropoutPolicy,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        default_policy()
    }
}

pub fn default_policy() -> AugmentPolicy {
    AugmentPolicy {
        hflip_p: 0.5,
        vflip_p: 0.5,
        rotate: RotatePolicy { p: 0.5, max_degrees: 15.0 },
        affine: AffinePolicy { p: 0.5, scale: [0.9, 1.1], max_shear_degrees: 10.0, max_translate: 0.05 },
        brightness_contrast: BrightnessContrastPolicy { p: 0.5, brightness: 0.2, contrast: 0.2 },
        gaussian_noise: SigmaPolicy { p: 0.5, max_sigma: 0.05 },
        gaussian_blur: SigmaPolicy { p: 0.5, max_sigma: 1.5 },
        coarse_dropout: DropoutPolicy { p: 0.5, max_holes: 8, max_size: 32 },
    }
}

impl AugmentPolicy {
    /// Every transform disabled.
    pub fn none() -> Self {
        let mut p = default_policy();
        p.hflip_p = 0.0;
        p.vflip_p = 0.0;
        p.rotate.p = 0.0;
        p.affine.p = 0.0;
        p.brightness_contrast.p = 0.0;
        p.gaussian_noise.p = 0.0;
        p.gaussian_blur.p = 0.0;
        p.coarse_dropout.p = 0.0;
        p
    }

    pub fn probabilities(&self) -> [f64; 8] {
        [
            self.hflip_p,
            self.vflip_p,
            self.rotate.p,
            self.affine.p,
            self.brightness_contrast.p,
            self.gaussian_noise.p,
            self.gaussian_blur.p,
            self.coarse_dropout.p,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.probabilities().iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        let magnitudes = [
            self.rotate.max_degrees,
            self.affine.scale[0],
            self.affine.scale[1],
            self.affine.max_shear_degrees,
            self.affine.max_translate,
            self.brightness_contrast.brightness,
            self.brightness_contrast.contrast,
            self.gaussian_noise.max_sigma,
            self.gaussian_blur.max_sigma,
        ];
        if magnitudes.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::Config("augmentation magnitudes must be finite and >= 0".into()));
        }
        if !(self.affine.scale[0] > 0.0 && self.affine.scale[0] <= self.affine.scale[1]) {
            return Err(Error::Config(format!("scale range {:?}", self.affine.scale)));
        }
        if self.affine.max_shear_degrees >= 89.0 {
            return Err(Error::Config("shear must stay below 89 degrees".into()));
        }
        Ok(())
    }
}

/// A transform that was actually applied, with its sampled parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AppliedTransform {
    HorizontalFlip,
    VerticalFlip,
    Rotate {
        degrees: f64,
    },
    Affine {
        scale: f64,
        shear_degrees: f64,
        translate: [f64; 2],
    },
    BrightnessContrast {
        brightness: f64,
        contrast: f64,
    },
    GaussianNoise {
        sigma: f64,
    },
    GaussianBlur {
        sigma: f64,
    },
    /// Holes as `[row, col, height, width]`.
    CoarseDropout {
        holes: Vec<[usize; 4]>,
    },
}

pub fn hflip(m: &mut MipStack) {
    let w = m.width;
    for c in 0..NUM_CHANNELS {
        for row in m.channel_mut(c).chunks_mut(w) {
            row.reverse();
        }
    }
}

pub fn vflip(m: &mut MipStack) {
    let (h, w) = (m.height, m.width);
    for c in 0..NUM_CHANNELS {
        let ch = m.channel_mut(c);
        for y in 0..h / 2 {
            let (top, bottom) = ch.split_at_mut((h - 1 - y) * w);
            top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
        }
    }
}

/// Inverse-maps every output pixel through `forward` (a 2×2 linear map
/// about the image centre followed by `shift` pixels) and samples
/// bilinearly with edge clamping.
fn warp(m: &mut MipStack, forward: [[f64; 2]; 2], shift: [f64; 2]) {
    let (h, w) = (m.height, m.width);
    let det = forward[0][0] * forward[1][1] - forward[0][1] * forward[1][0];
    let inv = [[forward[1][1] / det, -forward[0][1] / det], [-forward[1][0] / det, forward[0][0] / det]];
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (max_x, max_y) = ((w - 1) as f64, (h - 1) as f64);
    let mut taps = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx - shift[0];
            let dy = y as f64 - cy - shift[1];
            let sx = (inv[0][0] * dx + inv[0][1] * dy + cx).clamp(0.0, max_x);
            let sy = (inv[1][0] * dx + inv[1][1] * dy + cy).clamp(0.0, max_y);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            taps.push((x0, x1, y0, y1, sx - x0 as f64, sy - y0 as f64));
        }
    }
    for c in 0..NUM_CHANNELS {
        let src = m.channel(c).to_vec();
        let at = |x: usize, y: usize| f64::from(src[y * w + x]);
        for (o, &(x0, x1, y0, y1, fx, fy)) in m.channel_mut(c).iter_mut().zip(&taps) {
            let top = at(x0, y0) + (at(x1, y0) - at(x0, y0)) * fx;
            let bottom = at(x0, y1) + (at(x1, y1) - at(x0, y1)) * fx;
            *o = (top + (bottom - top) * fy) as f32;
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

fn blur(m: &mut MipStack, sigma: f64) {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let (h, w) = (m.height as i64, m.width as i64);
    for c in 0..NUM_CHANNELS {
        let src: Vec<f64> = m.channel(c).iter().map(|&x| f64::from(x)).collect();
        let mut tmp = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                tmp[(y * w + x) as usize] = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * src[(y * w + (x + i as i64 - r).clamp(0, w - 1)) as usize])
                    .sum();
            }
        }
        for (idx, o) in m.channel_mut(c).iter_mut().enumerate() {
            let (y, x) = (idx as i64 / w, idx as i64 % w);
            *o = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * tmp[((y + i as i64 - r).clamp(0, h - 1) * w + x) as usize])
                .sum::<f64>() as f32;
        }
    }
}

fn symmetric(rng: &mut impl Rng, max: f64) -> f64 {
    if max == 0.0 {
        0.0
    } else {
        rng.random_range(-max..=max)
    }
}

/// Applies `policy` to `m` with randomness derived only from `seed`.
pub fn augment(m: &MipStack, seed: u64, policy: &AugmentPolicy) -> (MipStack, Vec<AppliedTransform>) {
    let mut out = m.clone();
    let mut applied = Vec::new();
    let fires = |rng: &mut rand_chacha::ChaCha8Rng, p: f64| rng.random::<f64>() < p;

    let mut rng = stream_rng(seed, 0);
    if fires(&mut rng, policy.hflip_p) {
        hflip(&mut out);
        applied.push(AppliedTransform::HorizontalFlip);
    }
    let mut rng = stream_rng(seed, 1);
    if fires(&mut rng, policy.vflip_p) {
        vflip(&mut out);
        applied.push(AppliedTransform::VerticalFlip);
    }
    let mut rng = stream_rng(seed, 2);
    if fires(&mut rng, policy.rotate.p) {
        let degrees = symmetric(&mut rng, policy.rotate.max_degrees);
        let (s, c) = degrees.to_radians().sin_cos();
        warp(&mut out, [[c, -s], [s, c]], [0.0, 0.0]);
        applied.push(AppliedTransform::Rotate { degrees });
    }
    let mut rng = stream_rng(seed, 3);
    if fires(&mut rng, policy.affine.p) {
        let a = &policy.affine;
        let scale = if a.scale[0] == a.scale[1] { a.scale[0] } else { rng.random_range(a.scale[0]..=a.scale[1]) };
        let shear_degrees = symmetric(&mut rng, a.max_shear_degrees);
        let translate = [symmetric(&mut rng, a.max_translate), symmetric(&mut rng, a.max_translate)];
        let shear = shear_degrees.to_radians().tan();
        let shift = [translate[0] * out.width as f64, translate[1] * out.height as f64];
        warp(&mut out, [[scale, scale * shear], [0.0, scale]], shift);
        applied.push(AppliedTransform::Affine { scale, shear_degrees, translate });
    }
    let mut rng = stream_rng(seed, 4);
    if fires(&mut rng, policy.brightness_contrast.p) {
        let brightness = symmetric(&mut rng, policy.brightness_contrast.brightness);
        let contrast = symmetric(&mut rng, policy.brightness_contrast.contrast);
        for x in out.channels.iter_mut() {
            *x = (f64::from(*x) * (1.0 + contrast) + brightness) as f32;
        }
        applied.push(AppliedTransform::BrightnessContrast { brightness, contrast });
    }
    let mut rng = stream_rng(seed, 5);
    if fires(&mut rng, policy.gaussian_noise.p) {
        let sigma = rng.random_range(0.0..=policy.gaussian_noise.max_sigma);
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            for x in out.channels.iter_mut() {
                *x = (f64::from(*x) + normal.sample(&mut rng)) as f32;
            }
        }
        applied.push(AppliedTransform::GaussianNoise { sigma });
    }
    let mut rng = stream_rng(seed, 6);
    if fires(&mut rng, policy.gaussian_blur.p) {
        let sigma = rng.random_range(0.0..=policy.gaussian_blur.max_sigma);
        if sigma > 1e-3 {
            blur(&mut out, sigma);
        }
        applied.push(AppliedTransform::GaussianBlur { sigma });
    }
    let mut rng = stream_rng(seed, 7);
    let d = &policy.coarse_dropout;
    if fires(&mut rng, d.p) && d.max_holes > 0 && d.max_size > 0 {
        let n = rng.random_range(1..=d.max_holes);
        let mut holes = Vec::with_capacity(n);
        for _ in 0..n {
            let hh = rng.random_range(1..=d.max_size.min(out.height));
            let hw = rng.random_range(1..=d.max_size.min(out.width));
            let y0 = rng.random_range(0..=out.height - hh);
            let x0 = rng.random_range(0..=out.width - hw);
            holes.push([y0, x0, hh, hw]);
        }
        let w = out.width;
        for c in 0..NUM_CHANNELS {
            let fill = out.fill_value(c);
            let ch = out.channel_mut(c);
            for &[y0, x0, hh, hw] in &holes {
                for y in y0..y0 + hh {
                    ch[y * w + x0..y * w + x0 + hw].fill(fill);
                }
            }
        }
        applied.push(AppliedTransform::CoarseDropout { holes });
    }
    (out, applied)
}
