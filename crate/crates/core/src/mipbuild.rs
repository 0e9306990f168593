//! Four-channel, mask-guided MIP stacks per breast side.
//!
//! Channel order is fixed: first post-contrast, then the clamped
//! subtractions post1 − pre, post2 − pre and last − pre.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    crop_or_pad, crop_rows, localize_rows, nearest_onto, reorient_canonical, resample, select_side, Interp,
    LateralityConvention, RowWindow,
};
use crate::labels::Side;
use crate::tensorio::{BlobMeta, TensorBlob};
use crate::volume::Volume;

pub const NUM_CHANNELS: usize = 4;
pub const CHANNEL_NAMES: [&str; NUM_CHANNELS] = ["post1", "sub1", "sub2", "sub_last"];

/// One patient's DCE series as loaded from disk.
#[derive(Debug, Clone)]
pub struct Study {
    pub patient_id: String,
    pub pre: Option<Volume>,
    /// Post-contrast phases in acquisition order.
    pub posts: Vec<Volume>,
    pub mask: Option<Volume>,
    /// Where the volumes came from, for provenance only.
    pub sources: Vec<String>,
}

/// The four phases the channels are built from. With exactly two post
/// phases `post2` and `last` are the same volume.
#[derive(Debug, Clone, Copy)]
pub struct PhaseSet<'a> {
    pub pre: &'a Volume,
    pub post1: &'a Volume,
    pub post2: &'a Volume,
    pub last: &'a Volume,
}

pub fn select_phases(study: &Study) -> Result<PhaseSet<'_>> {
    let pre = study.pre.as_ref().ok_or(Error::MissingPre)?;
    if study.posts.len() < 2 {
        return Err(Error::TooFewPhases(study.posts.len()));
    }
    Ok(PhaseSet {
        pre,
        post1: &study.posts[0],
        post2: &study.posts[1],
        last: study.posts.last().expect("at least two posts"),
    })
}

/// Zeroes every voxel outside the mask. The mask is thresholded at 0.5;
/// a mask on a different grid is first mapped onto `v` by nearest
/// neighbour (voxels beyond the mask's extent count as outside).
pub fn apply_mask(v: &Volume, mask: &Volume) -> Result<Volume> {
    let resampled;
    let mask = if mask.same_grid(v) {
        mask
    } else {
        resampled = nearest_onto(mask, v.dims(), v.affine(), 0.0)?;
        &resampled
    };
    if let Some(&bad) = mask.data().iter().find(|&&m| !(-1e-6..=1.0 + 1e-6).contains(&m)) {
        return Err(Error::NonBinaryMask(bad));
    }
    let data = v.data().iter().zip(mask.data()).map(|(&x, &m)| if m >= 0.5 { x } else { 0.0 }).collect();
    v.with_data(data)
}

/// `max(post − pre, 0)` voxelwise.
pub fn subtract_clamped(post: &Volume, pre: &Volume) -> Result<Volume> {
    if post.dims() != pre.dims() {
        return Err(Error::GridMismatch(format!("{:?} vs {:?}", post.dims(), pre.dims())));
    }
    let data = post.data().iter().zip(pre.data()).map(|(&a, &b)| (a - b).max(0.0)).collect();
    post.with_data(data)
}

/// A 2D image stored row-major: `data[y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2 {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image2 {
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Maximum intensity projection along z; rows are the height axis.
pub fn mip_z(v: &Volume) -> Image2 {
    let [nx, ny, nz] = v.dims();
    let slice = nx * ny;
    let src = v.data();
    let mut data = src[..slice].to_vec();
    for z in 1..nz {
        for (o, &x) in data.iter_mut().zip(&src[z * slice..(z + 1) * slice]) {
            if x > *o {
                *o = x;
            }
        }
    }
    Image2 { height: ny, width: nx, data }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormConstants {
    pub means: [f64; NUM_CHANNELS],
    pub stds: [f64; NUM_CHANNELS],
}

impl Default for NormConstants {
    fn default() -> Self {
        Self { means: [0.2074, 0.1290, 0.1396, 0.1470], stds: [0.2110, 0.1629, 0.1620, 0.1626] }
    }
}

impl NormConstants {
    pub fn validate(&self) -> Result<()> {
        if self.stds.iter().any(|&s| !(s.is_finite() && s > 0.0)) || self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config(format!("bad normalization constants {self:?}")));
        }
        Ok(())
    }

    /// Standardized value of the bottom of the [0, 1] range.
    pub fn zero_level(&self, channel: usize) -> f64 {
        -self.means[channel] / self.stds[channel]
    }
}

/// What [`normalize_stack`] did, kept so the transform can be undone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub constants: NormConstants,
    pub mins: [f64; NUM_CHANNELS],
    pub maxs: [f64; NUM_CHANNELS],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub patient_id: String,
    pub sources: Vec<String>,
    pub window_start: Option<usize>,
    pub laterality: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MipStack {
    pub height: usize,
    pub width: usize,
    /// `[channel][row][col]`, channel-major.
    pub channels: Vec<f32>,
    pub side: Side,
    pub norm: Option<NormRecord>,
    pub provenance: Provenance,
}

impl MipStack {
    pub fn new(height: usize, width: usize, channels: Vec<f32>, side: Side) -> Result<Self> {
        if height == 0 || width == 0 || channels.len() != NUM_CHANNELS * height * width {
            return Err(Error::DimMismatch(format!("stack of {} values for 4 x {height} x {width}", channels.len())));
        }
        Ok(Self { height, width, channels, side, norm: None, provenance: Provenance::default() })
    }

    pub fn is_normalized(&self) -> bool {
        self.norm.is_some()
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.channels[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.channels[c * n..(c + 1) * n]
    }

    /// Value a dropped-out pixel takes in this stack's current scale: 0 when
    /// unnormalized, the standardized image of the channel minimum otherwise.
    pub fn fill_value(&self, c: usize) -> f32 {
        match &self.norm {
            None => 0.0,
            Some(r) => r.constants.zero_level(c) as f32,
        }
    }

    pub fn to_blob(&self) -> Result<TensorBlob> {
        let mut meta = BlobMeta {
            patient_id: Some(self.provenance.patient_id.clone()),
            side: Some(self.side.as_str().to_string()),
            channel_names: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
            normalized: self.norm.is_some(),
            ..Default::default()
        };
        if let Some(r) = &self.norm {
            meta.extra.insert("normalization".into(), serde_json::to_value(r)?);
        }
        if let Some(w) = self.provenance.window_start {
            meta.extra.insert("window_start".into(), w.into());
        }
        if let Some(l) = &self.provenance.laterality {
            meta.extra.insert("laterality_convention".into(), l.clone().into());
        }
        if !self.provenance.sources.is_empty() {
            meta.extra.insert("sources".into(), serde_json::to_value(&self.provenance.sources)?);
        }
        Ok(TensorBlob::f32(vec![NUM_CHANNELS as u32, self.height as u32, self.width as u32], self.channels.clone())?
            .with_meta(meta))
    }

    pub fn from_blob(blob: &TensorBlob) -> Result<Self> {
        let data = blob.data.as_f32().ok_or_else(|| Error::SchemaMismatch("stack blob must be f32".into()))?;
        if blob.dims.len() != 3 || blob.dims[0] as usize != NUM_CHANNELS {
            return Err(Error::SchemaMismatch(format!("stack dims {:?}", blob.dims)));
        }
        let meta = &blob.meta;
        let side: Side =
            meta.side.as_deref().ok_or_else(|| Error::SchemaMismatch("stack blob without side".into()))?.parse()?;
        let mut stack = MipStack::new(blob.dims[1] as usize, blob.dims[2] as usize, data.to_vec(), side)?;
        stack.norm = match meta.extra.get("normalization") {
            Some(v) => Some(serde_json::from_value(v.clone())?),
            None if meta.normalized => return Err(Error::SchemaMismatch("normalized stack without its record".into())),
            None => None,
        };
        stack.provenance = Provenance {
            patient_id: meta.patient_id.clone().unwrap_or_default(),
            sources: match meta.extra.get("sources") {
                Some(v) => serde_json::from_value(v.clone())?,
                None => Vec::new(),
            },
            window_start: meta.extra.get("window_start").and_then(|v| v.as_u64()).map(|v| v as usize),
            laterality: meta.extra.get("laterality_convention").and_then(|v| v.as_str()).map(str::to_string),
        };
        Ok(stack)
    }
}

/// Per channel: min-max rescale to [0, 1] (a flat channel becomes 0), then
/// standardize with the fixed channel mean and std.
pub fn normalize_stack(m: &MipStack, nc: &NormConstants) -> Result<MipStack> {
    if m.is_normalized() {
        return Err(Error::AlreadyNormalized);
    }
    nc.validate()?;
    let mut out = m.clone();
    let mut mins = [0.0; NUM_CHANNELS];
    let mut maxs = [0.0; NUM_CHANNELS];
    for c in 0..NUM_CHANNELS {
        let ch = out.channel_mut(c);
        let (lo, hi) = ch
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(f64::from(x)), hi.max(f64::from(x))));
        mins[c] = lo;
        maxs[c] = hi;
        let range = hi - lo;
        for x in ch.iter_mut() {
            let unit = if range > 0.0 { (f64::from(*x) - lo) / range } else { 0.0 };
            *x = ((unit - nc.means[c]) / nc.stds[c]) as f32;
        }
    }
    out.norm = Some(NormRecord { constants: *nc, mins, maxs });
    Ok(out)
}

/// Undoes [`normalize_stack`] using the recorded per-channel range.
pub fn denormalize_stack(m: &MipStack) -> Result<MipStack> {
    let r = m.norm.ok_or_else(|| Error::SchemaMismatch("stack is not normalized".into()))?;
    let mut out = m.clone();
    for c in 0..NUM_CHANNELS {
        let range = r.maxs[c] - r.mins[c];
        for x in out.channel_mut(c).iter_mut() {
            let unit = f64::from(*x) * r.constants.stds[c] + r.constants.means[c];
            *x = (unit * range + r.mins[c]) as f32;
        }
    }
    out.norm = None;
    Ok(out)
}

/// Geometry parameters for [`build_stack`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackConfig {
    pub spacing: [f64; 3],
    pub shape: [usize; 3],
    pub row_window: usize,
    pub laterality: LateralityConvention,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            spacing: [0.7, 0.7, 3.0],
            shape: [512, 512, 32],
            row_window: 256,
            laterality: LateralityConvention::default(),
        }
    }
}

/// All phases (and the mask) on the common standardized, row-cropped grid.
#[derive(Debug, Clone)]
pub struct StandardizedStudy {
    pub pre: Volume,
    pub post1: Volume,
    pub post2: Volume,
    pub last: Volume,
    pub mask: Option<Volume>,
    pub window: RowWindow,
}

fn standardize_volume(v: &Volume, cfg: &StackConfig, interp: Interp) -> Result<Volume> {
    let v = reorient_canonical(v)?;
    let v = resample(&v, cfg.spacing, interp)?;
    crop_or_pad(&v, cfg.shape, 0.0)
}

/// Reorient, resample and crop/pad every phase, then crop all of them to
/// the row window localized on the first post-contrast phase.
pub fn standardize(study: &Study, cfg: &StackConfig) -> Result<StandardizedStudy> {
    let phases = select_phases(study)?;
    let pre = standardize_volume(phases.pre, cfg, Interp::Trilinear)?;
    let post1 = standardize_volume(phases.post1, cfg, Interp::Trilinear)?;
    let post2 = standardize_volume(phases.post2, cfg, Interp::Trilinear)?;
    let last = if std::ptr::eq(phases.post2, phases.last) {
        post2.clone()
    } else {
        standardize_volume(phases.last, cfg, Interp::Trilinear)?
    };
    for (name, v) in [("post1", &post1), ("post2", &post2), ("last", &last)] {
        if v.dims() != pre.dims() {
            return Err(Error::GridMismatch(format!("{name} {:?} vs pre {:?}", v.dims(), pre.dims())));
        }
    }
    let mask = match &study.mask {
        Some(m) => {
            // bring the mask onto the pre-contrast acquisition grid first so
            // it follows exactly the same standardization as the phases
            let m = if m.same_grid(phases.pre) {
                m.clone()
            } else {
                nearest_onto(m, phases.pre.dims(), phases.pre.affine(), 0.0)?
            };
            Some(standardize_volume(&m, cfg, Interp::Nearest)?)
        }
        None => None,
    };

    let window = localize_rows(&post1, cfg.row_window);
    let crop = |v: &Volume| crop_rows(v, window);
    Ok(StandardizedStudy {
        pre: crop(&pre)?,
        post1: crop(&post1)?,
        post2: crop(&post2)?,
        last: crop(&last)?,
        mask: mask.as_ref().map(crop).transpose()?,
        window,
    })
}

/// MIPs of `[post1, sub1, sub2, subLast]`, masked when a mask is given.
pub fn mip_channels(
    pre: &Volume,
    post1: &Volume,
    post2: &Volume,
    last: &Volume,
    mask: Option<&Volume>,
) -> Result<Image2Stack> {
    let masked = |v: &Volume| match mask {
        Some(m) => apply_mask(v, m),
        None => Ok(v.clone()),
    };
    let pre = masked(pre)?;
    let post1 = masked(post1)?;
    let sub1 = subtract_clamped(&post1, &pre)?;
    let sub2 = subtract_clamped(&masked(post2)?, &pre)?;
    let sub_last = subtract_clamped(&masked(last)?, &pre)?;
    let planes = [mip_z(&post1), mip_z(&sub1), mip_z(&sub2), mip_z(&sub_last)];
    let (height, width) = (planes[0].height, planes[0].width);
    let mut channels = Vec::with_capacity(NUM_CHANNELS * height * width);
    for p in planes {
        channels.extend(p.data);
    }
    Ok(Image2Stack { height, width, channels })
}

/// Raw 4-channel planes before they are tagged with a side.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2Stack {
    pub height: usize,
    pub width: usize,
    pub channels: Vec<f32>,
}

/// Unnormalized stack for one side of an already standardized study.
pub fn stack_for_side(std_study: &StandardizedStudy, side: Side, cfg: &StackConfig) -> Result<MipStack> {
    let half = |v: &Volume| select_side(v, side, cfg.laterality);
    let mask = std_study.mask.as_ref().map(half).transpose()?;
    let planes = mip_channels(
        &half(&std_study.pre)?,
        &half(&std_study.post1)?,
        &half(&std_study.post2)?,
        &half(&std_study.last)?,
        mask.as_ref(),
    )?;
    let mut stack = MipStack::new(planes.height, planes.width, planes.channels, side)?;
    stack.provenance.window_start = Some(std_study.window.start);
    stack.provenance.laterality = Some(cfg.laterality.describe().to_string());
    Ok(stack)
}

/// Full pipeline for one breast: standardize, localize, split, mask,
/// subtract, project. The result is not normalized.
pub fn build_stack(study: &Study, side: Side, cfg: &StackConfig) -> Result<MipStack> {
    let std_study = standardize(study, cfg)?;
    let mut stack = stack_for_side(&std_study, side, cfg)?;
    stack.provenance.patient_id = study.patient_id.clone();
    stack.provenance.sources = study.sources.clone();
    Ok(stack)
}

/// Both sides, sharing one standardization pass.
pub fn build_stacks(study: &Study, cfg: &StackConfig) -> Result<[MipStack; 2]> {
    let std_study = standardize(study, cfg)?;
    let mut out = Side::BOTH.map(|s| stack_for_side(&std_study, s, cfg));
    for s in out.iter_mut().flatten() {
        s.provenance.patient_id = study.patient_id.clone();
        s.provenance.sources = study.sources.clone();
    }
    let [a, b] = out;
    Ok([a?, b?])
}
