use crate::error::{Error, Result};
use crate::mipbuild::{MipStack, NUM_CHANNELS};

pub const DEFAULT_GRID: usize = 4;

/// Pooled descriptor of a stack: for each channel its global mean followed
/// by the `g × g` cell means in row-major cell order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f32>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn feature_dim(grid: usize) -> usize {
    NUM_CHANNELS * (1 + grid * grid)
}

/// Cell boundaries along an axis of length `n`: equal cells of
/// `floor(n / g)`, with the remainder added to the last one.
fn cell_bounds(n: usize, g: usize) -> Vec<(usize, usize)> {
    let step = n / g;
    (0..g).map(|i| (i * step, if i + 1 == g { n } else { (i + 1) * step })).collect()
}

pub fn extract_features(m: &MipStack, grid: usize) -> Result<FeatureVector> {
    if grid == 0 || m.height < grid || m.width < grid {
        return Err(Error::DimMismatch(format!("grid {grid} does not fit a {}x{} stack", m.height, m.width)));
    }
    let rows = cell_bounds(m.height, grid);
    let cols = cell_bounds(m.width, grid);
    let w = m.width;
    let mut out = Vec::with_capacity(feature_dim(grid));
    for c in 0..NUM_CHANNELS {
        let ch = m.channel(c);
        let total: f64 = ch.iter().map(|&x| f64::from(x)).sum();
        out.push((total / ch.len() as f64) as f32);
        for &(y0, y1) in &rows {
            for &(x0, x1) in &cols {
                let mut sum = 0.0;
                for y in y0..y1 {
                    sum += ch[y * w + x0..y * w + x1].iter().map(|&x| f64::from(x)).sum::<f64>();
                }
                out.push((sum / ((y1 - y0) * (x1 - x0)) as f64) as f32);
            }
        }
    }
    Ok(FeatureVector(out))
}
