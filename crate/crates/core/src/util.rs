//! Small numeric and indexing helpers shared across modules.

/// C-order index arithmetic over an n-dimensional grid.
#[derive(Debug, Clone)]
pub(crate) struct Grid {
    pub shape: Vec<usize>,
    pub strides: Vec<usize>,
    pub len: usize,
}

impl Grid {
    pub fn new(shape: &[usize]) -> Self {
        let mut strides = vec![1; shape.len()];
        for a in (0..shape.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        Grid {
            shape: shape.to_vec(),
            strides,
            len: shape.iter().product(),
        }
    }

    pub fn unravel(&self, mut idx: usize, out: &mut [usize]) {
        for (a, s) in self.strides.iter().enumerate() {
            out[a] = idx / s;
            idx %= s;
        }
    }

    /// Face-adjacent neighbours of a flat index, in axis order (minus before plus).
    pub fn neighbours(&self, idx: usize, out: &mut Vec<usize>) {
        out.clear();
        let mut rem = idx;
        for (a, &s) in self.strides.iter().enumerate() {
            let coord = rem / s;
            rem %= s;
            if coord > 0 {
                out.push(idx - s);
            }
            if coord + 1 < self.shape[a] {
                out.push(idx + s);
            }
        }
    }
}

/// Linear-interpolation percentile (`q` in [0, 1]) of an already sorted slice.
pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Some(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

pub(crate) fn percentile(values: &mut [f64], q: f64) -> Option<f64> {
    values.sort_by(|a, b| a.total_cmp(b));
    percentile_sorted(values, q)
}

/// splitmix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent per-item seed from a base seed and an index.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}
