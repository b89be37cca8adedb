//! Small numeric helpers shared across modules.

/// `ln(Σ exp(xᵢ))` with max-subtraction. Returns `-inf` for an empty slice or
/// when every entry is `-inf`.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// SplitMix64 finalizer, used to derive independent sub-seeds (per fold, per
/// speaker, per restart) from one master seed.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major `n × dim` sample matrix.
#[derive(Debug, Clone)]
pub(crate) struct Samples {
    pub data: Vec<f64>,
    pub n: usize,
    pub dim: usize,
}

impl Samples {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut data = Vec::new();
        let mut n = 0;
        for r in rows {
            debug_assert_eq!(r.len(), dim);
            data.extend_from_slice(r);
            n += 1;
        }
        Samples { data, n, dim }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Per-dimension mean and maximum-likelihood variance.
    pub fn mean_var(&self) -> (Vec<f64>, Vec<f64>) {
        let mut mean = vec![0.0; self.dim];
        for i in 0..self.n {
            for (m, x) in mean.iter_mut().zip(self.row(i)) {
                *m += x;
            }
        }
        let inv = 1.0 / self.n as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        let mut var = vec![0.0; self.dim];
        for i in 0..self.n {
            for ((s, x), m) in var.iter_mut().zip(self.row(i)).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|s| *s *= inv);
        (mean, var)
    }
}
