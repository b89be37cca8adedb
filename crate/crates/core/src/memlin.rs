//! MEMLIN baseline: a diagonal GMM over observed non-neutral embeddings and
//! one fixed transfer-vector estimate per component, computed offline as the
//! posterior-weighted mean of the training transfer vectors. At test time the
//! fixed estimates are combined with the posteriors of the observation.

use serde::{Deserialize, Serialize};

use crate::em::{self, Mixture, Moments};
use crate::error::{Error, Result};
use crate::joint_gmm::{EmConfig, FitReport};
use crate::util::{log_sum_exp, Samples};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DiagRepr", into = "DiagRepr")]
pub struct DiagonalGmm {
    priors: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagRepr {
    priors: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl From<DiagonalGmm> for DiagRepr {
    fn from(g: DiagonalGmm) -> Self {
        DiagRepr {
            priors: g.priors,
            means: g.means,
            variances: g.variances,
        }
    }
}

impl TryFrom<DiagRepr> for DiagonalGmm {
    type Error = Error;

    fn try_from(r: DiagRepr) -> Result<Self> {
        DiagonalGmm::new(r.priors, r.means, r.variances)
    }
}

impl DiagonalGmm {
    pub fn new(priors: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let bad = |m: &str| Error::InvalidModel(format!("diagonal GMM: {m}"));
        let k = priors.len();
        let dim = means.first().map_or(0, Vec::len);
        if k == 0 || dim == 0 {
            return Err(bad("empty model"));
        }
        if means.len() != k
            || variances.len() != k
            || means.iter().chain(&variances).any(|r| r.len() != dim)
        {
            return Err(bad("shape mismatch"));
        }
        if means.iter().flatten().any(|x| !x.is_finite())
            || variances
                .iter()
                .flatten()
                .any(|&x| !(x > 0.0 && x.is_finite()))
        {
            return Err(bad("means must be finite and variances positive"));
        }
        if priors.iter().any(|&p| p.is_nan() || p < 0.0)
            || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(bad("priors must be non-negative and sum to 1"));
        }
        Ok(DiagonalGmm {
            priors,
            means,
            variances,
        })
    }

    pub fn n_components(&self) -> usize {
        self.priors.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    fn log_density(&self, k: usize, y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((&x, &m), &s) in y.iter().zip(&self.means[k]).zip(&self.variances[k]) {
            acc += LN_2PI + s.ln() + (x - m) * (x - m) / s;
        }
        -0.5 * acc
    }

    pub fn posterior_weights(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: y.len(),
            });
        }
        let logs: Vec<f64> = (0..self.n_components())
            .map(|k| self.priors[k].ln() + self.log_density(k, y))
            .collect();
        let lse = log_sum_exp(&logs);
        let mut w: Vec<f64> = logs.iter().map(|&x| (x - lse).exp()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        Ok(w)
    }
}

pub fn fit_diagonal_gmm<V: AsRef<[f64]>>(
    vectors: &[V],
    k: usize,
    cfg: &EmConfig,
) -> Result<(DiagonalGmm, FitReport)> {
    let dim = vectors
        .first()
        .map(|v| v.as_ref().len())
        .ok_or_else(|| Error::invalid("GMM needs training vectors"))?;
    for v in vectors {
        if v.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.as_ref().len(),
            });
        }
    }
    let data = Samples::from_rows(vectors.iter().map(AsRef::as_ref), dim);
    em::fit::<DiagonalGmm>(&data, k, cfg)
}

impl Mixture for DiagonalGmm {
    fn log_joint_all(&self, data: &Samples, out: &mut [f64]) {
        let k = self.n_components();
        for j in 0..k {
            let log_norm = self.priors[j].ln()
                - 0.5
                    * self.variances[j]
                        .iter()
                        .map(|s| LN_2PI + s.ln())
                        .sum::<f64>();
            let inv: Vec<f64> = self.variances[j].iter().map(|s| 1.0 / s).collect();
            let mean = &self.means[j];
            for i in 0..data.n {
                let q: f64 = data
                    .row(i)
                    .iter()
                    .zip(mean)
                    .zip(&inv)
                    .map(|((x, m), iv)| (x - m) * (x - m) * iv)
                    .sum();
                out[i * k + j] = log_norm - 0.5 * q;
            }
        }
    }

    fn m_step(
        data: &Samples,
        resp: &[f64],
        mass: &[f64],
        floors: &[f64],
        global: &Moments,
    ) -> Self {
        let k = mass.len();
        let total: f64 = mass.iter().sum();
        let mut means = vec![vec![0.0; data.dim]; k];
        let mut variances = vec![vec![0.0; data.dim]; k];
        for j in 0..k {
            if mass[j] <= 0.0 {
                means[j].copy_from_slice(&global.mean);
                variances[j] = global
                    .var
                    .iter()
                    .zip(floors)
                    .map(|(v, f)| v.max(*f))
                    .collect();
                continue;
            }
            let inv = 1.0 / mass[j];
            for i in 0..data.n {
                let r = resp[i * k + j];
                means[j]
                    .iter_mut()
                    .zip(data.row(i))
                    .for_each(|(m, x)| *m += r * x);
            }
            means[j].iter_mut().for_each(|m| *m *= inv);
            for i in 0..data.n {
                let r = resp[i * k + j];
                for ((s, x), m) in variances[j].iter_mut().zip(data.row(i)).zip(&means[j]) {
                    *s += r * (x - m) * (x - m);
                }
            }
            for (s, f) in variances[j].iter_mut().zip(floors) {
                *s = (*s * inv).max(*f);
            }
        }
        DiagonalGmm {
            priors: mass.iter().map(|m| m / total).collect(),
            means,
            variances,
        }
    }

    fn reseed(&mut self, k: usize, row: &[f64], global: &Moments, n: usize) {
        self.means[k].copy_from_slice(row);
        self.variances[k] = global
            .var
            .iter()
            .map(|v| v.max(em::MIN_DATA_VARIANCE))
            .collect();
        self.priors[k] = 1.0 / n as f64;
        let s: f64 = self.priors.iter().sum();
        self.priors.iter_mut().for_each(|p| *p /= s);
    }
}

/// Fixed per-component transfer estimates `v̂ₖ = Σₙ P(k|yₙ) vₙ / Σₙ P(k|yₙ)`.
pub fn partial_estimates<Y: AsRef<[f64]>, V: AsRef<[f64]>>(
    gmm: &DiagonalGmm,
    ys: &[Y],
    vs: &[V],
) -> Result<Vec<Vec<f64>>> {
    if ys.len() != vs.len() || ys.is_empty() {
        return Err(Error::invalid(
            "partial estimates need equally many y and v vectors",
        ));
    }
    let k = gmm.n_components();
    let dim = vs[0].as_ref().len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut mass = vec![0.0; k];
    for (y, v) in ys.iter().zip(vs) {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
        let w = gmm.posterior_weights(y.as_ref())?;
        for j in 0..k {
            mass[j] += w[j];
            sums[j].iter_mut().zip(v).for_each(|(s, x)| *s += w[j] * x);
        }
    }
    // a component no training point belongs to falls back to the global mean
    let global: Vec<f64> = (0..dim)
        .map(|d| vs.iter().map(|v| v.as_ref()[d]).sum::<f64>() / vs.len() as f64)
        .collect();
    Ok(sums
        .into_iter()
        .zip(mass)
        .map(|(s, m)| {
            if m > 0.0 {
                s.into_iter().map(|x| x / m).collect()
            } else {
                global.clone()
            }
        })
        .collect())
}

/// `Σₖ P(k|y) v̂ₖ`.
pub fn combine_partials(gmm: &DiagonalGmm, partials: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let w = gmm.posterior_weights(y)?;
    let dim = partials.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for (wk, p) in w.iter().zip(partials) {
        out.iter_mut().zip(p).for_each(|(o, x)| *o += wk * x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ys = Vec::new();
        let mut vs = Vec::new();
        for i in 0..n {
            let (c, t) = if i % 2 == 0 { (-6.0, 1.0) } else { (6.0, -2.0) };
            ys.push(
                (0..3)
                    .map(|_| c + rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            vs.push(vec![t, 2.0 * t]);
        }
        (ys, vs)
    }

    #[test]
    fn single_component_partial_is_mean_transfer() {
        let (ys, vs) = blobs(40, 1);
        let (g, _) = fit_diagonal_gmm(&ys, 1, &EmConfig::default()).unwrap();
        let p = partial_estimates(&g, &ys, &vs).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p[0][0] - (-0.5)).abs() < 1e-12);
        assert!((p[0][1] - (-1.0)).abs() < 1e-12);
        let est = combine_partials(&g, &p, &[100.0, 0.0, 0.0]).unwrap();
        assert_eq!(est, p[0]);
    }

    #[test]
    fn clusters_get_their_own_transfer() {
        let (ys, vs) = blobs(200, 2);
        let (g, report) = fit_diagonal_gmm(&ys, 2, &EmConfig::with_seed(3)).unwrap();
        assert!(report.max_decrease() <= 1e-9);
        let p = partial_estimates(&g, &ys, &vs).unwrap();
        let left = combine_partials(&g, &p, &[-6.0, -6.0, -6.0]).unwrap();
        let right = combine_partials(&g, &p, &[6.0, 6.0, 6.0]).unwrap();
        assert!((left[0] - 1.0).abs() < 1e-6 && (right[0] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn validation_and_round_trip() {
        assert!(DiagonalGmm::new(vec![1.0], vec![vec![0.0]], vec![vec![0.0]]).is_err());
        assert!(DiagonalGmm::new(vec![0.5], vec![vec![0.0]], vec![vec![1.0]]).is_err());
        let g = DiagonalGmm::new(
            vec![0.25, 0.75],
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0], vec![2.0]],
        )
        .unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<DiagonalGmm>(&s).unwrap(), g);
        assert!(g.posterior_weights(&[0.0, 1.0]).is_err());
    }
}
