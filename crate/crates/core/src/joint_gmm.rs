//! Joint Gaussian mixture over stacked `z = (a, y)` vectors, where `y` is the
//! observed (non-neutral) embedding in the PCA domain and `a` the quantity to
//! estimate from it: the transfer vector `v` for the main estimator, or the
//! normal embedding `x` for the direct variant. Field names follow the
//! transfer-vector case.
//!
//! Each component's `2L × 2L` covariance consists of three diagonal `L × L`
//! blocks (`Σ_vv`, `Σ_vy = Σ_yvᵀ`, `Σ_yy`), so it factorises into `L`
//! independent `2 × 2` blocks, one per PCA dimension. Training, densities and
//! conditional means all work block by block.

use serde::{Deserialize, Serialize};

use crate::em::{self, Mixture, Moments};
use crate::error::{Error, Result};
use crate::util::{log_sum_exp, Samples};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// EM hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop when `|ΔLL| ≤ rel_tolerance · |LL|`.
    pub rel_tolerance: f64,
    /// Variance floor as a fraction of each dimension's data variance.
    pub variance_floor_fraction: f64,
    pub seed: u64,
    pub n_init_restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iterations: 200,
            rel_tolerance: 1e-6,
            variance_floor_fraction: 1e-6,
            seed: 0,
            n_init_restarts: 1,
        }
    }
}

impl EmConfig {
    pub fn with_seed(seed: u64) -> Self {
        EmConfig {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.n_init_restarts == 0 {
            return Err(Error::invalid(
                "max_iterations and n_init_restarts must be positive",
            ));
        }
        if self.rel_tolerance.is_nan()
            || self.rel_tolerance <= 0.0
            || self.variance_floor_fraction.is_nan()
            || self.variance_floor_fraction <= 0.0
        {
            return Err(Error::invalid(
                "EM tolerance and variance floor fraction must be positive",
            ));
        }
        Ok(())
    }
}

/// Diagnostics from one EM fit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    /// Total data log-likelihood at the start of each iteration.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Iterations after which at least one starved component was re-seeded.
    /// Monotonicity of `log_likelihood` only holds between these points.
    pub reseeds: Vec<usize>,
    /// Which restart produced the returned model.
    pub restart: usize,
}

impl FitReport {
    pub fn final_log_likelihood(&self) -> f64 {
        self.log_likelihood
            .last()
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }

    /// Largest decrease between consecutive iterations not separated by a
    /// re-seed; `0` when the trace is non-decreasing.
    pub fn max_decrease(&self) -> f64 {
        self.log_likelihood
            .windows(2)
            .enumerate()
            .filter(|(i, _)| !self.reseeds.contains(&(i + 1)))
            .map(|(_, w)| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmRepr", into = "GmmRepr")]
pub struct JointGmm {
    priors: Vec<f64>,
    mu_v: Vec<Vec<f64>>,
    mu_y: Vec<Vec<f64>>,
    sigma_vv: Vec<Vec<f64>>,
    sigma_vy: Vec<Vec<f64>>,
    sigma_yy: Vec<Vec<f64>>,
}

impl JointGmm {
    /// Validated constructor. Priors must be non-negative and sum to one;
    /// every per-dimension `2 × 2` block must be positive definite.
    pub fn new(
        priors: Vec<f64>,
        mu_v: Vec<Vec<f64>>,
        mu_y: Vec<Vec<f64>>,
        sigma_vv: Vec<Vec<f64>>,
        sigma_vy: Vec<Vec<f64>>,
        sigma_yy: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let bad = |m: String| Error::InvalidModel(format!("joint GMM: {m}"));
        let k = priors.len();
        if k == 0 {
            return Err(bad("no components".into()));
        }
        let l = mu_v.first().map_or(0, Vec::len);
        if l == 0 {
            return Err(bad("zero dimension".into()));
        }
        for (name, t) in [
            ("mu_v", &mu_v),
            ("mu_y", &mu_y),
            ("sigma_vv", &sigma_vv),
            ("sigma_vy", &sigma_vy),
            ("sigma_yy", &sigma_yy),
        ] {
            if t.len() != k || t.iter().any(|row| row.len() != l) {
                return Err(bad(format!("{name} must be {k} × {l}")));
            }
            if t.iter().flatten().any(|x| !x.is_finite()) {
                return Err(bad(format!("{name} has a non-finite entry")));
            }
        }
        if priors.iter().any(|&p| p.is_nan() || p < 0.0)
            || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(bad("priors must be non-negative and sum to 1".into()));
        }
        for j in 0..k {
            for d in 0..l {
                let (a, b, c) = (sigma_vv[j][d], sigma_vy[j][d], sigma_yy[j][d]);
                if !(a > 0.0 && c > 0.0 && a * c - b * b > 0.0) {
                    return Err(bad(format!(
                        "component {j} dimension {d} block is not positive definite"
                    )));
                }
            }
        }
        Ok(JointGmm {
            priors,
            mu_v,
            mu_y,
            sigma_vv,
            sigma_vy,
            sigma_yy,
        })
    }

    pub fn n_components(&self) -> usize {
        self.priors.len()
    }

    /// Per-block dimension `L`.
    pub fn dim(&self) -> usize {
        self.mu_v[0].len()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }
    pub fn mu_v(&self) -> &[Vec<f64>] {
        &self.mu_v
    }
    pub fn mu_y(&self) -> &[Vec<f64>] {
        &self.mu_y
    }
    pub fn sigma_vv(&self) -> &[Vec<f64>] {
        &self.sigma_vv
    }
    pub fn sigma_vy(&self) -> &[Vec<f64>] {
        &self.sigma_vy
    }
    pub fn sigma_yy(&self) -> &[Vec<f64>] {
        &self.sigma_yy
    }

    fn check_component(&self, k: usize) -> Result<()> {
        if k < self.n_components() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "component {k} out of range (K={})",
                self.n_components()
            )))
        }
    }

    fn check_y(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: y.len(),
            });
        }
        Ok(())
    }

    /// `ln N(y | μ_y, Σ_yy)` for component `k`.
    pub fn component_log_density_y(&self, k: usize, y: &[f64]) -> Result<f64> {
        self.check_component(k)?;
        self.check_y(y)?;
        Ok(self.log_density_y_unchecked(k, y))
    }

    fn log_density_y_unchecked(&self, k: usize, y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((&yd, &m), &s) in y.iter().zip(&self.mu_y[k]).zip(&self.sigma_yy[k]) {
            let e = yd - m;
            acc += LN_2PI + s.ln() + e * e / s;
        }
        -0.5 * acc
    }

    /// Posterior component probabilities `P(k | y)` by Bayes' rule over the
    /// `y`-marginals, evaluated in log space.
    pub fn posterior_weights(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_y(y)?;
        Ok(self.posterior_unchecked(y))
    }

    fn posterior_unchecked(&self, y: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = (0..self.n_components())
            .map(|k| self.priors[k].ln() + self.log_density_y_unchecked(k, y))
            .collect();
        let lse = log_sum_exp(&logs);
        let mut w: Vec<f64> = logs.iter().map(|&x| (x - lse).exp()).collect();
        // exact normalisation after exponentiation
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        w
    }

    /// `E[v | y, k] = μ_v + Σ_vy Σ_yy⁻¹ (y − μ_y)`, per dimension.
    pub fn conditional_mean_v(&self, k: usize, y: &[f64]) -> Result<Vec<f64>> {
        self.check_component(k)?;
        self.check_y(y)?;
        Ok(self.conditional_mean_unchecked(k, y))
    }

    fn conditional_mean_unchecked(&self, k: usize, y: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|d| {
                self.mu_v[k][d]
                    + self.sigma_vy[k][d] / self.sigma_yy[k][d] * (y[d] - self.mu_y[k][d])
            })
            .collect()
    }

    /// MMSE estimate `E[v | y] = Σ_k P(k|y) E[v | y, k]`.
    pub fn mmse_estimate(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_y(y)?;
        let w = self.posterior_unchecked(y);
        let mut out = vec![0.0; self.dim()];
        for (k, &wk) in w.iter().enumerate() {
            if wk == 0.0 {
                continue;
            }
            for (o, m) in out.iter_mut().zip(self.conditional_mean_unchecked(k, y)) {
                *o += wk * m;
            }
        }
        Ok(out)
    }

    /// Total log-likelihood of stacked `(v, y)` samples under the full joint
    /// density.
    pub fn log_likelihood<A: AsRef<[f64]>, B: AsRef<[f64]>>(
        &self,
        pairs: &[(A, B)],
    ) -> Result<f64> {
        let data = stack_pairs(pairs, self.dim())?;
        let k = self.n_components();
        let mut buf = vec![0.0; data.n * k];
        self.log_joint_all(&data, &mut buf);
        Ok(buf.chunks_exact(k).map(log_sum_exp).sum())
    }
}

fn stack_pairs<A: AsRef<[f64]>, B: AsRef<[f64]>>(pairs: &[(A, B)], l: usize) -> Result<Samples> {
    let mut data = Vec::with_capacity(pairs.len() * 2 * l);
    for (a, b) in pairs {
        let (a, b) = (a.as_ref(), b.as_ref());
        for part in [a, b] {
            if part.len() != l {
                return Err(Error::DimensionMismatch {
                    expected: l,
                    actual: part.len(),
                });
            }
        }
        data.extend_from_slice(a);
        data.extend_from_slice(b);
    }
    Ok(Samples {
        data,
        n: pairs.len(),
        dim: 2 * l,
    })
}

/// Fits a `k`-component joint mixture to `(v, y)` pairs by EM.
pub fn fit_joint_gmm<A: AsRef<[f64]>, B: AsRef<[f64]>>(
    pairs: &[(A, B)],
    k: usize,
    cfg: &EmConfig,
) -> Result<(JointGmm, FitReport)> {
    let l = pairs
        .first()
        .map(|(a, _)| a.as_ref().len())
        .ok_or_else(|| Error::invalid("joint GMM needs training pairs"))?;
    if l == 0 {
        return Err(Error::invalid("zero-dimensional training vectors"));
    }
    let data = stack_pairs(pairs, l)?;
    em::fit::<JointGmm>(&data, k, cfg)
}

impl Mixture for JointGmm {
    fn log_joint_all(&self, data: &Samples, out: &mut [f64]) {
        let k = self.n_components();
        let l = self.dim();
        for j in 0..k {
            // per-dimension inverse-block entries and the log normaliser
            let mut inv = Vec::with_capacity(l);
            let mut log_norm = self.priors[j].ln();
            for d in 0..l {
                let (a, b, c) = (
                    self.sigma_vv[j][d],
                    self.sigma_vy[j][d],
                    self.sigma_yy[j][d],
                );
                let det = a * c - b * b;
                log_norm -= LN_2PI + 0.5 * det.ln();
                inv.push((c / det, b / det, a / det));
            }
            let (mv, my) = (&self.mu_v[j], &self.mu_y[j]);
            for i in 0..data.n {
                let z = data.row(i);
                let (v, y) = z.split_at(l);
                let mut q = 0.0;
                for d in 0..l {
                    let dv = v[d] - mv[d];
                    let dy = y[d] - my[d];
                    let (ia, ib, ic) = inv[d];
                    q += ia * dv * dv - 2.0 * ib * dv * dy + ic * dy * dy;
                }
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
        let l = data.dim / 2;
        let total: f64 = mass.iter().sum();
        let mut g = JointGmm {
            priors: mass.iter().map(|m| m / total).collect(),
            mu_v: vec![vec![0.0; l]; k],
            mu_y: vec![vec![0.0; l]; k],
            sigma_vv: vec![vec![0.0; l]; k],
            sigma_vy: vec![vec![0.0; l]; k],
            sigma_yy: vec![vec![0.0; l]; k],
        };
        for j in 0..k {
            if mass[j] <= 0.0 {
                // starved; the driver re-seeds it
                g.mu_v[j].copy_from_slice(&global.mean[..l]);
                g.mu_y[j].copy_from_slice(&global.mean[l..]);
                g.sigma_vv[j].copy_from_slice(&global.var[..l]);
                g.sigma_yy[j].copy_from_slice(&global.var[l..]);
                floor_component(&mut g, j, floors);
                continue;
            }
            let inv = 1.0 / mass[j];
            let mut mean = vec![0.0; 2 * l];
            for i in 0..data.n {
                let r = resp[i * k + j];
                mean.iter_mut()
                    .zip(data.row(i))
                    .for_each(|(m, x)| *m += r * x);
            }
            mean.iter_mut().for_each(|m| *m *= inv);
            let (mut svv, mut svy, mut syy) = (vec![0.0; l], vec![0.0; l], vec![0.0; l]);
            for i in 0..data.n {
                let r = resp[i * k + j];
                let z = data.row(i);
                for d in 0..l {
                    let dv = z[d] - mean[d];
                    let dy = z[l + d] - mean[l + d];
                    svv[d] += r * dv * dv;
                    svy[d] += r * dv * dy;
                    syy[d] += r * dy * dy;
                }
            }
            g.mu_v[j].copy_from_slice(&mean[..l]);
            g.mu_y[j].copy_from_slice(&mean[l..]);
            for d in 0..l {
                g.sigma_vv[j][d] = svv[d] * inv;
                g.sigma_vy[j][d] = svy[d] * inv;
                g.sigma_yy[j][d] = syy[d] * inv;
            }
            floor_component(&mut g, j, floors);
        }
        g
    }

    fn reseed(&mut self, k: usize, row: &[f64], global: &Moments, n: usize) {
        let l = self.dim();
        self.mu_v[k].copy_from_slice(&row[..l]);
        self.mu_y[k].copy_from_slice(&row[l..]);
        self.sigma_vv[k].copy_from_slice(&global.var[..l]);
        self.sigma_yy[k].copy_from_slice(&global.var[l..]);
        self.sigma_vy[k].iter_mut().for_each(|x| *x = 0.0);
        let floors = em::floors(&global.var, f64::MIN_POSITIVE);
        floor_component(self, k, &floors);
        self.priors[k] = 1.0 / n as f64;
        let s: f64 = self.priors.iter().sum();
        self.priors.iter_mut().for_each(|p| *p /= s);
    }
}

/// Applies the variance floors to component `j`, shrinking the cross term
/// until each `2 × 2` block has determinant at least `floor_v · floor_y`.
fn floor_component(g: &mut JointGmm, j: usize, floors: &[f64]) {
    let l = g.dim();
    for d in 0..l {
        let (fv, fy) = (floors[d], floors[l + d]);
        let a = g.sigma_vv[j][d].max(fv);
        let c = g.sigma_yy[j][d].max(fy);
        let b = g.sigma_vy[j][d];
        let limit = a * c - fv * fy;
        let b = if b * b > limit {
            b.signum() * limit.max(0.0).sqrt() * (1.0 - 1e-9)
        } else {
            b
        };
        g.sigma_vv[j][d] = a;
        g.sigma_vy[j][d] = b;
        g.sigma_yy[j][d] = c;
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmRepr {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "L")]
    l: usize,
    priors: Vec<f64>,
    mu_v: Vec<Vec<f64>>,
    mu_y: Vec<Vec<f64>>,
    sigma_vv: Vec<Vec<f64>>,
    sigma_vy: Vec<Vec<f64>>,
    sigma_yy: Vec<Vec<f64>>,
}

impl From<JointGmm> for GmmRepr {
    fn from(g: JointGmm) -> Self {
        GmmRepr {
            k: g.n_components(),
            l: g.dim(),
            priors: g.priors,
            mu_v: g.mu_v,
            mu_y: g.mu_y,
            sigma_vv: g.sigma_vv,
            sigma_vy: g.sigma_vy,
            sigma_yy: g.sigma_yy,
        }
    }
}

impl TryFrom<GmmRepr> for JointGmm {
    type Error = Error;

    fn try_from(r: GmmRepr) -> Result<Self> {
        let g = JointGmm::new(r.priors, r.mu_v, r.mu_y, r.sigma_vv, r.sigma_vy, r.sigma_yy)?;
        if g.n_components() != r.k || g.dim() != r.l {
            return Err(Error::InvalidModel(format!(
                "joint GMM header says K={} L={} but arrays are {}×{}",
                r.k,
                r.l,
                g.n_components(),
                g.dim()
            )));
        }
        Ok(g)
    }
}
