//! Expectation-maximisation driver shared by the joint `(v, y)` mixture and
//! the diagonal mixture behind MEMLIN.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::joint_gmm::{EmConfig, FitReport};
use crate::kmeans::kmeans_labels;
use crate::util::{derive_seed, log_sum_exp, Samples};

/// Variances below this are treated as this when deriving floors, so a
/// constant input dimension still gets a strictly positive floor.
pub(crate) const MIN_DATA_VARIANCE: f64 = 1e-12;

/// A mixture family the driver can fit.
pub(crate) trait Mixture: Sized {
    /// `ln P(k) + ln p(row | k)` for every sample and component, written
    /// row-major into `out` (`n × k`).
    fn log_joint_all(&self, data: &Samples, out: &mut [f64]);

    /// Weighted maximum-likelihood update from row-major responsibilities,
    /// with variance flooring. `mass[k]` is the responsibility total.
    fn m_step(data: &Samples, resp: &[f64], mass: &[f64], floors: &[f64], global: &Moments)
        -> Self;

    /// Moves component `k` onto `row` with the global data variance and a
    /// prior of `1/n`, renormalising the priors.
    fn reseed(&mut self, k: usize, row: &[f64], global: &Moments, n: usize);
}

pub(crate) struct Moments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(crate) fn floors(var: &[f64], fraction: f64) -> Vec<f64> {
    var.iter()
        .map(|v| fraction * v.max(MIN_DATA_VARIANCE))
        .collect()
}

pub(crate) fn fit<M: Mixture>(data: &Samples, k: usize, cfg: &EmConfig) -> Result<(M, FitReport)> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    if k > data.n {
        return Err(Error::invalid(format!(
            "{k} components requested but only {} samples",
            data.n
        )));
    }
    if data.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: "mixture training data".into(),
        });
    }
    let (mean, var) = data.mean_var();
    let global = Moments { mean, var };
    let fl = floors(&global.var, cfg.variance_floor_fraction);

    let mut best: Option<(M, FitReport)> = None;
    for restart in 0..cfg.n_init_restarts {
        let seed = if restart == 0 {
            cfg.seed
        } else {
            derive_seed(cfg.seed, restart as u64)
        };
        let (model, mut report) = fit_once::<M>(data, k, cfg, seed, &fl, &global)?;
        report.restart = restart;
        let better = best
            .as_ref()
            .is_none_or(|(_, b)| report.final_log_likelihood() > b.final_log_likelihood());
        if better {
            best = Some((model, report));
        }
    }
    Ok(best.expect("n_init_restarts >= 1"))
}

fn fit_once<M: Mixture>(
    data: &Samples,
    k: usize,
    cfg: &EmConfig,
    seed: u64,
    fl: &[f64],
    global: &Moments,
) -> Result<(M, FitReport)> {
    let n = data.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = kmeans_labels(data, k, &mut rng);

    let mut resp = vec![0.0; n * k];
    for (i, &j) in labels.iter().enumerate() {
        resp[i * k + j] = 1.0;
    }
    let mass = column_mass(&resp, k);
    let mut model = M::m_step(data, &resp, &mass, fl, global);
    let mut point_ll = vec![0.0; n];
    let mut report = FitReport::default();

    // empty k-means clusters: seed them on the worst-fit points
    if mass.iter().any(|&m| m < 1.0) {
        let mut scratch = vec![0.0; n * k];
        e_step(&model, data, k, &mut scratch, &mut point_ll)?;
        reseed_light(&mut model, &mass, &point_ll, data, global);
        report.reseeds.push(0);
    }

    let mut log_joint = vec![0.0; n * k];
    let mut prev: Option<f64> = None;
    for iter in 0..cfg.max_iterations {
        let ll = e_step(&model, data, k, &mut log_joint, &mut point_ll)?;
        report.log_likelihood.push(ll);
        report.iterations = iter + 1;
        let just_reseeded = report.reseeds.last() == Some(&iter);
        if let (Some(p), false) = (prev, just_reseeded) {
            if (ll - p).abs() <= cfg.rel_tolerance * p.abs() {
                report.converged = true;
                break;
            }
        }
        prev = Some(ll);
        // log_joint now holds responsibilities
        let mass = column_mass(&log_joint, k);
        model = M::m_step(data, &log_joint, &mass, fl, global);
        if mass.iter().any(|&m| m < 1.0) {
            reseed_light(&mut model, &mass, &point_ll, data, global);
            report.reseeds.push(iter + 1);
        }
    }
    Ok((model, report))
}

/// Fills `buf` with responsibilities and `point_ll` with per-sample
/// log-likelihoods; returns the total log-likelihood.
fn e_step<M: Mixture>(
    model: &M,
    data: &Samples,
    k: usize,
    buf: &mut [f64],
    point_ll: &mut [f64],
) -> Result<f64> {
    model.log_joint_all(data, buf);
    let mut total = 0.0;
    for (row, pll) in buf.chunks_exact_mut(k).zip(point_ll.iter_mut()) {
        let lse = log_sum_exp(row);
        if !lse.is_finite() {
            return Err(Error::Numerical(format!(
                "sample log-likelihood is {lse} during EM"
            )));
        }
        row.iter_mut().for_each(|x| *x = (*x - lse).exp());
        *pll = lse;
        total += lse;
    }
    Ok(total)
}

fn column_mass(resp: &[f64], k: usize) -> Vec<f64> {
    let mut mass = vec![0.0; k];
    for row in resp.chunks_exact(k) {
        mass.iter_mut().zip(row).for_each(|(m, r)| *m += r);
    }
    mass
}

/// Re-seeds every component with less than one sample of responsibility mass
/// at the worst-fit samples, distinct per component.
fn reseed_light<M: Mixture>(
    model: &mut M,
    mass: &[f64],
    point_ll: &[f64],
    data: &Samples,
    global: &Moments,
) {
    let mut order: Vec<usize> = (0..data.n).collect();
    order.sort_by(|&a, &b| point_ll[a].total_cmp(&point_ll[b]).then(a.cmp(&b)));
    let mut worst = order.into_iter();
    for (j, &m) in mass.iter().enumerate() {
        if m < 1.0 {
            if let Some(i) = worst.next() {
                model.reseed(j, data.row(i), global, data.n);
            }
        }
    }
}
