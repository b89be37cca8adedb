//! Principal-component transform of the embedding space.
//!
//! The basis is estimated from mean-centred data, but [`PcaTransform::project`]
//! and [`PcaTransform::lift`] apply `Wᵀx` and `W·v` without any mean term: the
//! estimators built on top operate on difference vectors and let their own
//! mixture means absorb offsets.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::dot;

/// Tolerance used when validating a deserialized basis.
const ORTHONORMALITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PcaRepr", into = "PcaRepr")]
pub struct PcaTransform {
    dim: usize,
    n_components: usize,
    /// Row-major `dim × n_components`; column `l` is the `l`-th direction.
    basis: Vec<f64>,
    eigenvalues: Vec<f64>,
    training_mean: Vec<f64>,
}

impl PcaTransform {
    /// Input dimension `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of retained components `L`.
    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn training_mean(&self) -> &[f64] {
        &self.training_mean
    }

    /// Entry `(d, l)` of the basis matrix.
    #[inline]
    pub fn basis_entry(&self, d: usize, l: usize) -> f64 {
        self.basis[d * self.n_components + l]
    }

    /// Column `l` as an owned vector.
    pub fn direction(&self, l: usize) -> Vec<f64> {
        (0..self.dim).map(|d| self.basis_entry(d, l)).collect()
    }

    /// Builds a transform from an explicit basis (rows of length `L`).
    /// Columns must be orthonormal.
    pub fn from_basis(
        rows: Vec<Vec<f64>>,
        eigenvalues: Vec<f64>,
        training_mean: Vec<f64>,
    ) -> Result<Self> {
        PcaRepr {
            dim: rows.len(),
            n_components: eigenvalues.len(),
            eigenvalues,
            basis: rows,
            training_mean,
        }
        .try_into()
    }

    /// `Wᵀx`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, x.len())?;
        Ok(self.project_unchecked(x))
    }

    /// `W·v`.
    pub fn lift(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_components, v.len())?;
        Ok(self.lift_unchecked(v))
    }

    pub(crate) fn project_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let l = self.n_components;
        let mut out = vec![0.0; l];
        for (row, &xd) in self.basis.chunks_exact(l).zip(x) {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * xd;
            }
        }
        out
    }

    pub(crate) fn lift_unchecked(&self, v: &[f64]) -> Vec<f64> {
        self.basis
            .chunks_exact(self.n_components)
            .map(|row| dot(row, v))
            .collect()
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// Fits the top-`n_components` principal directions of `vectors`.
///
/// Columns are eigenvectors of the sample covariance (denominator `N − 1`),
/// sorted by decreasing eigenvalue, each signed so that its largest-magnitude
/// entry is positive.
pub fn fit_pca<V: AsRef<[f64]>>(vectors: &[V], n_components: usize) -> Result<PcaTransform> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "PCA needs at least 2 vectors, got {n}"
        )));
    }
    let dim = vectors[0].as_ref().len();
    if n_components == 0 || n_components > dim {
        return Err(Error::invalid(format!(
            "PCA dimension L={n_components} must be in 1..={dim}"
        )));
    }
    let mut mean = vec![0.0; dim];
    for v in vectors {
        let v = v.as_ref();
        check_len(dim, v.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "PCA input".into(),
            });
        }
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, dim, |i, d| vectors[i].as_ref()[d] - mean[d]);
    let mut cov = centered.tr_mul(&centered);
    cov /= (n - 1) as f64;
    // enforce exact symmetry before the solver sees it
    for i in 0..dim {
        for j in 0..i {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }

    let eig = SymmetricEigen::try_new(cov, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("covariance eigendecomposition did not converge".into()))?;

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(1.0);

    let mut eigenvalues = Vec::with_capacity(n_components);
    let mut columns = Vec::with_capacity(n_components);
    for &j in order.iter().take(n_components) {
        let lambda = eig.eigenvalues[j];
        if lambda < -1e-10 * top {
            return Err(Error::Numerical(format!(
                "covariance has a negative eigenvalue {lambda:e}"
            )));
        }
        eigenvalues.push(lambda.max(0.0));
        let mut col: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        let pivot = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, x)| {
                if x.abs() > best.1 {
                    (i, x.abs())
                } else {
                    best
                }
            })
            .0;
        if col[pivot] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        columns.push(col);
    }

    let mut basis = vec![0.0; dim * n_components];
    for (l, col) in columns.iter().enumerate() {
        for (d, &w) in col.iter().enumerate() {
            basis[d * n_components + l] = w;
        }
    }
    Ok(PcaTransform {
        dim,
        n_components,
        basis,
        eigenvalues,
        training_mean: mean,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PcaRepr {
    #[serde(rename = "D")]
    dim: usize,
    #[serde(rename = "L")]
    n_components: usize,
    eigenvalues: Vec<f64>,
    /// `D` rows of `L` entries.
    basis: Vec<Vec<f64>>,
    training_mean: Vec<f64>,
}

impl From<PcaTransform> for PcaRepr {
    fn from(t: PcaTransform) -> Self {
        let basis = t
            .basis
            .chunks_exact(t.n_components)
            .map(<[f64]>::to_vec)
            .collect();
        PcaRepr {
            dim: t.dim,
            n_components: t.n_components,
            eigenvalues: t.eigenvalues,
            basis,
            training_mean: t.training_mean,
        }
    }
}

impl TryFrom<PcaRepr> for PcaTransform {
    type Error = Error;

    fn try_from(r: PcaRepr) -> Result<Self> {
        let bad = |m: String| Error::InvalidModel(format!("PCA transform: {m}"));
        let (dim, l) = (r.dim, r.n_components);
        if l == 0 || l > dim {
            return Err(bad(format!("L={l} must be in 1..={dim}")));
        }
        if r.basis.len() != dim || r.basis.iter().any(|row| row.len() != l) {
            return Err(bad(format!("basis must be {dim} rows of {l} entries")));
        }
        if r.eigenvalues.len() != l || r.training_mean.len() != dim {
            return Err(bad("eigenvalue or mean length mismatch".into()));
        }
        let all = r
            .basis
            .iter()
            .flatten()
            .chain(&r.eigenvalues)
            .chain(&r.training_mean);
        if all.clone().any(|x| !x.is_finite()) {
            return Err(bad("non-finite entry".into()));
        }
        if r.eigenvalues.windows(2).any(|w| w[0] < w[1]) || r.eigenvalues.iter().any(|&x| x < 0.0) {
            return Err(bad("eigenvalues must be non-negative and descending".into()));
        }
        let basis: Vec<f64> = r.basis.into_iter().flatten().collect();
        for a in 0..l {
            for b in a..l {
                let g: f64 = (0..dim).map(|d| basis[d * l + a] * basis[d * l + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (g - want).abs() > ORTHONORMALITY_TOL {
                    return Err(bad(format!("columns {a},{b} not orthonormal (gram {g})")));
                }
            }
        }
        Ok(PcaTransform {
            dim,
            n_components: l,
            basis,
            eigenvalues: r.eigenvalues,
            training_mean: r.training_mean,
        })
    }
}
