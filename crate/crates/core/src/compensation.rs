//! Trained compensation models and the estimators compared in experiments.
//!
//! | kind         | estimate of the normal embedding                          |
//! |--------------|-----------------------------------------------------------|
//! | `identity`   | `ỹ` unchanged (uncompensated baseline)                     |
//! | `mmse_v`     | `ỹ − W·E[v | Wᵀỹ]`, joint mixture over `(v, y)`            |
//! | `mmse_x`     | `W·E[x | Wᵀỹ]`, joint mixture over `(x, y)`                |
//! | `memlin`     | `ỹ − Σₖ P(k|ỹ) v̂ₖ` in the full embedding space             |
//! | `memlin_pca` | `ỹ − W·Σₖ P(k|y) v̂ₖ` with `y = Wᵀỹ`                         |
//!
//! `W` is the `D × L` PCA basis fitted on the pooled normal and non-neutral
//! training embeddings.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Mode, PairedSet};
use crate::error::{Error, Result};
use crate::joint_gmm::{fit_joint_gmm, EmConfig, FitReport, JointGmm};
use crate::memlin::{self, DiagonalGmm};
use crate::pca::{fit_pca, PcaTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Identity,
    MmseV,
    MmseX,
    Memlin,
    MemlinPca,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Identity,
        EstimatorKind::MmseV,
        EstimatorKind::MmseX,
        EstimatorKind::Memlin,
        EstimatorKind::MemlinPca,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Identity => "identity",
            EstimatorKind::MmseV => "mmse_v",
            EstimatorKind::MmseX => "mmse_x",
            EstimatorKind::Memlin => "memlin",
            EstimatorKind::MemlinPca => "memlin_pca",
        }
    }

    /// Whether the estimator works in the PCA domain (and so depends on `L`).
    pub fn uses_pca(self) -> bool {
        matches!(
            self,
            EstimatorKind::MmseV | EstimatorKind::MmseX | EstimatorKind::MemlinPca
        )
    }

    /// Whether training fits any mixture (and so depends on `K`).
    pub fn uses_mixture(self) -> bool {
        self != EstimatorKind::Identity
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown estimator {s:?} (expected one of identity, mmse_v, mmse_x, memlin, memlin_pca)"
                ))
            })
    }
}

/// `ỹ − x̃` for one training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferVector(pub Vec<f64>);

impl AsRef<[f64]> for TransferVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for TransferVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Transfer vectors of every pair, in pair order.
pub fn compute_transfer_vectors(pairs: &PairedSet) -> Vec<TransferVector> {
    pairs
        .pairs
        .iter()
        .map(|p| {
            TransferVector(
                p.nonneutral
                    .iter()
                    .zip(&p.normal)
                    .map(|(y, x)| y - x)
                    .collect(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    /// PCA dimension `L`.
    pub pca_dim: usize,
    /// Mixture components `K`.
    pub mixtures: usize,
    pub em: EmConfig,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            pca_dim: 16,
            mixtures: 8,
            em: EmConfig::default(),
        }
    }
}

/// Training diagnostics.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub fit: Option<FitReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct CompensationModel {
    kind: EstimatorKind,
    mode: Option<Mode>,
    embedding_dim: Option<usize>,
    pca: Option<PcaTransform>,
    joint: Option<JointGmm>,
    memlin_gmm: Option<DiagonalGmm>,
    memlin_partials: Option<Vec<Vec<f64>>>,
}

impl CompensationModel {
    /// The pass-through model.
    pub fn identity(mode: Option<Mode>, embedding_dim: Option<usize>) -> Self {
        CompensationModel {
            kind: EstimatorKind::Identity,
            mode,
            embedding_dim,
            pca: None,
            joint: None,
            memlin_gmm: None,
            memlin_partials: None,
        }
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    /// Non-neutral mode the model was trained for.
    pub fn mode(&self) -> Option<&Mode> {
        self.mode.as_ref()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embedding_dim
    }

    pub fn pca(&self) -> Option<&PcaTransform> {
        self.pca.as_ref()
    }

    pub fn joint(&self) -> Option<&JointGmm> {
        self.joint.as_ref()
    }

    pub fn memlin_gmm(&self) -> Option<&DiagonalGmm> {
        self.memlin_gmm.as_ref()
    }

    pub fn memlin_partials(&self) -> Option<&[Vec<f64>]> {
        self.memlin_partials.as_deref()
    }

    /// Dimension the estimator itself works in: `L` for PCA-domain kinds,
    /// `D` otherwise.
    pub fn working_dim(&self) -> Option<usize> {
        match &self.pca {
            Some(p) => Some(p.n_components()),
            None => self.embedding_dim,
        }
    }

    fn missing(&self, part: &'static str) -> Error {
        Error::MissingModelPart {
            kind: self.kind.to_string(),
            part,
        }
    }

    fn need_pca(&self) -> Result<&PcaTransform> {
        self.pca.as_ref().ok_or_else(|| self.missing("pca"))
    }

    fn need_joint(&self) -> Result<&JointGmm> {
        self.joint.as_ref().ok_or_else(|| self.missing("joint"))
    }

    fn need_memlin(&self) -> Result<(&DiagonalGmm, &[Vec<f64>])> {
        let g = self
            .memlin_gmm
            .as_ref()
            .ok_or_else(|| self.missing("memlin_gmm"))?;
        let p = self
            .memlin_partials
            .as_deref()
            .ok_or_else(|| self.missing("memlin_partials"))?;
        Ok((g, p))
    }

    /// Estimates the normal embedding from the observed non-neutral `y`.
    pub fn compensate(&self, y: &[f64]) -> Result<Vec<f64>> {
        if let Some(d) = self.embedding_dim {
            if y.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: y.len(),
                });
            }
        }
        match self.kind {
            EstimatorKind::Identity => Ok(y.to_vec()),
            EstimatorKind::MmseV => {
                let pca = self.need_pca()?;
                let v = self.need_joint()?.mmse_estimate(&pca.project(y)?)?;
                Ok(subtract(y, &pca.lift(&v)?))
            }
            EstimatorKind::MmseX => {
                let pca = self.need_pca()?;
                let x = self.need_joint()?.mmse_estimate(&pca.project(y)?)?;
                pca.lift(&x)
            }
            EstimatorKind::Memlin => {
                let (g, partials) = self.need_memlin()?;
                Ok(subtract(y, &memlin::combine_partials(g, partials, y)?))
            }
            EstimatorKind::MemlinPca => {
                let pca = self.need_pca()?;
                let (g, partials) = self.need_memlin()?;
                let v = memlin::combine_partials(g, partials, &pca.project(y)?)?;
                Ok(subtract(y, &pca.lift(&v)?))
            }
        }
    }

    /// `y − W Wᵀ y`: the part of `y` a PCA-domain estimator cannot see.
    pub fn residual_out_of_subspace(&self, y: &[f64]) -> Result<Vec<f64>> {
        let pca = self.need_pca()?;
        Ok(subtract(y, &pca.lift(&pca.project(y)?)?))
    }

    /// Compensates every record of the model's non-neutral mode; all other
    /// records are copied unchanged.
    pub fn compensate_corpus(&self, corpus: &Corpus) -> Result<Corpus> {
        corpus.map_vectors(|_, r| {
            if !self.applies_to(&r.mode) {
                return Ok(r.vector.clone());
            }
            self.compensate(&r.vector)
        })
    }

    /// Whether a record of mode `m` is compensated by this model (oracle mode
    /// detection: only the trained non-neutral mode is touched).
    pub fn applies_to(&self, m: &Mode) -> bool {
        self.kind != EstimatorKind::Identity && self.mode.as_ref() == Some(m)
    }
}

fn subtract(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Trains an estimator of `kind` on paired data.
pub fn train(
    kind: EstimatorKind,
    pairs: &PairedSet,
    params: &TrainParams,
) -> Result<(CompensationModel, TrainReport)> {
    if pairs.is_empty() {
        return Err(Error::NoPairs {
            mode: pairs.mode.to_string(),
            skipped: pairs.skipped,
        });
    }
    let dim = pairs.dimension();
    let mut report = TrainReport::default();
    let mut model = CompensationModel::identity(Some(pairs.mode.clone()), Some(dim));
    model.kind = kind;
    if kind == EstimatorKind::Identity {
        return Ok((model, report));
    }
    params.em.validate()?;
    let k = params.mixtures;
    if k == 0 || k > pairs.len() {
        return Err(Error::invalid(format!(
            "K={k} must be in 1..={} (number of training pairs)",
            pairs.len()
        )));
    }
    let transfers = compute_transfer_vectors(pairs);

    if kind == EstimatorKind::Memlin {
        let ys: Vec<&[f64]> = pairs
            .pairs
            .iter()
            .map(|p| p.nonneutral.as_slice())
            .collect();
        let (g, fit) = memlin::fit_diagonal_gmm(&ys, k, &params.em)?;
        model.memlin_partials = Some(memlin::partial_estimates(&g, &ys, &transfers)?);
        model.memlin_gmm = Some(g);
        report.fit = Some(fit);
        return Ok((model, report));
    }

    let l = params.pca_dim;
    if l == 0 || l > dim {
        return Err(Error::invalid(format!(
            "PCA dimension L={l} must be in 1..={dim}"
        )));
    }
    let pooled: Vec<&[f64]> = pairs
        .pairs
        .iter()
        .flat_map(|p| [p.normal.as_slice(), p.nonneutral.as_slice()])
        .collect();
    if l + 1 > pooled.len() {
        report.warnings.push(format!(
            "L={l} exceeds the number of pooled training vectors minus one ({})",
            pooled.len() - 1
        ));
    }
    let pca = fit_pca(&pooled, l)?;
    let ys: Vec<Vec<f64>> = pairs
        .pairs
        .iter()
        .map(|p| pca.project_unchecked(&p.nonneutral))
        .collect();

    match kind {
        EstimatorKind::MmseV | EstimatorKind::MmseX => {
            let targets: Vec<Vec<f64>> = if kind == EstimatorKind::MmseV {
                transfers.iter().map(|v| pca.project_unchecked(v)).collect()
            } else {
                pairs
                    .pairs
                    .iter()
                    .map(|p| pca.project_unchecked(&p.normal))
                    .collect()
            };
            let stacked: Vec<(&[f64], &[f64])> = targets
                .iter()
                .zip(&ys)
                .map(|(a, y)| (a.as_slice(), y.as_slice()))
                .collect();
            let (joint, fit) = fit_joint_gmm(&stacked, k, &params.em)?;
            model.joint = Some(joint);
            report.fit = Some(fit);
        }
        EstimatorKind::MemlinPca => {
            let vs: Vec<Vec<f64>> = transfers.iter().map(|v| pca.project_unchecked(v)).collect();
            let (g, fit) = memlin::fit_diagonal_gmm(&ys, k, &params.em)?;
            model.memlin_partials = Some(memlin::partial_estimates(&g, &ys, &vs)?);
            model.memlin_gmm = Some(g);
            report.fit = Some(fit);
        }
        EstimatorKind::Identity | EstimatorKind::Memlin => unreachable!(),
    }
    model.pca = Some(pca);
    if let Some(fit) = &report.fit {
        if !fit.reseeds.is_empty() {
            report.warnings.push(format!(
                "{} mixture re-seed event(s) for starved components",
                fit.reseeds.len()
            ));
        }
    }
    Ok((model, report))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRepr {
    kind: EstimatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pca: Option<PcaTransform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joint: Option<JointGmm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    memlin_gmm: Option<DiagonalGmm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    memlin_partials: Option<Vec<Vec<f64>>>,
}

impl From<CompensationModel> for ModelRepr {
    fn from(m: CompensationModel) -> Self {
        ModelRepr {
            kind: m.kind,
            mode: m.mode,
            embedding_dim: m.embedding_dim,
            pca: m.pca,
            joint: m.joint,
            memlin_gmm: m.memlin_gmm,
            memlin_partials: m.memlin_partials,
        }
    }
}

impl TryFrom<ModelRepr> for CompensationModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        let m = CompensationModel {
            kind: r.kind,
            mode: r.mode,
            embedding_dim: r.embedding_dim,
            pca: r.pca,
            joint: r.joint,
            memlin_gmm: r.memlin_gmm,
            memlin_partials: r.memlin_partials,
        };
        m.validate()?;
        Ok(m)
    }
}

impl CompensationModel {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::InvalidModel(format!("{} model: {msg}", self.kind));
        if self.kind != EstimatorKind::Identity {
            if self.mode.is_none() {
                return Err(self.missing("mode"));
            }
            if self.embedding_dim.is_none() {
                return Err(self.missing("embedding_dim"));
            }
        }
        if self.kind.uses_pca() {
            let pca = self.need_pca()?;
            if Some(pca.dim()) != self.embedding_dim {
                return Err(bad(format!(
                    "PCA input dimension {} ≠ embedding_dim",
                    pca.dim()
                )));
            }
        }
        let work = self.working_dim();
        match self.kind {
            EstimatorKind::MmseV | EstimatorKind::MmseX => {
                if Some(self.need_joint()?.dim()) != work {
                    return Err(bad("joint GMM dimension ≠ PCA dimension".into()));
                }
            }
            EstimatorKind::Memlin | EstimatorKind::MemlinPca => {
                let (g, p) = self.need_memlin()?;
                if Some(g.dim()) != work
                    || p.len() != g.n_components()
                    || p.iter()
                        .any(|row| Some(row.len()) != work || row.iter().any(|x| !x.is_finite()))
                {
                    return Err(bad("MEMLIN mixture/partials shape mismatch".into()));
                }
            }
            EstimatorKind::Identity => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Pair;
    use crate::util::dot;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn shouted() -> Mode {
        Mode::new("shouted").unwrap()
    }

    /// Pairs with `y = x + c + jitter`.
    fn paired(n: usize, dim: usize, shift: &[f64], jitter: f64, seed: u64) -> PairedSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = (0..n)
            .map(|i| {
                let x: Vec<f64> = (0..dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let y = x
                    .iter()
                    .zip(shift)
                    .map(|(a, c)| a + c + jitter * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Pair {
                    speaker_id: format!("s{}", i % 5),
                    utterance_id: format!("u{i}"),
                    normal: x,
                    nonneutral: y,
                }
            })
            .collect();
        PairedSet {
            mode: shouted(),
            pairs,
            skipped: 0,
        }
    }

    fn params(l: usize, k: usize) -> TrainParams {
        TrainParams {
            pca_dim: l,
            mixtures: k,
            em: EmConfig::with_seed(1),
        }
    }

    #[test]
    fn transfer_vectors() {
        let set = PairedSet {
            mode: shouted(),
            pairs: vec![
                Pair {
                    speaker_id: "a".into(),
                    utterance_id: "1".into(),
                    normal: vec![1.0, 1.0],
                    nonneutral: vec![1.0, 1.0],
                },
                Pair {
                    speaker_id: "a".into(),
                    utterance_id: "2".into(),
                    normal: vec![1.0, 0.0],
                    nonneutral: vec![3.0, -2.0],
                },
            ],
            skipped: 0,
        };
        let v = compute_transfer_vectors(&set);
        assert_eq!(v[0].0, vec![0.0, 0.0]);
        assert_eq!(v[1].0, vec![2.0, -2.0]);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.as_str().parse::<EstimatorKind>().unwrap(), k);
            assert_eq!(
                serde_json::to_string(&k).unwrap(),
                format!("\"{}\"", k.as_str())
            );
        }
        assert!("mmse".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn identity_passes_through() {
        let set = paired(10, 4, &[1.0; 4], 0.1, 0);
        let (m, _) = train(EstimatorKind::Identity, &set, &params(2, 2)).unwrap();
        assert!(m.pca().is_none() && m.joint().is_none() && m.memlin_gmm().is_none());
        let y = [0.3, -1.0, 2.0, 0.0];
        assert_eq!(m.compensate(&y).unwrap(), y.to_vec());
        assert!(m.residual_out_of_subspace(&y).is_err());
    }

    #[test]
    fn memlin_single_component_subtracts_mean_transfer() {
        let set = paired(30, 3, &[2.0, -1.0, 0.5], 0.3, 2);
        let (m, _) = train(EstimatorKind::Memlin, &set, &params(2, 1)).unwrap();
        let mean: Vec<f64> = (0..3)
            .map(|d| {
                compute_transfer_vectors(&set)
                    .iter()
                    .map(|v| v[d])
                    .sum::<f64>()
                    / 30.0
            })
            .collect();
        let p = &m.memlin_partials().unwrap()[0];
        for d in 0..3 {
            assert!((p[d] - mean[d]).abs() < 1e-12);
        }
        for y in [[0.0, 0.0, 0.0], [5.0, 1.0, -3.0]] {
            let out = m.compensate(&y).unwrap();
            for d in 0..3 {
                assert!((out[d] - (y[d] - mean[d])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mmse_v_single_component_without_cross_covariance_is_mean_shift() {
        let set = paired(20, 3, &[1.0, 2.0, 3.0], 0.2, 3);
        let (mut m, _) = train(EstimatorKind::MmseV, &set, &params(2, 1)).unwrap();
        let mut joint = m.joint.take().unwrap();
        let mu_v = joint.mu_v()[0].clone();
        joint = JointGmm::new(
            vec![1.0],
            vec![mu_v.clone()],
            joint.mu_y().to_vec(),
            joint.sigma_vv().to_vec(),
            vec![vec![0.0; 2]],
            joint.sigma_yy().to_vec(),
        )
        .unwrap();
        m.joint = Some(joint);
        let y = [0.5, -0.5, 4.0];
        let shift = m.pca().unwrap().lift(&mu_v).unwrap();
        let out = m.compensate(&y).unwrap();
        for d in 0..3 {
            assert!((out[d] - (y[d] - shift[d])).abs() < 1e-12);
        }
    }

    #[test]
    fn mmse_v_recovers_constant_transfer() {
        let c = [3.0, -2.0, 1.0, 0.5, 0.0, 2.0];
        let set = paired(120, 6, &c, 0.0, 4);
        // L = D so the whole of c is visible in the PCA domain
        let (m, _) = train(EstimatorKind::MmseV, &set, &params(6, 4)).unwrap();
        for p in &set.pairs[..10] {
            let out = m.compensate(&p.nonneutral).unwrap();
            let err: f64 = out
                .iter()
                .zip(&p.normal)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-3, "error {err}");
        }
    }

    #[test]
    fn mmse_v_output_stays_in_subspace_offset() {
        let set = paired(80, 5, &[2.0, 0.0, -1.0, 0.0, 1.0], 0.4, 5);
        let (m, _) = train(EstimatorKind::MmseV, &set, &params(2, 3)).unwrap();
        let y = [0.2, 1.3, -0.7, 2.2, 0.1];
        let out = m.compensate(&y).unwrap();
        let diff: Vec<f64> = out.iter().zip(&y).map(|(a, b)| a - b).collect();
        let res = m.residual_out_of_subspace(&diff).unwrap();
        assert!(res.iter().all(|r| r.abs() < 1e-8));
        let ry = m.residual_out_of_subspace(&y).unwrap();
        let ro = m.residual_out_of_subspace(&out).unwrap();
        for (a, b) in ry.iter().zip(&ro) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn memlin_output_within_partial_hull() {
        let set = paired(100, 4, &[1.0, -1.0, 2.0, 0.0], 0.8, 6);
        let (m, _) = train(EstimatorKind::Memlin, &set, &params(2, 4)).unwrap();
        let partials = m.memlin_partials().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let y: Vec<f64> = (0..4)
                .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let out = m.compensate(&y).unwrap();
            for d in 0..4 {
                let v = y[d] - out[d];
                let lo = partials.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min);
                let hi = partials
                    .iter()
                    .map(|p| p[d])
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn train_errors() {
        let set = paired(10, 4, &[0.0; 4], 0.1, 7);
        assert!(matches!(
            train(EstimatorKind::MmseV, &set, &params(5, 2)),
            Err(Error::InvalidParameter(_))
        ));
        assert!(train(EstimatorKind::MmseV, &set, &params(2, 11)).is_err());
        let (m, _) = train(EstimatorKind::MmseX, &set, &params(2, 2)).unwrap();
        assert!(matches!(
            m.compensate(&[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn every_kind_serializes() {
        let set = paired(40, 5, &[1.0, 0.0, 0.0, -1.0, 2.0], 0.3, 8);
        for kind in EstimatorKind::ALL {
            let (m, _) = train(kind, &set, &params(3, 2)).unwrap();
            let s = serde_json::to_string(&m).unwrap();
            assert!(s.contains(&format!("\"kind\":\"{kind}\"")));
            let back: CompensationModel = serde_json::from_str(&s).unwrap();
            assert_eq!(back, m);
            let y = &set.pairs[0].nonneutral;
            assert_eq!(back.compensate(y).unwrap(), m.compensate(y).unwrap());
        }
        let missing = r#"{"kind":"mmse_v","mode":"shouted","embedding_dim":5}"#;
        assert!(serde_json::from_str::<CompensationModel>(missing).is_err());
        let ident = r#"{"kind":"identity"}"#;
        assert!(serde_json::from_str::<CompensationModel>(ident).is_ok());
    }

    proptest! {
        #[test]
        fn transfer_reconstructs_nonneutral(seed in 0u64..500) {
            let set = paired(5, 3, &[0.5, 1.0, -2.0], 1.0, seed);
            for (p, v) in set.pairs.iter().zip(compute_transfer_vectors(&set)) {
                for d in 0..3 {
                    // x + (y − x) = y up to one rounding
                    prop_assert!((p.normal[d] + v[d] - p.nonneutral[d]).abs() <= 4.0 * f64::EPSILON * p.nonneutral[d].abs().max(1.0));
                }
            }
        }

        #[test]
        fn residual_pythagoras(seed in 0u64..200, y in prop::collection::vec(-5.0f64..5.0, 5)) {
            let set = paired(30, 5, &[1.0, 0.0, 2.0, 0.0, -1.0], 0.5, seed);
            let (m, _) = train(EstimatorKind::MmseV, &set, &params(2, 2)).unwrap();
            let r = m.residual_out_of_subspace(&y).unwrap();
            let p = m.pca().unwrap().project(&y).unwrap();
            prop_assert!((dot(&r, &r) + dot(&p, &p) - dot(&y, &y)).abs() < 1e-8);
        }
    }

    #[test]
    fn residual_edge_cases() {
        let set = paired(30, 4, &[1.0, 0.0, 2.0, 0.0], 0.5, 9);
        let (m, _) = train(EstimatorKind::MemlinPca, &set, &params(2, 2)).unwrap();
        let pca = m.pca().unwrap();
        let inside = pca.lift(&[0.7, -1.2]).unwrap();
        assert!(m
            .residual_out_of_subspace(&inside)
            .unwrap()
            .iter()
            .all(|x| x.abs() < 1e-10));
        let full = fit_pca(
            &set.pairs
                .iter()
                .map(|p| p.normal.clone())
                .collect::<Vec<_>>(),
            4,
        )
        .unwrap();
        // a direction orthogonal to the model's basis
        let orth: Vec<f64> = {
            let mut best = vec![0.0; 4];
            for l in 0..4 {
                let dir = full.direction(l);
                let r = m.residual_out_of_subspace(&dir).unwrap();
                if dot(&r, &r) > dot(&best, &best) {
                    best = r;
                }
            }
            best
        };
        let back = m.residual_out_of_subspace(&orth).unwrap();
        for (a, b) in back.iter().zip(&orth) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
