//! Seeded generator of paired normal/non-neutral embedding corpora.
//!
//! Per speaker `s`: a centroid `c_s ~ N(0, speaker_scale² I)` and a transfer
//! offset `t_s = m_g(s) + N(0, transfer_speaker_scale² I)`, where `m_g` is the
//! mean of the speaker's transfer group. Per utterance:
//! `x = c_s + N(0, utterance_noise² I)` and `y = x + t_s + N(0, transfer_noise² I)`.
//!
//! Every speaker draws from its own sub-seeded stream, so output does not
//! depend on how speakers are scheduled.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EmbeddingRecord, Mode};
use crate::error::{Error, Result};
use crate::util::derive_seed;

/// Global component of the transfer vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMean {
    /// Norm of the shift; each transfer group gets its own seeded random
    /// direction.
    Norm(f64),
    /// Explicit group means; speaker `s` uses entry `s mod len`.
    Vectors(Vec<Vec<f64>>),
}

impl fmt::Display for TransferMean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransferMean::Norm(n) => write!(f, "{n}"),
            TransferMean::Vectors(vs) => {
                let groups: Vec<String> = vs
                    .iter()
                    .map(|v| v.iter().map(f64::to_string).collect::<Vec<_>>().join(","))
                    .collect();
                f.write_str(&groups.join(";"))
            }
        }
    }
}

impl FromStr for TransferMean {
    type Err = Error;

    /// A scalar norm (`3.5`), or `;`-separated groups of `,`-separated
    /// coordinates (`1,0,0;-1,0,0`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if !s.contains([',', ';']) {
            return s
                .parse::<f64>()
                .map(TransferMean::Norm)
                .map_err(|_| Error::invalid(format!("bad transfer mean {s:?}")));
        }
        let groups = s
            .split(';')
            .map(|g| {
                g.split(',')
                    .map(|x| {
                        x.trim().parse::<f64>().map_err(|_| {
                            Error::invalid(format!("bad transfer mean coordinate {x:?}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TransferMean::Vectors(groups))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub utterances_per_mode: usize,
    pub dim: usize,
    pub seed: u64,
    /// Between-speaker standard deviation per coordinate.
    pub speaker_scale: f64,
    /// Within-speaker standard deviation per coordinate.
    pub utterance_noise: f64,
    pub transfer_mean: TransferMean,
    /// Number of transfer groups when `transfer_mean` is a norm.
    pub transfer_groups: usize,
    /// Speaker-dependent transfer standard deviation per coordinate.
    pub transfer_speaker_scale: f64,
    /// Per-utterance transfer jitter per coordinate.
    pub transfer_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_speakers: 22,
            utterances_per_mode: 24,
            dim: 256,
            seed: 0,
            speaker_scale: 1.0,
            utterance_noise: 0.5,
            transfer_mean: TransferMean::Norm(0.0),
            transfer_groups: 1,
            transfer_speaker_scale: 0.0,
            transfer_noise: 0.0,
        }
    }
}

impl SynthConfig {
    /// A vocal-effort-like scenario. Within-speaker spread is 1.3 times the
    /// between-speaker spread, which puts the normal-normal EER at a few
    /// percent. The transfer mean has three times the norm of the
    /// within-speaker deviation (`3 · utterance_noise · √D`), the
    /// speaker-dependent part is a tenth of the within-speaker spread, and
    /// utterance jitter half of it.
    pub fn vocal_effort(
        n_speakers: usize,
        utterances_per_mode: usize,
        dim: usize,
        seed: u64,
    ) -> Self {
        let base = SynthConfig {
            n_speakers,
            utterances_per_mode,
            dim,
            seed,
            utterance_noise: 1.3,
            ..Self::default()
        };
        let within_norm = base.utterance_noise * (dim as f64).sqrt();
        SynthConfig {
            transfer_mean: TransferMean::Norm(3.0 * within_norm),
            transfer_speaker_scale: 0.1 * base.utterance_noise,
            transfer_noise: 0.5 * base.utterance_noise,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::invalid("synthetic corpus needs at least 2 speakers"));
        }
        if self.utterances_per_mode == 0 || self.dim == 0 || self.transfer_groups == 0 {
            return Err(Error::invalid(
                "utterances_per_mode, dim and transfer_groups must be positive",
            ));
        }
        let scales = [
            self.speaker_scale,
            self.utterance_noise,
            self.transfer_speaker_scale,
            self.transfer_noise,
        ];
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || self.speaker_scale == 0.0 {
            return Err(Error::invalid(
                "scales must be finite and non-negative, speaker_scale positive",
            ));
        }
        match &self.transfer_mean {
            TransferMean::Norm(n) if !(n.is_finite() && *n >= 0.0) => Err(Error::invalid(
                "transfer mean norm must be finite and non-negative",
            )),
            TransferMean::Vectors(vs)
                if vs.is_empty()
                    || vs
                        .iter()
                        .any(|v| v.len() != self.dim || v.iter().any(|x| !x.is_finite())) =>
            {
                Err(Error::invalid(format!(
                    "transfer mean groups must be finite vectors of length {}",
                    self.dim
                )))
            }
            _ => Ok(()),
        }
    }

    /// Overrides fields from `key = value` lines. `#` starts a comment.
    pub fn apply_key_values(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::invalid(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("bad value {v:?} for {key}")))
        }
        match key {
            "n_speakers" | "speakers" => self.n_speakers = num(key, value)?,
            "utterances_per_mode" | "utts" => self.utterances_per_mode = num(key, value)?,
            "dim" | "D" => self.dim = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "speaker_scale" => self.speaker_scale = num(key, value)?,
            "utterance_noise" => self.utterance_noise = num(key, value)?,
            "transfer_mean" => self.transfer_mean = value.parse()?,
            "transfer_groups" => self.transfer_groups = num(key, value)?,
            "transfer_speaker_scale" => self.transfer_speaker_scale = num(key, value)?,
            "transfer_noise" => self.transfer_noise = num(key, value)?,
            _ => return Err(Error::invalid(format!("unknown synth key {key:?}"))),
        }
        Ok(())
    }

    fn group_means(&self) -> Vec<Vec<f64>> {
        match &self.transfer_mean {
            TransferMean::Vectors(vs) => vs.clone(),
            TransferMean::Norm(norm) => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, u64::MAX));
                (0..self.transfer_groups)
                    .map(|_| {
                        let dir: Vec<f64> =
                            (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                        let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
                        dir.into_iter().map(|x| norm * x / len).collect()
                    })
                    .collect()
            }
        }
    }
}

pub fn speaker_id(s: usize) -> String {
    format!("spk{s:03}")
}

pub fn utterance_id(u: usize) -> String {
    format!("utt{u:03}")
}

/// Generates `n_speakers × utterances_per_mode` paired records in both modes,
/// ordered by speaker, utterance, then normal before non-neutral.
pub fn generate_corpus(cfg: &SynthConfig, nonneutral_mode: &Mode) -> Result<Corpus> {
    cfg.validate()?;
    if nonneutral_mode.is_normal() {
        return Err(Error::invalid("the non-neutral mode cannot be \"normal\""));
    }
    let groups = cfg.group_means();
    let dim = cfg.dim;
    let normal = Mode::normal();
    let per_speaker: Vec<Vec<EmbeddingRecord>> = (0..cfg.n_speakers)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, s as u64));
            let mut gauss = |scale: f64| -> Vec<f64> {
                (0..dim)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            };
            let centroid = gauss(cfg.speaker_scale);
            let offset: Vec<f64> = groups[s % groups.len()]
                .iter()
                .zip(gauss(cfg.transfer_speaker_scale))
                .map(|(m, e)| m + e)
                .collect();
            let mut out = Vec::with_capacity(2 * cfg.utterances_per_mode);
            for u in 0..cfg.utterances_per_mode {
                let x: Vec<f64> = centroid
                    .iter()
                    .zip(gauss(cfg.utterance_noise))
                    .map(|(c, e)| c + e)
                    .collect();
                let y: Vec<f64> = x
                    .iter()
                    .zip(&offset)
                    .zip(gauss(cfg.transfer_noise))
                    .map(|((a, t), e)| a + t + e)
                    .collect();
                for (mode, vector) in [(normal.clone(), x), (nonneutral_mode.clone(), y)] {
                    out.push(EmbeddingRecord {
                        speaker_id: speaker_id(s),
                        utterance_id: utterance_id(u),
                        mode,
                        vector,
                    });
                }
            }
            out
        })
        .collect();
    Corpus::new(per_speaker.into_iter().flatten().collect(), Some(dim))
}
