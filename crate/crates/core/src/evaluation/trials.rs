use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Mode, RecordKey};
use crate::error::{Error, Result};
use crate::util::dot;

/// Trial condition relative to one non-neutral mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Normal and non-neutral utterances against each other (A-A).
    AllAll,
    /// N-N.
    NormalNormal,
    /// S-S or W-W.
    NonneutralNonneutral,
    /// N-S or N-W: every normal against every non-neutral utterance.
    NormalNonneutral,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::AllAll,
        Condition::NormalNormal,
        Condition::NonneutralNonneutral,
        Condition::NormalNonneutral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::AllAll => "all_all",
            Condition::NormalNormal => "normal_normal",
            Condition::NonneutralNonneutral => "nonneutral_nonneutral",
            Condition::NormalNonneutral => "normal_nonneutral",
        }
    }

    /// Short label such as `A-A`, `N-N`, `S-S`, `N-S` (initial of the mode).
    pub fn label(self, mode: &Mode) -> String {
        let m = mode
            .as_str()
            .chars()
            .next()
            .map_or('X', |c| c.to_ascii_uppercase());
        match self {
            Condition::AllAll => "A-A".into(),
            Condition::NormalNormal => "N-N".into(),
            Condition::NonneutralNonneutral => format!("{m}-{m}"),
            Condition::NormalNonneutral => format!("N-{m}"),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown condition {s:?}")))
    }
}

/// One verification trial. Sides index into the corpus the list was built
/// from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trial {
    pub enroll: usize,
    pub test: usize,
    pub is_target: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialList {
    pub condition: Condition,
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn n_target(&self) -> usize {
        self.trials.iter().filter(|t| t.is_target).count()
    }

    pub fn keys(&self, corpus: &Corpus, t: &Trial) -> (RecordKey, RecordKey) {
        let r = corpus.records();
        (r[t.enroll].key(), r[t.test].key())
    }
}

/// Enumerates the trials of `condition`. Same-pool conditions take every
/// unordered pair of distinct records; the cross condition takes the full
/// normal × non-neutral product. Sides are ordered by record key.
pub fn build_trials(
    corpus: &Corpus,
    condition: Condition,
    nonneutral_mode: &Mode,
) -> Result<TrialList> {
    if nonneutral_mode.is_normal() {
        return Err(Error::invalid("the non-neutral mode cannot be \"normal\""));
    }
    let normal = Mode::normal();
    let need_normal = condition != Condition::NonneutralNonneutral;
    let need_other = condition != Condition::NormalNormal;
    if need_normal && !corpus.has_mode(&normal) {
        return Err(Error::MissingMode(normal.to_string()));
    }
    if need_other && !corpus.has_mode(nonneutral_mode) {
        return Err(Error::MissingMode(nonneutral_mode.to_string()));
    }

    let records = corpus.records();
    let sorted = |keep: &dyn Fn(&Mode) -> bool| {
        let mut idx: Vec<usize> = (0..records.len())
            .filter(|&i| keep(&records[i].mode))
            .collect();
        idx.sort_by_cached_key(|&i| records[i].key());
        idx
    };
    let target = |a: usize, b: usize| records[a].speaker_id == records[b].speaker_id;

    let mut trials = Vec::new();
    match condition {
        Condition::NormalNonneutral => {
            let left = sorted(&|m| m.is_normal());
            let right = sorted(&|m| m == nonneutral_mode);
            trials.reserve(left.len() * right.len());
            for &a in &left {
                for &b in &right {
                    trials.push(Trial {
                        enroll: a,
                        test: b,
                        is_target: target(a, b),
                    });
                }
            }
        }
        _ => {
            let pool = match condition {
                Condition::AllAll => sorted(&|m| m.is_normal() || m == nonneutral_mode),
                Condition::NormalNormal => sorted(&|m| m.is_normal()),
                _ => sorted(&|m| m == nonneutral_mode),
            };
            let n = pool.len();
            trials.reserve(n * n.saturating_sub(1) / 2);
            for (i, &a) in pool.iter().enumerate() {
                for &b in &pool[i + 1..] {
                    trials.push(Trial {
                        enroll: a,
                        test: b,
                        is_target: target(a, b),
                    });
                }
            }
        }
    }
    Ok(TrialList { condition, trials })
}

/// `a·b / (‖a‖‖b‖)`.
pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine scores of every trial, in trial order.
pub fn score_trials(corpus: &Corpus, trials: &TrialList) -> Result<Vec<f64>> {
    let unit: Vec<Vec<f64>> = corpus
        .records()
        .iter()
        .map(|r| {
            let n = dot(&r.vector, &r.vector).sqrt();
            if n == 0.0 {
                return Err(Error::ZeroVector);
            }
            Ok(r.vector.iter().map(|x| x / n).collect())
        })
        .collect::<Result<_>>()?;
    Ok(trials
        .trials
        .par_iter()
        .map(|t| dot(&unit[t.enroll], &unit[t.test]).clamp(-1.0, 1.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EmbeddingRecord;

    fn rec(s: &str, u: &str, m: &str) -> EmbeddingRecord {
        EmbeddingRecord {
            speaker_id: s.into(),
            utterance_id: u.into(),
            mode: Mode::new(m).unwrap(),
            vector: vec![1.0, s.len() as f64 + u.len() as f64],
        }
    }

    fn shouted() -> Mode {
        Mode::new("shouted").unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_score(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(
            (cosine_score(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2)
                .abs()
                < 1e-15
        );
        assert!(matches!(
            cosine_score(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn tiny_lists() {
        let c = Corpus::new(
            vec![rec("s1", "u1", "normal"), rec("s1", "u2", "normal")],
            None,
        )
        .unwrap();
        let t = build_trials(&c, Condition::NormalNormal, &shouted()).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.trials[0].is_target);
        assert!(matches!(
            build_trials(&c, Condition::NormalNonneutral, &shouted()),
            Err(Error::MissingMode(_))
        ));

        let c = Corpus::new(
            vec![rec("s1", "u1", "normal"), rec("s2", "u1", "normal")],
            None,
        )
        .unwrap();
        let t = build_trials(&c, Condition::NormalNormal, &shouted()).unwrap();
        assert_eq!(t.len(), 1);
        assert!(!t.trials[0].is_target);
    }

    #[test]
    fn counts_and_ordering() {
        let mut recs = Vec::new();
        for s in ["s2", "s1", "s3"] {
            for u in ["u2", "u1"] {
                for m in ["shouted", "normal"] {
                    recs.push(rec(s, u, m));
                }
            }
        }
        let c = Corpus::new(recs, None).unwrap();
        let n = 6;
        let counts: Vec<usize> = Condition::ALL
            .iter()
            .map(|&cond| build_trials(&c, cond, &shouted()).unwrap().len())
            .collect();
        assert_eq!(
            counts,
            vec![
                2 * n * (2 * n - 1) / 2,
                n * (n - 1) / 2,
                n * (n - 1) / 2,
                n * n
            ]
        );

        let t = build_trials(&c, Condition::AllAll, &shouted()).unwrap();
        let keys: Vec<_> = t.trials.iter().map(|tr| t.keys(&c, tr)).collect();
        assert!(keys.iter().all(|(a, b)| a < b));
        assert!(keys.windows(2).all(|w| w[0] <= w[1]));
        for (tr, (a, b)) in t.trials.iter().zip(&keys) {
            assert_eq!(tr.is_target, a.speaker == b.speaker);
        }
        // same-utterance cross trials are included
        let x = build_trials(&c, Condition::NormalNonneutral, &shouted()).unwrap();
        assert!(x.trials.iter().any(|tr| {
            let (a, b) = x.keys(&c, tr);
            a.speaker == b.speaker && a.utterance == b.utterance
        }));
    }

    #[test]
    fn scores_match_cosine() {
        let c = Corpus::new(
            vec![
                rec("s1", "u1", "normal"),
                rec("s22", "u1", "normal"),
                rec("s1", "u333", "normal"),
            ],
            None,
        )
        .unwrap();
        let t = build_trials(&c, Condition::NormalNormal, &shouted()).unwrap();
        let s = score_trials(&c, &t).unwrap();
        for (tr, sc) in t.trials.iter().zip(&s) {
            let want =
                cosine_score(&c.records()[tr.enroll].vector, &c.records()[tr.test].vector).unwrap();
            assert!((sc - want).abs() < 1e-15);
        }
    }

    #[test]
    fn names() {
        for c in Condition::ALL {
            assert_eq!(c.as_str().parse::<Condition>().unwrap(), c);
        }
        let w = Mode::new("whispered").unwrap();
        assert_eq!(Condition::NonneutralNonneutral.label(&w), "W-W");
        assert_eq!(Condition::NormalNonneutral.label(&shouted()), "N-S");
    }
}
