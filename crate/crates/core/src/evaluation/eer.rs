use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eer {
    /// Fraction in `[0, 1]`.
    pub eer: f64,
    pub threshold: f64,
}

/// Equal error rate of a score set.
///
/// At threshold `t`, FRR is the fraction of target scores below `t` and FAR
/// the fraction of non-target scores at or above `t`. Thresholds sweep the
/// sorted unique scores plus one point above the maximum; the EER is read at
/// the first point where `FRR − FAR ≥ 0`, linearly interpolated from the
/// preceding point when the crossing falls strictly between them.
pub fn compute_eer(scores: &[f64], labels: &[bool]) -> Result<Eer> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            context: "verification scores".into(),
        });
    }
    let n_target = labels.iter().filter(|&&l| l).count();
    let n_non = labels.len() - n_target;
    if n_target == 0 || n_non == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // (threshold, targets below, non-targets at or above)
    let mut points: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tgt_below, mut non_below) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        points.push((t, tgt_below, n_non - non_below));
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tgt_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    let top = scores[order[order.len() - 1]];
    points.push((top.next_up(), n_target, 0));

    let rates = |&(t, tb, na): &(f64, usize, usize)| {
        (t, tb as f64 / n_target as f64, na as f64 / n_non as f64)
    };
    let mut prev = rates(&points[0]);
    for p in &points {
        let (t, frr, far) = rates(p);
        let d = frr - far;
        if d == 0.0 {
            return Ok(Eer {
                eer: frr,
                threshold: t,
            });
        }
        if d > 0.0 {
            let (t0, frr0, far0) = prev;
            let d0 = frr0 - far0;
            let alpha = -d0 / (d - d0);
            return Ok(Eer {
                eer: frr0 + alpha * (frr - frr0),
                threshold: t0 + alpha * (t - t0),
            });
        }
        prev = (t, frr, far);
    }
    unreachable!("the last operating point has FRR = 1, FAR = 0")
}
