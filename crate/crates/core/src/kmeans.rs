//! k-means++ seeding followed by Lloyd refinement, used to initialise EM.

use rand::Rng;

use crate::util::Samples;

const LLOYD_ITERATIONS: usize = 25;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Hard cluster labels for `k` clusters. Deterministic for a given RNG state.
pub(crate) fn kmeans_labels<R: Rng>(data: &Samples, k: usize, rng: &mut R) -> Vec<usize> {
    let n = data.n;
    debug_assert!(k >= 1 && k <= n);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(data.row(rng.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = data.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), &c));
        }
        centers.push(c);
    }

    let mut labels = vec![0usize; n];
    for iter in 0..LLOYD_ITERATIONS {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let row = data.row(i);
            let best = (0..k)
                .map(|j| (j, sq_dist(row, &centers[j])))
                .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
                .0;
            if best != *label {
                *label = best;
                changed = true;
            }
        }
        if !changed && iter > 0 {
            break;
        }
        let mut sums = vec![vec![0.0; data.dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &j) in labels.iter().enumerate() {
            counts[j] += 1;
            sums[j]
                .iter_mut()
                .zip(data.row(i))
                .for_each(|(s, x)| *s += x);
        }
        for j in 0..k {
            // an emptied cluster keeps its previous centre
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                centers[j] = sums[j].iter().map(|s| s * inv).collect();
            }
        }
    }
    labels
}
