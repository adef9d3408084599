//! Non-parametric mutual-information estimation from samples.
//!
//! Kraskov-type k-nearest-neighbor estimator (the variant with per-marginal
//! ranges): for each point, find its `k` nearest neighbors under the joint
//! max-norm, record the marginal extents `dx`, `dy` of that neighborhood,
//! count the marginal neighbors within those extents, and combine through
//! digamma terms.
//!
//! Each marginal coordinate is rank-normalized onto (0, 1) first. Mutual
//! information is invariant under monotone per-marginal maps, and the rank
//! step makes the estimate share that invariance exactly, which keeps
//! normalized curves (estimate divided by the self-estimate `I(S; S)`) well
//! behaved however the audited protocol scales its broadcasts.
//!
//! Estimates are deterministic functions of the inputs: no tie-breaking
//! jitter is added (the samples here are continuous, so exact ties are
//! rare and resolved by index order).

use crate::error::Error;
use crate::Result;

/// Digamma function, accurate to ~1e-13 for positive arguments.
pub fn digamma(x: f64) -> f64 {
    assert!(x > 0.0, "digamma needs a positive argument");
    let mut result = 0.0;
    let mut x = x;
    while x < 10.0 {
        result -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Asymptotic series through the x^-10 Bernoulli term.
    let tail = inv2
        * (1.0 / 12.0
            - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
    result + x.ln() - 0.5 * inv - tail
}

fn chebyshev(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn is_constant(samples: &[Vec<f64>]) -> bool {
    samples.iter().all(|s| s == &samples[0])
}

/// Replace each coordinate by its normalized rank `(r + 0.5) / n`, ties
/// broken by sample index.
fn rank_normalize(samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = samples.len();
    let d = samples[0].len();
    let mut out = vec![vec![0.0; d]; n];
    let mut idx: Vec<usize> = (0..n).collect();
    for c in 0..d {
        idx.sort_by(|&i, &j| samples[i][c].total_cmp(&samples[j][c]).then(i.cmp(&j)));
        for (r, &i) in idx.iter().enumerate() {
            out[i][c] = (r as f64 + 0.5) / n as f64;
        }
    }
    out
}

/// Estimate `I(A; B)` in bits from paired samples using the k-nearest-
/// neighbor estimator described in the module docs.
///
/// Degenerate inputs where one side is constant carry no usable geometry;
/// they return the infinity sentinel (the conservative, fully-revealed
/// reading). Identical continuous inputs saturate near `digamma(n) -
/// digamma(k)` nats, they do not return the sentinel.
pub fn estimate_mi(samples_a: &[Vec<f64>], samples_b: &[Vec<f64>], k: usize) -> Result<f64> {
    let n = samples_a.len();
    if n != samples_b.len() {
        return Err(Error::DimensionMismatch {
            context: "mi sample counts",
            expected: n,
            got: samples_b.len(),
        });
    }
    if k < 1 {
        return Err(Error::InvalidConfig("mi estimator needs k >= 1".into()));
    }
    if n < k + 2 {
        return Err(Error::InvalidConfig(format!(
            "mi estimator needs at least k + 2 = {} samples, got {n}",
            k + 2
        )));
    }
    let da = samples_a[0].len();
    let db = samples_b[0].len();
    if samples_a.iter().any(|s| s.len() != da) || samples_b.iter().any(|s| s.len() != db) {
        return Err(Error::InvalidConfig("ragged mi samples".into()));
    }
    if is_constant(samples_a) || is_constant(samples_b) {
        return Ok(f64::INFINITY);
    }
    let samples_a = &rank_normalize(samples_a);
    let samples_b = &rank_normalize(samples_b);

    // Order by the first a-coordinate; |a0_i - a0_j| lower-bounds the joint
    // distance, which lets the neighbor search stop early.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| samples_a[i][0].total_cmp(&samples_a[j][0]));
    let mut pos = vec![0usize; n];
    for (p, &i) in order.iter().enumerate() {
        pos[i] = p;
    }

    // Sorted marginals for fast counting in the 1-D case.
    let sorted_a0: Vec<f64> = order.iter().map(|&i| samples_a[i][0]).collect();
    let sorted_b0: Option<Vec<f64>> = (db == 1).then(|| {
        let mut v: Vec<f64> = samples_b.iter().map(|s| s[0]).collect();
        v.sort_by(f64::total_cmp);
        v
    });

    let mut sum = 0.0;
    for i in 0..n {
        // k nearest joint neighbors of i via an expanding window over the
        // a0-sorted order.
        let mut best: Vec<(f64, f64, f64)> = Vec::with_capacity(k); // (joint, da, db)
        let mut worst = f64::INFINITY;
        let p = pos[i];
        let (mut l, mut r) = (p, p + 1);
        loop {
            let left_gap = if l > 0 {
                (sorted_a0[l - 1] - samples_a[i][0]).abs()
            } else {
                f64::INFINITY
            };
            let right_gap = if r < n {
                (sorted_a0[r] - samples_a[i][0]).abs()
            } else {
                f64::INFINITY
            };
            let gap = left_gap.min(right_gap);
            if gap == f64::INFINITY || (best.len() == k && gap >= worst) {
                break;
            }
            let j = if left_gap <= right_gap {
                l -= 1;
                order[l]
            } else {
                r += 1;
                order[r - 1]
            };
            let dxa = chebyshev(&samples_a[i], &samples_a[j]);
            let dxb = chebyshev(&samples_b[i], &samples_b[j]);
            let joint = dxa.max(dxb);
            if best.len() < k {
                best.push((joint, dxa, dxb));
                if best.len() == k {
                    worst = best.iter().map(|t| t.0).fold(0.0, f64::max);
                }
            } else if joint < worst {
                let (wi, _) = best
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
                    .expect("non-empty");
                best[wi] = (joint, dxa, dxb);
                worst = best.iter().map(|t| t.0).fold(0.0, f64::max);
            }
        }
        let dx = best.iter().map(|t| t.1).fold(0.0, f64::max);
        let dy = best.iter().map(|t| t.2).fold(0.0, f64::max);

        let nx = if da == 1 {
            count_within_sorted(&sorted_a0, samples_a[i][0], dx)
        } else {
            count_within(samples_a, i, dx)
        };
        let ny = if let Some(sb) = &sorted_b0 {
            count_within_sorted(sb, samples_b[i][0], dy)
        } else {
            count_within(samples_b, i, dy)
        };
        sum += digamma(nx as f64) + digamma(ny as f64);
    }
    let nats = digamma(k as f64) - 1.0 / k as f64 + digamma(n as f64) - sum / n as f64;
    Ok(nats / std::f64::consts::LN_2)
}

/// Points within closed distance `d` of `center` in a sorted scalar list,
/// excluding the point itself.
fn count_within_sorted(sorted: &[f64], center: f64, d: f64) -> usize {
    let lo = sorted.partition_point(|&v| v < center - d);
    let hi = sorted.partition_point(|&v| v <= center + d);
    hi - lo - 1
}

fn count_within(samples: &[Vec<f64>], i: usize, d: f64) -> usize {
    let mut count = 0;
    for (j, s) in samples.iter().enumerate() {
        if j != i && chebyshev(&samples[i], s) <= d {
            count += 1;
        }
    }
    count
}
