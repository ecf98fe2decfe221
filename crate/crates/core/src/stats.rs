//! Dispersion measures, Wilcoxon tests, percentile bootstrap and an
//! Epanechnikov kernel density estimate.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 divisor).
pub fn sd(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::domain(format!("sd needs at least 2 values, got {}", xs.len())));
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Ok((ss / (xs.len() - 1) as f64).sqrt())
}

/// Type-7 quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::domain("median of an empty sample"));
    }
    Ok(quantile_sorted(&sorted_copy(xs), 0.5))
}

/// Median absolute deviation from the median, without consistency scaling.
pub fn mad(xs: &[f64]) -> Result<f64> {
    let m = median(xs)?;
    let dev: Vec<f64> = xs.iter().map(|x| (x - m).abs()).collect();
    median(&dev)
}

/// Coefficient of variation `sd / mean`.
pub fn cv(xs: &[f64]) -> Result<f64> {
    let s = sd(xs)?;
    let m = mean(xs);
    if m == 0.0 {
        return Err(Error::domain("coefficient of variation with zero mean"));
    }
    Ok(s / m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Average ranks (1-based) and the tie-correction term `sum(t^3 - t)`.
fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

/// Two-sided p from an exact null distribution given as counts over
/// doubled statistic values.
fn exact_two_sided(counts: &[f64], observed2: usize) -> f64 {
    let total: f64 = counts.iter().sum();
    let lower: f64 = counts[..=observed2].iter().sum::<f64>() / total;
    let upper: f64 = counts[observed2..].iter().sum::<f64>() / total;
    (2.0 * lower.min(upper)).min(1.0)
}

/// Paired signed-rank test on `x - y`. Zero differences are dropped. Exact
/// for up to 25 non-zero pairs, normal approximation with continuity and
/// tie corrections otherwise. The statistic is W+.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(TestResult { statistic: 0.0, p_value: 1.0 });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();

    let p_value = if n <= 25 {
        // Midranks are multiples of 1/2, so doubled ranks are integers.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![0.0; max + 1];
        counts[0] = 1.0;
        let mut reach = 0;
        for &r in &doubled {
            for s in (0..=reach).rev() {
                if counts[s] != 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        exact_two_sided(&counts, (2.0 * w_plus).round() as usize)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
        if var <= 0.0 {
            1.0
        } else {
            let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
            (2.0 * normal_sf(z)).min(1.0)
        }
    };
    Ok(TestResult { statistic: w_plus, p_value })
}

/// Mann-Whitney rank-sum test. The statistic is U for `x`. Exact when the
/// pooled size is at most 20.
pub fn wilcoxon_rank_sum(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::domain("rank-sum test needs two non-empty samples"));
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let n = x.len();
    let m = y.len();
    let nf = n as f64;
    let mf = m as f64;
    let rank_sum: f64 = ranks[..n].iter().sum();
    let u = rank_sum - nf * (nf + 1.0) / 2.0;

    let p_value = if n + m <= 20 {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        // ways[k][s]: subsets of size k with doubled rank sum s.
        let mut ways = vec![vec![0.0; max + 1]; n + 1];
        ways[0][0] = 1.0;
        for &r in &doubled {
            for k in (1..=n).rev() {
                for s in (r..=max).rev() {
                    let add = ways[k - 1][s - r];
                    if add != 0.0 {
                        ways[k][s] += add;
                    }
                }
            }
        }
        exact_two_sided(&ways[n], (2.0 * rank_sum).round() as usize)
    } else {
        let big_n = nf + mf;
        let mean = nf * mf / 2.0;
        let var = nf * mf / 12.0 * ((big_n + 1.0) - ties / (big_n * (big_n - 1.0)));
        if var <= 0.0 {
            1.0
        } else {
            let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
            (2.0 * normal_sf(z)).min(1.0)
        }
    };
    Ok(TestResult { statistic: u, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    /// Central coverage of the percentile interval.
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 1000,
            level: 0.83,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("bootstrap needs at least one replicate".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "bootstrap level must lie in (0, 1), got {}",
                self.level
            )));
        }
        Ok(())
    }
}

/// Percentile interval for a statistic of resampled row indices. Replicate
/// `r` draws from its own generator so the result does not depend on
/// thread scheduling. Non-finite replicate values are discarded.
pub fn bootstrap_ci_indexed<F>(n: usize, statistic: F, config: &BootstrapConfig) -> Result<(f64, f64)>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    config.validate()?;
    if n == 0 {
        return Err(Error::domain("bootstrap of an empty sample"));
    }
    let mut values: Vec<f64> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(derive_seed(config.seed, r as u64), 0);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            statistic(&idx)
        })
        .collect();
    values.retain(|v| v.is_finite());
    if values.is_empty() {
        return Err(Error::domain("no bootstrap replicate produced a finite statistic"));
    }
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - config.level) / 2.0;
    Ok((quantile_sorted(&values, tail), quantile_sorted(&values, 1.0 - tail)))
}

pub fn bootstrap_ci<F>(xs: &[f64], statistic: F, config: &BootstrapConfig) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    bootstrap_ci_indexed(
        xs.len(),
        |idx| {
            let sample: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
            statistic(&sample)
        },
        config,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

/// Silverman's rule of thumb `0.9 min(sd, IQR/1.34) n^(-1/5)`.
pub fn silverman_bandwidth(xs: &[f64]) -> Result<f64> {
    let s = sd(xs)?;
    let sorted = sorted_copy(xs);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { s.min(iqr / 1.34) } else { s };
    let h = 0.9 * spread * (xs.len() as f64).powf(-0.2);
    if !(h > 0.0) {
        return Err(Error::domain("density estimate of data with zero variance"));
    }
    Ok(h)
}

/// Epanechnikov density on `grid_points` equispaced points spanning the
/// data range widened by three bandwidths. The bandwidth is the kernel's
/// standard deviation, so the kernel support is `sqrt(5) h`.
pub fn epanechnikov_kde(xs: &[f64], grid_points: usize) -> Result<Kde> {
    if grid_points < 2 {
        return Err(Error::domain("density grid needs at least 2 points"));
    }
    let h = silverman_bandwidth(xs)?;
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let step = (hi - lo) / (grid_points - 1) as f64;
    let grid: Vec<f64> = (0..grid_points).map(|i| lo + i as f64 * step).collect();
    let sorted = sorted_copy(xs);
    let radius = 5f64.sqrt() * h;
    let norm = 3.0 / (4.0 * 5f64.sqrt()) / (xs.len() as f64 * h);
    let density = grid
        .iter()
        .map(|&g| {
            let start = sorted.partition_point(|x| *x < g - radius);
            let end = sorted.partition_point(|x| *x <= g + radius);
            let s: f64 = sorted[start..end]
                .iter()
                .map(|x| {
                    let u = (g - x) / h;
                    (1.0 - u * u / 5.0).max(0.0)
                })
                .sum();
            s * norm
        })
        .collect();
    Ok(Kde { bandwidth: h, grid, density })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn dispersion_examples() {
        assert_eq!(sd(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cv(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mad(&[1.0, 2.0, 4.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(cv(&[1.0, 3.0]).unwrap(), 2f64.sqrt() / 2.0, epsilon = 1e-12);
        assert!(cv(&[-1.0, 1.0]).is_err());
        assert!(sd(&[1.0]).is_err());
    }

    #[test]
    fn signed_rank_examples() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_abs_diff_eq!(r.p_value, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn signed_rank_large_shift() {
        let mut rng = stream_rng(5, 0);
        let x: Vec<f64> = (0..3000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| {
                let e: f64 = StandardNormal.sample(&mut rng);
                v - 0.1 + 0.5 * e
            })
            .collect();
        assert!(wilcoxon_signed_rank(&x, &y).unwrap().p_value < 0.01);
    }

    #[test]
    fn signed_rank_exact_matches_brute_force() {
        let d = [0.3, -1.2, 2.5, -0.7, 1.1, 0.3, -2.0];
        let zeros = vec![0.0; d.len()];
        let res = wilcoxon_signed_rank(&d, &zeros).unwrap();
        let (ranks, _) = midranks(&d.iter().map(|v: &f64| v.abs()).collect::<Vec<_>>());
        let total = 1usize << d.len();
        let mut le = 0;
        let mut ge = 0;
        for mask in 0..total {
            let w: f64 = (0..d.len()).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w <= res.statistic + 1e-9 {
                le += 1;
            }
            if w >= res.statistic - 1e-9 {
                ge += 1;
            }
        }
        let p = (2.0 * (le.min(ge) as f64) / total as f64).min(1.0);
        assert_abs_diff_eq!(res.p_value, p, epsilon = 1e-12);
    }

    #[test]
    fn rank_sum_examples() {
        let r = wilcoxon_rank_sum(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_abs_diff_eq!(r.p_value, 1.0 / 3.0, epsilon = 1e-15);
        let r = wilcoxon_rank_sum(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(r.statistic, 2.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(wilcoxon_rank_sum(&[1.0], &[1.0]).unwrap().p_value, 1.0);
    }

    #[test]
    fn rank_sum_normal_branch_detects_shift() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..50).map(|i| i as f64 + 30.0).collect();
        assert!(wilcoxon_rank_sum(&x, &y).unwrap().p_value < 1e-6);
        let r = wilcoxon_rank_sum(&x, &x).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn bootstrap_degenerate_and_deterministic() {
        let cfg = BootstrapConfig { replicates: 200, seed: 3, ..Default::default() };
        assert_eq!(bootstrap_ci(&[4.0; 10], mean, &cfg).unwrap(), (4.0, 4.0));
        let xs: Vec<f64> = (0..50).map(|i| (i * i % 17) as f64).collect();
        assert_eq!(
            bootstrap_ci(&xs, mean, &cfg).unwrap(),
            bootstrap_ci(&xs, mean, &cfg).unwrap()
        );
    }

    #[test]
    fn bootstrap_coverage() {
        let cfg = BootstrapConfig::default();
        let trials = 200;
        let mut covered = 0;
        for t in 0..trials {
            let mut rng = stream_rng(1000 + t, 7);
            let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
            let (lo, hi) =
                bootstrap_ci(&xs, mean, &BootstrapConfig { seed: t, ..cfg }).unwrap();
            if lo <= 0.0 && 0.0 <= hi {
                covered += 1;
            }
        }
        let frac = covered as f64 / trials as f64;
        // Four binomial standard errors around the nominal 0.83.
        assert!((frac - 0.83).abs() < 4.0 * (0.83f64 * 0.17 / trials as f64).sqrt(), "{frac}");
    }

    #[test]
    fn kde_normalizes_and_is_symmetric() {
        let xs: Vec<f64> = (0..201).map(|i| ((i as f64 - 100.0) / 30.0).powi(3)).collect();
        let kde = epanechnikov_kde(&xs, 512).unwrap();
        let step = kde.grid[1] - kde.grid[0];
        let integral: f64 = kde.density.windows(2).map(|w| (w[0] + w[1]) / 2.0 * step).sum();
        assert!((integral - 1.0).abs() < 1e-3, "{integral}");
        for i in 0..256 {
            assert!((kde.density[i] - kde.density[511 - i]).abs() < 1e-12);
        }
        assert!(epanechnikov_kde(&[1.0, 1.0, 1.0], 512).is_err());
    }

    #[test]
    fn kde_bimodal_clusters() {
        let mut xs = Vec::new();
        for i in 0..100 {
            let jitter = (i as f64 - 49.5) / 50.0;
            xs.push(-50.0 + jitter);
            xs.push(50.0 + jitter);
        }
        let kde = epanechnikov_kde(&xs, 512).unwrap();
        let h = kde.bandwidth;
        // Direct kernel sum at each grid point.
        for (g, d) in kde.grid.iter().zip(&kde.density) {
            let direct: f64 = xs
                .iter()
                .map(|x| {
                    let u: f64 = (g - x) / h;
                    if u.abs() < 5f64.sqrt() {
                        3.0 / (4.0 * 5f64.sqrt()) * (1.0 - u * u / 5.0)
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                / (xs.len() as f64 * h);
            assert!((direct - d).abs() < 1e-12);
        }
        let argmax = |range: std::ops::Range<usize>| {
            range.max_by(|&a, &b| kde.density[a].total_cmp(&kde.density[b])).unwrap()
        };
        let left = kde.grid[argmax(0..256)];
        let right = kde.grid[argmax(256..512)];
        let step = kde.grid[1] - kde.grid[0];
        assert!((left + 50.0).abs() <= h + step);
        assert!((right - 50.0).abs() <= h + step);
    }

    proptest! {
        #[test]
        fn dispersion_covariance(
            xs in prop::collection::vec(-100.0..100.0f64, 2..40),
            a in -50.0..50.0f64,
            b in 0.1..10.0f64,
        ) {
            let t: Vec<f64> = xs.iter().map(|x| a + b * x).collect();
            let neg: Vec<f64> = xs.iter().map(|x| -b * x).collect();
            let s = sd(&xs).unwrap();
            prop_assert!((sd(&t).unwrap() - b * s).abs() <= 1e-9 * (1.0 + b * s));
            prop_assert!((sd(&neg).unwrap() - b * s).abs() <= 1e-9 * (1.0 + b * s));
            let m = mad(&xs).unwrap();
            prop_assert!((mad(&t).unwrap() - b * m).abs() <= 1e-9 * (1.0 + b * m));
            let pos: Vec<f64> = xs.iter().map(|x| x.abs() + 1.0).collect();
            let scaled: Vec<f64> = pos.iter().map(|x| b * x).collect();
            prop_assert!((cv(&scaled).unwrap() - cv(&pos).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn rank_sum_monotone_invariance(
            x in prop::collection::vec(-5.0..5.0f64, 1..15),
            y in prop::collection::vec(-5.0..5.0f64, 1..15),
        ) {
            let f = |v: &f64| v.exp() * 3.0 + v.powi(3);
            let a = wilcoxon_rank_sum(&x, &y).unwrap();
            let fx: Vec<f64> = x.iter().map(f).collect();
            let fy: Vec<f64> = y.iter().map(f).collect();
            let b = wilcoxon_rank_sum(&fx, &fy).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn signed_rank_invariances(
            x in prop::collection::vec(-5.0..5.0f64, 1..40),
            y in prop::collection::vec(-5.0..5.0f64, 1..40),
            scale in 0.5..4.0f64,
        ) {
            let n = x.len().min(y.len());
            let (x, y) = (&x[..n], &y[..n]);
            let a = wilcoxon_signed_rank(x, y).unwrap();
            // Positive scaling of every observation.
            let sx: Vec<f64> = x.iter().map(|v| v * scale).collect();
            let sy: Vec<f64> = y.iter().map(|v| v * scale).collect();
            let b = wilcoxon_signed_rank(&sx, &sy).unwrap();
            prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
            // Odd monotone map of the differences.
            let d: Vec<f64> = x.iter().zip(y).map(|(p, q)| (p - q).powi(3)).collect();
            let c = wilcoxon_signed_rank(&d, &vec![0.0; n]).unwrap();
            prop_assert!((a.p_value - c.p_value).abs() < 1e-12);
        }

        #[test]
        fn bootstrap_bounds_within_replicate_range(
            xs in prop::collection::vec(-10.0..10.0f64, 1..30),
            seed in any::<u64>(),
        ) {
            let cfg = BootstrapConfig { replicates: 50, level: 0.83, seed };
            let (lo, hi) = bootstrap_ci(&xs, mean, &cfg).unwrap();
            let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= hi);
            prop_assert!(lo >= min - 1e-12 && hi <= max + 1e-12);
        }

        #[test]
        fn kde_nonnegative(xs in prop::collection::vec(-10.0..10.0f64, 3..50)) {
            if let Ok(kde) = epanechnikov_kde(&xs, 64) {
                prop_assert!(kde.density.iter().all(|d| *d >= 0.0));
            }
        }
    }
}
