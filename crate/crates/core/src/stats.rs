//! Agreement and hypothesis-test statistics for paired measurements and
//! rater confusion matrices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{chi_square_sf, normal_quantile, normal_sf};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("paired series must have equal, non-zero length (got {0} and {1})")]
    Pairing(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("concordance undefined: both series constant with equal means")]
    Undefined,
    #[error("counts sum to zero")]
    ZeroTotal,
    #[error("need at least two categories, got {0}")]
    Categories(usize),
    #[error("confusion matrix must be square with one label per row")]
    Shape,
    #[error("confidence level must lie in (0, 1), got {0}")]
    Level(f64),
}

/// Two measurement series paired by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSeries {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PairedSeries {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, StatsError> {
        if x.len() != y.len() || x.is_empty() {
            return Err(StatsError::Pairing(x.len(), y.len()));
        }
        Ok(PairedSeries { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `y − x` per pair.
    pub fn differences(&self) -> Vec<f64> {
        self.x.iter().zip(&self.y).map(|(a, b)| b - a).collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concordance {
    pub rho_c: f64,
    /// Pearson correlation of the same pairs.
    pub pearson_r: f64,
    /// Fisher-z interval; absent when it cannot be formed (n < 3, |ρc| = 1, r = 0).
    pub ci: Option<(f64, f64)>,
}

/// Lin's concordance correlation coefficient with population moments:
/// `2·cov / (var_x + var_y + (mean_x − mean_y)²)`.
pub fn lin_ccc(series: &PairedSeries) -> Result<f64, StatsError> {
    Ok(concordance(series, 0.95)?.rho_c)
}

/// Lin's ρc plus a Fisher-z confidence interval using the asymptotic
/// variance from Lin (1989).
pub fn concordance(series: &PairedSeries, level: f64) -> Result<Concordance, StatsError> {
    let n = series.len();
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::Level(level));
    }
    let (mx, my) = (mean(&series.x), mean(&series.y));
    let nf = n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in series.x.iter().zip(&series.y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    let (vx, vy, cov) = (sxx / nf, syy / nf, sxy / nf);
    let denom = vx + vy + (mx - my) * (mx - my);
    if denom == 0.0 {
        return Err(StatsError::Undefined);
    }
    let rho_c = 2.0 * cov / denom;
    let pearson_r = if vx > 0.0 && vy > 0.0 {
        cov / (vx * vy).sqrt()
    } else {
        0.0
    };

    let ci = (|| {
        if n < 3 || rho_c.abs() >= 1.0 || pearson_r == 0.0 {
            return None;
        }
        let (r, p) = (pearson_r, rho_c);
        let u2 = (mx - my).powi(2) / (vx * vy).sqrt();
        let one_m_p2 = 1.0 - p * p;
        let var_z = ((1.0 - r * r) * p * p / (one_m_p2 * r * r)
            + 2.0 * p.powi(3) * (1.0 - p) * u2 / (r * one_m_p2 * one_m_p2)
            - p.powi(4) * u2 * u2 / (2.0 * r * r * one_m_p2 * one_m_p2))
            / (nf - 2.0);
        if !(var_z.is_finite() && var_z > 0.0) {
            return None;
        }
        let z = p.atanh();
        let half = normal_quantile(0.5 + level / 2.0) * var_z.sqrt();
        Some(((z - half).tanh(), (z + half).tanh()))
    })();

    Ok(Concordance {
        rho_c,
        pearson_r,
        ci,
    })
}

pub const DEFAULT_LOA_MULTIPLIER: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanResult {
    pub bias: f64,
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

/// Bias and limits of agreement of `y − x`, with the sample (n − 1) SD.
pub fn bland_altman(
    series: &PairedSeries,
    multiplier: f64,
) -> Result<BlandAltmanResult, StatsError> {
    let n = series.len();
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    let d = series.differences();
    let bias = mean(&d);
    let ss: f64 = d.iter().map(|v| (v - bias) * (v - bias)).sum();
    let sd_diff = (ss / (n as f64 - 1.0)).sqrt();
    Ok(BlandAltmanResult {
        bias,
        sd_diff,
        loa_low: bias - multiplier * sd_diff,
        loa_high: bias + multiplier * sd_diff,
    })
}

/// Points for a Bland-Altman plot: `(mean of pair, y − x)`.
pub fn bland_altman_points(series: &PairedSeries) -> Vec<(f64, f64)> {
    series
        .x
        .iter()
        .zip(&series.y)
        .map(|(a, b)| ((a + b) / 2.0, b - a))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMode {
    Exact,
    Normal,
    /// Exact when at most [`EXACT_LIMIT`] non-zero differences remain.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroMethod {
    /// Drop zero differences before ranking.
    #[default]
    Wilcox,
    /// Rank zeros with the rest, then drop them from the statistic.
    Pratt,
}

pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    /// Differences entering the statistic.
    pub n_used: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// Mid-ranks of `values` (1-based), doubled so they stay integral.
pub(crate) fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean; twice the mean is i + j + 2.
        let doubled = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided paired Wilcoxon signed-rank test on `y − x`.
///
/// The exact p-value is `P(|W − E[W]| >= |w − E[W]|)` over all `2^m` sign
/// assignments of the `m` non-zero differences. The normal approximation
/// uses the tie-corrected variance `Σr²/4` and a 0.5 continuity correction.
/// All-zero differences give `p = 1`.
pub fn wilcoxon_signed_rank(
    series: &PairedSeries,
    mode: WilcoxonMode,
    zeros: ZeroMethod,
) -> Result<WilcoxonResult, StatsError> {
    let d = series.differences();
    let (ranked, signs): (Vec<f64>, Vec<f64>) = match zeros {
        ZeroMethod::Wilcox => d
            .iter()
            .filter(|&&v| v != 0.0)
            .map(|&v| (v.abs(), v))
            .unzip(),
        ZeroMethod::Pratt => d.iter().map(|&v| (v.abs(), v)).unzip(),
    };
    let all_ranks = doubled_midranks(&ranked);
    let (ranks, positive): (Vec<u64>, Vec<bool>) = all_ranks
        .iter()
        .zip(&signs)
        .filter(|(_, &s)| s != 0.0)
        .map(|(&r, &s)| (r, s > 0.0))
        .unzip();
    let m = ranks.len();
    let s_obs: u64 = ranks
        .iter()
        .zip(&positive)
        .filter(|(_, &p)| p)
        .map(|(&r, _)| r)
        .sum();
    let w_plus = s_obs as f64 / 2.0;
    if m == 0 {
        return Ok(WilcoxonResult {
            w_plus: 0.0,
            n_used: 0,
            p_value: 1.0,
            exact: true,
        });
    }

    let exact = match mode {
        WilcoxonMode::Exact => true,
        WilcoxonMode::Normal => false,
        WilcoxonMode::Auto => m <= EXACT_LIMIT,
    };
    let total: u64 = ranks.iter().sum();

    let p_value = if exact && m < 128 {
        // counts[s] = number of sign patterns whose positive doubled-rank sum is s.
        let mut counts = vec![0u128; total as usize + 1];
        counts[0] = 1;
        let mut reach = 0usize;
        for &r in &ranks {
            let r = r as usize;
            for s in (0..=reach).rev() {
                let c = counts[s];
                if c != 0 {
                    counts[s + r] += c;
                }
            }
            reach += r;
        }
        let obs_dev = (2 * s_obs as i128 - total as i128).abs();
        let extreme: u128 = counts
            .iter()
            .enumerate()
            .filter(|(s, _)| (2 * *s as i128 - total as i128).abs() >= obs_dev)
            .map(|(_, &c)| c)
            .sum();
        extreme as f64 / 2f64.powi(m as i32)
    } else {
        let mean_w = total as f64 / 4.0;
        let var_w: f64 = ranks.iter().map(|&r| (r as f64 / 2.0).powi(2)).sum::<f64>() / 4.0;
        let z = ((w_plus - mean_w).abs() - 0.5).max(0.0) / var_w.sqrt();
        (2.0 * normal_sf(z)).min(1.0)
    };

    Ok(WilcoxonResult {
        w_plus,
        n_used: m,
        p_value,
        exact: exact && m < 128,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Goodness-of-fit test of `counts` against a uniform distribution.
pub fn chi_square_uniform(counts: &[u64]) -> Result<ChiSquareResult, StatsError> {
    if counts.len() < 2 {
        return Err(StatsError::Categories(counts.len()));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(StatsError::ZeroTotal);
    }
    let expected = total as f64 / counts.len() as f64;
    let statistic = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum::<f64>();
    let df = counts.len() - 1;
    Ok(ChiSquareResult {
        statistic,
        df,
        p_value: chi_square_sf(statistic, df as f64),
    })
}

/// Square table of two raters' choices: rows rater 1, columns rater 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, StatsError> {
        let k = labels.len();
        if k < 2 {
            return Err(StatsError::Categories(k));
        }
        if counts.len() != k || counts.iter().any(|row| row.len() != k) {
            return Err(StatsError::Shape);
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    /// Empty `k × k` matrix over the given ordered labels.
    pub fn zeros(labels: Vec<String>) -> Result<Self, StatsError> {
        let k = labels.len();
        Self::new(labels, vec![vec![0; k]; k])
    }

    pub fn from_pairs(labels: Vec<String>, pairs: &[(usize, usize)]) -> Result<Self, StatsError> {
        let mut m = Self::zeros(labels)?;
        for &(a, b) in pairs {
            m.add(a, b);
        }
        Ok(m)
    }

    pub fn add(&mut self, row: usize, col: usize) {
        self.counts[row][col] += 1;
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn transpose(&self) -> Self {
        let k = self.k();
        let counts = (0..k)
            .map(|i| (0..k).map(|j| self.counts[j][i]).collect())
            .collect();
        ConfusionMatrix {
            labels: self.labels.clone(),
            counts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    None,
    /// Disagreement weight `|i − j| / (k − 1)`.
    Linear,
}

/// Cohen's kappa. When chance agreement is already perfect the result is 1.
pub fn cohen_kappa(matrix: &ConfusionMatrix, weighting: Weighting) -> Result<f64, StatsError> {
    let total = matrix.total();
    if total == 0 {
        return Err(StatsError::ZeroTotal);
    }
    let k = matrix.k();
    let n = total as u128;
    let rows: Vec<u128> = matrix
        .counts
        .iter()
        .map(|r| r.iter().map(|&c| c as u128).sum())
        .collect();
    let cols: Vec<u128> = (0..k)
        .map(|j| matrix.counts.iter().map(|r| r[j] as u128).sum())
        .collect();

    // Both forms reduce to a ratio of integers; one division rounds it.
    let (num, den) = match weighting {
        Weighting::None => {
            let agree: u128 = (0..k).map(|i| matrix.counts[i][i] as u128).sum();
            let chance: u128 = (0..k).map(|i| rows[i] * cols[i]).sum();
            (
                n as i128 * agree as i128 - chance as i128,
                (n * n) as i128 - chance as i128,
            )
        }
        Weighting::Linear => {
            let (mut obs, mut exp) = (0u128, 0u128);
            for (i, (row, &r)) in matrix.counts.iter().zip(&rows).enumerate() {
                for (j, (&c, &col)) in row.iter().zip(&cols).enumerate() {
                    let d = i.abs_diff(j) as u128;
                    obs += d * c as u128;
                    exp += d * r * col;
                }
            }
            (exp as i128 - (n * obs) as i128, exp as i128)
        }
    };
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}
