//! Pearson correlation and the two-sided Mann-Whitney U-test.
//!
//! The exact null distribution of U is computed from the Gaussian binomial
//! coefficient `[n1 + n2 choose n1]_q`, whose k-th coefficient counts the
//! rank assignments with `U = k`. This keeps the exact test available for
//! the runtime shape that matters here: a handful of test similarities
//! against several hundred reference similarities.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest U range (`n1 * n2`) the exact distribution will tabulate.
pub const EXACT_MAX_CELLS: usize = 1 << 20;

/// Smallest group size at which the U-test is considered valid.
pub const MIN_VALID_GROUP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilaritySource {
    PreDeployment,
    Runtime,
}

/// Pearson correlations against a golden template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySample {
    values: Vec<f64>,
    source: SimilaritySource,
}

impl SimilaritySample {
    pub fn new(values: Vec<f64>, source: SimilaritySource) -> Result<Self> {
        if let Some(v) = values
            .iter()
            .find(|v| !(v.is_finite() && (-1.0..=1.0).contains(*v)))
        {
            return Err(Error::InvalidConfig(format!(
                "similarity {v} outside [-1, 1]"
            )));
        }
        Ok(SimilaritySample { values, source })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> SimilaritySource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Sample Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidConfig(
            "correlation needs at least two samples".into(),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ConstantInput);
    }
    let r = sab / (saa.sqrt() * sbb.sqrt());
    if !r.is_finite() {
        return Err(Error::ConstantInput);
    }
    Ok(r.clamp(-1.0, 1.0))
}

/// Ranks `1..=n`, ties sharing the mean of the ranks they span.
pub fn rank_midranks(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyGroup);
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i..j (0-based) carry ranks i+1..=j; their mean is (i+1+j)/2.
        let mid = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = mid;
        }
        i = j;
    }
    Ok(ranks)
}

/// Sizes of tie groups (only groups of two or more).
fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j - i > 1 {
            groups.push(j - i);
        }
        i = j;
    }
    groups
}

fn binomial(n: usize, k: usize) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Exact null distribution of U for tie-free groups of sizes `n1`, `n2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UDistribution {
    pub n1: usize,
    pub n2: usize,
    /// `counts[k]` = number of rank assignments with `U = k`.
    pub counts: Vec<u128>,
    /// `C(n1 + n2, n1)`.
    pub total: u128,
}

impl UDistribution {
    pub fn pmf(&self, u: usize) -> f64 {
        self.counts
            .get(u)
            .map_or(0.0, |&c| c as f64 / self.total as f64)
    }

    /// Two-sided p-value `min(1, 2 min(P[U <= u], P[U >= u]))` as an exact
    /// fraction `(numerator, denominator)`.
    pub fn two_sided_p_rational(&self, u: usize) -> (u128, u128) {
        let u = u.min(self.counts.len() - 1);
        let lower: u128 = self.counts[..=u].iter().sum();
        let upper: u128 = self.counts[u..].iter().sum();
        let tail = lower.min(upper);
        match tail.checked_mul(2) {
            Some(num) if num < self.total => (num, self.total),
            _ => (1, 1),
        }
    }

    pub fn two_sided_p(&self, u: usize) -> f64 {
        let (num, den) = self.two_sided_p_rational(u);
        num as f64 / den as f64
    }
}

/// Tabulates the exact U distribution.
///
/// Fails when the U range exceeds [`EXACT_MAX_CELLS`] or `C(n1 + n2, n1)`
/// does not fit in a signed 128-bit integer.
pub fn exact_u_distribution(n1: usize, n2: usize) -> Result<UDistribution> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::EmptyGroup);
    }
    let cells = n1
        .checked_mul(n2)
        .filter(|&c| c <= EXACT_MAX_CELLS)
        .ok_or_else(|| {
            Error::ExactUnavailable(format!("n1*n2 for ({n1}, {n2}) exceeds {EXACT_MAX_CELLS}"))
        })?;
    let total = binomial(n1 + n2, n1)
        .filter(|&t| t <= i128::MAX as u128)
        .ok_or_else(|| {
            Error::ExactUnavailable(format!("C({}, {n1}) overflows 127 bits", n1 + n2))
        })?;

    let (small, large) = (n1.min(n2), n1.max(n2));
    // [large + i choose i]_q = [large + i - 1 choose i - 1]_q * (1 - q^(large+i)) / (1 - q^i)
    let mut poly: Vec<i128> = vec![0; cells + 1];
    poly[0] = 1;
    for i in 1..=small {
        let deg = i * large;
        let shift = large + i;
        for k in (shift..=deg).rev() {
            poly[k] -= poly[k - shift];
        }
        for k in i..=deg {
            poly[k] += poly[k - i];
        }
    }
    let counts: Vec<u128> = poly
        .into_iter()
        .map(|c| u128::try_from(c).expect("Gaussian binomial coefficients are non-negative"))
        .collect();
    debug_assert_eq!(counts.iter().sum::<u128>(), total);
    Ok(UDistribution {
        n1,
        n2,
        counts,
        total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UMethod {
    /// Exact when the groups are tie-free and the table fits, else normal.
    #[default]
    Auto,
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolvedMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UTestResult {
    pub u1: f64,
    pub u2: f64,
    pub r1: f64,
    pub r2: f64,
    pub n1: usize,
    pub n2: usize,
    pub p_value: f64,
    pub method: ResolvedMethod,
    pub tie_correction_applied: bool,
    /// Set when `min(n1, n2) < 5`.
    pub small_sample_warning: bool,
}

fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Two-sided Mann-Whitney U-test of `group1` against `group2`.
///
/// `u1 = n1 n2 + n1 (n1 + 1) / 2 - r1` counts the pairs in which the
/// group-1 observation is the smaller one.
pub fn mann_whitney(
    group1: &[f64],
    group2: &[f64],
    alternative: Alternative,
    method: UMethod,
) -> Result<UTestResult> {
    let Alternative::TwoSided = alternative;
    let (n1, n2) = (group1.len(), group2.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::EmptyGroup);
    }
    let combined: Vec<f64> = group1.iter().chain(group2).copied().collect();
    let ranks = rank_midranks(&combined)?;
    if combined.iter().all(|&v| v == combined[0]) {
        return Err(Error::DegenerateInput);
    }
    let r1: f64 = ranks[..n1].iter().sum();
    let r2: f64 = ranks[n1..].iter().sum();
    let (f1, f2) = (n1 as f64, n2 as f64);
    let u1 = f1 * f2 + f1 * (f1 + 1.0) / 2.0 - r1;
    let u2 = f1 * f2 + f2 * (f2 + 1.0) / 2.0 - r2;

    let ties = tie_groups(&combined);
    let exact = match method {
        UMethod::NormalApprox => None,
        UMethod::Exact => {
            if !ties.is_empty() {
                return Err(Error::ExactUnavailable(
                    "exact distribution assumes no ties".into(),
                ));
            }
            Some(exact_u_distribution(n1, n2)?)
        }
        UMethod::Auto if ties.is_empty() => exact_u_distribution(n1, n2).ok(),
        UMethod::Auto => None,
    };

    let (p, resolved, tie_corrected) = match exact {
        Some(dist) => {
            // Tie-free, so u1 is integral.
            (dist.two_sided_p(u1 as usize), ResolvedMethod::Exact, false)
        }
        None => {
            let n = f1 + f2;
            let tie_term: f64 = ties
                .iter()
                .map(|&t| {
                    let t = t as f64;
                    t * t * t - t
                })
                .sum();
            let var = f1 * f2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
            #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
            if !(var > 0.0) {
                return Err(Error::DegenerateInput);
            }
            let mu = f1 * f2 / 2.0;
            let z = (u1.max(u2) - mu - 0.5) / var.sqrt();
            let p = (2.0 * normal_sf(z)).min(1.0);
            (p, ResolvedMethod::NormalApprox, tie_term > 0.0)
        }
    };

    Ok(UTestResult {
        u1,
        u2,
        r1,
        r2,
        n1,
        n2,
        p_value: p.max(f64::MIN_POSITIVE),
        method: resolved,
        tie_correction_applied: tie_corrected,
        small_sample_warning: n1.min(n2) < MIN_VALID_GROUP,
    })
}
