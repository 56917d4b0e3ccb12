//! Per-group pruning strategies and their error certificates.
//!
//! Three ways to cut a parameter group down to a budget of m weights:
//!
//! * deterministic: keep the m largest-sensitivity weights unchanged, with
//!   certificate  eps_det = C * (S - S(m));
//! * randomized: importance-sample indices with probabilities q_j = s_j/S,
//!   N times with replacement, and reweight kept entries to
//!   w_j * n_j / (N q_j), which makes every reconstructed output patch an
//!   unbiased estimator of the original. The Bernstein-style certificate is
//!   eps_rand = (S~ + sqrt(S~ (S~ + 6N))) / N  with
//!   S~ = (C S / 3) * ln(2 / delta_patch);
//! * hybrid: evaluate both certificates and apply whichever is smaller.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::net::ParameterGroup;
use crate::sensitivity::SensitivityTable;

/// Which concrete pruning rule produced a `PrunedGroup`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Det,
    Rand,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Det => "det",
            Method::Rand => "rand",
        }
    }
}

/// Constants entering the per-group certificates: the regularity constant C
/// and the per-patch failure probability delta_patch (delta / (8 eta) when
/// covering all patches and quadrants of a network by a union bound).
#[derive(Debug, Clone, Copy)]
pub struct CertificateParams {
    pub c: f64,
    pub delta_patch: f64,
}

impl CertificateParams {
    pub fn new(c: f64, delta_patch: f64) -> Result<Self> {
        if !(c >= 1.0 && c.is_finite()) {
            return Err(Error::BadParameter(format!("C must be >= 1, got {c}")));
        }
        if !(delta_patch > 0.0 && delta_patch < 1.0) {
            return Err(Error::BadParameter(format!(
                "delta_patch must lie in (0,1), got {delta_patch}"
            )));
        }
        Ok(Self { c, delta_patch })
    }
}

/// Result of pruning one parameter group.
#[derive(Debug, Clone)]
pub struct PrunedGroup {
    pub layer_index: usize,
    pub group_index: usize,
    /// Indices kept (ascending). For the randomized rule these are the
    /// indices sampled at least once.
    pub kept: Vec<usize>,
    /// Full-length weight vector with zeros at discarded indices. Kept
    /// entries are raw weights for `Det` and reweighted for `Rand`.
    pub weights: Vec<f64>,
    pub method: Method,
    /// Certificate on the relative patch error.
    pub epsilon: f64,
    /// Unique kept count; always equals `kept.len()`.
    pub kept_count: usize,
    /// Number of with-replacement draws, for the randomized rule.
    pub draws: Option<u64>,
}

/// eps_det = C * (S - S(m)): the sensitivity mass of the dropped weights.
pub fn eps_det(table: &SensitivityTable, m: usize, c: f64) -> f64 {
    c * table.dropped_sum(m)
}

/// S~ = (C S / 3) * ln(2 / delta_patch).
pub fn s_tilde(c: f64, s_total: f64, delta_patch: f64) -> f64 {
    c * s_total / 3.0 * (2.0 / delta_patch).ln()
}

/// eps_rand = (S~ + sqrt(S~ (S~ + 6N))) / N, the positive root of the
/// Bernstein tail equation  2 exp(-3 eps^2 N / (S C (6 + 2 eps))) = delta.
pub fn eps_rand(s_tilde: f64, n_draws: u64) -> f64 {
    if n_draws == 0 {
        return f64::INFINITY;
    }
    let n = n_draws as f64;
    (s_tilde + (s_tilde * (s_tilde + 6.0 * n)).sqrt()) / n
}

/// E[unique(N)] = sum_j 1 - (1 - q_j)^N, the expected number of distinct
/// indices after N independent draws from q.
pub fn unique_expectation(q: &[f64], n_draws: u64) -> f64 {
    let n = n_draws as f64;
    q.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| 1.0 - (1.0 - p).powf(n))
        .sum()
}

/// Smallest N whose expected unique count reaches the target for m unique
/// weights. The expectation approaches the number of positive-probability
/// entries asymptotically, so the target is capped at that asymptote minus
/// 0.25; the search is exponential bracketing plus bisection.
pub fn expected_draws(q: &[f64], m: usize) -> Result<u64> {
    let sum: f64 = q.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadParameter(format!(
            "probabilities sum to {sum}, expected 1"
        )));
    }
    if q.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::BadParameter("probability outside [0,1]".into()));
    }
    let positive = q.iter().filter(|&&p| p > 0.0).count();
    if m > positive {
        return Err(Error::InfeasibleUniqueTarget {
            target: m,
            available: positive,
        });
    }
    if m == 0 {
        return Ok(0);
    }
    let target = (m as f64).min(positive as f64 - 0.25);
    let mut hi = 1u64;
    while unique_expectation(q, hi) < target {
        hi = hi.saturating_mul(2);
    }
    let mut lo = hi / 2;
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        if unique_expectation(q, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Deterministic per-group seed for a master seed, so groups can be pruned
/// in any order (or in parallel) with identical results.
pub fn derive_group_seed(master: u64, layer: usize, group: usize) -> u64 {
    // splitmix64 over the packed coordinates
    let mut z = master
        ^ (layer as u64).wrapping_mul(0x9e3779b97f4a7c15)
        ^ (group as u64).wrapping_mul(0xbf58476d1ce4e5b9);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Multinomial counts for N draws from q, via the chain of conditional
/// binomials; O(len(q)) regardless of N.
fn multinomial_counts(q: &[f64], n_draws: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut counts = vec![0u64; q.len()];
    let mut remaining = n_draws;
    let mut mass_left = 1.0f64;
    let last_positive = q.iter().rposition(|&p| p > 0.0);
    for (j, &p) in q.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if p <= 0.0 {
            continue;
        }
        if Some(j) == last_positive || p >= mass_left {
            counts[j] = remaining;
            break;
        }
        let cond = (p / mass_left).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, cond)
            .expect("conditional probability in [0,1]")
            .sample(rng);
        counts[j] = draw;
        remaining -= draw;
        mass_left -= p;
    }
    counts
}

fn check_budget(m: usize, len: usize) -> Result<()> {
    if m == 0 || m > len {
        return Err(Error::BadBudget {
            budget: m,
            reason: format!("must satisfy 1 <= m <= {len}"),
        });
    }
    Ok(())
}

/// Keeps the m largest-sensitivity weights unchanged and zeroes the rest.
pub fn sipp_det(
    group: &ParameterGroup,
    table: &SensitivityTable,
    m: usize,
    params: &CertificateParams,
) -> Result<PrunedGroup> {
    check_budget(m, group.len())?;
    let mut kept: Vec<usize> = table.order()[..m].to_vec();
    kept.sort_unstable();
    let mut weights = vec![0.0; group.len()];
    for &j in &kept {
        weights[j] = group.weights[j];
    }
    Ok(PrunedGroup {
        layer_index: group.layer_index,
        group_index: group.group_index,
        kept,
        weights,
        method: Method::Det,
        epsilon: eps_det(table, m, params.c),
        kept_count: m,
        draws: None,
    })
}

/// Importance-samples with a draw count chosen so the expected number of
/// unique indices reaches m (capped at the positive-sensitivity count).
pub fn sipp_rand(
    group: &ParameterGroup,
    table: &SensitivityTable,
    m: usize,
    seed: u64,
    params: &CertificateParams,
) -> Result<PrunedGroup> {
    check_budget(m, group.len())?;
    let q = table.probabilities()?;
    let m_eff = m.min(table.positive_count());
    let n_draws = expected_draws(&q, m_eff)?;
    sipp_rand_with_draws(group, table, n_draws, seed, params)
}

/// Randomized pruning with an explicit with-replacement draw count N.
pub fn sipp_rand_with_draws(
    group: &ParameterGroup,
    table: &SensitivityTable,
    n_draws: u64,
    seed: u64,
    params: &CertificateParams,
) -> Result<PrunedGroup> {
    if n_draws == 0 {
        return Err(Error::BadBudget {
            budget: 0,
            reason: "draw count must be >= 1".into(),
        });
    }
    let q = table.probabilities()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = multinomial_counts(&q, n_draws, &mut rng);
    let mut kept = Vec::new();
    let mut weights = vec![0.0; group.len()];
    let n = n_draws as f64;
    for (j, &c) in counts.iter().enumerate() {
        if c > 0 {
            kept.push(j);
            weights[j] = group.weights[j] * (c as f64) / (n * q[j]);
        }
    }
    let kept_count = kept.len();
    Ok(PrunedGroup {
        layer_index: group.layer_index,
        group_index: group.group_index,
        kept,
        weights,
        method: Method::Rand,
        epsilon: eps_rand(s_tilde(params.c, table.total(), params.delta_patch), n_draws),
        kept_count,
        draws: Some(n_draws),
    })
}

/// Evaluates both certificates for budget m and applies the strategy with
/// the smaller one; the reported certificate is their minimum.
pub fn sipp_hybrid(
    group: &ParameterGroup,
    table: &SensitivityTable,
    m: usize,
    seed: u64,
    params: &CertificateParams,
) -> Result<PrunedGroup> {
    check_budget(m, group.len())?;
    let q = table.probabilities()?;
    let m_eff = m.min(table.positive_count());
    let n_draws = expected_draws(&q, m_eff)?;
    let e_det = eps_det(table, m, params.c);
    let e_rand = eps_rand(s_tilde(params.c, table.total(), params.delta_patch), n_draws);
    if e_rand > e_det {
        sipp_det(group, table, m, params)
    } else {
        sipp_rand_with_draws(group, table, n_draws, seed, params)
    }
}
