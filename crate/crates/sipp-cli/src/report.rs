//! Run report structures serialized to JSON.

use serde::Serialize;
use sipp_core::PruneCertificate;

#[derive(Debug, Clone, Serialize)]
pub struct LayerCounts {
    pub layer: usize,
    pub kept: usize,
    pub total: usize,
}

/// Relative output errors of the pruned network on a test split.
#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalStats {
    /// Test points with a nonzero reference output.
    pub points: usize,
    pub skipped_zero_reference: usize,
    pub mean_rel_err: f64,
    pub max_rel_err: f64,
    pub p50_rel_err: f64,
    pub p90_rel_err: f64,
    pub p99_rel_err: f64,
    /// Certificate the coverage was evaluated at, when defined.
    pub eps: Option<f64>,
    /// Fraction of points with relative error <= eps.
    pub coverage_at_eps: Option<f64>,
}

impl EmpiricalStats {
    pub fn from_errors(rel_errors: &mut [f64], skipped: usize, eps: Option<f64>) -> Self {
        rel_errors.sort_by(f64::total_cmp);
        let n = rel_errors.len();
        let quantile = |q: f64| -> f64 {
            if n == 0 {
                return 0.0;
            }
            let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
            rel_errors[idx]
        };
        let mean = if n == 0 {
            0.0
        } else {
            rel_errors.iter().sum::<f64>() / n as f64
        };
        let coverage = eps.map(|e| {
            if n == 0 {
                1.0
            } else {
                rel_errors.iter().filter(|&&r| r <= e).count() as f64 / n as f64
            }
        });
        Self {
            points: n,
            skipped_zero_reference: skipped,
            mean_rel_err: mean,
            max_rel_err: rel_errors.last().copied().unwrap_or(0.0),
            p50_rel_err: quantile(0.5),
            p90_rel_err: quantile(0.9),
            p99_rel_err: quantile(0.99),
            eps,
            coverage_at_eps: coverage,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timings {
    pub sensitivity_ms: f64,
    pub allocate_ms: f64,
    pub sparsify_ms: f64,
    pub certificate_ms: f64,
    pub eval_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub strategy: String,
    pub budget: usize,
    pub ratio: f64,
    pub total_prunable: usize,
    pub kept_total: usize,
    pub per_layer: Vec<LayerCounts>,
    /// Size of the sensitivity sample set actually used.
    pub sample_size: usize,
    /// Derivation used when no explicit size was configured.
    pub sample_size_formula: &'static str,
    /// True when the validation pool was smaller than the requested size.
    pub sample_clamped: bool,
    pub eta: usize,
    pub rho: usize,
    pub delta_patch: f64,
    pub s_tilde_formula: &'static str,
    pub certificate: PruneCertificate,
    pub empirical: Option<EmpiricalStats>,
    pub timings: Timings,
}

pub const SAMPLE_SIZE_FORMULA: &str = "ceil(K*ln(8*eta*rho/delta))";
pub const S_TILDE_FORMULA: &str = "(C*S/3)*ln(2/delta_patch); delta_patch = delta/(8*eta)";
