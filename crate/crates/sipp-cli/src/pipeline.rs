//! The pruning pipeline: sensitivity -> allocation -> sparsify ->
//! certificate -> empirical evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use sipp_core::allocate::{opt_alloc, sipp_simple, AllocOptions, AllocationPlan, PlanEntry, Strategy};
use sipp_core::bounds::network_certificate;
use sipp_core::io::{read_batch, read_model, write_model};
use sipp_core::net::{extract_patches, forward, ForwardTrace, Network};
use sipp_core::sensitivity::{
    empirical_sensitivity, sample_set_size, RegularityConstants, SensitivityTable,
};
use sipp_core::sparsify::{
    derive_group_seed, sipp_det, sipp_hybrid, sipp_rand, CertificateParams, Method, PrunedGroup,
};
use sipp_core::{PruneCertificate, Tensor};

use crate::report::{
    EmpiricalStats, LayerCounts, RunReport, Timings, SAMPLE_SIZE_FORMULA, S_TILDE_FORMULA,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStrategy {
    Det,
    Rand,
    Hybrid,
    Simple,
    Wt,
}

impl RunStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "det" => Ok(Self::Det),
            "rand" => Ok(Self::Rand),
            "hybrid" => Ok(Self::Hybrid),
            "simple" => Ok(Self::Simple),
            "wt" => Ok(Self::Wt),
            other => bail!("unknown strategy `{other}` (det, rand, hybrid, simple, wt)"),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Det => "det",
            Self::Rand => "rand",
            Self::Hybrid => "hybrid",
            Self::Simple => "simple",
            Self::Wt => "wt",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum BudgetSpec {
    /// Total number of weights to keep.
    Count(usize),
    /// Fraction of prunable weights to remove.
    Ratio(f64),
}

impl BudgetSpec {
    pub fn from_flags(budget: Option<usize>, ratio: Option<f64>) -> Result<Self> {
        match (budget, ratio) {
            (Some(b), None) => Ok(Self::Count(b)),
            (None, Some(r)) => Ok(Self::Ratio(r)),
            _ => bail!("exactly one of --budget or --ratio must be given"),
        }
    }

    pub fn to_count(self, total_prunable: usize) -> Result<(usize, f64)> {
        match self {
            Self::Count(b) => {
                let ratio = 1.0 - b as f64 / total_prunable as f64;
                Ok((b, ratio))
            }
            Self::Ratio(r) => {
                if !(0.0..=1.0).contains(&r) {
                    bail!("ratio must lie in [0,1], got {r}");
                }
                Ok((((1.0 - r) * total_prunable as f64).round() as usize, r))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model_dir: PathBuf,
    pub data_path: PathBuf,
    pub test_data_path: Option<PathBuf>,
    pub strategy: RunStrategy,
    pub budget: BudgetSpec,
    pub delta: f64,
    pub c: f64,
    pub k: f64,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Overrides the derived sensitivity sample-set size.
    pub sample_size: Option<usize>,
    /// Minimum weights kept per group by the allocator (0 or 1).
    pub alloc_floor: usize,
    pub export_sensitivities: bool,
    pub export_plan: bool,
}

/// Everything that is independent of the budget: the model, the sensitivity
/// sample, its forward trace, and the per-group sensitivity tables.
pub struct Prepared {
    pub net: Network,
    pub tables: Vec<SensitivityTable>,
    pub trace: ForwardTrace,
    pub eta: usize,
    pub rho: usize,
    pub sample_size: usize,
    pub sample_clamped: bool,
    pub constants: RegularityConstants,
    pub params: CertificateParams,
    pub total_prunable: usize,
    pub sensitivity_ms: f64,
}

/// Uniform subsample without replacement (partial Fisher-Yates).
fn subsample(pool: &Tensor, n: usize, seed: u64) -> Result<(Tensor, bool)> {
    let available = pool.batch_size();
    if available <= n {
        return Ok((pool.clone(), available < n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_group_seed(seed, usize::MAX, usize::MAX));
    let mut indices: Vec<usize> = (0..available).collect();
    for i in 0..n {
        let j = rng.gen_range(i..available);
        indices.swap(i, j);
    }
    let samples: Vec<Vec<f64>> = indices[..n].iter().map(|&i| pool.sample(i).to_vec()).collect();
    Ok((Tensor::from_samples(pool.sample_shape(), &samples)?, false))
}

/// Sensitivity tables for every group, ordered by (layer, group).
pub fn sensitivity_tables(net: &Network, trace: &ForwardTrace) -> Result<Vec<SensitivityTable>> {
    let mut tables = Vec::new();
    for l in 0..net.layer_count() {
        let per_input: Vec<_> = (0..trace.batch_size())
            .map(|s| extract_patches(net, l, 0, &trace.layer_input(l, s)))
            .collect::<sipp_core::Result<_>>()?;
        for i in 0..net.group_count(l)? {
            let group = net.parameter_group(l, i)?;
            tables.push(empirical_sensitivity(&group, &per_input)?);
        }
    }
    Ok(tables)
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let net = read_model(&cfg.model_dir)
        .with_context(|| format!("loading model bundle {}", cfg.model_dir.display()))?;
    let pool = read_batch(&cfg.data_path)
        .with_context(|| format!("loading data file {}", cfg.data_path.display()))?;
    let constants = RegularityConstants::new(cfg.c, cfg.k, cfg.delta)?;
    let sample_shape = pool.sample_shape().to_vec();
    let eta = net.total_patches(&sample_shape)?;
    let rho = net.max_group_len();
    let target = match cfg.sample_size {
        Some(n) if n >= 1 => n,
        Some(_) => bail!("--sample-size must be positive"),
        None => sample_set_size(eta, rho, cfg.delta, cfg.k)?,
    };
    let (sample, clamped) = subsample(&pool, target, cfg.seed)?;

    let start = Instant::now();
    let trace = forward(&net, &sample)?;
    let tables = sensitivity_tables(&net, &trace)?;
    let sensitivity_ms = start.elapsed().as_secs_f64() * 1e3;

    let delta_patch = cfg.delta / (8.0 * eta as f64);
    let params = CertificateParams::new(cfg.c, delta_patch)?;
    let total_prunable = net.total_prunable();
    Ok(Prepared {
        net,
        tables,
        trace,
        eta,
        rho,
        sample_size: sample.batch_size(),
        sample_clamped: clamped,
        constants,
        params,
        total_prunable,
        sensitivity_ms,
    })
}

pub struct PruneOutcome {
    pub plan: AllocationPlan,
    pub pruned_groups: Vec<PrunedGroup>,
    pub pruned_net: Network,
    pub allocate_ms: f64,
    pub sparsify_ms: f64,
}

/// A group emptied by the allocator: nothing kept, full dropped mass.
fn empty_group(
    table: &SensitivityTable,
    weights_len: usize,
    epsilon: f64,
) -> PrunedGroup {
    PrunedGroup {
        layer_index: table.layer_index,
        group_index: table.group_index,
        kept: Vec::new(),
        weights: vec![0.0; weights_len],
        method: Method::Det,
        epsilon,
        kept_count: 0,
        draws: None,
    }
}

/// Global magnitude thresholding: keep the `budget` largest-|w| weights.
/// The per-group certificate is still the dropped sensitivity mass, which
/// holds for any kept index set.
fn wt_prune(
    net: &Network,
    tables: &[SensitivityTable],
    budget: usize,
    params: &CertificateParams,
) -> Result<(AllocationPlan, Vec<PrunedGroup>)> {
    struct Key {
        abs_w: f64,
        layer: usize,
        group: usize,
        j: usize,
        slot: usize,
    }
    let mut keys = Vec::new();
    for (slot, table) in tables.iter().enumerate() {
        for j in 0..table.len() {
            keys.push(Key {
                abs_w: table.abs_weights()[j],
                layer: table.layer_index,
                group: table.group_index,
                j,
                slot,
            });
        }
    }
    keys.sort_by(|a, b| {
        b.abs_w
            .total_cmp(&a.abs_w)
            .then((a.layer, a.group, a.j).cmp(&(b.layer, b.group, b.j)))
    });
    let mut kept_sets: Vec<Vec<usize>> = vec![Vec::new(); tables.len()];
    for key in keys.iter().take(budget.min(keys.len())) {
        kept_sets[key.slot].push(key.j);
    }
    let mut entries = Vec::with_capacity(tables.len());
    let mut pruned_groups = Vec::with_capacity(tables.len());
    let mut objective = 0.0;
    let mut total = 0;
    for (slot, table) in tables.iter().enumerate() {
        let mut kept = kept_sets[slot].clone();
        kept.sort_unstable();
        let group = net.parameter_group(table.layer_index, table.group_index)?;
        let mut weights = vec![0.0; group.len()];
        for &j in &kept {
            weights[j] = group.weights[j];
        }
        // Dropped sensitivity mass, accumulated in ascending-sensitivity
        // order like the table's own suffix sums.
        let kept_mask: Vec<bool> = {
            let mut mask = vec![false; group.len()];
            for &j in &kept {
                mask[j] = true;
            }
            mask
        };
        let mut eps = 0.0;
        for &j in table.order().iter().rev() {
            if !kept_mask[j] {
                eps += table.sensitivities()[j];
            }
        }
        eps *= params.c;
        objective += eps;
        total += kept.len();
        entries.push(PlanEntry {
            layer_index: table.layer_index,
            group_index: table.group_index,
            m: kept.len(),
            error: eps,
        });
        let kept_count = kept.len();
        pruned_groups.push(PrunedGroup {
            layer_index: table.layer_index,
            group_index: table.group_index,
            kept,
            weights,
            method: Method::Det,
            epsilon: eps,
            kept_count,
            draws: None,
        });
    }
    Ok((
        AllocationPlan {
            strategy: Strategy::Det,
            entries,
            total,
            objective,
        },
        pruned_groups,
    ))
}

/// Allocates the budget and prunes every group under the configured
/// strategy. Plan entries are updated to the certificates of the groups as
/// actually pruned (identical by construction for all strategies).
pub fn execute(
    prepared: &Prepared,
    strategy: RunStrategy,
    budget: usize,
    seed: u64,
    alloc_floor: usize,
) -> Result<PruneOutcome> {
    let Prepared {
        net,
        tables,
        params,
        ..
    } = prepared;

    let alloc_start = Instant::now();
    let (mut plan, wt_groups) = match strategy {
        RunStrategy::Det => (
            opt_alloc(tables, budget, Strategy::Det, params, &AllocOptions { floor: alloc_floor })?,
            None,
        ),
        RunStrategy::Rand => (
            opt_alloc(tables, budget, Strategy::Rand, params, &AllocOptions { floor: alloc_floor })?,
            None,
        ),
        RunStrategy::Hybrid => (
            opt_alloc(tables, budget, Strategy::Hybrid, params, &AllocOptions { floor: alloc_floor })?,
            None,
        ),
        RunStrategy::Simple => (sipp_simple(tables, budget, params)?, None),
        RunStrategy::Wt => {
            let (plan, groups) = wt_prune(net, tables, budget, params)?;
            (plan, Some(groups))
        }
    };
    let allocate_ms = alloc_start.elapsed().as_secs_f64() * 1e3;

    let sparsify_start = Instant::now();
    let pruned_groups = match wt_groups {
        Some(groups) => groups,
        None => {
            let mut out = Vec::with_capacity(plan.entries.len());
            for (slot, entry) in plan.entries.iter().enumerate() {
                let table = &tables[slot];
                let group = net.parameter_group(entry.layer_index, entry.group_index)?;
                let pruned = if entry.m == 0 {
                    empty_group(table, group.len(), entry.error)
                } else {
                    let group_seed = derive_group_seed(seed, entry.layer_index, entry.group_index);
                    match strategy {
                        RunStrategy::Det | RunStrategy::Simple => {
                            sipp_det(&group, table, entry.m, params)?
                        }
                        RunStrategy::Rand => sipp_rand(&group, table, entry.m, group_seed, params)?,
                        RunStrategy::Hybrid => {
                            sipp_hybrid(&group, table, entry.m, group_seed, params)?
                        }
                        RunStrategy::Wt => unreachable!(),
                    }
                };
                out.push(pruned);
            }
            out
        }
    };
    // The certificate composition reads errors off the plan; keep them in
    // sync with what was actually applied.
    for (entry, pruned) in plan.entries.iter_mut().zip(&pruned_groups) {
        entry.error = pruned.epsilon;
    }

    let mut pruned_net = net.clone();
    for pruned in &pruned_groups {
        pruned_net.set_group_weights(pruned.layer_index, pruned.group_index, &pruned.weights)?;
    }
    let sparsify_ms = sparsify_start.elapsed().as_secs_f64() * 1e3;

    Ok(PruneOutcome {
        plan,
        pruned_groups,
        pruned_net,
        allocate_ms,
        sparsify_ms,
    })
}

/// Relative output errors of `pruned` against `reference` on a test batch.
pub fn evaluate(
    reference: &Network,
    pruned: &Network,
    test: &Tensor,
    eps: Option<f64>,
) -> Result<EmpiricalStats> {
    let ref_trace = forward(reference, test)?;
    let pruned_trace = forward(pruned, test)?;
    let mut rel_errors = Vec::with_capacity(test.batch_size());
    let mut skipped = 0usize;
    for s in 0..test.batch_size() {
        let out_ref = ref_trace.output().sample(s);
        let out_pruned = pruned_trace.output().sample(s);
        let diff: f64 = out_ref
            .iter()
            .zip(out_pruned)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = out_ref.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            skipped += 1;
        } else {
            rel_errors.push(diff / norm);
        }
    }
    Ok(EmpiricalStats::from_errors(&mut rel_errors, skipped, eps))
}

fn export_sensitivities_csv(tables: &[SensitivityTable]) -> String {
    let mut csv = String::from("layer,group,weight_index,sensitivity\n");
    for table in tables {
        for j in 0..table.len() {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                table.layer_index,
                table.group_index,
                j,
                table.sensitivities()[j]
            );
        }
    }
    csv
}

fn export_plan_csv(plan: &AllocationPlan) -> String {
    let mut csv = String::from("layer,group,allocated_m,group_error\n");
    for e in &plan.entries {
        let _ = writeln!(csv, "{},{},{},{}", e.layer_index, e.group_index, e.m, e.error);
    }
    csv
}

fn layer_counts(reference: &Network, pruned: &Network) -> Vec<LayerCounts> {
    pruned
        .layer_nnz()
        .into_iter()
        .enumerate()
        .map(|(layer, kept)| LayerCounts {
            layer,
            kept,
            total: reference.layers()[layer].weights.len(),
        })
        .collect()
}

/// Full pruning run: returns the report and the pruned network, writing the
/// pruned bundle plus report/certificate JSON when an output directory is
/// configured.
pub fn prune_run(cfg: &RunConfig) -> Result<(RunReport, Network)> {
    let prepared = prepare(cfg)?;
    let run = run_at_budget(cfg, &prepared, cfg.budget)?;

    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        write_model(dir, &run.pruned_net)?;
        fs::write(
            dir.join("report.json"),
            serde_json::to_vec_pretty(&run.report)?,
        )?;
        fs::write(
            dir.join("certificate.json"),
            serde_json::to_vec_pretty(&run.report.certificate)?,
        )?;
        if cfg.export_sensitivities {
            fs::write(
                dir.join("sensitivities.csv"),
                export_sensitivities_csv(&prepared.tables),
            )?;
        }
        if cfg.export_plan {
            fs::write(dir.join("plan.csv"), export_plan_csv(&run.plan))?;
        }
    }
    Ok((run.report, run.pruned_net))
}

/// Result of one budget point of a run.
pub struct BudgetRun {
    pub report: RunReport,
    pub pruned_net: Network,
    pub plan: AllocationPlan,
}

/// One budget point of a run: prune, certify, evaluate.
pub fn run_at_budget(
    cfg: &RunConfig,
    prepared: &Prepared,
    budget: BudgetSpec,
) -> Result<BudgetRun> {
    let (budget_count, ratio) = budget.to_count(prepared.total_prunable)?;
    let outcome = execute(prepared, cfg.strategy, budget_count, cfg.seed, cfg.alloc_floor)?;

    let cert_start = Instant::now();
    let certificate = network_certificate(
        &prepared.net,
        &outcome.plan,
        &prepared.trace,
        &prepared.constants,
        prepared.params.delta_patch,
    )?;
    let certificate_ms = cert_start.elapsed().as_secs_f64() * 1e3;

    let eval_start = Instant::now();
    let empirical = match &cfg.test_data_path {
        Some(path) => {
            let test = read_batch(path)
                .with_context(|| format!("loading test data {}", path.display()))?;
            Some(evaluate(
                &prepared.net,
                &outcome.pruned_net,
                &test,
                certificate.network_eps,
            )?)
        }
        None => None,
    };
    let eval_ms = eval_start.elapsed().as_secs_f64() * 1e3;

    let per_layer = layer_counts(&prepared.net, &outcome.pruned_net);
    let kept_total = per_layer.iter().map(|l| l.kept).sum();
    let report = RunReport {
        strategy: cfg.strategy.name().to_string(),
        budget: budget_count,
        ratio,
        total_prunable: prepared.total_prunable,
        kept_total,
        per_layer,
        sample_size: prepared.sample_size,
        sample_size_formula: SAMPLE_SIZE_FORMULA,
        sample_clamped: prepared.sample_clamped,
        eta: prepared.eta,
        rho: prepared.rho,
        delta_patch: prepared.params.delta_patch,
        s_tilde_formula: S_TILDE_FORMULA,
        certificate,
        empirical,
        timings: Timings {
            sensitivity_ms: prepared.sensitivity_ms,
            allocate_ms: outcome.allocate_ms,
            sparsify_ms: outcome.sparsify_ms,
            certificate_ms,
            eval_ms,
        },
    };
    Ok(BudgetRun {
        report,
        pruned_net: outcome.pruned_net,
        plan: outcome.plan,
    })
}

/// Prune-ratio sweep with shared sensitivity computation, one CSV row per
/// ratio. Requires a test split for the empirical columns.
pub fn sweep(cfg: &RunConfig, ratios: &[f64]) -> Result<String> {
    if cfg.test_data_path.is_none() {
        bail!("sweep requires --test-data for the empirical error columns");
    }
    if ratios.is_empty() {
        bail!("at least one ratio is required");
    }
    let prepared = prepare(cfg)?;
    let mut csv = String::from("ratio,strategy,cert_eps,emp_mean_rel_err,emp_max_rel_err,coverage\n");
    for &ratio in ratios {
        let run = run_at_budget(cfg, &prepared, BudgetSpec::Ratio(ratio))?;
        let report = run.report;
        let empirical = report
            .empirical
            .as_ref()
            .ok_or_else(|| anyhow!("sweep evaluation missing"))?;
        let cert = report
            .certificate
            .network_eps
            .map_or("nan".to_string(), |e| e.to_string());
        let coverage = empirical
            .coverage_at_eps
            .map_or("nan".to_string(), |c| c.to_string());
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            ratio,
            cfg.strategy.name(),
            cert,
            empirical.mean_rel_err,
            empirical.max_rel_err,
            coverage
        );
    }
    if let Some(out) = &cfg.out_dir {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(out, &csv)?;
    }
    Ok(csv)
}

/// Certificate-only run: allocation and bound evaluation, no pruning.
pub fn bound_only(cfg: &RunConfig) -> Result<PruneCertificate> {
    let prepared = prepare(cfg)?;
    let (budget_count, _) = cfg.budget.to_count(prepared.total_prunable)?;
    let outcome = execute(&prepared, cfg.strategy, budget_count, cfg.seed, cfg.alloc_floor)?;
    let certificate = network_certificate(
        &prepared.net,
        &outcome.plan,
        &prepared.trace,
        &prepared.constants,
        prepared.params.delta_patch,
    )?;
    if let Some(out) = &cfg.out_dir {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(out, serde_json::to_vec_pretty(&certificate)?)?;
    }
    Ok(certificate)
}
