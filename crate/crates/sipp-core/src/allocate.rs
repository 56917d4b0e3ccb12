//! Budget allocation across parameter groups.
//!
//! Distributes a global weight budget B over all groups to minimize the sum
//! of per-group certificates. The per-group error curves are nonincreasing
//! and convex in the allocated count, so integral greedy marginal-gain
//! descent (repeatedly granting one weight to the group with the largest
//! error decrease) is exactly optimal — no fractional relaxation or
//! rounding involved.
//!
//! For the deterministic strategy the marginal gain of a group's next grant
//! is just its next-largest sensitivity, so the greedy coincides with
//! global thresholding of weights by sensitivity; `sipp_simple` implements
//! that shortcut directly and produces the identical plan.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::sensitivity::SensitivityTable;
use crate::sparsify::{eps_det, eps_rand, expected_draws, s_tilde, CertificateParams};

/// Which certificate the allocator optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Det,
    Rand,
    Hybrid,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Det => "det",
            Strategy::Rand => "rand",
            Strategy::Hybrid => "hybrid",
        }
    }
}

/// Allocation knobs. `floor` is the minimum weight count retained per group
/// (default 1, so no output channel is zeroed outright; set 0 to allow
/// emptying groups, which is also what the global-thresholding equivalence
/// assumes).
#[derive(Debug, Clone, Copy)]
pub struct AllocOptions {
    pub floor: usize,
}

impl Default for AllocOptions {
    fn default() -> Self {
        Self { floor: 1 }
    }
}

/// Budget and certificate for one group.
#[derive(Debug, Clone)]
pub struct PlanEntry {
    pub layer_index: usize,
    pub group_index: usize,
    pub m: usize,
    pub error: f64,
}

/// A complete budget assignment.
#[derive(Debug, Clone)]
pub struct AllocationPlan {
    pub strategy: Strategy,
    /// One entry per table, in the order the tables were given.
    pub entries: Vec<PlanEntry>,
    pub total: usize,
    /// Sum of per-group errors at the allocated budgets.
    pub objective: f64,
}

/// Theoretical error of one group at budget m under the given strategy.
///
/// Deterministic: C * (S - S(m)). Randomized: the Bernstein certificate at
/// the draw count needed for m unique samples, where m is capped at the
/// number of positive-sensitivity weights (entries with zero sensitivity
/// are unreachable by sampling); m = 0 under the randomized strategy has no
/// estimator and maps to infinity. Groups whose sensitivities are all zero
/// contribute no error under either strategy.
pub fn group_error(
    table: &SensitivityTable,
    m: usize,
    strategy: Strategy,
    params: &CertificateParams,
) -> Result<f64> {
    if m > table.len() {
        return Err(Error::BadBudget {
            budget: m,
            reason: format!("group has only {} weights", table.len()),
        });
    }
    let det = || eps_det(table, m, params.c);
    let rand = || -> Result<f64> {
        if table.total() <= 0.0 {
            return Ok(0.0);
        }
        let m_eff = m.min(table.positive_count());
        if m_eff == 0 {
            return Ok(f64::INFINITY);
        }
        let q = table.probabilities()?;
        let n = expected_draws(&q, m_eff)?;
        Ok(eps_rand(s_tilde(params.c, table.total(), params.delta_patch), n))
    };
    match strategy {
        Strategy::Det => Ok(det()),
        Strategy::Rand => rand(),
        Strategy::Hybrid => Ok(det().min(rand()?)),
    }
}

/// Heap entry: the group `slot`'s next grant, keyed by error decrease with
/// deterministic tie-breaking (sensitivity, |w|, then (layer, group, j)).
struct Candidate {
    gain: f64,
    s_next: f64,
    abs_w_next: f64,
    layer: usize,
    group: usize,
    j: usize,
    slot: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then(self.s_next.total_cmp(&other.s_next))
            .then(self.abs_w_next.total_cmp(&other.abs_w_next))
            .then_with(|| {
                (other.layer, other.group, other.j).cmp(&(self.layer, self.group, self.j))
            })
    }
}

fn candidate(
    table: &SensitivityTable,
    slot: usize,
    m: usize,
    strategy: Strategy,
    params: &CertificateParams,
) -> Result<Candidate> {
    let gain = group_error(table, m, strategy, params)? - group_error(table, m + 1, strategy, params)?;
    let j = table.order()[m];
    Ok(Candidate {
        gain,
        s_next: table.sensitivities()[j],
        abs_w_next: table.abs_weights()[j],
        layer: table.layer_index,
        group: table.group_index,
        j,
        slot,
    })
}

/// Greedy marginal-gain allocation of `budget` kept weights across all
/// groups, minimizing the summed certificate. Grants continue while budget
/// and capacity remain, so the whole budget is used whenever possible.
pub fn opt_alloc(
    tables: &[SensitivityTable],
    budget: usize,
    strategy: Strategy,
    params: &CertificateParams,
    opts: &AllocOptions,
) -> Result<AllocationPlan> {
    if tables.is_empty() {
        return Err(Error::BadParameter("no sensitivity tables".into()));
    }
    let floors: Vec<usize> = tables.iter().map(|t| opts.floor.min(t.len())).collect();
    let total_floor: usize = floors.iter().sum();
    if budget < total_floor {
        return Err(Error::BadBudget {
            budget,
            reason: format!(
                "below the per-group floor total {total_floor} ({} groups, floor {})",
                tables.len(),
                opts.floor
            ),
        });
    }
    let mut m = floors;
    let mut remaining = budget - total_floor;
    let mut heap = BinaryHeap::with_capacity(tables.len());
    for (slot, table) in tables.iter().enumerate() {
        if m[slot] < table.len() {
            heap.push(candidate(table, slot, m[slot], strategy, params)?);
        }
    }
    while remaining > 0 {
        let Some(best) = heap.pop() else { break };
        let slot = best.slot;
        m[slot] += 1;
        remaining -= 1;
        if m[slot] < tables[slot].len() {
            heap.push(candidate(&tables[slot], slot, m[slot], strategy, params)?);
        }
    }
    finish_plan(tables, strategy, params, m)
}

fn finish_plan(
    tables: &[SensitivityTable],
    strategy: Strategy,
    params: &CertificateParams,
    m: Vec<usize>,
) -> Result<AllocationPlan> {
    let mut entries = Vec::with_capacity(tables.len());
    let mut objective = 0.0;
    let mut total = 0;
    for (slot, table) in tables.iter().enumerate() {
        let error = group_error(table, m[slot], strategy, params)?;
        objective += error;
        total += m[slot];
        entries.push(PlanEntry {
            layer_index: table.layer_index,
            group_index: table.group_index,
            m: m[slot],
            error,
        });
    }
    Ok(AllocationPlan {
        strategy,
        entries,
        total,
        objective,
    })
}

/// Global sensitivity thresholding: keep the `budget` globally largest
/// sensitivities across all groups and read the plan off the per-group
/// counts. For the deterministic strategy this produces the same plan and
/// objective as `opt_alloc` with floor 0.
pub fn sipp_simple(
    tables: &[SensitivityTable],
    budget: usize,
    params: &CertificateParams,
) -> Result<AllocationPlan> {
    if tables.is_empty() {
        return Err(Error::BadParameter("no sensitivity tables".into()));
    }
    if budget == 0 {
        return Err(Error::BadBudget {
            budget,
            reason: "global thresholding needs a budget of at least 1".into(),
        });
    }
    struct Key {
        s: f64,
        abs_w: f64,
        layer: usize,
        group: usize,
        j: usize,
        slot: usize,
    }
    let mut keys = Vec::new();
    for (slot, table) in tables.iter().enumerate() {
        for &j in table.order() {
            keys.push(Key {
                s: table.sensitivities()[j],
                abs_w: table.abs_weights()[j],
                layer: table.layer_index,
                group: table.group_index,
                j,
                slot,
            });
        }
    }
    keys.sort_by(|a, b| {
        b.s.total_cmp(&a.s)
            .then(b.abs_w.total_cmp(&a.abs_w))
            .then((a.layer, a.group, a.j).cmp(&(b.layer, b.group, b.j)))
    });
    let mut m = vec![0usize; tables.len()];
    for key in keys.iter().take(budget.min(keys.len())) {
        m[key.slot] += 1;
    }
    finish_plan(tables, Strategy::Det, params, m)
}
