//! Empirical sensitivity of individual weights.
//!
//! For a weight w_j in a parameter group, its relative importance on one
//! input is the largest share it contributes to any output patch,
//!
//!   g_j(x) = max over patches of  w_j a_j(x) / sum_k w_k a_k(x),
//!
//! evaluated quadrant-wise for signed weights and activations (weights and
//! patch entries are each split into nonnegative positive/negative parts
//! and the maximum is taken over the four sign combinations). Empirical
//! sensitivity is the maximum over a sample set,  s_j = max_{x in S} g_j(x).

use crate::error::{Error, Result};
use crate::net::{quadrant_split, ParameterGroup, Patches};

/// Distribution-dependent constants of the regularity assumption, plus the
/// overall failure probability. C and K are not estimable from data here;
/// they are configuration, and every certificate reports the assumed C.
#[derive(Debug, Clone, Copy)]
pub struct RegularityConstants {
    pub c: f64,
    pub k: f64,
    pub delta: f64,
}

impl RegularityConstants {
    pub fn new(c: f64, k: f64, delta: f64) -> Result<Self> {
        if !(c >= 1.0 && c.is_finite()) {
            return Err(Error::BadParameter(format!("C must be >= 1, got {c}")));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::BadParameter(format!("K must be > 0, got {k}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::BadParameter(format!(
                "delta must lie in (0,1), got {delta}"
            )));
        }
        Ok(Self { c, k, delta })
    }
}

impl Default for RegularityConstants {
    fn default() -> Self {
        Self {
            c: 2.0,
            k: 1.0,
            delta: 0.05,
        }
    }
}

/// Per-group sensitivities with their cumulative structure.
///
/// Indices are kept in a sorted order (descending sensitivity, ties broken
/// by larger |w|, then lower index) together with suffix sums so that both
/// S(m), the sum of the m largest sensitivities, and S - S(m), the mass
/// dropped when keeping m weights, are available without re-summation.
/// The dropped mass is accumulated back-to-front, which makes it exactly
/// nonincreasing in m.
#[derive(Debug, Clone)]
pub struct SensitivityTable {
    pub layer_index: usize,
    pub group_index: usize,
    s: Vec<f64>,
    abs_w: Vec<f64>,
    order: Vec<usize>,
    /// suffix[m] = sum of sensitivities at sorted positions m.. (dropped mass).
    suffix: Vec<f64>,
}

impl SensitivityTable {
    /// Builds a table from raw sensitivities and the group's |w| values
    /// (used only for tie-breaking).
    pub fn from_sensitivities(
        layer_index: usize,
        group_index: usize,
        s: Vec<f64>,
        abs_w: Vec<f64>,
    ) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::BadParameter("empty sensitivity vector".into()));
        }
        if s.len() != abs_w.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} sensitivities vs {} weights",
                s.len(),
                abs_w.len()
            )));
        }
        if let Some(&bad) = s.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::BadParameter(format!(
                "sensitivity {bad} outside [0,1]"
            )));
        }
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| {
            s[b].total_cmp(&s[a])
                .then(abs_w[b].total_cmp(&abs_w[a]))
                .then(a.cmp(&b))
        });
        let mut suffix = vec![0.0; s.len() + 1];
        for m in (0..s.len()).rev() {
            suffix[m] = suffix[m + 1] + s[order[m]];
        }
        Ok(Self {
            layer_index,
            group_index,
            s,
            abs_w,
            order,
            suffix,
        })
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Sensitivities indexed by weight index j.
    pub fn sensitivities(&self) -> &[f64] {
        &self.s
    }

    pub fn abs_weights(&self) -> &[f64] {
        &self.abs_w
    }

    /// Weight indices sorted by descending sensitivity (ties: larger |w|,
    /// then lower index).
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// S: cumulative sensitivity of the whole group.
    pub fn total(&self) -> f64 {
        self.suffix[0]
    }

    /// S - S(m): sensitivity mass dropped when keeping the m largest.
    /// Exactly nonincreasing in m, with `dropped_sum(len()) == 0`.
    pub fn dropped_sum(&self, m: usize) -> f64 {
        self.suffix[m]
    }

    /// S(m): sum of the m largest sensitivities.
    pub fn kept_sum(&self, m: usize) -> f64 {
        self.suffix[0] - self.suffix[m]
    }

    /// Number of strictly positive sensitivities.
    pub fn positive_count(&self) -> usize {
        self.s.iter().filter(|&&v| v > 0.0).count()
    }

    /// Importance-sampling probabilities q_j = s_j / S.
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::ZeroSensitivities);
        }
        Ok(self.s.iter().map(|&v| v / total).collect())
    }
}

/// Relative importance g_j(x) of every weight in a group for one input,
/// from the group's patch matrix at that input.
///
/// Quadrants or patches whose denominator is zero contribute nothing: all
/// their numerators are zero too, so the 0/0 share is taken as 0.
pub fn relative_importance(weights: &[f64], patches: &Patches) -> Vec<f64> {
    assert_eq!(
        weights.len(),
        patches.width(),
        "patch width must match group length"
    );
    let (w_plus, w_minus) = quadrant_split(weights);
    let mut g = vec![0.0; weights.len()];
    for row in patches.rows() {
        let (a_plus, a_minus) = quadrant_split(row);
        for (w, a) in [
            (&w_plus, &a_plus),
            (&w_plus, &a_minus),
            (&w_minus, &a_plus),
            (&w_minus, &a_minus),
        ] {
            let denom: f64 = w.iter().zip(a.iter()).map(|(x, y)| x * y).sum();
            if denom > 0.0 {
                for j in 0..g.len() {
                    let share = w[j] * a[j] / denom;
                    if share > g[j] {
                        g[j] = share;
                    }
                }
            }
        }
    }
    g
}

/// Empirical sensitivity of a group over a sample set: the element-wise
/// maximum of `relative_importance` across the per-input patch matrices.
///
/// The max reduction is order-independent, so parallel and serial
/// evaluation agree bitwise.
pub fn empirical_sensitivity(
    group: &ParameterGroup,
    patches_per_input: &[Patches],
) -> Result<SensitivityTable> {
    if patches_per_input.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    for p in patches_per_input {
        if p.width() != group.len() {
            return Err(Error::ShapeMismatch(format!(
                "patch width {} vs group length {}",
                p.width(),
                group.len()
            )));
        }
    }
    let mut s = vec![0.0; group.len()];
    for patches in patches_per_input {
        let g = relative_importance(&group.weights, patches);
        for j in 0..s.len() {
            if g[j] > s[j] {
                s[j] = g[j];
            }
        }
    }
    let abs_w = group.weights.iter().map(|w| w.abs()).collect();
    SensitivityTable::from_sensitivities(group.layer_index, group.group_index, s, abs_w)
}

/// Sample-set size n = ceil(K * ln(8 * eta * rho / delta)) needed for the
/// sensitivity maxima to hold network-wide with probability 1 - delta,
/// where eta is the total patch count and rho the largest group size.
pub fn sample_set_size(eta: usize, rho: usize, delta: f64, k: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::BadParameter(format!(
            "delta must lie in (0,1), got {delta}"
        )));
    }
    if eta == 0 || rho == 0 {
        return Err(Error::BadParameter(
            "eta and rho must be positive".into(),
        ));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::BadParameter(format!("K must be > 0, got {k}")));
    }
    let n = (k * (8.0 * eta as f64 * rho as f64 / delta).ln()).ceil();
    Ok((n as usize).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{extract_patches, Activation, LayerSpec, Network};
    use crate::tensor::Tensor;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn single_patch(values: &[f64]) -> Patches {
        let net = Network::new(vec![LayerSpec::dense(
            Tensor::new(vec![1, values.len()], vec![1.0; values.len()]).unwrap(),
            None,
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let a = Tensor::new(vec![values.len()], values.to_vec()).unwrap();
        extract_patches(&net, 0, 0, &a).unwrap()
    }

    #[test]
    fn importance_symmetric_pair() {
        let g = relative_importance(&[1.0, 1.0], &single_patch(&[1.0, 1.0]));
        assert_eq!(g, vec![0.5, 0.5]);
    }

    #[test]
    fn importance_weighted_pair() {
        // Direct evaluation of the share ratio: 3/(3+1) and 1/(3+1).
        let g = relative_importance(&[3.0, 1.0], &single_patch(&[1.0, 1.0]));
        assert_eq!(g, vec![0.75, 0.25]);
    }

    #[test]
    fn importance_signed_weights_use_quadrants() {
        // ++ quadrant isolates w_1, -+ isolates w_2; each gets full share.
        let g = relative_importance(&[1.0, -1.0], &single_patch(&[1.0, 1.0]));
        assert_eq!(g, vec![1.0, 1.0]);
    }

    #[test]
    fn importance_zero_denominator_contributes_zero() {
        let g = relative_importance(&[0.0, 0.0], &single_patch(&[1.0, 1.0]));
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn importance_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let a: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let scaled: Vec<f64> = a.iter().map(|v| v * 7.5).collect();
        let g1 = relative_importance(&w, &single_patch(&a));
        let g2 = relative_importance(&w, &single_patch(&scaled));
        for (x, y) in g1.iter().zip(&g2) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn quadrant_shares_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w: Vec<f64> = (0..8).map(|_| rng.gen::<f64>()).collect();
        let a: Vec<f64> = (0..8).map(|_| rng.gen::<f64>()).collect();
        // All nonnegative, so only the ++ quadrant is active and shares of a
        // single patch sum to 1.
        let g = relative_importance(&w, &single_patch(&a));
        let sum: f64 = g.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    fn group(weights: Vec<f64>) -> ParameterGroup {
        ParameterGroup {
            layer_index: 0,
            group_index: 0,
            weights,
            bias: None,
        }
    }

    #[test]
    fn sensitivity_single_input_equals_importance() {
        let w = vec![0.3, 0.9, 0.1];
        let p = single_patch(&[1.0, 2.0, 0.5]);
        let g = relative_importance(&w, &p);
        let table = empirical_sensitivity(&group(w), &[p]).unwrap();
        assert_eq!(table.sensitivities(), g.as_slice());
    }

    #[test]
    fn sensitivity_is_elementwise_max() {
        // Two inputs engineered to give shares (0.2, 0.8) and (0.6, 0.4).
        let w = vec![1.0, 1.0];
        let p1 = single_patch(&[0.2, 0.8]);
        let p2 = single_patch(&[0.6, 0.4]);
        let table = empirical_sensitivity(&group(w), &[p1, p2]).unwrap();
        assert!((table.sensitivities()[0] - 0.6).abs() < 1e-15);
        assert!((table.sensitivities()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sensitivity_rejects_empty_sample_set() {
        assert!(matches!(
            empirical_sensitivity(&group(vec![1.0]), &[]),
            Err(Error::EmptySampleSet)
        ));
    }

    #[test]
    fn sensitivity_monotone_in_sample_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let mut all: Vec<Patches> = Vec::new();
        for _ in 0..6 {
            let a: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            all.push(single_patch(&a));
        }
        let small = empirical_sensitivity(&group(w.clone()), &all[..3]).unwrap();
        let big = empirical_sensitivity(&group(w), &all).unwrap();
        for j in 0..5 {
            assert!(big.sensitivities()[j] >= small.sensitivities()[j]);
        }
    }

    #[test]
    fn in_sample_es_inequality_holds_exactly() {
        // For every x in S, every patch, every quadrant:
        // w_j^± a_j^±(x) <= s_j * z^±±(x) with C = 1, by construction.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
        let mut sample: Vec<Patches> = Vec::new();
        for _ in 0..8 {
            let a: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
            sample.push(single_patch(&a));
        }
        let table = empirical_sensitivity(&group(w.clone()), &sample).unwrap();
        let s = table.sensitivities();
        for patches in &sample {
            for row in patches.rows() {
                let z: f64 = w.iter().zip(row).map(|(x, y)| x * y).sum();
                for j in 0..w.len() {
                    assert!(w[j] * row[j] <= s[j] * z * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn table_ordering_and_sums() {
        let s = vec![0.1, 0.6, 0.3];
        let table =
            SensitivityTable::from_sensitivities(0, 0, s, vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(table.order(), &[1, 2, 0]);
        assert!((table.total() - 1.0).abs() < 1e-15);
        assert_eq!(table.dropped_sum(3), 0.0);
        assert_eq!(table.kept_sum(3), table.total());
        // Kept mass is nondecreasing in m.
        for m in 0..3 {
            assert!(table.kept_sum(m) <= table.kept_sum(m + 1));
        }
    }

    #[test]
    fn table_tie_break_prefers_larger_weight_then_lower_index() {
        let table = SensitivityTable::from_sensitivities(
            0,
            0,
            vec![0.5, 0.5, 0.5],
            vec![1.0, 3.0, 3.0],
        )
        .unwrap();
        assert_eq!(table.order(), &[1, 2, 0]);
    }

    #[test]
    fn sample_set_size_examples() {
        // ceil(ln 16) = 3
        assert_eq!(sample_set_size(1, 1, 0.5, 1.0).unwrap(), 3);
        // ceil(2 ln 80000) = 23
        assert_eq!(sample_set_size(10, 100, 0.1, 2.0).unwrap(), 23);
        assert!(sample_set_size(1, 1, 0.0, 1.0).is_err());
        assert!(sample_set_size(1, 1, 1.0, 1.0).is_err());
    }

    #[test]
    fn sample_set_size_monotone_in_rho() {
        let k = 1.5;
        for rho in [1usize, 2, 7, 19] {
            let n1 = sample_set_size(4, rho, 0.2, k).unwrap();
            let n2 = sample_set_size(4, 2 * rho, 0.2, k).unwrap();
            assert!(n2 >= n1);
            assert!(n2 - n1 <= (k * 2.0_f64.ln()).ceil() as usize);
        }
    }
}
