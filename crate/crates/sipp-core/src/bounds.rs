//! Layer- and network-level certificates.
//!
//! Two layer quantities connect per-patch guarantees to a bound on the
//! network output. The sign complexity measures how much quadrant-wise
//! norm mass exceeds the recombined pre-activation,
//!
//!   Delta^l = max_{x in S} (|Z^{l++}| + |Z^{l+-}| + |Z^{l-+}| + |Z^{l--}|) / |Z^l|,
//!
//! and the layer condition number bounds how a relative error injected at
//! layer l's pre-activation amplifies at the output,
//!
//!   kappa^l = max_{x in S} (prod_{k>l} |W^k|_F) * |Z^l(x)| / |A^L(x)|.
//!
//! The network certificate composes the per-layer maxima of the group
//! certificates:  eps = sum_l kappa^l * Delta^l * eps^l,  where eps^l
//! already carries the regularity constant C. Delta and kappa are raw
//! maxima over the sample set; the certificate flags record that.

use serde::Serialize;

use crate::allocate::AllocationPlan;
use crate::error::{Error, Result};
use crate::net::{
    extract_patches, dot, frobenius_norm, l2_norm, quadrant_split, ForwardTrace, Network,
};
use crate::sensitivity::RegularityConstants;

/// A per-layer statistic that is a maximum over usable sample points.
/// `value` is `None` when every point had to be skipped.
#[derive(Debug, Clone, Copy)]
pub struct SampleMax {
    pub value: Option<f64>,
    pub skipped: usize,
}

/// Sign complexity Delta^l over the traced sample set.
///
/// The linear (bias-free) pre-activation is used for both the quadrant
/// norms and the denominator so the recombination identity holds exactly.
/// Points with a zero pre-activation norm are skipped and counted.
pub fn sign_complexity(net: &Network, layer: usize, trace: &ForwardTrace) -> Result<SampleMax> {
    let group_count = net.group_count(layer)?;
    let mut best: Option<f64> = None;
    let mut skipped = 0usize;
    for sample in 0..trace.batch_size() {
        let a_prev = trace.layer_input(layer, sample);
        let patches = extract_patches(net, layer, 0, &a_prev)?;
        let mut sq = [0.0f64; 4];
        let mut sq_recombined = 0.0f64;
        for i in 0..group_count {
            let group = net.parameter_group(layer, i)?;
            let (w_plus, w_minus) = quadrant_split(&group.weights);
            for row in patches.rows() {
                let (a_plus, a_minus) = quadrant_split(row);
                let z = [
                    dot(&w_plus, &a_plus),
                    dot(&w_plus, &a_minus),
                    dot(&w_minus, &a_plus),
                    dot(&w_minus, &a_minus),
                ];
                for (acc, v) in sq.iter_mut().zip(z) {
                    *acc += v * v;
                }
                let recombined = z[0] - z[1] - z[2] + z[3];
                sq_recombined += recombined * recombined;
            }
        }
        let denom = sq_recombined.sqrt();
        if denom == 0.0 {
            skipped += 1;
            continue;
        }
        let numer: f64 = sq.iter().map(|v| v.sqrt()).sum();
        let ratio = numer / denom;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    Ok(SampleMax {
        value: best,
        skipped,
    })
}

/// Layer condition number kappa^l over the traced sample set. The product
/// of downstream Frobenius norms is empty (1) for the last layer. Points
/// with zero output norm are skipped and counted.
pub fn layer_condition(net: &Network, layer: usize, trace: &ForwardTrace) -> Result<SampleMax> {
    net.layer(layer)?;
    let fro_product: f64 = ((layer + 1)..net.layer_count())
        .map(|k| frobenius_norm(&net.layers()[k].weights))
        .product();
    let mut best: Option<f64> = None;
    let mut skipped = 0usize;
    for sample in 0..trace.batch_size() {
        let z_norm = l2_norm(trace.pre_activation(layer).sample(sample));
        let out_norm = l2_norm(trace.output().sample(sample));
        if out_norm == 0.0 {
            skipped += 1;
            continue;
        }
        let ratio = z_norm / out_norm;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    Ok(SampleMax {
        value: best.map(|b| fro_product * b),
        skipped,
    })
}

/// eps^l: the largest per-group certificate of a layer under a plan.
pub fn layer_certificate(plan: &AllocationPlan, layer: usize) -> f64 {
    plan.entries
        .iter()
        .filter(|e| e.layer_index == layer)
        .map(|e| e.error)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupCertificate {
    pub layer: usize,
    pub group: usize,
    pub m: usize,
    pub eps: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerCertificate {
    pub layer: usize,
    pub eps: f64,
    #[serde(rename = "Delta")]
    pub sign_complexity: Option<f64>,
    pub kappa: Option<f64>,
    pub skipped_sign_points: usize,
    pub skipped_condition_points: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateFlags {
    /// Some layer with a nonzero certificate had an undefined Delta or
    /// kappa, so the network bound could not be assembled.
    pub undefined: bool,
    /// Sample points skipped across all layer statistics.
    pub skipped_points: usize,
    /// Delta and kappa are raw maxima over the sample set, with no
    /// out-of-sample inflation applied.
    pub sample_maxima_only: bool,
}

/// The full certificate: per-group and per-layer relative errors plus the
/// composed network-level bound and the constants it was computed under.
#[derive(Debug, Clone, Serialize)]
pub struct PruneCertificate {
    pub delta: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub delta_patch: f64,
    pub strategy: String,
    /// "det" when the network bound composes deterministic certificates as
    /// stated; "analogous" when rand/hybrid per-group certificates are
    /// substituted into the same kappa*Delta-weighted sum.
    pub composition: &'static str,
    pub budget_used: usize,
    pub per_group: Vec<GroupCertificate>,
    pub per_layer: Vec<LayerCertificate>,
    pub network_eps: Option<f64>,
    pub flags: CertificateFlags,
}

/// Assembles the network certificate eps = sum_l kappa^l Delta^l eps^l from
/// an allocation plan and the forward trace of the sample set.
///
/// Layers with a zero certificate contribute nothing even when their Delta
/// or kappa is undefined; an undefined factor on a layer that does
/// contribute marks the whole bound undefined.
pub fn network_certificate(
    net: &Network,
    plan: &AllocationPlan,
    trace: &ForwardTrace,
    constants: &RegularityConstants,
    delta_patch: f64,
) -> Result<PruneCertificate> {
    let per_group: Vec<GroupCertificate> = plan
        .entries
        .iter()
        .map(|e| GroupCertificate {
            layer: e.layer_index,
            group: e.group_index,
            m: e.m,
            eps: e.error,
        })
        .collect();

    let mut per_layer = Vec::with_capacity(net.layer_count());
    let mut network_eps = Some(0.0f64);
    let mut undefined = false;
    let mut skipped_points = 0usize;
    for layer in 0..net.layer_count() {
        let eps = layer_certificate(plan, layer);
        let sign = sign_complexity(net, layer, trace)?;
        let cond = layer_condition(net, layer, trace)?;
        skipped_points += sign.skipped + cond.skipped;
        if eps > 0.0 {
            match (sign.value, cond.value, &mut network_eps) {
                (Some(d), Some(k), Some(total)) => *total += k * d * eps,
                _ => {
                    undefined = true;
                    network_eps = None;
                }
            }
        }
        per_layer.push(LayerCertificate {
            layer,
            eps,
            sign_complexity: sign.value,
            kappa: cond.value,
            skipped_sign_points: sign.skipped,
            skipped_condition_points: cond.skipped,
        });
    }

    Ok(PruneCertificate {
        delta: constants.delta,
        c: constants.c,
        k: constants.k,
        delta_patch,
        strategy: plan.strategy.name().to_string(),
        composition: match plan.strategy {
            crate::allocate::Strategy::Det => "det",
            _ => "analogous",
        },
        budget_used: plan.total,
        per_group,
        per_layer,
        network_eps,
        flags: CertificateFlags {
            undefined,
            skipped_points,
            sample_maxima_only: true,
        },
    })
}

/// Diagnostic per-sample propagation bound through the first `upto + 1`
/// layers:
///
///   P_l(x) = sum_{k<=l} (prod_{k<k'<=l} |W^{k'}|_F) eps^k Delta^k |Z^k(x)|,
///
/// the right-hand side of the inductive error-propagation argument. The
/// recursion P_{l+1} = |W^{l+1}|_F P_l + eps^{l+1} Delta^{l+1} |Z^{l+1}|
/// holds by construction.
pub fn propagation_bound(
    net: &Network,
    trace: &ForwardTrace,
    layer_eps: &[f64],
    layer_delta: &[f64],
    upto: usize,
) -> Result<Vec<f64>> {
    if upto >= net.layer_count() {
        return Err(Error::InvalidLayer {
            layer: upto,
            count: net.layer_count(),
        });
    }
    if layer_eps.len() != net.layer_count() || layer_delta.len() != net.layer_count() {
        return Err(Error::BadParameter(
            "per-layer eps/Delta vectors must cover every layer".into(),
        ));
    }
    let bounds = (0..trace.batch_size())
        .map(|sample| {
            (0..=upto)
                .map(|k| {
                    let fro: f64 = ((k + 1)..=upto)
                        .map(|k2| frobenius_norm(&net.layers()[k2].weights))
                        .product();
                    let z_norm = l2_norm(trace.pre_activation(k).sample(sample));
                    fro * layer_eps[k] * layer_delta[k] * z_norm
                })
                .sum()
        })
        .collect();
    Ok(bounds)
}
