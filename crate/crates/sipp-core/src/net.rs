//! Feed-forward networks as chains of linear maps with parameter sharing.
//!
//! A layer is either a dense matrix or a 2-D convolution; both are linear
//! maps whose weights decompose into independent parameter groups (a dense
//! output row, a conv filter). Each group produces its output scalars as
//! dot products between the group's flat weight vector and *patches* of the
//! layer input, which is the view the sensitivity machinery operates on.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Element-wise activation applied after a layer's linear map.
///
/// The set is restricted to 1-Lipschitz functions; `Softmax` is only
/// accepted as the final layer's activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    Identity,
    Softmax,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::ReLU => "relu",
            Activation::Identity => "identity",
            Activation::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::ReLU),
            "identity" => Ok(Activation::Identity),
            "softmax" => Ok(Activation::Softmax),
            other => Err(Error::BadParameter(format!("unknown activation `{other}`"))),
        }
    }
}

/// Shape parameters of a layer's linear map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense {
        out_features: usize,
        in_features: usize,
    },
    Conv2d {
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        /// Symmetric zero-padding applied on all four sides.
        padding: usize,
    },
}

impl LayerKind {
    /// Expected weight tensor shape for this kind.
    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerKind::Dense {
                out_features,
                in_features,
            } => vec![out_features, in_features],
            LayerKind::Conv2d {
                out_channels,
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => vec![out_channels, in_channels, kernel_h, kernel_w],
        }
    }

    /// Number of independent parameter groups (dense rows / conv filters).
    pub fn group_count(&self) -> usize {
        match *self {
            LayerKind::Dense { out_features, .. } => out_features,
            LayerKind::Conv2d { out_channels, .. } => out_channels,
        }
    }

    /// Flat length of one parameter group.
    pub fn group_len(&self) -> usize {
        match *self {
            LayerKind::Dense { in_features, .. } => in_features,
            LayerKind::Conv2d {
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => in_channels * kernel_h * kernel_w,
        }
    }
}

/// One layer: linear map, activation, weights, optional bias.
///
/// Biases are carried through forward evaluation but are never pruned and
/// never participate in patch or sensitivity computations.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

impl LayerSpec {
    pub fn new(
        kind: LayerKind,
        activation: Activation,
        weights: Tensor,
        bias: Option<Tensor>,
    ) -> Result<Self> {
        if weights.shape() != kind.weight_shape().as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "weight shape {:?} does not match layer kind {:?}",
                weights.shape(),
                kind
            )));
        }
        if let LayerKind::Conv2d {
            kernel_h,
            kernel_w,
            stride,
            ..
        } = kind
        {
            if stride == 0 {
                return Err(Error::BadParameter("stride must be >= 1".into()));
            }
            if kernel_h == 0 || kernel_w == 0 {
                return Err(Error::BadParameter("kernel extents must be >= 1".into()));
            }
        }
        if let Some(b) = &bias {
            if b.shape() != [kind.group_count()] {
                return Err(Error::ShapeMismatch(format!(
                    "bias shape {:?}, expected [{}]",
                    b.shape(),
                    kind.group_count()
                )));
            }
        }
        Ok(Self {
            kind,
            activation,
            weights,
            bias,
        })
    }

    pub fn dense(weights: Tensor, bias: Option<Tensor>, activation: Activation) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "dense weights must be rank 2, got {:?}",
                weights.shape()
            )));
        }
        let kind = LayerKind::Dense {
            out_features: weights.shape()[0],
            in_features: weights.shape()[1],
        };
        Self::new(kind, activation, weights, bias)
    }

    pub fn conv2d(
        weights: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        padding: usize,
        activation: Activation,
    ) -> Result<Self> {
        if weights.rank() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "conv2d weights must be rank 4, got {:?}",
                weights.shape()
            )));
        }
        let s = weights.shape();
        let kind = LayerKind::Conv2d {
            out_channels: s[0],
            in_channels: s[1],
            kernel_h: s[2],
            kernel_w: s[3],
            stride,
            padding,
        };
        Self::new(kind, activation, weights, bias)
    }

    /// Per-sample output shape given the per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self.kind {
            LayerKind::Dense {
                out_features,
                in_features,
            } => {
                let flat: usize = input.iter().product();
                if flat != in_features {
                    return Err(Error::ShapeMismatch(format!(
                        "dense layer expects {in_features} inputs, got shape {input:?}"
                    )));
                }
                Ok(vec![out_features])
            }
            LayerKind::Conv2d {
                out_channels,
                in_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(Error::ShapeMismatch(format!(
                        "conv2d layer expects [{in_channels}, h, w] input, got {input:?}"
                    )));
                }
                let (h, w) = (input[1], input[2]);
                if h + 2 * padding < kernel_h || w + 2 * padding < kernel_w {
                    return Err(Error::ShapeMismatch(format!(
                        "input {input:?} smaller than kernel {kernel_h}x{kernel_w} with padding {padding}"
                    )));
                }
                let out_h = (h + 2 * padding - kernel_h) / stride + 1;
                let out_w = (w + 2 * padding - kernel_w) / stride + 1;
                Ok(vec![out_channels, out_h, out_w])
            }
        }
    }
}

/// One independently prunable weight block: a dense row or a conv filter.
#[derive(Debug, Clone)]
pub struct ParameterGroup {
    pub layer_index: usize,
    pub group_index: usize,
    /// Flat weight vector over the group's index set.
    pub weights: Vec<f64>,
    pub bias: Option<f64>,
}

impl ParameterGroup {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Materialized patch matrix for one layer input: `count` rows of length
/// `width`, each row aligned index-for-index with a group's weight vector.
#[derive(Debug, Clone)]
pub struct Patches {
    count: usize,
    width: usize,
    data: Vec<f64>,
}

impl Patches {
    /// Builds a patch matrix from `count * width` row-major values, for
    /// linear maps materialized outside this module.
    pub fn from_rows(count: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if count == 0 || width == 0 || count * width != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{count} patches of width {width} need {} values, got {}",
                count * width,
                data.len()
            )));
        }
        Ok(Self { count, width, data })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.data[p * self.width..(p + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width)
    }
}

/// An ordered chain of layers.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<LayerSpec>,
}

impl Network {
    /// Builds a network, checking what is statically checkable: softmax
    /// placement, dense-to-dense feature counts, conv channel chaining, and
    /// that no conv layer follows a dense layer (dense output is flat).
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("no layers".into()));
        }
        let last = layers.len() - 1;
        for (l, layer) in layers.iter().enumerate() {
            if layer.activation == Activation::Softmax && l != last {
                return Err(Error::InvalidNetwork(format!(
                    "softmax activation only allowed on the final layer, found on layer {l}"
                )));
            }
        }
        for l in 0..last {
            match (&layers[l].kind, &layers[l + 1].kind) {
                (
                    LayerKind::Dense { out_features, .. },
                    LayerKind::Dense { in_features, .. },
                ) => {
                    if out_features != in_features {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {l} outputs {out_features} features, layer {} expects {in_features}",
                            l + 1
                        )));
                    }
                }
                (
                    LayerKind::Conv2d { out_channels, .. },
                    LayerKind::Conv2d { in_channels, .. },
                ) => {
                    if out_channels != in_channels {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {l} outputs {out_channels} channels, layer {} expects {in_channels}",
                            l + 1
                        )));
                    }
                }
                (LayerKind::Dense { .. }, LayerKind::Conv2d { .. }) => {
                    return Err(Error::InvalidNetwork(format!(
                        "conv2d layer {} cannot follow dense layer {l}",
                        l + 1
                    )));
                }
                // conv -> dense flattens; feature count checked at forward time
                (LayerKind::Conv2d { .. }, LayerKind::Dense { .. }) => {}
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> Result<&LayerSpec> {
        self.layers.get(l).ok_or(Error::InvalidLayer {
            layer: l,
            count: self.layers.len(),
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// c^l: number of parameter groups in layer `l`.
    pub fn group_count(&self, l: usize) -> Result<usize> {
        Ok(self.layer(l)?.kind.group_count())
    }

    /// Extracts the flat weight vector (and bias scalar) of group `i`.
    pub fn parameter_group(&self, l: usize, i: usize) -> Result<ParameterGroup> {
        let layer = self.layer(l)?;
        let groups = layer.kind.group_count();
        if i >= groups {
            return Err(Error::InvalidGroup {
                layer: l,
                group: i,
                count: groups,
            });
        }
        let glen = layer.kind.group_len();
        let weights = layer.weights.data()[i * glen..(i + 1) * glen].to_vec();
        let bias = layer.bias.as_ref().map(|b| b.data()[i]);
        Ok(ParameterGroup {
            layer_index: l,
            group_index: i,
            weights,
            bias,
        })
    }

    /// Overwrites the weights of group `i` in layer `l`.
    pub fn set_group_weights(&mut self, l: usize, i: usize, weights: &[f64]) -> Result<()> {
        let count = self.layers.len();
        let layer = self
            .layers
            .get_mut(l)
            .ok_or(Error::InvalidLayer { layer: l, count })?;
        let groups = layer.kind.group_count();
        if i >= groups {
            return Err(Error::InvalidGroup {
                layer: l,
                group: i,
                count: groups,
            });
        }
        let glen = layer.kind.group_len();
        if weights.len() != glen {
            return Err(Error::ShapeMismatch(format!(
                "group weight vector has length {}, expected {glen}",
                weights.len()
            )));
        }
        let mut data = layer.weights.data().to_vec();
        data[i * glen..(i + 1) * glen].copy_from_slice(weights);
        layer.weights = Tensor::new(layer.weights.shape().to_vec(), data)?;
        Ok(())
    }

    /// Per-layer per-sample output shapes for the given per-sample input shape.
    pub fn sample_shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = input.to_vec();
        for layer in &self.layers {
            cur = layer.output_shape(&cur)?;
            shapes.push(cur.clone());
        }
        Ok(shapes)
    }

    /// eta^l: number of output scalars of layer `l` for one sample.
    pub fn layer_patches_total(&self, l: usize, input: &[usize]) -> Result<usize> {
        let shapes = self.sample_shapes(input)?;
        Ok(shapes[l].iter().product())
    }

    /// eta: total output scalars across all layers for one sample.
    pub fn total_patches(&self, input: &[usize]) -> Result<usize> {
        let shapes = self.sample_shapes(input)?;
        Ok(shapes.iter().map(|s| s.iter().product::<usize>()).sum())
    }

    /// rho: largest parameter-group length in the network.
    pub fn max_group_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.kind.group_len())
            .max()
            .unwrap_or(0)
    }

    /// Total prunable weight count (biases excluded).
    pub fn total_prunable(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    /// Nonzero weight count per layer (biases excluded).
    pub fn layer_nnz(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| l.weights.data().iter().filter(|&&w| w != 0.0).count())
            .collect()
    }
}

/// Per-layer pre-activations and activations for a batch of inputs.
///
/// `pre[l]` is Z^{l+1} and `act[l]` is A^{l+1} in 1-based layer counting;
/// the stored input plays the role of A^0.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Tensor,
    pre: Vec<Tensor>,
    act: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    pub fn batch_size(&self) -> usize {
        self.input.batch_size()
    }

    pub fn pre_activation(&self, l: usize) -> &Tensor {
        &self.pre[l]
    }

    pub fn activation(&self, l: usize) -> &Tensor {
        &self.act[l]
    }

    /// Network output A^L.
    pub fn output(&self) -> &Tensor {
        self.act.last().expect("trace has at least one layer")
    }

    /// Input activation of layer `l` for one sample (A^{l-1}, or the raw
    /// input when `l == 0`), as a standalone per-sample tensor.
    pub fn layer_input(&self, l: usize, sample: usize) -> Tensor {
        if l == 0 {
            self.input.sample_tensor(sample)
        } else {
            self.act[l - 1].sample_tensor(sample)
        }
    }
}

fn apply_activation(activation: Activation, pre: &Tensor) -> Result<Tensor> {
    match activation {
        Activation::Identity => Ok(pre.clone()),
        Activation::ReLU => Tensor::new(
            pre.shape().to_vec(),
            pre.data().iter().map(|&z| z.max(0.0)).collect(),
        ),
        Activation::Softmax => {
            // Per sample over the flattened feature dimensions.
            let n = pre.batch_size();
            let mut out = Vec::with_capacity(pre.len());
            for s in 0..n {
                let row = pre.sample(s);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                out.extend(exps.iter().map(|e| e / sum));
            }
            Tensor::new(pre.shape().to_vec(), out)
        }
    }
}

/// Applies the layer's linear map (plus bias) to one flat sample input.
///
/// Dense layers flatten their input; conv layers use a direct sliding
/// window over `[c, h, w]`. This is deliberately not routed through patch
/// extraction so the two paths can be checked against each other.
fn apply_linear(layer: &LayerSpec, input: &[f64], in_shape: &[usize]) -> Result<Vec<f64>> {
    match layer.kind {
        LayerKind::Dense {
            out_features,
            in_features,
        } => {
            if input.len() != in_features {
                return Err(Error::ShapeMismatch(format!(
                    "dense layer expects {in_features} inputs, got {}",
                    input.len()
                )));
            }
            let w = layer.weights.data();
            let mut out = Vec::with_capacity(out_features);
            for o in 0..out_features {
                let row = &w[o * in_features..(o + 1) * in_features];
                let mut acc = 0.0;
                for (wv, xv) in row.iter().zip(input) {
                    acc += wv * xv;
                }
                if let Some(b) = &layer.bias {
                    acc += b.data()[o];
                }
                out.push(acc);
            }
            Ok(out)
        }
        LayerKind::Conv2d {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
        } => {
            let out_shape = layer.output_shape(in_shape)?;
            let (h, w) = (in_shape[1], in_shape[2]);
            let (out_h, out_w) = (out_shape[1], out_shape[2]);
            let weights = layer.weights.data();
            let mut out = vec![0.0; out_channels * out_h * out_w];
            for oc in 0..out_channels {
                let filter = &weights[oc * in_channels * kernel_h * kernel_w..];
                for oh in 0..out_h {
                    for ow in 0..out_w {
                        let mut acc = 0.0;
                        for ic in 0..in_channels {
                            for kh in 0..kernel_h {
                                let ih = oh * stride + kh;
                                if ih < padding || ih >= h + padding {
                                    continue;
                                }
                                for kw in 0..kernel_w {
                                    let iw = ow * stride + kw;
                                    if iw < padding || iw >= w + padding {
                                        continue;
                                    }
                                    let x = input[ic * h * w + (ih - padding) * w + (iw - padding)];
                                    let wv = filter
                                        [ic * kernel_h * kernel_w + kh * kernel_w + kw];
                                    acc += wv * x;
                                }
                            }
                        }
                        if let Some(b) = &layer.bias {
                            acc += b.data()[oc];
                        }
                        out[oc * out_h * out_w + oh * out_w + ow] = acc;
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Evaluates the network on a batch, recording every pre-activation and
/// activation. The first extent of `batch` is the batch size.
///
/// Deterministic: identical inputs yield bitwise-identical traces. All
/// state is read-only, so concurrent calls on a shared network are safe.
pub fn forward(net: &Network, batch: &Tensor) -> Result<ForwardTrace> {
    if batch.rank() < 2 {
        return Err(Error::ShapeMismatch(
            "batch tensor must have a leading batch dimension".into(),
        ));
    }
    let n = batch.batch_size();
    let mut in_shape = batch.sample_shape().to_vec();
    let mut current: Vec<Vec<f64>> = (0..n).map(|s| batch.sample(s).to_vec()).collect();

    let mut pre = Vec::with_capacity(net.layer_count());
    let mut act = Vec::with_capacity(net.layer_count());
    for layer in net.layers() {
        let out_shape = layer.output_shape(&in_shape)?;
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(n);
        for sample in &current {
            z.push(apply_linear(layer, sample, &in_shape)?);
        }
        let z_tensor = Tensor::from_samples(&out_shape, &z)?;
        let a_tensor = apply_activation(layer.activation, &z_tensor)?;
        current = (0..n).map(|s| a_tensor.sample(s).to_vec()).collect();
        in_shape = out_shape;
        pre.push(z_tensor);
        act.push(a_tensor);
    }
    Ok(ForwardTrace {
        input: batch.clone(),
        pre,
        act,
    })
}

/// Materializes the patch matrix of layer `l` for a single-sample input
/// `a_prev` (the activation feeding layer `l`).
///
/// Dense layers yield exactly one patch (the flattened input); conv layers
/// yield one patch per output pixel, unrolled so that
/// `dot(group.weights, patch_p)` reproduces the p-th output scalar of any
/// group in the layer. The group index only selects validation, since all
/// groups of a layer share the same patch structure.
pub fn extract_patches(net: &Network, l: usize, i: usize, a_prev: &Tensor) -> Result<Patches> {
    let layer = net.layer(l)?;
    let groups = layer.kind.group_count();
    if i >= groups {
        return Err(Error::InvalidGroup {
            layer: l,
            group: i,
            count: groups,
        });
    }
    match layer.kind {
        LayerKind::Dense { in_features, .. } => {
            if a_prev.len() != in_features {
                return Err(Error::ShapeMismatch(format!(
                    "dense layer expects {in_features} inputs, got {}",
                    a_prev.len()
                )));
            }
            Ok(Patches {
                count: 1,
                width: in_features,
                data: a_prev.data().to_vec(),
            })
        }
        LayerKind::Conv2d {
            in_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            ..
        } => {
            let out_shape = layer.output_shape(a_prev.shape())?;
            let (h, w) = (a_prev.shape()[1], a_prev.shape()[2]);
            let (out_h, out_w) = (out_shape[1], out_shape[2]);
            let width = in_channels * kernel_h * kernel_w;
            let input = a_prev.data();
            let mut data = vec![0.0; out_h * out_w * width];
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let patch = &mut data[(oh * out_w + ow) * width..][..width];
                    for ic in 0..in_channels {
                        for kh in 0..kernel_h {
                            let ih = oh * stride + kh;
                            if ih < padding || ih >= h + padding {
                                continue;
                            }
                            for kw in 0..kernel_w {
                                let iw = ow * stride + kw;
                                if iw < padding || iw >= w + padding {
                                    continue;
                                }
                                patch[ic * kernel_h * kernel_w + kh * kernel_w + kw] =
                                    input[ic * h * w + (ih - padding) * w + (iw - padding)];
                            }
                        }
                    }
                }
            }
            Ok(Patches {
                count: out_h * out_w,
                width,
                data,
            })
        }
    }
}

/// sqrt of the sum of squared entries.
pub fn frobenius_norm(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Euclidean norm of a flat slice.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Splits `v` into nonnegative positive/negative parts with
/// `v == v_plus - v_minus` exactly.
pub fn quadrant_split(v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let plus = v.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
    let minus = v.iter().map(|&x| if x < 0.0 { -x } else { 0.0 }).collect();
    (plus, minus)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn dense_layer(rows: Vec<Vec<f64>>, activation: Activation) -> LayerSpec {
        let out = rows.len();
        let inf = rows[0].len();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        LayerSpec::dense(Tensor::new(vec![out, inf], data).unwrap(), None, activation).unwrap()
    }

    #[test]
    fn forward_identity_dense() {
        let net = Network::new(vec![dense_layer(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            Activation::Identity,
        )])
        .unwrap();
        let x = Tensor::new(vec![1, 2], vec![3.0, -1.0]).unwrap();
        let trace = forward(&net, &x).unwrap();
        assert_eq!(trace.output().data(), &[3.0, -1.0]);
    }

    #[test]
    fn forward_relu_clamps() {
        let net = Network::new(vec![dense_layer(vec![vec![1.0, 1.0]], Activation::ReLU)]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![2.0, -5.0]).unwrap();
        let trace = forward(&net, &x).unwrap();
        assert_eq!(trace.pre_activation(0).data(), &[-3.0]);
        assert_eq!(trace.output().data(), &[0.0]);
    }

    #[test]
    fn forward_conv_all_ones() {
        // 1x1x2x2 all-ones kernel, stride 1, no padding, 3x3 all-ones input.
        let w = Tensor::new(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let layer = LayerSpec::conv2d(w, None, 1, 0, Activation::Identity).unwrap();
        let net = Network::new(vec![layer]).unwrap();
        let x = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let trace = forward(&net, &x).unwrap();
        assert_eq!(trace.output().shape(), &[1, 1, 2, 2]);
        assert_eq!(trace.output().data(), &[4.0; 4]);
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let net = Network::new(vec![dense_layer(vec![vec![1.0, 1.0]], Activation::ReLU)]).unwrap();
        let x = Tensor::new(vec![1, 3], vec![1.0; 3]).unwrap();
        assert!(forward(&net, &x).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w: Vec<f64> = (0..12).map(|_| rng.gen::<f64>() - 0.5).collect();
        let net = Network::new(vec![LayerSpec::dense(
            Tensor::new(vec![3, 4], w).unwrap(),
            None,
            Activation::ReLU,
        )
        .unwrap()])
        .unwrap();
        let x_data: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() - 0.5).collect();
        let x = Tensor::new(vec![2, 4], x_data).unwrap();
        let t1 = forward(&net, &x).unwrap();
        let t2 = forward(&net, &x).unwrap();
        assert_eq!(t1.output().data(), t2.output().data());
        assert_eq!(t1.pre_activation(0).data(), t2.pre_activation(0).data());
    }

    #[test]
    fn softmax_only_last_layer() {
        let a = dense_layer(vec![vec![1.0, 0.0], vec![0.0, 1.0]], Activation::Softmax);
        let b = dense_layer(vec![vec![1.0, 1.0]], Activation::Identity);
        assert!(Network::new(vec![a.clone(), b]).is_err());
        assert!(Network::new(vec![a]).is_ok());
    }

    #[test]
    fn dense_patches_are_flattened_input() {
        let net = Network::new(vec![dense_layer(
            vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
            Activation::Identity,
        )])
        .unwrap();
        let a_prev = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let p = extract_patches(&net, 0, 1, &a_prev).unwrap();
        assert_eq!(p.count(), 1);
        assert_eq!(p.row(0), &[0.5, -1.0, 2.0]);
        assert!(extract_patches(&net, 0, 2, &a_prev).is_err());
        assert!(extract_patches(&net, 1, 0, &a_prev).is_err());
    }

    #[test]
    fn conv_patch_count_and_width() {
        let w = Tensor::new(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let layer = LayerSpec::conv2d(w, None, 1, 0, Activation::Identity).unwrap();
        let net = Network::new(vec![layer]).unwrap();
        let a_prev = Tensor::new(vec![1, 3, 3], (0..9).map(|v| v as f64).collect()).unwrap();
        let p = extract_patches(&net, 0, 0, &a_prev).unwrap();
        assert_eq!(p.count(), 4);
        assert_eq!(p.width(), 4);
        assert_eq!(p.row(0), &[0.0, 1.0, 3.0, 4.0]);
    }

    // Independent naive convolution, written directly against the math.
    fn naive_conv(
        input: &[f64],
        (c, h, w): (usize, usize, usize),
        filter: &[f64],
        (kh, kw): (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Vec<f64> {
        let out_h = (h + 2 * padding - kh) / stride + 1;
        let out_w = (w + 2 * padding - kw) / stride + 1;
        let mut out = vec![0.0; out_h * out_w];
        for oh in 0..out_h {
            for ow in 0..out_w {
                let mut acc = 0.0;
                for ic in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            let ih = (oh * stride + i) as isize - padding as isize;
                            let iw = (ow * stride + j) as isize - padding as isize;
                            if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                continue;
                            }
                            acc += filter[ic * kh * kw + i * kw + j]
                                * input[ic * h * w + ih as usize * w + iw as usize];
                        }
                    }
                }
                out[oh * out_w + ow] = acc;
            }
        }
        out
    }

    #[test]
    fn patches_reconstruct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let filter: Vec<f64> = (0..9).map(|_| rng.gen::<f64>() - 0.5).collect();
        let input: Vec<f64> = (0..16).map(|_| rng.gen::<f64>() - 0.5).collect();
        let w = Tensor::new(vec![1, 1, 3, 3], filter.clone()).unwrap();
        let layer = LayerSpec::conv2d(w, None, 1, 0, Activation::Identity).unwrap();
        let net = Network::new(vec![layer]).unwrap();
        let a_prev = Tensor::new(vec![1, 4, 4], input.clone()).unwrap();

        let patches = extract_patches(&net, 0, 0, &a_prev).unwrap();
        let expected = naive_conv(&input, (1, 4, 4), &filter, (3, 3), 1, 0);
        assert_eq!(patches.count(), expected.len());
        for (p, want) in expected.iter().enumerate() {
            let got = dot(&filter, patches.row(p));
            assert!((got - want).abs() < 1e-12, "patch {p}: {got} vs {want}");
        }
    }

    #[test]
    fn frobenius_norm_cases() {
        assert_eq!(frobenius_norm(&Tensor::zeros(vec![3, 3]).unwrap()), 0.0);
        let t = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(frobenius_norm(&t), 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..9).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let direct = data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let t = Tensor::new(vec![3, 3], data).unwrap();
        assert!((frobenius_norm(&t) - direct).abs() < 1e-12);
    }

    #[test]
    fn quadrant_split_cases() {
        let (p, m) = quadrant_split(&[2.0, -3.0, 0.0]);
        assert_eq!(p, vec![2.0, 0.0, 0.0]);
        assert_eq!(m, vec![0.0, 3.0, 0.0]);

        let v = [1.0, 0.5, 2.0];
        let (p, m) = quadrant_split(&v);
        assert_eq!(p, v.to_vec());
        assert_eq!(m, vec![0.0; 3]);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..32).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let (p, m) = quadrant_split(&v);
        for j in 0..v.len() {
            assert!(p[j] >= 0.0 && m[j] >= 0.0);
            // Recombination is exact, bitwise.
            assert_eq!(p[j] - m[j], v[j]);
        }
    }

    #[test]
    fn relu_is_one_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let u: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            let v: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            let fu: Vec<f64> = u.iter().map(|&x| x.max(0.0)).collect();
            let fv: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
            let dphi: f64 = fu
                .iter()
                .zip(&fv)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let dxy: f64 = u
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(dphi <= dxy + 1e-12);
        }
    }
}
