//! Reproducible model and data generation.

use anyhow::{bail, Context, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sipp_core::{Activation, LayerSpec, Network, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitDist {
    UniformNonneg,
    Gaussian,
}

impl InitDist {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform-nonneg" | "uniform_nonneg" => Ok(Self::UniformNonneg),
            "gaussian" => Ok(Self::Gaussian),
            other => bail!("unknown distribution `{other}` (use uniform-nonneg or gaussian)"),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Self::UniformNonneg => rng.gen::<f64>(),
            Self::Gaussian => rng.sample(StandardNormal),
        }
    }
}

/// One layer of a generated architecture.
#[derive(Debug, Clone)]
pub enum LayerDesc {
    Dense {
        in_features: usize,
        out_features: usize,
        activation: Activation,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
    },
}

impl LayerDesc {
    /// Parses `dense:IN:OUT[:ACT]` or `conv2d:IN_C:OUT_C:KHxKW[:sN][:pN][:ACT]`,
    /// e.g. `dense:16:8:identity` or `conv2d:1:4:3x3:s1:p1:relu`.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let usize_arg = |v: &str, what: &str| -> Result<usize> {
            let n: usize = v.parse().with_context(|| format!("bad {what} `{v}` in `{spec}`"))?;
            if n == 0 {
                bail!("{what} must be positive in `{spec}`");
            }
            Ok(n)
        };
        match parts.first() {
            Some(&"dense") => {
                if parts.len() < 3 || parts.len() > 4 {
                    bail!("dense layer spec must be dense:IN:OUT[:ACT], got `{spec}`");
                }
                let activation = match parts.get(3) {
                    Some(a) => Activation::parse(a)?,
                    None => Activation::ReLU,
                };
                Ok(Self::Dense {
                    in_features: usize_arg(parts[1], "in_features")?,
                    out_features: usize_arg(parts[2], "out_features")?,
                    activation,
                })
            }
            Some(&"conv2d") => {
                if parts.len() < 4 {
                    bail!("conv2d layer spec must be conv2d:IN_C:OUT_C:KHxKW[:sN][:pN][:ACT]");
                }
                let (kh, kw) = parts[3]
                    .split_once('x')
                    .with_context(|| format!("kernel must be KHxKW in `{spec}`"))?;
                let mut stride = 1;
                let mut padding = 0;
                let mut activation = Activation::ReLU;
                for token in &parts[4..] {
                    if let Some(rest) = token.strip_prefix('s') {
                        if rest.chars().all(|c| c.is_ascii_digit()) && !rest.is_empty() {
                            stride = usize_arg(rest, "stride")?;
                            continue;
                        }
                    }
                    if let Some(rest) = token.strip_prefix('p') {
                        if rest.chars().all(|c| c.is_ascii_digit()) && !rest.is_empty() {
                            padding = rest.parse()?;
                            continue;
                        }
                    }
                    activation = Activation::parse(token)?;
                }
                Ok(Self::Conv2d {
                    in_channels: usize_arg(parts[1], "in_channels")?,
                    out_channels: usize_arg(parts[2], "out_channels")?,
                    kernel_h: usize_arg(kh, "kernel_h")?,
                    kernel_w: usize_arg(kw, "kernel_w")?,
                    stride,
                    padding,
                    activation,
                })
            }
            _ => bail!("layer spec must start with dense: or conv2d:, got `{spec}`"),
        }
    }
}

/// Builds a network with weights drawn from `init`. Biases are omitted
/// unless `with_bias` is set, in which case they are drawn from the same
/// distribution right after their layer's weights.
pub fn gen_model(descs: &[LayerDesc], init: InitDist, seed: u64, with_bias: bool) -> Result<Network> {
    if descs.is_empty() {
        bail!("at least one --layer is required");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(descs.len());
    for desc in descs {
        let layer = match *desc {
            LayerDesc::Dense {
                in_features,
                out_features,
                activation,
            } => {
                let data: Vec<f64> = (0..out_features * in_features)
                    .map(|_| init.draw(&mut rng))
                    .collect();
                let weights = Tensor::new(vec![out_features, in_features], data)?;
                let bias = with_bias
                    .then(|| {
                        let b: Vec<f64> = (0..out_features).map(|_| init.draw(&mut rng)).collect();
                        Tensor::new(vec![out_features], b)
                    })
                    .transpose()?;
                LayerSpec::dense(weights, bias, activation)?
            }
            LayerDesc::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
                activation,
            } => {
                let numel = out_channels * in_channels * kernel_h * kernel_w;
                let data: Vec<f64> = (0..numel).map(|_| init.draw(&mut rng)).collect();
                let weights =
                    Tensor::new(vec![out_channels, in_channels, kernel_h, kernel_w], data)?;
                let bias = with_bias
                    .then(|| {
                        let b: Vec<f64> = (0..out_channels).map(|_| init.draw(&mut rng)).collect();
                        Tensor::new(vec![out_channels], b)
                    })
                    .transpose()?;
                LayerSpec::conv2d(weights, bias, stride, padding, activation)?
            }
        };
        layers.push(layer);
    }
    Ok(Network::new(layers)?)
}

/// Draws `count` samples of the given per-sample shape into a batch tensor.
pub fn gen_data(sample_shape: &[usize], dist: InitDist, count: usize, seed: u64) -> Result<Tensor> {
    if count == 0 {
        bail!("count must be positive");
    }
    if sample_shape.is_empty() || sample_shape.contains(&0) {
        bail!("sample shape extents must be positive, got {sample_shape:?}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_sample: usize = sample_shape.iter().product();
    let data: Vec<f64> = (0..count * per_sample).map(|_| dist.draw(&mut rng)).collect();
    let mut shape = vec![count];
    shape.extend_from_slice(sample_shape);
    Ok(Tensor::new(shape, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_desc_parsing() {
        assert!(matches!(
            LayerDesc::parse("dense:4:8").unwrap(),
            LayerDesc::Dense {
                in_features: 4,
                out_features: 8,
                activation: Activation::ReLU
            }
        ));
        assert!(matches!(
            LayerDesc::parse("dense:4:8:softmax").unwrap(),
            LayerDesc::Dense {
                activation: Activation::Softmax,
                ..
            }
        ));
        let conv = LayerDesc::parse("conv2d:1:4:3x3:s2:p1:identity").unwrap();
        match conv {
            LayerDesc::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
                activation,
            } => {
                assert_eq!(
                    (in_channels, out_channels, kernel_h, kernel_w, stride, padding),
                    (1, 4, 3, 3, 2, 1)
                );
                assert_eq!(activation, Activation::Identity);
            }
            _ => panic!("expected conv"),
        }
        // `softmax` is an activation, not a stride token.
        assert!(matches!(
            LayerDesc::parse("conv2d:1:1:2x2:softmax").unwrap(),
            LayerDesc::Conv2d {
                activation: Activation::Softmax,
                stride: 1,
                ..
            }
        ));
        assert!(LayerDesc::parse("dense:0:4").is_err());
        assert!(LayerDesc::parse("lstm:4:4").is_err());
    }

    #[test]
    fn gen_model_is_deterministic() {
        let descs = [
            LayerDesc::parse("dense:4:4").unwrap(),
            LayerDesc::parse("dense:4:2:identity").unwrap(),
        ];
        let a = gen_model(&descs, InitDist::UniformNonneg, 7, false).unwrap();
        let b = gen_model(&descs, InitDist::UniformNonneg, 7, false).unwrap();
        for (x, y) in a.layers().iter().zip(b.layers()) {
            assert_eq!(x.weights.data(), y.weights.data());
        }
    }

    #[test]
    fn uniform_nonneg_weights_are_nonnegative() {
        let descs = [LayerDesc::parse("dense:8:8").unwrap()];
        let net = gen_model(&descs, InitDist::UniformNonneg, 3, true).unwrap();
        assert!(net.layers()[0].weights.data().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn gaussian_sample_mean_near_zero() {
        // 10^4 draws: |mean| should be within 5 sigma / sqrt(n) = 0.05.
        let descs = [LayerDesc::parse("dense:100:100").unwrap()];
        let net = gen_model(&descs, InitDist::Gaussian, 11, false).unwrap();
        let data = net.layers()[0].weights.data();
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn gen_data_rejects_zero_count() {
        assert!(gen_data(&[4], InitDist::Gaussian, 0, 1).is_err());
    }

    #[test]
    fn gen_data_reproducible_and_in_range() {
        let a = gen_data(&[2, 3], InitDist::UniformNonneg, 5, 9).unwrap();
        let b = gen_data(&[2, 3], InitDist::UniformNonneg, 5, 9).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.shape(), &[5, 2, 3]);
        assert!(a.data().iter().all(|&v| (0.0..1.0).contains(&v)));
    }
}
