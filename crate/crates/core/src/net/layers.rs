//! Convolutions, linear maps, normalization and the residual blocks the
//! modules are assembled from.

use tch::{Kind, Tensor};

use crate::error::Result;
use crate::net::params::{Init, ParamSource};

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    padding: i64,
}

impl Conv2d {
    pub fn new(src: &mut dyn ParamSource, name: &str, c_in: i64, c_out: i64, kernel: i64, bias: bool) -> Result<Self> {
        let weight = src.param(&format!("{name}.weight"), &[c_out, c_in, kernel, kernel], Init::He { fan_in: c_in * kernel * kernel })?;
        let bias = if bias { Some(src.param(&format!("{name}.bias"), &[c_out], Init::Zeros)?) } else { None };
        Ok(Self { weight, bias, padding: kernel / 2 })
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.conv2d(&self.weight, self.bias.as_ref(), [1, 1], [self.padding, self.padding], [1, 1], 1)
    }
}

#[derive(Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(src: &mut dyn ParamSource, name: &str, d_in: i64, d_out: i64, bias: Option<Init>) -> Result<Self> {
        let weight = src.param(&format!("{name}.weight"), &[d_out, d_in], Init::He { fan_in: d_in })?;
        let bias = match bias {
            Some(init) => Some(src.param(&format!("{name}.bias"), &[d_out], init)?),
            None => None,
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.linear(&self.weight, self.bias.as_ref())
    }
}

pub fn lrelu(x: &Tensor, slope: f64) -> Tensor {
    x.maximum(&(x * slope))
}

pub fn downsample(x: &Tensor) -> Tensor {
    x.avg_pool2d([2, 2], [2, 2], [0, 0], false, true, None::<i64>)
}

pub fn upsample(x: &Tensor) -> Tensor {
    let s = x.size();
    x.upsample_nearest2d([s[2] * 2, s[3] * 2], None::<f64>, None::<f64>)
}

/// Per-sample, per-channel standardization over the spatial dims.
pub fn instance_norm(x: &Tensor, eps: f64) -> Tensor {
    let (var, mean) = x.var_mean_dim([2i64, 3].as_slice(), false, true);
    (x - mean) / (var + eps).sqrt()
}

/// Instance normalization followed by a style-driven affine map.
#[derive(Debug)]
pub struct AdaIn {
    pub scale: Linear,
    pub shift: Linear,
    eps: f64,
}

impl AdaIn {
    pub fn new(src: &mut dyn ParamSource, name: &str, style_dim: i64, channels: i64, eps: f64) -> Result<Self> {
        // scale bias starts at one so a fresh layer is close to plain IN
        let scale = Linear::new(src, &format!("{name}.scale"), style_dim, channels, Some(Init::Ones))?;
        let shift = Linear::new(src, &format!("{name}.shift"), style_dim, channels, Some(Init::Zeros))?;
        Ok(Self { scale, shift, eps })
    }

    pub fn forward(&self, h: &Tensor, style: &Tensor) -> Tensor {
        let gamma = self.scale.forward(style).unsqueeze(-1).unsqueeze(-1);
        let beta = self.shift.forward(style).unsqueeze(-1).unsqueeze(-1);
        adain(h, &gamma, &beta, self.eps)
    }
}

/// `gamma` and `beta` broadcast as `B × C × 1 × 1`.
pub fn adain(h: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
    instance_norm(h, eps) * gamma + beta
}

/// Pre-activation residual unit that halves resolution.
#[derive(Debug)]
pub struct DownBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Conv2d,
    norm: bool,
    slope: f64,
    eps: f64,
}

impl DownBlock {
    pub fn new(src: &mut dyn ParamSource, name: &str, c_in: i64, c_out: i64, norm: bool, slope: f64, eps: f64) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(src, &format!("{name}.conv1"), c_in, c_in, 3, true)?,
            conv2: Conv2d::new(src, &format!("{name}.conv2"), c_in, c_out, 3, true)?,
            shortcut: Conv2d::new(src, &format!("{name}.shortcut"), c_in, c_out, 1, false)?,
            norm,
            slope,
            eps,
        })
    }

    fn pre(&self, x: &Tensor) -> Tensor {
        let x = if self.norm { instance_norm(x, self.eps) } else { x.shallow_clone() };
        lrelu(&x, self.slope)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let r = downsample(&self.conv1.forward(&self.pre(x)));
        let r = self.conv2.forward(&self.pre(&r));
        let s = self.shortcut.forward(&downsample(x));
        (r + s) * SQRT_HALF
    }
}

/// Pre-activation residual unit that doubles resolution.
#[derive(Debug)]
pub struct UpBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Conv2d,
    slope: f64,
    eps: f64,
}

impl UpBlock {
    pub fn new(src: &mut dyn ParamSource, name: &str, c_in: i64, c_out: i64, slope: f64, eps: f64) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(src, &format!("{name}.conv1"), c_in, c_out, 3, true)?,
            conv2: Conv2d::new(src, &format!("{name}.conv2"), c_out, c_out, 3, true)?,
            shortcut: Conv2d::new(src, &format!("{name}.shortcut"), c_in, c_out, 1, false)?,
            slope,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let r = upsample(&lrelu(&instance_norm(x, self.eps), self.slope));
        let r = self.conv1.forward(&r);
        let r = self.conv2.forward(&lrelu(&instance_norm(&r, self.eps), self.slope));
        let s = self.shortcut.forward(&upsample(x));
        (r + s) * SQRT_HALF
    }
}

/// Resolution-preserving residual unit with two AdaIN layers.
#[derive(Debug)]
pub struct AdaInBlock {
    pub norm1: AdaIn,
    pub norm2: AdaIn,
    conv1: Conv2d,
    conv2: Conv2d,
    slope: f64,
}

impl AdaInBlock {
    pub fn new(src: &mut dyn ParamSource, name: &str, channels: i64, style_dim: i64, slope: f64, eps: f64) -> Result<Self> {
        Ok(Self {
            norm1: AdaIn::new(src, &format!("{name}.adain1"), style_dim, channels, eps)?,
            conv1: Conv2d::new(src, &format!("{name}.conv1"), channels, channels, 3, true)?,
            norm2: AdaIn::new(src, &format!("{name}.adain2"), style_dim, channels, eps)?,
            conv2: Conv2d::new(src, &format!("{name}.conv2"), channels, channels, 3, true)?,
            slope,
        })
    }

    pub fn forward(&self, h: &Tensor, style: &Tensor) -> Tensor {
        let r = self.conv1.forward(&lrelu(&self.norm1.forward(h, style), self.slope));
        let r = self.conv2.forward(&lrelu(&self.norm2.forward(&r, style), self.slope));
        (h + r) * SQRT_HALF
    }
}

/// Mean over every dim but the first, as a `B`-vector.
pub fn per_sample_mean(x: &Tensor) -> Tensor {
    let dims: Vec<i64> = (1..x.dim() as i64).collect();
    x.mean_dim(dims.as_slice(), false, Kind::Float)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::Device;

    #[test]
    fn adain_identity_on_standardized_input() {
        let h = instance_norm(&Tensor::randn([2, 4, 6, 6], (Kind::Float, Device::Cpu)), 1e-5);
        let gamma = Tensor::ones([2, 4, 1, 1], (Kind::Float, Device::Cpu));
        let beta = Tensor::zeros([2, 4, 1, 1], (Kind::Float, Device::Cpu));
        let out = adain(&h, &gamma, &beta, 1e-5);
        assert!(out.allclose(&h, 1e-4, 1e-4, false));
    }

    #[test]
    fn instance_norm_standardizes_each_channel() {
        let x = Tensor::randn([3, 5, 8, 8], (Kind::Float, Device::Cpu)) * 7.0 + 3.0;
        let y = instance_norm(&x, 1e-5);
        let (var, mean) = y.var_mean_dim([2i64, 3].as_slice(), false, false);
        assert!(mean.abs().max().double_value(&[]) <= 1e-4);
        assert!((var - 1.0).abs().max().double_value(&[]) <= 1e-3);
    }

    #[test]
    fn constant_channel_stays_finite() {
        let x = Tensor::full([1, 2, 4, 4], 3.5, (Kind::Float, Device::Cpu));
        let y = instance_norm(&x, 1e-5);
        assert!(bool::try_from(y.isfinite().all()).unwrap());
        assert_eq!(y.abs().max().double_value(&[]), 0.0);
    }

    #[test]
    fn leaky_slope() {
        let x = Tensor::from_slice(&[-1.0f32, 2.0]);
        let y = Vec::<f32>::try_from(lrelu(&x, 0.2)).unwrap();
        assert_eq!(y, vec![-0.2, 2.0]);
    }

    #[test]
    fn resampling_shapes() {
        let x = Tensor::randn([1, 2, 8, 8], (Kind::Float, Device::Cpu));
        assert_eq!(downsample(&x).size(), vec![1, 2, 4, 4]);
        assert_eq!(upsample(&x).size(), vec![1, 2, 16, 16]);
    }
}
