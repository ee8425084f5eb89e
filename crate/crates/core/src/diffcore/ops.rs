//! Single-sample entry points for each layer kind.

use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Elementwise nonlinearities. ELU uses α = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub(crate) fn eval<T: Element>(self, x: T) -> T {
        match self {
            Activation::Elu => {
                if x > T::zero() {
                    x
                } else {
                    x.exp() - T::one()
                }
            }
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => {
                let y = if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                };
                // keep saturated outputs strictly inside (0, 1)
                let two = T::one() + T::one();
                y.max(T::min_positive_value())
                    .min(T::one() - T::epsilon() / two)
            }
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub(crate) fn grad_from_output<T: Element>(self, y: T) -> T {
        match self {
            Activation::Elu => {
                if y > T::zero() {
                    T::one()
                } else {
                    y + T::one()
                }
            }
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

pub fn apply_activation<T: Element>(kind: Activation, x: &Tensor<T>) -> Result<Tensor<T>> {
    x.ensure_finite("activation input")?;
    Ok(x.map(|v| kind.eval(v)))
}

fn chw(x: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match *x {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Shape(format!("{what} expects [C, H, W], got {x:?}"))),
    }
}

/// Stride-1 cross-correlation with size-preserving zero padding.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (c, h, w) = chw(x.shape(), "conv2d")?;
    let (co, ci, k) = match *kernel.shape() {
        [co, ci, k1, k2] if k1 == k2 && (k1 == 1 || k1 == 3) => (co, ci, k1),
        ref s => {
            return Err(Error::Shape(format!(
                "conv2d kernel must be [C_out, C_in, k, k] with k in {{1, 3}}, got {s:?}"
            )))
        }
    };
    if ci != c {
        return Err(Error::Shape(format!(
            "conv2d kernel expects {ci} input channels, input has {c}"
        )));
    }
    if bias.shape() != [co] {
        return Err(Error::Shape(format!(
            "conv2d bias must be [{co}], got {:?}",
            bias.shape()
        )));
    }
    let g = ConvGeom {
        in_channels: ci,
        out_channels: co,
        height: h,
        width: w,
        kernel: k,
    };
    let mut out = vec![T::zero(); co * h * w];
    kernels::conv_forward(&g, 1, x.data(), kernel.data(), Some(bias.data()), &mut out);
    Ok(Tensor::from_parts(vec![co, h, w], out))
}

pub fn avg_pool2x2<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(x.shape(), "avg_pool2x2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "avg_pool2x2 needs even spatial dims, got {h}x{w}"
        )));
    }
    let mut out = vec![T::zero(); c * h * w / 4];
    kernels::avg_pool_forward(c, h, w, x.data(), &mut out);
    Ok(Tensor::from_parts(vec![c, h / 2, w / 2], out))
}

pub fn upsample_nn2x<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(x.shape(), "upsample_nn2x")?;
    let mut out = vec![T::zero(); c * h * w * 4];
    kernels::upsample_forward(c, h, w, x.data(), &mut out);
    Ok(Tensor::from_parts(vec![c, 2 * h, 2 * w], out))
}

/// `W·x + b`.
pub fn fully_connected<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let n = x.len();
    let (m, wn) = match *weight.shape() {
        [m, wn] => (m, wn),
        ref s => return Err(Error::Shape(format!("weight must be [m, n], got {s:?}"))),
    };
    if wn != n || bias.shape() != [m] {
        return Err(Error::Shape(format!(
            "fully_connected: x has {n} values, W is {:?}, b is {:?}",
            weight.shape(),
            bias.shape()
        )));
    }
    let mut out = vec![T::zero(); m];
    kernels::fc_forward(
        1,
        n,
        m,
        x.data(),
        weight.data(),
        Some(bias.data()),
        &mut out,
    );
    Ok(Tensor::from_parts(vec![m], out))
}
