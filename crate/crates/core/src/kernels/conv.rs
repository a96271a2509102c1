use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Hyperparameters of a 2-D convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn square(kernel: usize, stride: usize, padding: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            in_channels,
            out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h.is_multiple_of(2) || self.kernel_w.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel {}x{} must be odd",
                self.kernel_h, self.kernel_w
            )));
        }
        if self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "stride and channel counts must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    /// Output (height, width) for an input of the given spatial size.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            output_extent(h, self.kernel_h, self.stride, self.padding)?,
            output_extent(w, self.kernel_w, self.stride, self.padding)?,
        ))
    }
}

/// `floor((input + 2·padding − kernel) / stride) + 1`, rejected when below 1.
pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return Err(Error::EmptyOutput {
            op: "conv2d",
            input,
            kernel,
            stride,
            padding,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

fn check_conv<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(usize, usize, usize, usize, usize)> {
    spec.validate()?;
    let (c, h, w) = input.dims3()?;
    if weight.shape() != spec.weight_shape() {
        return Err(Error::mismatch(
            "conv2d weight vs spec",
            weight.shape(),
            &spec.weight_shape(),
        ));
    }
    if c != spec.in_channels {
        return Err(Error::mismatch("conv2d input vs weight", input.shape(), weight.shape()));
    }
    if bias.shape() != [spec.out_channels] {
        return Err(Error::mismatch("conv2d bias vs weight", bias.shape(), weight.shape()));
    }
    let (oh, ow) = spec.output_hw(h, w)?;
    Ok((c, h, w, oh, ow))
}

/// Valid range of output indices `o` for which `o·stride + k − pad` lands in `[0, n)`.
fn valid_range(out: usize, n: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // o·s + k − p ≥ 0  ⇔  o ≥ ceil((p − k)/s)
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    // o·s + k − p ≤ n − 1  ⇔  o ≤ (n − 1 + p − k)/s
    let hi = if n - 1 + pad >= k {
        ((n - 1 + pad - k) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Cross-correlation style 2-D convolution with zero padding.
///
/// Each output element accumulates channel-outermost, then the window in
/// row-major order, starting from zero; the bias is added last.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (c_in, h, w, oh, ow) = check_conv(input, weight, bias, spec)?;
    let (kh, kw, s, p) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding);
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); spec.out_channels * oh * ow];

    for o in 0..spec.out_channels {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        for c in 0..c_in {
            let xc = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..kh {
                let (oy0, oy1) = valid_range(oh, h, ky, s, p);
                for kx in 0..kw {
                    let wv = wt[((o * c_in + c) * kh + ky) * kw + kx];
                    let (ox0, ox1) = valid_range(ow, w, kx, s, p);
                    if ox0 == ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        let row = &xc[iy * w..(iy + 1) * w];
                        let orow = &mut plane[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let ix0 = ox0 + kx - p;
                            for (ov, &xv) in orow[ox0..ox1].iter_mut().zip(&row[ix0..]) {
                                *ov = *ov + wv * xv;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                orow[ox] = orow[ox] + wv * row[ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
        let b = bias.data()[o];
        for v in plane.iter_mut() {
            *v = *v + b;
        }
    }
    Tensor::new(&[spec.out_channels, oh, ow], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (gx, gw, gb) = conv2d_backward_impl(input, weight, bias, spec, grad_out, true)?;
    Ok((gx.expect("input gradient requested"), gw, gb))
}

/// As [`conv2d_backward`], skipping the input gradient unless `want_input`.
pub(crate) fn conv2d_backward_impl<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let (c_in, h, w, oh, ow) = check_conv(input, weight, bias, spec)?;
    if grad_out.shape() != [spec.out_channels, oh, ow] {
        return Err(Error::mismatch(
            "conv2d_backward upstream",
            grad_out.shape(),
            &[spec.out_channels, oh, ow],
        ));
    }
    let (kh, kw, s, p) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding);
    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();
    let mut gx = vec![T::zero(); if want_input { x.len() } else { 0 }];
    let mut gw = vec![T::zero(); wt.len()];
    let mut gb = vec![T::zero(); spec.out_channels];

    for o in 0..spec.out_channels {
        let gplane = &g[o * oh * ow..(o + 1) * oh * ow];
        gb[o] = gplane.iter().fold(T::zero(), |a, &v| a + v);
        for c in 0..c_in {
            let xc = &x[c * h * w..(c + 1) * h * w];
            let gxc: &mut [T] = if want_input {
                &mut gx[c * h * w..(c + 1) * h * w]
            } else {
                &mut []
            };
            for ky in 0..kh {
                let (oy0, oy1) = valid_range(oh, h, ky, s, p);
                for kx in 0..kw {
                    let widx = ((o * c_in + c) * kh + ky) * kw + kx;
                    let wv = wt[widx];
                    let (ox0, ox1) = valid_range(ow, w, kx, s, p);
                    let mut acc = T::zero();
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        let xrow = &xc[iy * w..(iy + 1) * w];
                        for ox in ox0..ox1 {
                            acc = acc + grow[ox] * xrow[ox * s + kx - p];
                        }
                        if want_input {
                            let gxrow = &mut gxc[iy * w..(iy + 1) * w];
                            for ox in ox0..ox1 {
                                let ix = ox * s + kx - p;
                                gxrow[ix] = gxrow[ix] + grow[ox] * wv;
                            }
                        }
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
    let gx = if want_input {
        Some(Tensor::new(input.shape(), gx)?)
    } else {
        None
    };
    Ok((gx, Tensor::new(weight.shape(), gw)?, Tensor::new(bias.shape(), gb)?))
}
