use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, "add", |x, y| x + y)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Upstream gradient masked by `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(
        grad_out,
        "relu_backward",
        |v, g| if v > T::zero() { g } else { T::zero() },
    )
}

fn check_affine<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize)> {
    let c = x.shape()[0];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::mismatch("scale_shift", x.shape(), gamma.shape()));
    }
    Ok((c, x.numel() / c))
}

/// Per-channel affine map `gamma[c]·x + beta[c]` over the leading axis.
///
/// This is batch normalization in folded inference form.
pub fn scale_shift<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, plane) = check_affine(x, gamma, beta)?;
    let mut out = x.clone();
    for ch in 0..c {
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for v in &mut out.data_mut()[ch * plane..(ch + 1) * plane] {
            *v = g * *v + b;
        }
    }
    Ok(out)
}

/// Gradients of [`scale_shift`] with respect to x, gamma and beta.
pub fn scale_shift_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (c, plane) = check_affine(x, gamma, beta)?;
    if grad_out.shape() != x.shape() {
        return Err(Error::mismatch("scale_shift_backward", grad_out.shape(), x.shape()));
    }
    let mut gx = grad_out.clone();
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for ch in 0..c {
        let range = ch * plane..(ch + 1) * plane;
        let g = gamma.data()[ch];
        for (gxv, &xv) in gx.data_mut()[range.clone()].iter_mut().zip(&x.data()[range]) {
            gg[ch] = gg[ch] + *gxv * xv;
            gb[ch] = gb[ch] + *gxv;
            *gxv = *gxv * g;
        }
    }
    Ok((gx, Tensor::new(&[c], gg)?, Tensor::new(&[c], gb)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_zero_is_identity() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap();
        assert_eq!(add(&x, &Tensor::zeros_like(&x)).unwrap(), x);
        assert!(add(&x, &Tensor::zeros(&[1, 4]).unwrap()).is_err());
    }

    #[test]
    fn relu_definition() {
        let x = Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::ones(&[3]).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn unit_affine_is_identity() {
        let x = Tensor::new(&[2, 1, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap();
        let y = scale_shift(&x, &Tensor::ones(&[2]).unwrap(), &Tensor::zeros(&[2]).unwrap()).unwrap();
        assert_eq!(y, x);
        assert!(scale_shift(&x, &Tensor::ones(&[3]).unwrap(), &Tensor::zeros(&[3]).unwrap()).is_err());
    }

    #[test]
    fn affine_per_channel() {
        let x = Tensor::new(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = Tensor::new(&[2], vec![2.0, -1.0]).unwrap();
        let b = Tensor::new(&[2], vec![0.5, 1.0]).unwrap();
        assert_eq!(scale_shift(&x, &g, &b).unwrap().data(), &[2.5, 4.5, -2.0, -3.0]);
    }
}
