use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One interpolation tap along an axis: `lo + frac·(hi − lo)`.
#[derive(Debug, Clone, Copy)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
}

/// Align-corners source positions for resizing an axis from `n_in` to `n_out`.
fn taps<T: Scalar>(n_in: usize, n_out: usize) -> Vec<Tap<T>> {
    (0..n_out)
        .map(|i| {
            if n_out == 1 || n_in == 1 {
                return Tap {
                    lo: 0,
                    hi: 0,
                    frac: T::zero(),
                };
            }
            let src = (i * (n_in - 1)) as f64 / (n_out - 1) as f64;
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            Tap {
                lo,
                hi,
                frac: T::of_f64(src - lo as f64),
            }
        })
        .collect()
}

fn lerp<T: Scalar>(a: T, b: T, f: T) -> T {
    // Clamped so rounding never leaves the [a, b] interval.
    let v = a + f * (b - a);
    v.max(a.min(b)).min(a.max(b))
}

fn check_target(target: [usize; 3]) -> Result<()> {
    if target.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "resize target {target:?} has a zero extent"
        )));
    }
    Ok(())
}

/// Linear interpolation along channel, height and width with the align-corners
/// convention. A same-shape resize returns the input unchanged.
pub fn resize_trilinear<T: Scalar>(input: &Tensor<T>, target: [usize; 3]) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3()?;
    check_target(target)?;
    if [c, h, w] == target {
        return Ok(input.clone());
    }
    let [tc, th, tw] = target;
    let (cz, ty, tx) = (taps::<T>(c, tc), taps::<T>(h, th), taps::<T>(w, tw));
    let d = input.data();
    let at = |ch: usize, y: usize, x: usize| d[(ch * h + y) * w + x];
    let bilinear = |ch: usize, yt: &Tap<T>, xt: &Tap<T>| {
        let top = lerp(at(ch, yt.lo, xt.lo), at(ch, yt.lo, xt.hi), xt.frac);
        let bottom = lerp(at(ch, yt.hi, xt.lo), at(ch, yt.hi, xt.hi), xt.frac);
        lerp(top, bottom, yt.frac)
    };
    let mut out = Vec::with_capacity(tc * th * tw);
    for ct in &cz {
        for yt in &ty {
            for xt in &tx {
                let v = if tc == c {
                    bilinear(ct.lo, yt, xt)
                } else {
                    lerp(bilinear(ct.lo, yt, xt), bilinear(ct.hi, yt, xt), ct.frac)
                };
                out.push(v);
            }
        }
    }
    Tensor::new(&target, out)
}

/// Transpose of [`resize_trilinear`]: scatters `grad_out` back with the same weights.
pub fn resize_trilinear_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = match input_shape {
        &[c, h, w] => (c, h, w),
        _ => {
            return Err(Error::mismatch(
                "resize_trilinear_backward",
                input_shape,
                grad_out.shape(),
            ))
        }
    };
    let (tc, th, tw) = grad_out.dims3()?;
    if [c, h, w] == [tc, th, tw] {
        return Ok(grad_out.clone());
    }
    let (cz, ty, tx) = (taps::<T>(c, tc), taps::<T>(h, th), taps::<T>(w, tw));
    let mut gi = vec![T::zero(); c * h * w];
    let g = grad_out.data();
    let one = T::one();
    let mut k = 0;
    for ct in &cz {
        let cw: [(usize, T); 2] = if tc == c {
            [(ct.lo, one), (ct.lo, T::zero())]
        } else {
            [(ct.lo, one - ct.frac), (ct.hi, ct.frac)]
        };
        for yt in &ty {
            for xt in &tx {
                let gv = g[k];
                k += 1;
                for &(ch, wc) in &cw {
                    for (y, wy) in [(yt.lo, one - yt.frac), (yt.hi, yt.frac)] {
                        for (x, wx) in [(xt.lo, one - xt.frac), (xt.hi, xt.frac)] {
                            let idx = (ch * h + y) * w + x;
                            gi[idx] = gi[idx] + gv * wc * wy * wx;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input_shape, gi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_bitwise() {
        let x = Tensor::new(
            &[2, 2, 3],
            vec![-0.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 1e-300, -2.0],
        )
        .unwrap();
        let y = resize_trilinear(&x, [2, 2, 3]).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x), bits(&y));
    }

    #[test]
    fn constants_stay_constant() {
        let x = Tensor::full(&[2, 3, 4], 3.5).unwrap();
        for target in [[2, 7, 5], [1, 1, 1], [4, 2, 9]] {
            let y = resize_trilinear(&x, target).unwrap();
            assert!(y.data().iter().all(|&v| v == 3.5), "{target:?}");
        }
    }

    #[test]
    fn two_by_two_to_three_by_three() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = resize_trilinear(&x, [1, 3, 3]).unwrap();
        assert_eq!(y.data(), &[1.0, 1.5, 2.0, 2.0, 2.5, 3.0, 3.0, 3.5, 4.0]);
    }

    #[test]
    fn channel_axis_interpolates() {
        let x = Tensor::new(&[2, 1, 1], vec![0.0, 1.0]).unwrap();
        let y = resize_trilinear(&x, [3, 1, 1]).unwrap();
        assert_eq!(y.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn rejects_zero_target() {
        let x = Tensor::<f64>::ones(&[1, 2, 2]).unwrap();
        assert!(resize_trilinear(&x, [1, 0, 2]).is_err());
    }
}
