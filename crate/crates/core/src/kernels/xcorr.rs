use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn check<T: Scalar>(search: &Tensor<T>, template: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize)> {
    let (c, hs, ws) = search.dims3()?;
    let (ct, ht, wt) = template.dims3()?;
    if c != ct || ht > hs || wt > ws {
        return Err(Error::mismatch("depthwise_xcorr", search.shape(), template.shape()));
    }
    Ok((c, hs, ws, ht, wt))
}

/// Per-channel valid cross-correlation of `search` with `template`.
///
/// Output is C×(Hs−Ht+1)×(Ws−Wt+1). Each element accumulates the window in
/// row-major order starting from zero.
pub fn depthwise_xcorr<T: Scalar>(search: &Tensor<T>, template: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, hs, ws, ht, wt) = check(search, template)?;
    let (oh, ow) = (hs - ht + 1, ws - wt + 1);
    let s = search.data();
    let t = template.data();
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let sc = &s[ch * hs * ws..(ch + 1) * hs * ws];
        let plane = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for ky in 0..ht {
            for kx in 0..wt {
                let tv = t[(ch * ht + ky) * wt + kx];
                for y in 0..oh {
                    let row = &sc[(y + ky) * ws + kx..(y + ky) * ws + kx + ow];
                    for (o, &sv) in plane[y * ow..(y + 1) * ow].iter_mut().zip(row) {
                        *o = *o + sv * tv;
                    }
                }
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

/// Gradients of [`depthwise_xcorr`] with respect to search and template.
pub fn depthwise_xcorr_backward<T: Scalar>(
    search: &Tensor<T>,
    template: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, hs, ws, ht, wt) = check(search, template)?;
    let (oh, ow) = (hs - ht + 1, ws - wt + 1);
    if grad_out.shape() != [c, oh, ow] {
        return Err(Error::mismatch(
            "depthwise_xcorr_backward",
            grad_out.shape(),
            &[c, oh, ow],
        ));
    }
    let s = search.data();
    let t = template.data();
    let g = grad_out.data();
    let mut gs = vec![T::zero(); s.len()];
    let mut gt = vec![T::zero(); t.len()];
    for ch in 0..c {
        let sc = &s[ch * hs * ws..(ch + 1) * hs * ws];
        let gsc = &mut gs[ch * hs * ws..(ch + 1) * hs * ws];
        let gplane = &g[ch * oh * ow..(ch + 1) * oh * ow];
        for ky in 0..ht {
            for kx in 0..wt {
                let tidx = (ch * ht + ky) * wt + kx;
                let tv = t[tidx];
                let mut acc = T::zero();
                for y in 0..oh {
                    let base = (y + ky) * ws + kx;
                    for x in 0..ow {
                        let gv = gplane[y * ow + x];
                        acc = acc + gv * sc[base + x];
                        gsc[base + x] = gsc[base + x] + gv * tv;
                    }
                }
                gt[tidx] = acc;
            }
        }
    }
    Ok((Tensor::new(search.shape(), gs)?, Tensor::new(template.shape(), gt)?))
}

/// Sums a C×H×W tensor over channels into 1×H×W, channel 0 first.
pub fn channel_sum<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    let d = x.data();
    let mut out = d[..h * w].to_vec();
    for ch in 1..c {
        for (o, &v) in out.iter_mut().zip(&d[ch * h * w..(ch + 1) * h * w]) {
            *o = *o + v;
        }
    }
    Tensor::new(&[1, h, w], out)
}
