//! RGB images as 3×H×W tensors in [0, 1], binary PPM IO, and square crops.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::bbox::BBox;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn image_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Image(format!("{}: {}", path.display(), reason.into()))
}

/// Parses a binary (P6) PPM with maxval ≤ 255.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(image_err(path, "truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| image_err(path, "non-ascii header"))?);
    }
    if fields[0] != "P6" {
        return Err(image_err(
            path,
            format!("unsupported magic `{}` (only binary P6)", fields[0]),
        ));
    }
    let num = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| image_err(path, format!("bad {what} `{s}`")))
    };
    let (w, h, maxval) = (
        num(fields[1], "width")?,
        num(fields[2], "height")?,
        num(fields[3], "maxval")?,
    );
    if w == 0 || h == 0 || maxval == 0 || maxval > 255 {
        return Err(image_err(path, format!("unsupported geometry {w}x{h} maxval {maxval}")));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let raster = bytes
        .get(pos..pos + 3 * w * h)
        .ok_or_else(|| image_err(path, "truncated raster"))?;
    let plane = w * h;
    let scale = maxval as f64;
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / plane, i % plane);
        raster[3 * p + c] as f64 / scale
    })
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| image_err(path, e.to_string()))?;
    decode_ppm(&bytes, path)
}

/// Quantizes to 8 bits (round to nearest, clamped).
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.dims3()?;
    if c != 3 {
        return Err(Error::InvalidShape {
            shape: image.shape().to_vec(),
            reason: "PPM output needs 3 channels".into(),
        });
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = w * h;
    let d = image.data();
    for p in 0..plane {
        for ch in 0..3 {
            out.push((d[ch * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    let bytes = encode_ppm(image)?;
    let mut f = fs::File::create(path).map_err(|e| image_err(path, e.to_string()))?;
    f.write_all(&bytes).map_err(|e| image_err(path, e.to_string()))
}

/// Per-channel mean, used to fill crop regions outside the frame.
pub fn channel_means(image: &Tensor) -> Result<Vec<f64>> {
    let (c, h, w) = image.dims3()?;
    let plane = h * w;
    Ok((0..c)
        .map(|ch| image.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect())
}

/// Affine map between frame coordinates and a square `size`×`size` crop of
/// side `side` centered at `(cx, cy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform {
    pub cx: f64,
    pub cy: f64,
    pub side: f64,
    pub size: usize,
}

impl CropTransform {
    pub fn scale(&self) -> f64 {
        self.size as f64 / self.side
    }

    pub fn to_crop(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.scale();
        (
            (x - self.cx) * s + self.size as f64 / 2.0,
            (y - self.cy) * s + self.size as f64 / 2.0,
        )
    }

    pub fn to_frame(&self, u: f64, v: f64) -> (f64, f64) {
        let s = self.scale();
        (
            (u - self.size as f64 / 2.0) / s + self.cx,
            (v - self.size as f64 / 2.0) / s + self.cy,
        )
    }

    pub fn box_to_crop(&self, b: &BBox) -> BBox {
        let (x0, y0) = self.to_crop(b.x0, b.y0);
        let (x1, y1) = self.to_crop(b.x1, b.y1);
        BBox { x0, y0, x1, y1 }
    }

    pub fn box_to_frame(&self, b: &BBox) -> BBox {
        let (x0, y0) = self.to_frame(b.x0, b.y0);
        let (x1, y1) = self.to_frame(b.x1, b.y1);
        BBox { x0, y0, x1, y1 }
    }
}

/// Bilinear sample of a square region; outside pixels take `fill`.
pub fn crop(image: &Tensor, t: &CropTransform, fill: &[f64]) -> Result<Tensor> {
    let (c, h, w) = image.dims3()?;
    if fill.len() != c {
        return Err(Error::InvalidArgument(format!(
            "fill has {} values for {c} channels",
            fill.len()
        )));
    }
    if !(t.side > 0.0) || t.size == 0 {
        return Err(Error::InvalidArgument(format!(
            "degenerate crop side {} size {}",
            t.side, t.size
        )));
    }
    let n = t.size;
    let d = image.data();
    let mut out = vec![0.0; c * n * n];
    for v in 0..n {
        for u in 0..n {
            let (fx, fy) = t.to_frame(u as f64 + 0.5, v as f64 + 0.5);
            // pixel k is centered at k + 0.5
            let (sx, sy) = (fx - 0.5, fy - 0.5);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (ax, ay) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            for ch in 0..c {
                let fetch = |x: i64, y: i64| {
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        fill[ch]
                    } else {
                        d[(ch * h + y as usize) * w + x as usize]
                    }
                };
                let top = fetch(x0, y0) + ax * (fetch(x0 + 1, y0) - fetch(x0, y0));
                let bot = fetch(x0, y0 + 1) + ax * (fetch(x0 + 1, y0 + 1) - fetch(x0, y0 + 1));
                out[(ch * n + v) * n + u] = top + ay * (bot - top);
            }
        }
    }
    Tensor::new(&[c, n, n], out)
}

/// Context-padded template side `√((w+p)(h+p))` with `p = (w+h)/2`.
pub fn context_side(w: f64, h: f64) -> f64 {
    let p = (w + h) / 2.0;
    ((w + p) * (h + p)).sqrt()
}

/// Template crop around `gt`: context-padded side, scaled to `size`.
pub fn template_transform(gt: &BBox, size: usize) -> CropTransform {
    let (cx, cy) = gt.center();
    CropTransform {
        cx,
        cy,
        side: context_side(gt.width(), gt.height()),
        size,
    }
}

/// Search crop centered at `(cx, cy)` for a target of the given size; the
/// side is the template side scaled by `search_size / template_size`.
pub fn search_transform(cx: f64, cy: f64, w: f64, h: f64, model: &ModelConfig) -> CropTransform {
    CropTransform {
        cx,
        cy,
        side: context_side(w, h) * model.search_size as f64 / model.template_size as f64,
        size: model.search_size,
    }
}
