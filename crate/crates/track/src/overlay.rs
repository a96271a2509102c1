//! Box outlines drawn onto frames for visual debugging.

use dcff_core::{BBox, Tensor};

use crate::error::Result;

/// Copy of `frame` with a one-pixel outline of `b` in `color` (one value per
/// channel). Edges outside the frame are skipped.
pub fn draw_box(frame: &Tensor, b: &BBox, color: &[f64]) -> Result<Tensor> {
    let (c, h, w) = frame.dims3()?;
    let mut out = frame.clone();
    let data = out.data_mut();
    let x0 = b.x0.floor() as i64;
    let y0 = b.y0.floor() as i64;
    let x1 = (b.x1.ceil() as i64 - 1).max(x0);
    let y1 = (b.y1.ceil() as i64 - 1).max(y0);
    let mut set = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            for (ch, &v) in color.iter().enumerate().take(c) {
                data[(ch * h + y as usize) * w + x as usize] = v;
            }
        }
    };
    for x in x0..=x1 {
        set(x, y0);
        set(x, y1);
    }
    for y in y0..=y1 {
        set(x0, y);
        set(x1, y);
    }
    Ok(out)
}
