use super::geometry::{in_disk, sin_cos_deg};
use crate::error::{Error, Result};
use crate::numerics::Tensor3;

/// Zeroes every location outside the inscribed disk of a square map.
pub fn apply_disk_mask(t: &Tensor3) -> Result<Tensor3> {
    if !t.is_square() {
        return Err(Error::Shape(format!(
            "aerial map must be square, got {}x{}",
            t.height(),
            t.width()
        )));
    }
    let size = t.height();
    let mut out = t.clone();
    for r in 0..size {
        for c in 0..size {
            if !in_disk(r, c, size) {
                out.pixel_mut(r, c).fill(0.0);
            }
        }
    }
    Ok(out)
}

/// Rotates a square aerial map about its center by `phi_deg`.
///
/// Content at polar angle θ moves to θ + φ (clockwise on screen, matching
/// the aerial angle convention). Sampling is bilinear with zero fill, and
/// the disk mask is applied to both input and output.
pub fn rotate_aerial(t: &Tensor3, phi_deg: f64) -> Result<Tensor3> {
    let src = apply_disk_mask(t)?;
    let size = src.height();
    let channels = src.channels();
    let center = (size as f64 - 1.0) / 2.0;
    let (sin, cos) = sin_cos_deg(phi_deg);
    let mut out = Tensor3::zeros(size, size, channels);

    for r in 0..size {
        for c in 0..size {
            if !in_disk(r, c, size) {
                continue;
            }
            // (south, west) offset of the output pixel, rotated back by phi
            let s = r as f64 - center;
            let w = center - c as f64;
            let s_src = s * cos + w * sin;
            let w_src = w * cos - s * sin;
            let y = center + s_src;
            let x = center - w_src;
            sample_bilinear(&src, y, x, out.pixel_mut(r, c));
        }
    }
    Ok(out)
}

fn sample_bilinear(src: &Tensor3, y: f64, x: f64, dst: &mut [f64]) {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let (h, w) = (src.height() as i64, src.width() as i64);
    let corners = [
        (y0 as i64, x0 as i64, (1.0 - fy) * (1.0 - fx)),
        (y0 as i64, x0 as i64 + 1, (1.0 - fy) * fx),
        (y0 as i64 + 1, x0 as i64, fy * (1.0 - fx)),
        (y0 as i64 + 1, x0 as i64 + 1, fy * fx),
    ];
    for (yy, xx, wt) in corners {
        if wt == 0.0 || yy < 0 || xx < 0 || yy >= h || xx >= w {
            continue;
        }
        let p = src.pixel(yy as usize, xx as usize);
        for (d, s) in dst.iter_mut().zip(p) {
            *d += wt * s;
        }
    }
}
