//! 3×3 Gaussian smoothing and bilinear resampling of RGB rasters.

use super::ProjectionImage;

pub const GAUSSIAN_SIGMA: f64 = 0.85;

/// Normalised 3×3 Gaussian weights, row-major.
pub fn gaussian_kernel(sigma: f64) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    let mut total = 0.0;
    for (dy, row) in k.iter_mut().enumerate() {
        for (dx, w) in row.iter_mut().enumerate() {
            let (y, x) = (dy as f64 - 1.0, dx as f64 - 1.0);
            *w = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            total += *w;
        }
    }
    for w in k.iter_mut().flatten() {
        *w /= total;
    }
    k
}

/// Per-channel convolution of interleaved `channels`-wide `f64` data with
/// zero padding at the borders.
pub fn convolve3x3(data: &[f64], width: usize, height: usize, channels: usize, kernel: &[[f64; 3]; 3]) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..height {
        for c in 0..width {
            for (ky, krow) in kernel.iter().enumerate() {
                let Some(sr) = (r + ky).checked_sub(1).filter(|&v| v < height) else {
                    continue;
                };
                for (kx, &w) in krow.iter().enumerate() {
                    let Some(sc) = (c + kx).checked_sub(1).filter(|&v| v < width) else {
                        continue;
                    };
                    let src = channels * (sr * width + sc);
                    let dst = channels * (r * width + c);
                    for ch in 0..channels {
                        out[dst + ch] += w * data[src + ch];
                    }
                }
            }
        }
    }
    out
}

/// Smooths RGB bytes with the σ = 0.85 kernel, rounding half up.
pub fn gaussian_smooth(rgb: &[u8], width: usize, height: usize) -> Vec<u8> {
    let data: Vec<f64> = rgb.iter().map(|&b| b as f64).collect();
    convolve3x3(&data, width, height, 3, &gaussian_kernel(GAUSSIAN_SIGMA))
        .into_iter()
        .map(|v| (v + 0.5).floor().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Bilinear resampling to `target × target` with half-pixel-centre alignment
/// and edge clamping; bytes rounded half up.
pub fn resize_bilinear(img: &ProjectionImage, target: usize) -> ProjectionImage {
    resize_bilinear_to(img, target, target)
}

pub fn resize_bilinear_to(img: &ProjectionImage, out_w: usize, out_h: usize) -> ProjectionImage {
    if out_w == img.width && out_h == img.height {
        return img.clone();
    }
    let taps = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = taps(out_w, img.width);
    let ys = taps(out_h, img.height);
    let at = |r: usize, c: usize, ch: usize| img.pixels[3 * (r * img.width + c) + ch] as f64;
    let mut pixels = Vec::with_capacity(3 * out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..3 {
                let top = at(y0, x0, ch) * (1.0 - fx) + at(y0, x1, ch) * fx;
                let bottom = at(y1, x0, ch) * (1.0 - fx) + at(y1, x1, ch) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ProjectionImage {
        width: out_w,
        height: out_h,
        pixels,
        meta: img.meta.clone(),
        empty_before_smoothing: None,
    }
}
