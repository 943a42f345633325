//! Photometric, perceptual-proxy and mask losses with analytic gradients.
//!
//! Images are row-major `height × width × 3` slices of `f64`; masks and
//! opacity maps are `height × width`.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
/// Number of pyramid levels of the perceptual proxy (scales 1, 1/2, 1/4).
pub const PERCEPTUAL_SCALES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lpips: f64,
    pub msk: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lpips: 1e-3, msk: 1e-3 }
    }
}

/// How rendered dynamic opacity is compared with the ground-truth mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskLossMode {
    /// Penalize opacity outside the mask: `mean M·(1 − gt)`.
    #[default]
    Complement,
    /// `mean M·gt`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub img: f64,
    pub lpips: f64,
    pub msk: f64,
    pub total: f64,
}

/// Mean over pixels of the squared RGB distance.
pub fn loss_img(c: &[f64], gt: &[f64]) -> f64 {
    assert_eq!(c.len(), gt.len(), "image size mismatch");
    let n = (c.len() / 3).max(1) as f64;
    c.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

pub fn loss_img_grad(c: &[f64], gt: &[f64], scale: f64, grad: &mut [f64]) {
    let n = (c.len() / 3).max(1) as f64;
    for ((g, a), b) in grad.iter_mut().zip(c).zip(gt) {
        *g += scale * 2.0 * (a - b) / n;
    }
}

pub fn loss_msk(m: &[f64], gt: &[f64], mode: MaskLossMode) -> f64 {
    assert_eq!(m.len(), gt.len(), "mask size mismatch");
    let n = m.len().max(1) as f64;
    m.iter().zip(gt).map(|(&a, &g)| a * mask_factor(g, mode)).sum::<f64>() / n
}

pub fn loss_msk_grad(gt: &[f64], mode: MaskLossMode, scale: f64, grad: &mut [f64]) {
    let n = gt.len().max(1) as f64;
    for (d, &g) in grad.iter_mut().zip(gt) {
        *d += scale * mask_factor(g, mode) / n;
    }
}

#[inline]
fn mask_factor(gt: f64, mode: MaskLossMode) -> f64 {
    match mode {
        MaskLossMode::Complement => 1.0 - gt,
        MaskLossMode::Literal => gt,
    }
}

struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn luma(img: &[f64], w: usize, h: usize) -> Self {
        let data = img.chunks_exact(3).map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]).collect();
        Self { w, h, data }
    }

    fn down(&self) -> Self {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut data = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let s = |dx: usize, dy: usize| self.data[(2 * y + dy) * self.w + 2 * x + dx];
                data[y * w + x] = 0.25 * (s(0, 0) + s(1, 0) + s(0, 1) + s(1, 1));
            }
        }
        Self { w, h, data }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// L1 distance between multi-scale stacks of luma and its forward
/// differences, averaged per channel and scale. Adds `scale · ∂/∂img` to
/// `grad` when given.
pub fn loss_perceptual(img: &[f64], gt: &[f64], w: usize, h: usize, grad: Option<(f64, &mut [f64])>) -> f64 {
    assert_eq!(img.len(), w * h * 3);
    assert_eq!(gt.len(), img.len());
    let mut a = vec![Plane::luma(img, w, h)];
    let mut b = vec![Plane::luma(gt, w, h)];
    for s in 1..PERCEPTUAL_SCALES {
        a.push(a[s - 1].down());
        b.push(b[s - 1].down());
    }
    let mut total = 0.0;
    let mut dy: Vec<Vec<f64>> = a.iter().map(|p| vec![0.0; p.data.len()]).collect();
    let norm = 1.0 / PERCEPTUAL_SCALES as f64;
    for s in 0..PERCEPTUAL_SCALES {
        let (pa, pb, d) = (&a[s], &b[s], &mut dy[s]);
        let (pw, ph) = (pa.w, pa.h);
        if pw * ph == 0 {
            continue;
        }
        // luma
        let n = (pw * ph) as f64;
        for i in 0..pw * ph {
            let e = pa.data[i] - pb.data[i];
            total += norm * e.abs() / n;
            d[i] += norm * sign(e) / n;
        }
        // horizontal differences
        if pw > 1 {
            let n = ((pw - 1) * ph) as f64;
            for y in 0..ph {
                for x in 0..pw - 1 {
                    let i = y * pw + x;
                    let e = (pa.data[i + 1] - pa.data[i]) - (pb.data[i + 1] - pb.data[i]);
                    total += norm * e.abs() / n;
                    let g = norm * sign(e) / n;
                    d[i + 1] += g;
                    d[i] -= g;
                }
            }
        }
        // vertical differences
        if ph > 1 {
            let n = (pw * (ph - 1)) as f64;
            for y in 0..ph - 1 {
                for x in 0..pw {
                    let i = y * pw + x;
                    let e = (pa.data[i + pw] - pa.data[i]) - (pb.data[i + pw] - pb.data[i]);
                    total += norm * e.abs() / n;
                    let g = norm * sign(e) / n;
                    d[i + pw] += g;
                    d[i] -= g;
                }
            }
        }
    }
    if let Some((scale, grad)) = grad {
        for s in (1..PERCEPTUAL_SCALES).rev() {
            let (fine, coarse) = dy.split_at_mut(s);
            let fine = &mut fine[s - 1];
            let (cw, ch) = (a[s].w, a[s].h);
            let fw = a[s - 1].w;
            for y in 0..ch {
                for x in 0..cw {
                    let g = 0.25 * coarse[0][y * cw + x];
                    fine[2 * y * fw + 2 * x] += g;
                    fine[2 * y * fw + 2 * x + 1] += g;
                    fine[(2 * y + 1) * fw + 2 * x] += g;
                    fine[(2 * y + 1) * fw + 2 * x + 1] += g;
                }
            }
        }
        for (p, &g) in dy[0].iter().enumerate() {
            for c in 0..3 {
                grad[p * 3 + c] += scale * g * LUMA[c];
            }
        }
    }
    total
}

/// Weighted sum of the three terms. `mask` may be absent (no dynamic
/// supervision), in which case the mask term is 0.
pub fn total_loss(
    c: &[f64],
    gt: &[f64],
    w: usize,
    h: usize,
    mask: Option<(&[f64], &[f64])>,
    weights: LossWeights,
    mode: MaskLossMode,
) -> LossTerms {
    let img = loss_img(c, gt);
    let lpips = loss_perceptual(c, gt, w, h, None);
    let msk = mask.map_or(0.0, |(m, g)| loss_msk(m, g, mode));
    LossTerms { img, lpips, msk, total: img + weights.lpips * lpips + weights.msk * msk }
}

/// [`total_loss`] plus gradients with respect to the rendered image and
/// rendered mask.
pub fn total_loss_with_grad(
    c: &[f64],
    gt: &[f64],
    w: usize,
    h: usize,
    mask: Option<(&[f64], &[f64])>,
    weights: LossWeights,
    mode: MaskLossMode,
) -> (LossTerms, Vec<f64>, Vec<f64>) {
    let mut dc = vec![0.0; c.len()];
    let img = loss_img(c, gt);
    loss_img_grad(c, gt, 1.0, &mut dc);
    let lpips = if weights.lpips != 0.0 { loss_perceptual(c, gt, w, h, Some((weights.lpips, &mut dc))) } else { loss_perceptual(c, gt, w, h, None) };
    let mut dm = vec![0.0; w * h];
    let msk = match mask {
        Some((m, g)) => {
            loss_msk_grad(g, mode, weights.msk, &mut dm);
            loss_msk(m, g, mode)
        }
        None => 0.0,
    };
    (LossTerms { img, lpips, msk, total: img + weights.lpips * lpips + weights.msk * msk }, dc, dm)
}

/// Mean squared error over all channel values.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

/// `10·log10(1/MSE)` for unit-range images; infinite for identical inputs.
pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    let m = mse(a, b);
    if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * math::log10(m)
    }
}
