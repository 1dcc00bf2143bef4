//! Direct-sum 2-D DFT, written independently of the library transforms.

use std::f64::consts::TAU;

/// Signed frequency of unshifted index `k` on an axis of length `n`.
pub fn signed(k: usize, n: usize) -> isize {
    if k < n - n / 2 {
        k as isize
    } else {
        k as isize - n as isize
    }
}

fn twiddle(a: usize, b: usize, n: usize) -> f64 {
    TAU * ((a * b) % n) as f64 / n as f64
}

/// `X[u][v] = Σ x[y][x] e^{-2πi (u y / h + v x / w)}`, unshifted.
pub fn dft2(x: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    let a = twiddle(u, y, h) + twiddle(v, xx, w);
                    re += x[y * w + xx] * a.cos();
                    im -= x[y * w + xx] * a.sin();
                }
            }
            out[u * w + v] = (re, im);
        }
    }
    out
}

/// Real part of the normalised inverse of [`dft2`].
pub fn idft2_real(spec: &[(f64, f64)], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            let mut re = 0.0;
            for u in 0..h {
                for v in 0..w {
                    let a = twiddle(u, y, h) + twiddle(v, xx, w);
                    let (sr, si) = spec[u * w + v];
                    re += sr * a.cos() - si * a.sin();
                }
            }
            out[y * w + xx] = re / (h * w) as f64;
        }
    }
    out
}

/// Untapered rectangular gate: 1 where `|f| <= floor(rho n / 2)` on both axes.
pub fn hard_mask(fy: isize, fx: isize, h: usize, w: usize, rho: f64) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    if rho == 1.0 {
        return 1.0;
    }
    let hy = (rho * h as f64 / 2.0).floor() as isize;
    let hx = (rho * w as f64 / 2.0).floor() as isize;
    if fy.abs() <= hy && fx.abs() <= hx {
        1.0
    } else {
        0.0
    }
}

/// Fusion by direct sums: `mask` weighs the base spectrum per signed frequency.
pub fn fuse(
    z_ref: &[f64],
    z_base: &[f64],
    h: usize,
    w: usize,
    mask: impl Fn(isize, isize) -> f64,
) -> (Vec<(f64, f64)>, Vec<f64>) {
    let lo = dft2(z_base, h, w);
    let hi = dft2(z_ref, h, w);
    let mut spec = vec![(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let k = mask(signed(u, h), signed(v, w));
            let (l, r) = (lo[u * w + v], hi[u * w + v]);
            spec[u * w + v] = (k * l.0 + (1.0 - k) * r.0, k * l.1 + (1.0 - k) * r.1);
        }
    }
    let field = idft2_real(&spec, h, w);
    (spec, field)
}
