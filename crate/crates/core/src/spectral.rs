//! Centered 2-D spectra, the low-pass gate `K(rho)` and spectral fusion.
//!
//! Spectra are unnormalized DFTs (`X[k] = sum x[n] e^{-2 pi i k n / N}` per
//! axis) shifted so the zero frequency sits at `(H / 2, W / 2)` (integer
//! division) for both odd and even sizes. Index `i` along an axis of
//! length `n` therefore carries frequency `i - n / 2`.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use thiserror::Error;

use crate::latents::{latent_stats, LatentError, LatentField, Shape};

/// Default cosine transition width as a fraction of the passband half-width.
pub const DEFAULT_TAPER: f64 = 0.10;
/// Relative bound on the imaginary residue of an inverse transform.
pub const SYMMETRY_TOLERANCE: f64 = 1e-6;
/// Absolute floor of that bound, for spectra that are numerically zero.
pub const SYMMETRY_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("rho {0} outside [0, 1]")]
    RhoRange(f64),
    #[error("taper fraction {0} outside [0, 0.5]")]
    TaperRange(f64),
    #[error("spectrum of channel {channel} is not Hermitian: imaginary residue {residue:e} exceeds {bound:e}")]
    SymmetryViolation {
        channel: usize,
        residue: f64,
        bound: f64,
    },
    #[error("{0}")]
    Shape(#[from] LatentError),
}

/// DC-centered complex spectrum of a latent field, one plane per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    shape: Shape,
    coefficients: Vec<Complex64>,
}

impl Spectrum {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [Complex64] {
        &mut self.coefficients
    }

    pub fn plane(&self, c: usize) -> &[Complex64] {
        let n = self.shape.plane();
        &self.coefficients[c * n..(c + 1) * n]
    }

    /// Coefficient at signed frequency `(fy, fx)` of channel `c`.
    pub fn at_frequency(&self, c: usize, fy: isize, fx: isize) -> Complex64 {
        let (h, w) = (self.shape.height, self.shape.width);
        let iy = (fy + (h / 2) as isize).rem_euclid(h as isize) as usize;
        let ix = (fx + (w / 2) as isize).rem_euclid(w as isize) as usize;
        self.plane(c)[iy * w + ix]
    }

    /// Sum of squared magnitudes over all channels.
    pub fn energy(&self) -> f64 {
        self.coefficients.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Per-channel 2-D DFT followed by the centering shift.
pub fn forward_spectrum(field: &LatentField) -> Spectrum {
    let shape = field.shape();
    let planes: Vec<Vec<Complex64>> = (0..shape.channels)
        .into_par_iter()
        .map(|c| {
            let mut buf: Vec<Complex64> =
                field.channel(c).iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft_2d(shape.height, shape.width, &mut buf, FftDirection::Forward);
            shift(shape.height, shape.width, &buf, false)
        })
        .collect();
    Spectrum {
        shape,
        coefficients: planes.concat(),
    }
}

/// Undoes the shift, applies the inverse DFT and keeps the real part.
///
/// Fails when a channel's imaginary residue exceeds
/// [`SYMMETRY_TOLERANCE`] times that channel's spectral L2 norm (but at
/// least [`SYMMETRY_FLOOR`]), which means the spectrum was not
/// conjugate-symmetric.
pub fn inverse_spectrum(spec: &Spectrum) -> Result<LatentField, SpectralError> {
    let shape = spec.shape;
    let scale = 1.0 / shape.plane() as f64;
    let planes: Vec<Result<Vec<f64>, SpectralError>> = (0..shape.channels)
        .into_par_iter()
        .map(|c| {
            let plane = spec.plane(c);
            let norm = plane.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let mut buf = shift(shape.height, shape.width, plane, true);
            fft_2d(shape.height, shape.width, &mut buf, FftDirection::Inverse);
            let residue = buf.iter().map(|z| (z.im * scale).abs()).fold(0.0, f64::max);
            let bound = (SYMMETRY_TOLERANCE * norm).max(SYMMETRY_FLOOR);
            if residue > bound {
                return Err(SpectralError::SymmetryViolation {
                    channel: c,
                    residue,
                    bound,
                });
            }
            Ok(buf.iter().map(|z| z.re * scale).collect())
        })
        .collect();
    let mut values = Vec::with_capacity(shape.len());
    for plane in planes {
        values.extend(plane?);
    }
    Ok(LatentField::new(shape, values)?)
}

fn fft_2d(height: usize, width: usize, buf: &mut [Complex64], direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let rows = planner.plan_fft(width, direction);
    for row in buf.chunks_exact_mut(width) {
        rows.process(row);
    }
    let cols = planner.plan_fft(height, direction);
    let mut column = vec![Complex64::default(); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = buf[y * width + x];
        }
        cols.process(&mut column);
        for y in 0..height {
            buf[y * width + x] = column[y];
        }
    }
}

/// Moves the zero frequency to the center (`inverse = false`) or back.
fn shift(height: usize, width: usize, src: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let (oy, ox) = (height / 2, width / 2);
    let mut out = vec![Complex64::default(); src.len()];
    for y in 0..height {
        for x in 0..width {
            let sy = (y + oy) % height;
            let sx = (x + ox) % width;
            if inverse {
                out[y * width + x] = src[sy * width + sx];
            } else {
                out[sy * width + sx] = src[y * width + x];
            }
        }
    }
    out
}

/// Cosine transition width of the low-pass gate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TaperSpec(f64);

impl TaperSpec {
    pub fn new(taper_fraction: f64) -> Result<Self, SpectralError> {
        if !(0.0..=0.5).contains(&taper_fraction) {
            return Err(SpectralError::TaperRange(taper_fraction));
        }
        Ok(Self(taper_fraction))
    }

    pub const fn none() -> Self {
        Self(0.0)
    }

    pub fn fraction(self) -> f64 {
        self.0
    }
}

impl Default for TaperSpec {
    fn default() -> Self {
        Self(DEFAULT_TAPER)
    }
}

/// DC-centered real weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlane {
    height: usize,
    width: usize,
    weights: Vec<f64>,
}

impl MaskPlane {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, iy: usize, ix: usize) -> f64 {
        self.weights[iy * self.width + ix]
    }

    /// Weight at signed frequency `(fy, fx)`, indices taken modulo the plane.
    pub fn weight_at_frequency(&self, fy: isize, fx: isize) -> f64 {
        let iy = (fy + (self.height / 2) as isize).rem_euclid(self.height as isize) as usize;
        let ix = (fx + (self.width / 2) as isize).rem_euclid(self.width as isize) as usize;
        self.weight(iy, ix)
    }
}

/// Rectangular low-pass gate `K(rho)`.
///
/// Half-widths are `floor(rho * n / 2)` per axis. Inside the rectangle the
/// weight is 1 except for the outermost `ceil(taper * half)` bins, which
/// ramp down along a raised cosine; the ramp never leaves the rectangle.
/// The 2-D weight is the product of the two axis profiles. `rho = 0` gives
/// the zero mask, `rho = 1` the all-ones mask, and any `rho > 0` keeps at
/// least the DC bin.
pub fn build_lowpass_mask(
    height: usize,
    width: usize,
    rho: f64,
    taper: TaperSpec,
) -> Result<MaskPlane, SpectralError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(SpectralError::RhoRange(rho));
    }
    let py = axis_profile(height, rho, taper.fraction());
    let px = axis_profile(width, rho, taper.fraction());
    let weights = py
        .iter()
        .flat_map(|&wy| px.iter().map(move |&wx| wy * wx))
        .collect();
    Ok(MaskPlane {
        height,
        width,
        weights,
    })
}

fn axis_profile(n: usize, rho: f64, taper: f64) -> Vec<f64> {
    if rho == 0.0 {
        return vec![0.0; n];
    }
    if rho == 1.0 {
        return vec![1.0; n];
    }
    let half = (rho * n as f64 / 2.0).floor() as isize;
    let ramp = (taper * half as f64).ceil() as isize;
    let center = (n / 2) as isize;
    (0..n as isize)
        .map(|i| {
            let f = (i - center).abs();
            if f > half {
                return 0.0;
            }
            let depth = half - f;
            if depth >= ramp {
                1.0
            } else {
                let p = (ramp - depth) as f64;
                0.5 * (1.0 + (std::f64::consts::PI * p / (ramp as f64 + 1.0)).cos())
            }
        })
        .collect()
}

/// Whether `spec_fuse` clamps the fused field to the base channel ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clamp {
    On,
    Off,
}

/// Per-frequency blend `K * F(z_base) + (1 - K) * F(z_ref)`, inverted back
/// to a latent. With [`Clamp::On`] every value is clamped to its channel's
/// `[min, max]` in `z_base`.
pub fn spec_fuse(
    z_ref: &LatentField,
    z_base: &LatentField,
    rho: f64,
    taper: TaperSpec,
    clamp: Clamp,
) -> Result<LatentField, SpectralError> {
    z_ref.ensure_same_shape(z_base)?;
    let shape = z_base.shape();
    let mask = build_lowpass_mask(shape.height, shape.width, rho, taper)?;
    let lo = forward_spectrum(z_base);
    let hi = forward_spectrum(z_ref);
    let plane = shape.plane();
    let coefficients = lo
        .coefficients
        .iter()
        .zip(&hi.coefficients)
        .enumerate()
        .map(|(i, (l, h))| {
            let k = mask.weights[i % plane];
            l * k + h * (1.0 - k)
        })
        .collect();
    let fused = inverse_spectrum(&Spectrum {
        shape,
        coefficients,
    })?;
    match clamp {
        Clamp::Off => Ok(fused),
        Clamp::On => {
            let stats = latent_stats(z_base);
            let values = fused
                .values()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let s = stats.channels[i / plane];
                    v.clamp(s.min, s.max)
                })
                .collect();
            Ok(LatentField::new(shape, values)?)
        }
    }
}

/// Splits a field into the parts passed and rejected by `K(rho)`.
pub fn split_bands(
    field: &LatentField,
    rho: f64,
    taper: TaperSpec,
) -> Result<(LatentField, LatentField), SpectralError> {
    let shape = field.shape();
    let mask = build_lowpass_mask(shape.height, shape.width, rho, taper)?;
    let spec = forward_spectrum(field);
    let plane = shape.plane();
    let gated = |keep_low: bool| -> Result<LatentField, SpectralError> {
        let coefficients = spec
            .coefficients
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let k = mask.weights[i % plane];
                z * if keep_low { k } else { 1.0 - k }
            })
            .collect();
        inverse_spectrum(&Spectrum {
            shape,
            coefficients,
        })
    };
    Ok((gated(true)?, gated(false)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latents::sample_gaussian_latent;
    use proptest::prelude::*;

    fn field(c: usize, h: usize, w: usize, seed: u64) -> LatentField {
        sample_gaussian_latent(c, h, w, seed).unwrap()
    }

    #[test]
    fn constant_field_is_dc_only() {
        let shape = Shape::new(1, 4, 4).unwrap();
        let f = LatentField::filled(shape, 2.5).unwrap();
        let s = forward_spectrum(&f);
        for (i, z) in s.coefficients().iter().enumerate() {
            if i == 2 * 4 + 2 {
                assert!((z - Complex64::new(40.0, 0.0)).norm() < 1e-9);
            } else {
                assert!(z.norm() < 1e-9);
            }
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let shape = Shape::new(1, 8, 8).unwrap();
        let f = LatentField::from_fn(shape, |_, y, x| if y == 0 && x == 0 { 1.0 } else { 0.0 })
            .unwrap();
        for z in forward_spectrum(&f).coefficients() {
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dc_only_spectrum_inverts_to_constant() {
        let shape = Shape::new(1, 4, 4).unwrap();
        let mut coefficients = vec![Complex64::default(); 16];
        coefficients[2 * 4 + 2] = Complex64::new(16.0 * 0.75, 0.0);
        let f = inverse_spectrum(&Spectrum {
            shape,
            coefficients,
        })
        .unwrap();
        assert!(f.values().iter().all(|&v| (v - 0.75).abs() < 1e-12));
    }

    #[test]
    fn broken_conjugate_pair_is_rejected() {
        let f = field(1, 4, 4, 5);
        let mut s = forward_spectrum(&f);
        // Frequency (0, 1) sits at index (2, 3); its partner (0, -1) at (2, 1).
        s.coefficients_mut()[2 * 4 + 3] += Complex64::new(0.0, 1.0);
        assert!(matches!(
            inverse_spectrum(&s),
            Err(SpectralError::SymmetryViolation { channel: 0, .. })
        ));
    }

    #[test]
    fn odd_sizes_round_trip() {
        let f = field(2, 5, 7, 9);
        let back = inverse_spectrum(&forward_spectrum(&f)).unwrap();
        assert!(back.max_abs_diff(&f) < 1e-12);
        let s = forward_spectrum(&LatentField::filled(f.shape(), 1.0).unwrap());
        assert!((s.at_frequency(0, 0, 0).re - 35.0).abs() < 1e-9);
    }

    #[test]
    fn mask_limits() {
        let full = build_lowpass_mask(8, 8, 1.0, TaperSpec::new(0.5).unwrap()).unwrap();
        assert!(full.weights().iter().all(|&w| w == 1.0));
        let empty = build_lowpass_mask(8, 8, 0.0, TaperSpec::default()).unwrap();
        assert!(empty.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn half_passband_without_taper_is_five_by_five() {
        let m = build_lowpass_mask(8, 8, 0.5, TaperSpec::none()).unwrap();
        let ones = m.weights().iter().filter(|&&w| w == 1.0).count();
        let zeros = m.weights().iter().filter(|&&w| w == 0.0).count();
        assert_eq!((ones, zeros), (25, 39));
        for fy in -2..=2 {
            for fx in -2..=2 {
                assert_eq!(m.weight_at_frequency(fy, fx), 1.0);
            }
        }
    }

    #[test]
    fn tiny_rho_keeps_dc() {
        let m = build_lowpass_mask(8, 8, 0.01, TaperSpec::default()).unwrap();
        assert_eq!(m.weight_at_frequency(0, 0), 1.0);
        assert_eq!(m.weights().iter().filter(|&&w| w > 0.0).count(), 1);
    }

    #[test]
    fn taper_stays_inside_rectangle() {
        let m = build_lowpass_mask(64, 64, 0.6, TaperSpec::default()).unwrap();
        // half = 19, ramp = 2 bins
        assert_eq!(m.weight_at_frequency(0, 17), 1.0);
        let w18 = m.weight_at_frequency(0, 18);
        let w19 = m.weight_at_frequency(0, 19);
        assert!(w18 < 1.0 && w19 < w18 && w19 > 0.0);
        assert_eq!(m.weight_at_frequency(0, 20), 0.0);
    }

    #[test]
    fn rho_out_of_range() {
        assert_eq!(
            build_lowpass_mask(8, 8, 1.5, TaperSpec::none()),
            Err(SpectralError::RhoRange(1.5))
        );
        assert!(TaperSpec::new(0.6).is_err());
    }

    #[test]
    fn fuse_identity_and_limits() {
        let a = field(2, 16, 16, 1);
        let b = field(2, 16, 16, 2);
        let same = spec_fuse(&a, &a, 0.4, TaperSpec::default(), Clamp::On).unwrap();
        assert!(same.max_abs_diff(&a) < 1e-5);
        let lo = spec_fuse(&a, &b, 0.0, TaperSpec::none(), Clamp::Off).unwrap();
        assert!(lo.max_abs_diff(&a) < 1e-5);
        let hi = spec_fuse(&a, &b, 1.0, TaperSpec::default(), Clamp::Off).unwrap();
        assert!(hi.max_abs_diff(&b) < 1e-5);
    }

    #[test]
    fn fuse_rejects_shape_mismatch() {
        let a = field(1, 8, 8, 1);
        let b = field(1, 8, 4, 1);
        assert!(matches!(
            spec_fuse(&a, &b, 0.5, TaperSpec::none(), Clamp::Off),
            Err(SpectralError::Shape(_))
        ));
    }

    proptest! {
        #[test]
        fn round_trip_and_parseval(c in 1usize..3, h in 2usize..20, w in 2usize..20, seed in any::<u64>()) {
            let f = field(c, h, w, seed);
            let s = forward_spectrum(&f);
            let back = inverse_spectrum(&s).unwrap();
            prop_assert!(back.max_abs_diff(&f) < 1e-5);
            let e_x: f64 = f.values().iter().map(|v| v * v).sum();
            let e_k = s.energy() / (h * w) as f64;
            prop_assert!((e_x - e_k).abs() <= 1e-6 * e_x);
        }

        #[test]
        fn mask_is_symmetric_and_bounded(h in 2usize..40, w in 2usize..40, rho in 0.0f64..=1.0, t in 0.0f64..=0.5) {
            let m = build_lowpass_mask(h, w, rho, TaperSpec::new(t).unwrap()).unwrap();
            for iy in 0..h {
                for ix in 0..w {
                    let fy = iy as isize - (h / 2) as isize;
                    let fx = ix as isize - (w / 2) as isize;
                    let v = m.weight(iy, ix);
                    prop_assert!((0.0..=1.0).contains(&v));
                    prop_assert_eq!(v, m.weight_at_frequency(-fy, fx));
                    prop_assert_eq!(v, m.weight_at_frequency(fy, -fx));
                }
            }
        }

        #[test]
        fn passband_grows_with_rho(n in 2usize..40, r1 in 0.0f64..=1.0, r2 in 0.0f64..=1.0) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let a = build_lowpass_mask(n, n, lo, TaperSpec::none()).unwrap();
            let b = build_lowpass_mask(n, n, hi, TaperSpec::none()).unwrap();
            for (x, y) in a.weights().iter().zip(b.weights()) {
                prop_assert!(*x <= *y);
            }
        }

        #[test]
        fn clamp_contains_output(seed in any::<u64>(), rho in 0.0f64..=1.0) {
            let a = field(2, 8, 8, seed);
            let b = field(2, 8, 8, seed ^ 0x5555);
            let out = spec_fuse(&a, &b, rho, TaperSpec::default(), Clamp::On).unwrap();
            let stats = latent_stats(&b);
            for c in 0..2 {
                for &v in out.channel(c) {
                    prop_assert!(v >= stats.channels[c].min && v <= stats.channels[c].max);
                }
            }
        }
    }
}
