//! Periodic lattice, FFT plumbing and spectral calculus.
//!
//! Conventions: sites `x = -ℓ + i·h`, row-major storage with axis 0 slowest,
//! forward transform `ψ̂(k) = h^d Σ ψ(x) e^{-ik·x}` and its exact inverse.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64 as C64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Columns gathered per batch when transforming a strided axis.
const BLOCK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lattice {
    d: usize,
    n: usize,
    half_width: f64,
    h: f64,
}

impl Lattice {
    pub fn new(d: usize, n: usize, half_width: f64) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidLattice(format!("dimension {d} not in 1..=3")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidLattice(format!(
                "n = {n} must be a power of two and at least 8"
            )));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidLattice(format!("half width {half_width} must be positive")));
        }
        Ok(Self { d, n, half_width, h: 2.0 * half_width / n as f64 })
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn half_width(&self) -> f64 {
        self.half_width
    }
    pub fn spacing(&self) -> f64 {
        self.h
    }
    /// Number of sites, n^d.
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    /// Quadrature weight h^d.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.d as i32)
    }
    /// Box volume (2ℓ)^d.
    pub fn volume(&self) -> f64 {
        (2.0 * self.half_width).powi(self.d as i32)
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.h
    }

    /// Signed wavenumber index for array position `i`.
    pub fn freq_index(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    pub fn wavenumber(&self, i: usize) -> f64 {
        PI * self.freq_index(i) as f64 / self.half_width
    }

    /// Per-axis indices of a flat index (unused axes are 0).
    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        match self.d {
            1 => [idx, 0, 0],
            2 => [idx / n, idx % n, 0],
            _ => [idx / (n * n), (idx / n) % n, idx % n],
        }
    }

    pub fn flat_index(&self, m: [usize; 3]) -> usize {
        let n = self.n;
        match self.d {
            1 => m[0],
            2 => m[0] * n + m[1],
            _ => (m[0] * n + m[1]) * n + m[2],
        }
    }

    /// Physical position of site `idx` (unused components are 0).
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let m = self.multi_index(idx);
        let mut x = [0.0; 3];
        for a in 0..self.d {
            x[a] = self.coord(m[a]);
        }
        x
    }

    pub fn wavevector(&self, idx: usize) -> [f64; 3] {
        let m = self.multi_index(idx);
        let mut k = [0.0; 3];
        for a in 0..self.d {
            k[a] = self.wavenumber(m[a]);
        }
        k
    }

    /// Minimum-image representative of a coordinate difference.
    pub fn min_image(&self, dx: f64) -> f64 {
        let l2 = 2.0 * self.half_width;
        dx - l2 * (dx / l2).round()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    lattice: Lattice,
    values: Vec<C64>,
}

impl Field {
    pub fn new(lattice: Lattice, values: Vec<C64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::LengthMismatch { expected: lattice.len(), got: values.len() });
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("field construction".into()));
        }
        Ok(Self { lattice, values })
    }

    pub fn zeros(lattice: Lattice) -> Self {
        Self { lattice, values: vec![C64::new(0.0, 0.0); lattice.len()] }
    }

    /// Samples `f` at every site. Panics are avoided by mapping non-finite samples to an error.
    pub fn from_fn(lattice: Lattice, f: impl Fn([f64; 3]) -> C64) -> Result<Self> {
        let values = (0..lattice.len()).map(|i| f(lattice.position(i))).collect();
        Self::new(lattice, values)
    }

    pub fn from_real(lattice: Lattice, re: &[f64]) -> Result<Self> {
        Self::new(lattice, re.iter().map(|&r| C64::new(r, 0.0)).collect())
    }

    pub(crate) fn from_raw(lattice: Lattice, values: Vec<C64>) -> Self {
        debug_assert_eq!(values.len(), lattice.len());
        Self { lattice, values }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    pub fn values(&self) -> &[C64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }

    pub fn scaled(&self, a: C64) -> Field {
        Field::from_raw(self.lattice, self.values.iter().map(|z| z * a).collect())
    }

    /// `self + a·other`.
    pub fn add_scaled(&self, a: C64, other: &Field) -> Result<Field> {
        same_lattice(self, other)?;
        Ok(Field::from_raw(
            self.lattice,
            self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect(),
        ))
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.add_scaled(C64::new(-1.0, 0.0), other)
    }

    /// `∫ conj(self)·other`.
    pub fn inner(&self, other: &Field) -> Result<C64> {
        same_lattice(self, other)?;
        let s: C64 = self.values.iter().zip(&other.values).map(|(x, y)| x.conj() * y).sum();
        Ok(s * self.lattice.cell_volume())
    }

    /// L² norm with quadrature weight h^d.
    pub fn norm(&self) -> f64 {
        (self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.lattice.cell_volume()).sqrt()
    }
}

pub(crate) fn same_lattice(a: &Field, b: &Field) -> Result<()> {
    if a.lattice != b.lattice {
        return Err(Error::LatticeMismatch);
    }
    Ok(())
}

/// `h^d Σ f`.
pub fn integrate(f: &Field) -> C64 {
    f.values.iter().sum::<C64>() * f.lattice.cell_volume()
}

pub fn integrate_real(lat: &Lattice, f: &[f64]) -> f64 {
    f.iter().sum::<f64>() * lat.cell_volume()
}

/// FFT plans plus cached wavenumber tables for one lattice.
#[derive(Clone)]
pub struct SpectralPlan {
    lattice: Lattice,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    k_axis: Vec<f64>,
    k_deriv: Vec<f64>,
    k2: Vec<f64>,
    scratch_len: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPlan").field("lattice", &self.lattice).finish()
    }
}

impl SpectralPlan {
    pub fn new(lattice: Lattice) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(lattice.n);
        let inv = planner.plan_fft_inverse(lattice.n);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        let n = lattice.n;
        let k_axis: Vec<f64> = (0..n).map(|i| lattice.wavenumber(i)).collect();
        // first derivative drops the unpaired Nyquist mode so real fields stay real
        let k_deriv = (0..n).map(|i| if i == n / 2 { 0.0 } else { k_axis[i] }).collect();
        let k2 = (0..lattice.len())
            .map(|idx| {
                let m = lattice.multi_index(idx);
                (0..lattice.d).map(|a| k_axis[m[a]] * k_axis[m[a]]).sum()
            })
            .collect();
        let mut rplanner = RealFftPlanner::new();
        let r2c = rplanner.plan_fft_forward(n);
        let c2r = rplanner.plan_fft_inverse(n);
        Self { lattice, fwd, inv, k_axis, k_deriv, k2, scratch_len, r2c, c2r }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Per-axis wavenumbers πm/ℓ in FFT order.
    pub fn k_axis(&self) -> &[f64] {
        &self.k_axis
    }

    /// |k|² for every flat spectral index.
    pub fn k2(&self) -> &[f64] {
        &self.k2
    }

    /// Wavenumber along `axis` used for first derivatives (Nyquist zeroed).
    pub fn k_deriv(&self, idx: usize, axis: usize) -> f64 {
        self.k_deriv[self.lattice.multi_index(idx)[axis]]
    }

    /// Per-axis factors e^{sign·i k y_a}; the unpaired Nyquist mode keeps only
    /// the real part so that shifting a real field leaves it real.
    pub fn shift_phases(&self, y: [f64; 3], sign: f64) -> Vec<Vec<C64>> {
        let nyq = self.lattice.n / 2;
        (0..self.lattice.d)
            .map(|a| {
                self.k_axis
                    .iter()
                    .enumerate()
                    .map(|(i, k)| {
                        let e = C64::from_polar(1.0, sign * k * y[a]);
                        if i == nyq {
                            C64::new(e.re, 0.0)
                        } else {
                            e
                        }
                    })
                    .collect()
            })
            .collect()
    }

    fn transform(&self, data: &mut [C64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.lattice.n;
        let mut scratch = vec![C64::new(0.0, 0.0); self.scratch_len];
        // contiguous last axis: all rows in one call
        fft.process_with_scratch(data, &mut scratch);
        let mut buf = vec![C64::new(0.0, 0.0); BLOCK * n];
        match self.lattice.d {
            1 => {}
            2 => fft_strided(data, n, 1, n, fft, &mut buf, &mut scratch),
            _ => {
                fft_strided(data, n, n, n, fft, &mut buf, &mut scratch);
                fft_strided(data, n, 1, n * n, fft, &mut buf, &mut scratch);
            }
        }
    }

    /// Unnormalized DFT (no h^d factor, no coordinate-origin phase).
    pub fn forward_raw(&self, data: &mut [C64]) {
        debug_assert_eq!(data.len(), self.lattice.len());
        self.transform(data, &self.fwd);
    }

    /// Unnormalized inverse DFT; `inverse_raw(forward_raw(f)) = n^d f`.
    pub fn inverse_raw(&self, data: &mut [C64]) {
        debug_assert_eq!(data.len(), self.lattice.len());
        self.transform(data, &self.inv);
    }

    fn origin_sign(&self, idx: usize) -> f64 {
        // e^{ikℓ} = (-1)^m and m ≡ i (mod 2) because n is even
        let m = self.lattice.multi_index(idx);
        if (m[0] + m[1] + m[2]) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn forward(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        let mut v = f.values.clone();
        self.forward_raw(&mut v);
        let w = self.lattice.cell_volume();
        for (idx, z) in v.iter_mut().enumerate() {
            *z *= w * self.origin_sign(idx);
        }
        Ok(Field::from_raw(self.lattice, v))
    }

    pub fn inverse(&self, g: &Field) -> Result<Field> {
        self.check(g)?;
        let mut v = g.values.clone();
        let w = 1.0 / self.lattice.volume();
        for (idx, z) in v.iter_mut().enumerate() {
            *z *= w * self.origin_sign(idx);
        }
        self.inverse_raw(&mut v);
        Ok(Field::from_raw(self.lattice, v))
    }

    fn check(&self, f: &Field) -> Result<()> {
        if f.lattice != self.lattice {
            return Err(Error::LatticeMismatch);
        }
        Ok(())
    }

    /// Applies a diagonal Fourier multiplier `m(idx)` to `data` in place.
    pub fn apply_multiplier(&self, data: &mut [C64], m: impl Fn(usize) -> C64) {
        self.forward_raw(data);
        let s = 1.0 / self.lattice.len() as f64;
        for (idx, z) in data.iter_mut().enumerate() {
            *z *= m(idx) * s;
        }
        self.inverse_raw(data);
    }

    pub fn gradient(&self, f: &Field) -> Result<Vec<Field>> {
        self.check(f)?;
        let mut hat = f.values.clone();
        self.forward_raw(&mut hat);
        Ok(self.gradient_from_raw(&hat))
    }

    /// Gradient components from an already raw-transformed spectrum.
    pub fn gradient_from_raw(&self, hat: &[C64]) -> Vec<Field> {
        let s = 1.0 / self.lattice.len() as f64;
        (0..self.lattice.d)
            .map(|a| {
                let mut g: Vec<C64> = hat
                    .iter()
                    .enumerate()
                    .map(|(idx, z)| z * C64::new(0.0, self.k_deriv(idx, a) * s))
                    .collect();
                self.inverse_raw(&mut g);
                Field::from_raw(self.lattice, g)
            })
            .collect()
    }

    pub fn laplacian(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        let mut v = f.values.clone();
        self.apply_multiplier(&mut v, |idx| C64::new(-self.k2[idx], 0.0));
        Ok(Field::from_raw(self.lattice, v))
    }

    /// `Φ∗ρ` given the continuum-scaled real symbol `Φ̂` of the kernel.
    pub fn convolve(&self, symbol: &[f64], rho: &[f64]) -> Result<Vec<f64>> {
        let len = self.lattice.len();
        if symbol.len() != len {
            return Err(Error::LengthMismatch { expected: len, got: symbol.len() });
        }
        if rho.len() != len {
            return Err(Error::LengthMismatch { expected: len, got: rho.len() });
        }
        Ok(self.convolve_real(symbol, rho))
    }

    // Real-input path: half-spectrum along the contiguous axis, full
    // complex transforms along the others.
    fn convolve_real(&self, symbol: &[f64], rho: &[f64]) -> Vec<f64> {
        let n = self.lattice.n;
        let h = n / 2 + 1;
        let rows = self.lattice.len() / n;
        let mut spec = vec![C64::new(0.0, 0.0); rows * h];
        let mut line = vec![0.0; n];
        let mut rscratch = vec![
            C64::new(0.0, 0.0);
            self.r2c.get_scratch_len().max(self.c2r.get_scratch_len())
        ];
        for r in 0..rows {
            line.copy_from_slice(&rho[r * n..(r + 1) * n]);
            // lengths match by construction
            let _ = self.r2c.process_with_scratch(&mut line, &mut spec[r * h..(r + 1) * h], &mut rscratch);
        }
        let mut scratch = vec![C64::new(0.0, 0.0); self.scratch_len];
        let mut buf = vec![C64::new(0.0, 0.0); BLOCK * n];
        let strided = |spec: &mut [C64], fft: &Arc<dyn Fft<f64>>, buf: &mut [C64], scratch: &mut [C64]| {
            match self.lattice.d {
                1 => {}
                2 => fft_strided(spec, n, 1, h, fft, buf, scratch),
                _ => {
                    fft_strided(spec, n, n, h, fft, buf, scratch);
                    fft_strided(spec, n, 1, n * h, fft, buf, scratch);
                }
            }
        };
        strided(&mut spec, &self.fwd, &mut buf, &mut scratch);
        let s = 1.0 / self.lattice.len() as f64;
        for r in 0..rows {
            let srow = &symbol[r * n..r * n + h];
            for (z, m) in spec[r * h..(r + 1) * h].iter_mut().zip(srow) {
                *z *= m * s;
            }
        }
        strided(&mut spec, &self.inv, &mut buf, &mut scratch);
        let mut out = vec![0.0; self.lattice.len()];
        for r in 0..rows {
            let row = &mut spec[r * h..(r + 1) * h];
            // DC and Nyquist carry only rounding-level imaginary parts here
            row[0].im = 0.0;
            row[h - 1].im = 0.0;
            let _ = self.c2r.process_with_scratch(row, &mut out[r * n..(r + 1) * n], &mut rscratch);
        }
        out
    }

    /// Continuum-scaled symbol of a real-space kernel sampled at the lattice sites.
    pub fn symbol_of_samples(&self, samples: &[f64]) -> Vec<f64> {
        let f = Field::from_raw(
            self.lattice,
            samples.iter().map(|&r| C64::new(r, 0.0)).collect(),
        );
        // lattice is shared, so forward cannot fail
        self.forward(&f).map(|g| g.values.iter().map(|z| z.re).collect()).unwrap_or_default()
    }
}

/// FFT along a strided axis of a `[outer][n][inner]` array, gathering `BLOCK` columns at a time.
fn fft_strided(
    data: &mut [C64],
    n: usize,
    outer: usize,
    inner: usize,
    fft: &Arc<dyn Fft<f64>>,
    buf: &mut [C64],
    scratch: &mut [C64],
) {
    for o in 0..outer {
        let base = o * n * inner;
        let mut c0 = 0;
        while c0 < inner {
            let b = BLOCK.min(inner - c0);
            for i in 0..n {
                let row = base + i * inner + c0;
                for c in 0..b {
                    buf[c * n + i] = data[row + c];
                }
            }
            fft.process_with_scratch(&mut buf[..b * n], scratch);
            for i in 0..n {
                let row = base + i * inner + c0;
                for c in 0..b {
                    data[row + c] = buf[c * n + i];
                }
            }
            c0 += b;
        }
    }
}

const MAGIC: &[u8; 4] = b"HRTF";
const SNAPSHOT_VERSION: u32 = 1;

pub fn write_snapshot<W: Write>(mut w: W, f: &Field) -> Result<()> {
    let lat = f.lattice;
    w.write_all(MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(lat.d as u32).to_le_bytes())?;
    w.write_all(&(lat.n as u32).to_le_bytes())?;
    w.write_all(&lat.half_width.to_le_bytes())?;
    let mut bytes = Vec::with_capacity(16 * f.values.len());
    for z in &f.values {
        bytes.extend_from_slice(&z.re.to_le_bytes());
        bytes.extend_from_slice(&z.im.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<Field> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut u = [0u8; 4];
    r.read_exact(&mut u)?;
    let version = u32::from_le_bytes(u);
    if version != SNAPSHOT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    r.read_exact(&mut u)?;
    let d = u32::from_le_bytes(u) as usize;
    r.read_exact(&mut u)?;
    let n = u32::from_le_bytes(u) as usize;
    let mut f8 = [0u8; 8];
    r.read_exact(&mut f8)?;
    let half_width = f64::from_le_bytes(f8);
    let lat = Lattice::new(d, n, half_width)?;
    let mut bytes = vec![0u8; 16 * lat.len()];
    r.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            C64::new(re, im)
        })
        .collect();
    Field::new(lat, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(lat: Lattice, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..lat.len())
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        Field::new(lat, v).unwrap()
    }

    fn gaussian(lat: Lattice, a: f64) -> Field {
        Field::from_fn(lat, |x| C64::new((-a * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp(), 0.0))
            .unwrap()
    }

    #[test]
    fn lattice_validation() {
        assert!(Lattice::new(3, 12, 1.0).is_err());
        assert!(Lattice::new(3, 4, 1.0).is_err());
        assert!(Lattice::new(4, 8, 1.0).is_err());
        assert!(Lattice::new(1, 8, 0.0).is_err());
        let lat = Lattice::new(2, 16, 4.0).unwrap();
        assert_eq!(lat.spacing(), 0.5);
        assert_eq!(lat.wavenumber(8), -PI * 8.0 / 4.0);
        assert_eq!(lat.wavenumber(7), PI * 7.0 / 4.0);
    }

    #[test]
    fn field_rejects_nan() {
        let lat = Lattice::new(1, 8, 1.0).unwrap();
        let mut v = vec![C64::new(0.0, 0.0); 8];
        v[3] = C64::new(f64::NAN, 0.0);
        assert!(Field::new(lat, v).is_err());
        assert!(Field::new(lat, vec![C64::new(0.0, 0.0); 7]).is_err());
    }

    #[test]
    fn constant_transform_is_dc() {
        for d in 1..=3 {
            let lat = Lattice::new(d, 8, 1.5).unwrap();
            let plan = SpectralPlan::new(lat);
            let f = Field::from_fn(lat, |_| C64::new(1.0, 0.0)).unwrap();
            let g = plan.forward(&f).unwrap();
            assert!((g.values()[0].re - lat.volume()).abs() < 1e-12);
            assert!(g.values()[1..].iter().all(|z| z.norm() < 1e-12));
        }
    }

    #[test]
    fn plane_wave_is_single_mode() {
        let lat = Lattice::new(3, 8, 2.0).unwrap();
        let plan = SpectralPlan::new(lat);
        let target = lat.flat_index([1, 6, 3]);
        let k0 = lat.wavevector(target);
        let f = Field::from_fn(lat, |x| C64::from_polar(1.0, k0[0] * x[0] + k0[1] * x[1] + k0[2] * x[2]))
            .unwrap();
        let g = plan.forward(&f).unwrap();
        for (idx, z) in g.values().iter().enumerate() {
            if idx == target {
                assert!((z - C64::new(lat.volume(), 0.0)).norm() < 1e-10);
            } else {
                assert!(z.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn gaussian_transform_matches_continuum() {
        let lat = Lattice::new(1, 64, 8.0).unwrap();
        let plan = SpectralPlan::new(lat);
        let g = plan.forward(&gaussian(lat, 0.5)).unwrap();
        for (i, z) in g.values().iter().enumerate() {
            let k = lat.wavenumber(i);
            let exact = (2.0 * PI).sqrt() * (-k * k / 2.0).exp();
            assert!((z - C64::new(exact, 0.0)).norm() < 1e-8, "k={k}");
        }
    }

    #[test]
    fn inverse_of_gaussian_spectrum() {
        // ∫ e^{-k²} e^{ikx} dk / 2π = e^{-x²/4} / (2√π)
        let lat = Lattice::new(1, 64, 16.0).unwrap();
        let plan = SpectralPlan::new(lat);
        let spec = Field::from_raw(
            lat,
            (0..64).map(|i| C64::new((-lat.wavenumber(i).powi(2)).exp(), 0.0)).collect(),
        );
        let f = plan.inverse(&spec).unwrap();
        for (i, z) in f.values().iter().enumerate() {
            let x = lat.coord(i);
            let exact = (-x * x / 4.0).exp() / (2.0 * PI.sqrt());
            assert!((z - C64::new(exact, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn zero_spectrum_inverts_to_zero() {
        let lat = Lattice::new(2, 8, 1.0).unwrap();
        let plan = SpectralPlan::new(lat);
        let f = plan.inverse(&Field::zeros(lat)).unwrap();
        assert!(f.values().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn round_trip_and_parseval() {
        for d in 1..=3 {
            let lat = Lattice::new(d, 16, 3.0).unwrap();
            let plan = SpectralPlan::new(lat);
            let f = random_field(lat, d as u64);
            let g = plan.forward(&f).unwrap();
            let back = plan.inverse(&g).unwrap();
            let err = back.sub(&f).unwrap().norm() / f.norm();
            assert!(err < 1e-12);
            // spectral quadrature: (Δk)^d Σ |f̂|² with Δk = π/ℓ
            let dk = (PI / lat.half_width()).powi(d as i32);
            let spec: f64 = g.values().iter().map(|z| z.norm_sqr()).sum::<f64>() * dk;
            let real = f.norm().powi(2);
            assert!((real - spec / (2.0 * PI).powi(d as i32)).abs() < 1e-10 * real);
        }
    }

    #[test]
    fn integrate_cases() {
        let lat = Lattice::new(3, 32, 8.0).unwrap();
        let g = gaussian(lat, 1.0);
        assert!((integrate(&g).re - PI.powf(1.5)).abs() < 1e-10);
        let one = Field::from_fn(Lattice::new(2, 8, 1.0).unwrap(), |_| C64::new(1.0, 0.0)).unwrap();
        assert!((integrate(&one).re - 4.0).abs() < 1e-14);
        let lat1 = Lattice::new(1, 64, 8.0).unwrap();
        let odd = Field::from_fn(lat1, |x| C64::new(x[0] * (-x[0] * x[0]).exp(), 0.0)).unwrap();
        // the site at -ℓ has no mirror partner, but its weight is e^{-64}
        assert!(integrate(&odd).norm() < 1e-14);
    }

    #[test]
    fn derivatives() {
        let lat = Lattice::new(3, 16, 3.0).unwrap();
        let plan = SpectralPlan::new(lat);
        let idx = lat.flat_index([2, 15, 5]);
        let k0 = lat.wavevector(idx);
        let k2: f64 = k0.iter().map(|k| k * k).sum();
        let f = Field::from_fn(lat, |x| C64::from_polar(1.0, k0[0] * x[0] + k0[1] * x[1] + k0[2] * x[2]))
            .unwrap();
        let lap = plan.laplacian(&f).unwrap();
        assert!(lap.add_scaled(C64::new(k2, 0.0), &f).unwrap().norm() < 1e-10 * f.norm() * k2);

        let c = Field::from_fn(lat, |_| C64::new(2.5, -1.0)).unwrap();
        for g in plan.gradient(&c).unwrap() {
            assert!(g.norm() < 1e-12);
        }

        let lat = Lattice::new(3, 32, 8.0).unwrap();
        let plan = SpectralPlan::new(lat);
        let g = gaussian(lat, 0.5);
        let lap = plan.laplacian(&g).unwrap();
        for i in 0..lat.len() {
            let x = lat.position(i);
            let r2: f64 = x.iter().map(|v| v * v).sum();
            if r2 < 16.0 {
                let exact = (r2 - 3.0) * (-r2 / 2.0).exp();
                assert!((lap.values()[i].re - exact).abs() < 1e-8);
            }
        }
    }

    fn direct_convolution(lat: Lattice, kernel: impl Fn(f64) -> f64, rho: &[f64]) -> Vec<f64> {
        let w = lat.cell_volume();
        (0..lat.len())
            .map(|i| {
                let xi = lat.position(i);
                (0..lat.len())
                    .map(|j| {
                        let xj = lat.position(j);
                        let r2: f64 = (0..lat.d()).map(|a| lat.min_image(xi[a] - xj[a]).powi(2)).sum();
                        kernel(r2.sqrt()) * rho[j]
                    })
                    .sum::<f64>()
                    * w
            })
            .collect()
    }

    #[test]
    fn convolution_against_direct_sum() {
        let lat = Lattice::new(2, 16, 4.0).unwrap();
        let plan = SpectralPlan::new(lat);
        let kern = |r: f64| (-r * r / 1.5).exp();
        // sampled kernel: position i holds Φ(x_i), which the min-image oracle matches
        let samples: Vec<f64> = (0..lat.len())
            .map(|i| {
                let x = lat.position(i);
                kern((x[0] * x[0] + x[1] * x[1]).sqrt())
            })
            .collect();
        let symbol = plan.symbol_of_samples(&samples);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho: Vec<f64> = (0..lat.len()).map(|_| rng.random::<f64>()).collect();
        let fast = plan.convolve(&symbol, &rho).unwrap();
        let slow = direct_convolution(lat, kern, &rho);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-10);
        }
        // swap roles: convolving the kernel samples with ρ's symbol
        // (ρ̂ is complex, so go through the general multiplier)
        let rho_hat = plan.forward(&Field::from_real(lat, &rho).unwrap()).unwrap();
        let mut swapped: Vec<C64> = samples.iter().map(|&s| C64::new(s, 0.0)).collect();
        plan.apply_multiplier(&mut swapped, |idx| rho_hat.values()[idx]);
        for (a, b) in swapped.iter().zip(&slow) {
            assert!((a.re - b).abs() < 1e-10 && a.im.abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_convolution_adds_variances() {
        // (e^{-r²/a} ∗ e^{-r²/b})(x) = π a b /(a+b) e^{-x²/(a+b)} in d=2
        let lat = Lattice::new(2, 64, 10.0).unwrap();
        let plan = SpectralPlan::new(lat);
        let (a, b) = (1.0, 2.0);
        let ga: Vec<f64> = (0..lat.len()).map(|i| {
            let x = lat.position(i);
            (-(x[0] * x[0] + x[1] * x[1]) / a).exp()
        }).collect();
        let gb: Vec<f64> = (0..lat.len()).map(|i| {
            let x = lat.position(i);
            (-(x[0] * x[0] + x[1] * x[1]) / b).exp()
        }).collect();
        let out = plan.convolve(&plan.symbol_of_samples(&ga), &gb).unwrap();
        for i in 0..lat.len() {
            let x = lat.position(i);
            let r2 = x[0] * x[0] + x[1] * x[1];
            let exact = PI * a * b / (a + b) * (-r2 / (a + b)).exp();
            assert!((out[i] - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn delta_and_zero_symbols() {
        let lat = Lattice::new(3, 8, 2.0).unwrap();
        let plan = SpectralPlan::new(lat);
        let rho = random_field(lat, 9).density();
        let same = plan.convolve(&vec![1.0; lat.len()], &rho).unwrap();
        assert!(same.iter().zip(&rho).all(|(a, b)| (a - b).abs() < 1e-13));
        let zero = plan.convolve(&vec![0.0; lat.len()], &rho).unwrap();
        assert!(zero.iter().all(|v| v.abs() < 1e-15));
        assert!(plan.convolve(&[1.0; 3], &rho).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let lat = Lattice::new(2, 8, 1.25).unwrap();
        let f = random_field(lat, 11);
        let mut bytes = Vec::new();
        write_snapshot(&mut bytes, &f).unwrap();
        assert_eq!(&bytes[..4], b"HRTF");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 4 + 8 + 16 * 64);
        let g = read_snapshot(bytes.as_slice()).unwrap();
        assert_eq!(f, g);
        bytes[0] = b'X';
        assert!(read_snapshot(bytes.as_slice()).is_err());
    }
}
