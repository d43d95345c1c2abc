//! Exact N-boson dynamics on a short periodic chain, for checking the
//! mean-field limit against the lattice Hartree equation.
//!
//! With site amplitudes c_i = √h·ψ(x_i) the lattice Hartree equation reads
//! i∂ₜc = t c + λV c + ν(Σⱼ Φᵢⱼ|cⱼ|²) c, where t is the nearest-neighbour
//! hopping matrix (2/h² on the diagonal, −1/h² to each neighbour). Its
//! second-quantized counterpart is
//!
//! ```text
//! H_N = Σᵢⱼ tᵢⱼ a†ᵢaⱼ + Σᵢ λVᵢ nᵢ + (κ/2) Σᵢⱼ Φᵢⱼ a†ᵢa†ⱼaⱼaᵢ,   κ = ν/N,
//! ```
//!
//! restricted to the N-particle sector. The Hartree side runs through
//! [`Model`] with the finite-difference kinetic symbol, so the chain length
//! must then be a valid lattice size.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Lattice};
use crate::ground_state::{minimize, MinimizeConfig};
use crate::lanczos::{lowest_eigenpairs, LanczosConfig};
use crate::model::Model;
use crate::potentials::{ExternalPotential, KineticKind, TwoBodyKind, TwoBodyPotential};
use crate::propagator;

/// Largest Fock-space dimension we are willing to build.
pub const MAX_DIMENSION: u64 = 2_000_000;

/// Above this dimension dense oracles refuse to run.
pub const MAX_DENSE: usize = 2000;

/// Number of ways to put `r` bosons on `sites` sites, C(r+sites−1, r), saturating.
pub fn fock_dimension(sites: usize, r: usize) -> u64 {
    if sites == 0 {
        return u64::from(r == 0);
    }
    // C(r + s − 1, s − 1) built up multiplicatively; exact while it fits
    let k = (sites - 1).min(r) as u128;
    let n = (r + sites - 1) as u128;
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) / (i + 1);
        if c > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    c as u64
}

/// Occupation-number basis of the N-boson sector, in ascending lexicographic
/// order of (n₁,…,n_M): the first state is (0,…,0,N), the last (N,0,…,0).
#[derive(Clone, Debug)]
pub struct FockBasis {
    sites: usize,
    particles: usize,
    occ: Vec<u8>,
    /// ways[s][r] = number of states of r bosons on s sites.
    ways: Vec<Vec<usize>>,
}

impl FockBasis {
    pub fn new(sites: usize, particles: usize) -> Result<Self> {
        if sites == 0 {
            return Err(Error::InvalidParameter("a chain needs at least one site".into()));
        }
        if particles == 0 || particles > u8::MAX as usize {
            return Err(Error::InvalidParameter(format!("particle number {particles} outside 1..=255")));
        }
        let dim = fock_dimension(sites, particles);
        if dim > MAX_DIMENSION {
            return Err(Error::DimensionGuard(format!(
                "C({}, {particles}) = {dim} exceeds {MAX_DIMENSION}",
                particles + sites - 1
            )));
        }
        let ways: Vec<Vec<usize>> =
            (0..=sites).map(|s| (0..=particles).map(|r| fock_dimension(s, r) as usize).collect()).collect();
        let dim = dim as usize;
        let mut occ = Vec::with_capacity(dim * sites);
        let mut cur = vec![0u8; sites];
        fill(&mut cur, 0, particles, &mut occ);
        debug_assert_eq!(occ.len(), dim * sites);
        Ok(Self { sites, particles, occ, ways })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.occ.len() / self.sites
    }

    pub fn state(&self, idx: usize) -> &[u8] {
        &self.occ[idx * self.sites..(idx + 1) * self.sites]
    }

    /// Position of an occupation vector in the basis, `None` if it is not in this sector.
    pub fn index_of(&self, n: &[u8]) -> Option<usize> {
        if n.len() != self.sites || n.iter().map(|&x| x as usize).sum::<usize>() != self.particles {
            return None;
        }
        let mut rank = 0;
        let mut left = self.particles;
        for (i, &ni) in n.iter().enumerate().take(self.sites - 1) {
            let rest = self.sites - i - 1;
            for v in 0..ni as usize {
                rank += self.ways[rest][left - v];
            }
            left -= ni as usize;
        }
        Some(rank)
    }

    // index of the state with one boson moved from site `from` to site `to`
    fn hop_index(&self, idx: usize, from: usize, to: usize, buf: &mut Vec<u8>) -> usize {
        buf.clear();
        buf.extend_from_slice(self.state(idx));
        buf[from] -= 1;
        buf[to] += 1;
        // the moved state conserves N by construction
        self.index_of(buf).unwrap_or(usize::MAX)
    }
}

fn fill(cur: &mut [u8], i: usize, left: usize, out: &mut Vec<u8>) {
    if i + 1 == cur.len() {
        cur[i] = left as u8;
        out.extend_from_slice(cur);
        return;
    }
    for v in 0..=left {
        cur[i] = v as u8;
        fill(cur, i + 1, left - v, out);
    }
    cur[i] = 0;
}

/// One-particle data of a periodic chain of M sites at x_i = −ℓ + i·h, h = 2ℓ/M.
#[derive(Clone, Debug)]
pub struct Chain {
    sites: usize,
    half_width: f64,
    external: ExternalPotential,
    twobody: TwoBodyPotential,
    /// λV(x_i)
    onsite: Vec<f64>,
    /// Signed kernel Φ(x_i − x_j), minimum image, truncated at |r| ≥ ℓ like the sampled lattice kernel.
    pair: DMatrix<f64>,
}

impl Chain {
    pub fn new(sites: usize, half_width: f64, external: ExternalPotential, twobody: TwoBodyPotential) -> Result<Self> {
        if sites < 2 {
            return Err(Error::InvalidParameter(format!("chain of {sites} sites; need at least 2")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidParameter(format!("half width {half_width} must be positive")));
        }
        twobody.validate()?;
        let h = 2.0 * half_width / sites as f64;
        let x = |i: usize| -half_width + i as f64 * h;
        let onsite = (0..sites).map(|i| external.lambda * external.kind.eval([x(i), 0.0, 0.0])).collect();
        let s = twobody.sign.value();
        let cut = half_width * (1.0 - 1e-12);
        let pair = if !twobody.is_interacting() {
            DMatrix::zeros(sites, sites)
        } else if twobody.kind == TwoBodyKind::Delta {
            // lattice delta: Σⱼ Φᵢⱼ ρⱼ h = ρᵢ
            DMatrix::from_diagonal_element(sites, sites, s / h)
        } else {
            let r0 = if twobody.eval(0.0).is_some_and(f64::is_finite) { 0.0 } else { h / 2.0 };
            DMatrix::from_fn(sites, sites, |i, j| {
                let l2 = 2.0 * half_width;
                let d = (i as f64 - j as f64) * h;
                let r = (d - l2 * (d / l2).round()).abs();
                if r >= cut {
                    0.0
                } else {
                    twobody.eval(if r < 0.5 * h { r0 } else { r }).unwrap_or(0.0)
                }
            })
        };
        Ok(Self { sites, half_width, external, twobody, onsite, pair })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.sites as f64
    }

    /// ν = κN.
    pub fn nu(&self) -> f64 {
        self.twobody.nu
    }

    pub fn pair(&self) -> &DMatrix<f64> {
        &self.pair
    }

    pub fn onsite(&self) -> &[f64] {
        &self.onsite
    }

    /// Nonzero hopping amplitudes tᵢⱼ, i ≠ j, with coincident neighbours (M = 2) merged.
    fn hops(&self) -> Vec<(usize, usize, f64)> {
        let h2 = self.spacing().powi(2);
        let m = self.sites;
        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, (i + 1) % m)] -= 1.0 / h2;
            t[((i + 1) % m, i)] -= 1.0 / h2;
        }
        let mut out = Vec::new();
        for i in 0..m {
            for j in 0..m {
                if i != j && t[(i, j)] != 0.0 {
                    out.push((i, j, t[(i, j)]));
                }
            }
        }
        out
    }

    /// −Δ_h + λV as an M×M matrix.
    pub fn one_particle(&self) -> DMatrix<f64> {
        let h2 = self.spacing().powi(2);
        let mut a = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.sites,
            self.onsite.iter().map(|v| v + 2.0 / h2),
        ));
        for (i, j, t) in self.hops() {
            a[(i, j)] += t;
        }
        a
    }

    /// −Δ_h + λV + ν Σⱼ Φᵢⱼ|cⱼ|² for unit-normalized site amplitudes c.
    pub fn effective_hamiltonian(&self, c: &[C64]) -> Result<DMatrix<f64>> {
        self.check_len(c.len())?;
        let rho = nalgebra::DVector::from_iterator(self.sites, c.iter().map(|z| z.norm_sqr()));
        let w = &self.pair * rho * self.nu();
        let mut a = self.one_particle();
        for i in 0..self.sites {
            a[(i, i)] += w[i];
        }
        Ok(a)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.sites {
            return Err(Error::LengthMismatch { expected: self.sites, got: len });
        }
        Ok(())
    }

    /// The matching one-body model on the 1D lattice (finite-difference kinetic symbol).
    pub fn hartree_model(&self) -> Result<Model> {
        let lat = Lattice::new(1, self.sites, self.half_width)
            .map_err(|e| Error::Inapplicable(format!("no Hartree lattice for this chain: {e}")))?;
        Model::new(lat, self.external.clone(), self.twobody.clone(), KineticKind::FiniteDifference)
    }

    /// Site amplitudes c_i = √h ψ(x_i) of a lattice field.
    pub fn amplitudes(&self, psi: &Field) -> Vec<C64> {
        let s = self.spacing().sqrt();
        psi.values().iter().map(|z| z * s).collect()
    }

    pub fn field(&self, c: &[C64]) -> Result<Field> {
        let model_lat = Lattice::new(1, self.sites, self.half_width)?;
        let s = 1.0 / self.spacing().sqrt();
        Field::new(model_lat, c.iter().map(|z| z * s).collect())
    }
}

/// Sparse (CSR) Fock-space Hamiltonian; real symmetric.
#[derive(Clone, Debug)]
pub struct ManyBodyHamiltonian {
    basis: FockBasis,
    kappa: f64,
    row_start: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

/// H_N for `particles` bosons on `chain`, with κ = ν/N.
pub fn build_hamiltonian(chain: &Chain, particles: usize) -> Result<ManyBodyHamiltonian> {
    let basis = FockBasis::new(chain.sites, particles)?;
    let kappa = chain.nu() / particles as f64;
    let m = chain.sites;
    let h2 = chain.spacing().powi(2);
    let hops = chain.hops();
    let pair = &chain.pair;
    let dim = basis.dim();
    let mut row_start = Vec::with_capacity(dim + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut buf = Vec::with_capacity(m);
    let mut row: Vec<(u32, f64)> = Vec::new();
    row_start.push(0);
    for a in 0..dim {
        let n = basis.state(a);
        let mut diag = 0.0;
        for i in 0..m {
            let ni = n[i] as f64;
            if ni == 0.0 {
                continue;
            }
            diag += (2.0 / h2 + chain.onsite[i]) * ni;
            if kappa != 0.0 {
                // a†ᵢa†ⱼaⱼaᵢ = nᵢnⱼ − δᵢⱼnᵢ
                let mut s = -pair[(i, i)] * ni;
                for j in 0..m {
                    s += pair[(i, j)] * ni * n[j] as f64;
                }
                diag += 0.5 * kappa * s;
            }
        }
        row.clear();
        row.push((a as u32, diag));
        for &(i, j, t) in &hops {
            // a†ᵢaⱼ: one boson from j to i
            if n[j] == 0 {
                continue;
            }
            let amp = t * ((n[j] as f64) * (n[i] as f64 + 1.0)).sqrt();
            let b = basis.hop_index(a, j, i, &mut buf);
            row.push((b as u32, amp));
        }
        row.sort_by_key(|e| e.0);
        let mut k = 0;
        while k < row.len() {
            let (c, mut v) = row[k];
            k += 1;
            while k < row.len() && row[k].0 == c {
                v += row[k].1;
                k += 1;
            }
            cols.push(c);
            vals.push(v);
        }
        row_start.push(cols.len());
    }
    Ok(ManyBodyHamiltonian { basis, kappa, row_start, cols, vals })
}

impl ManyBodyHamiltonian {
    pub fn basis(&self) -> &FockBasis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn entry(&self, a: usize, b: usize) -> f64 {
        let (lo, hi) = (self.row_start[a], self.row_start[a + 1]);
        match self.cols[lo..hi].binary_search(&(b as u32)) {
            Ok(k) => self.vals[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|a| {
                (self.row_start[a]..self.row_start[a + 1]).map(|k| self.vals[k] * x[self.cols[k] as usize]).sum()
            })
            .collect()
    }

    pub fn apply_complex(&self, x: &[C64]) -> Vec<C64> {
        (0..self.dim())
            .map(|a| {
                (self.row_start[a]..self.row_start[a + 1])
                    .map(|k| x[self.cols[k] as usize] * self.vals[k])
                    .sum()
            })
            .collect()
    }

    /// max |H_ab − H_ba| over stored entries.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.dim() {
            for k in self.row_start[a]..self.row_start[a + 1] {
                let b = self.cols[k] as usize;
                worst = worst.max((self.vals[k] - self.entry(b, a)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let dim = self.dim();
        if dim > MAX_DENSE {
            return Err(Error::DimensionGuard(format!("dense matrix of dimension {dim} > {MAX_DENSE}")));
        }
        let mut d = DMatrix::zeros(dim, dim);
        for a in 0..dim {
            for k in self.row_start[a]..self.row_start[a + 1] {
                d[(a, self.cols[k] as usize)] = self.vals[k];
            }
        }
        Ok(d)
    }

    /// ⟨Ψ, HΨ⟩ for a normalized state.
    pub fn expectation(&self, psi: &[C64]) -> f64 {
        let hp = self.apply_complex(psi);
        psi.iter().zip(&hp).map(|(a, b)| (a.conj() * b).re).sum()
    }

    /// The `count` lowest eigenvalues: dense up to [`MAX_DENSE`], Lanczos beyond.
    pub fn low_spectrum(&self, count: usize, cfg: &LanczosConfig) -> Result<Vec<f64>> {
        let count = count.min(self.dim());
        if count == 0 {
            return Err(Error::InvalidParameter("need at least one eigenvalue".into()));
        }
        if self.dim() <= MAX_DENSE {
            let mut ev: Vec<f64> = SymmetricEigen::new(self.to_dense()?).eigenvalues.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            ev.truncate(count);
            return Ok(ev);
        }
        let mut op = |x: &[f64]| self.apply(x);
        Ok(lowest_eigenpairs(&mut op, self.dim(), count, cfg)?.into_iter().map(|p| p.0).collect())
    }

    /// E⁰_N = inf σ(H_N) by Lanczos.
    pub fn ground_energy(&self, cfg: &LanczosConfig) -> Result<f64> {
        let mut op = |x: &[f64]| self.apply(x);
        Ok(lowest_eigenpairs(&mut op, self.dim(), 1, cfg)?[0].0)
    }
}

/// The product state Π φ(x_j), i.e. amplitudes √(N!/Πnᵢ!)·Πφᵢ^{nᵢ}.
pub fn coherent_state(basis: &FockBasis, phi: &[C64]) -> Result<Vec<C64>> {
    if phi.len() != basis.sites {
        return Err(Error::LengthMismatch { expected: basis.sites, got: phi.len() });
    }
    let norm: f64 = phi.iter().map(|z| z.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter(format!("one-particle state has norm² {norm}, not 1")));
    }
    let n = basis.particles;
    let ln_fact: Vec<f64> = (0..=n).scan(0.0, |s, k| {
        if k > 0 {
            *s += (k as f64).ln();
        }
        Some(*s)
    })
    .collect();
    Ok((0..basis.dim())
        .map(|a| {
            let occ = basis.state(a);
            let ln_w = ln_fact[n] - occ.iter().map(|&k| ln_fact[k as usize]).sum::<f64>();
            let mut z = C64::new((0.5 * ln_w).exp(), 0.0);
            for (p, &k) in phi.iter().zip(occ) {
                if k > 0 {
                    z *= p.powu(k as u32);
                }
            }
            z
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrylovConfig {
    /// Largest Krylov space per substep.
    pub max_dim: usize,
    /// Bound on the accumulated truncation error estimate, relative to ‖ψ‖.
    pub tol: f64,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self { max_dim: 40, tol: 1e-12 }
    }
}

fn cnorm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn cdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// e^{−iHt}ψ by Lanczos–Krylov substeps; each substep is shrunk until the
/// a-posteriori error estimate β_m|[e^{−iTτ}e₁]_m| fits its share of the tolerance.
pub fn evolve_exact(h: &ManyBodyHamiltonian, psi: &[C64], t: f64, cfg: &KrylovConfig) -> Result<Vec<C64>> {
    if psi.len() != h.dim() {
        return Err(Error::LengthMismatch { expected: h.dim(), got: psi.len() });
    }
    if !(cfg.max_dim >= 2 && cfg.tol > 0.0) {
        return Err(Error::InvalidParameter("Krylov space must be at least 2 and tol positive".into()));
    }
    if !t.is_finite() {
        return Err(Error::InvalidParameter(format!("time {t} is not finite")));
    }
    let total = t.abs();
    let sign = t.signum();
    let mut w = psi.to_vec();
    let mut done = 0.0;
    let mut tau = total;
    while done < total {
        let beta0 = cnorm(&w);
        if beta0 == 0.0 {
            return Ok(w);
        }
        let mut basis: Vec<Vec<C64>> = vec![w.iter().map(|z| z / beta0).collect()];
        let (mut alpha, mut beta) = (Vec::new(), Vec::new());
        let tail;
        let mmax = cfg.max_dim.min(h.dim());
        loop {
            let mut u = h.apply_complex(basis.last().unwrap_or(&w));
            let a = cdot(basis.last().unwrap_or(&w), &u).re;
            alpha.push(a);
            for _ in 0..2 {
                for q in &basis {
                    let c = cdot(q, &u);
                    for (ui, qi) in u.iter_mut().zip(q) {
                        *ui -= c * qi;
                    }
                }
            }
            let b = cnorm(&u);
            let scale = alpha.iter().fold(1.0f64, |s, x| s.max(x.abs()));
            if b <= 1e-13 * scale {
                tail = 0.0;
                break;
            }
            if basis.len() == mmax {
                tail = b;
                break;
            }
            beta.push(b);
            basis.push(u.into_iter().map(|z| z / b).collect());
        }
        let m = basis.len();
        let tri = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(tri);
        let coeffs = |tau: f64| -> Vec<C64> {
            let phase: Vec<C64> = (0..m)
                .map(|k| C64::from_polar(1.0, -sign * eig.eigenvalues[k] * tau) * eig.eigenvectors[(0, k)])
                .collect();
            (0..m).map(|j| (0..m).map(|k| phase[k] * eig.eigenvectors[(j, k)]).sum()).collect()
        };
        tau = tau.min(total - done);
        let y = loop {
            let y = coeffs(tau);
            let err = tail * y[m - 1].norm();
            if err <= cfg.tol * (tau / total) || tail == 0.0 {
                break y;
            }
            tau /= 2.0;
            if tau < total * 1e-12 {
                return Err(Error::NoConvergence(format!("Krylov step collapsed at t = {done}")));
            }
        };
        w = vec![C64::new(0.0, 0.0); h.dim()];
        for (q, c) in basis.iter().zip(&y) {
            let c = c * beta0;
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi += c * qi;
            }
        }
        done += tau;
        if total - done <= 1e-14 * total {
            break;
        }
        tau *= 2.0;
    }
    Ok(w)
}

/// e^{−iHt}ψ from the full eigendecomposition of a dense symmetric H (oracle).
pub fn dense_evolve(h: &DMatrix<f64>, psi: &[C64], t: f64) -> Result<Vec<C64>> {
    if h.nrows() > MAX_DENSE {
        return Err(Error::DimensionGuard(format!("dense exponential of dimension {} > {MAX_DENSE}", h.nrows())));
    }
    if psi.len() != h.nrows() {
        return Err(Error::LengthMismatch { expected: h.nrows(), got: psi.len() });
    }
    let eig = SymmetricEigen::new(h.clone());
    let u = eig.eigenvectors.map(|x| C64::new(x, 0.0));
    let v = nalgebra::DVector::from_column_slice(psi);
    let mut c = u.adjoint() * v;
    for (k, ck) in c.iter_mut().enumerate() {
        *ck *= C64::from_polar(1.0, -eig.eigenvalues[k] * t);
    }
    Ok((u * c).as_slice().to_vec())
}

/// ⟨nᵢ⟩ for every site.
pub fn mean_occupations(basis: &FockBasis, psi: &[C64]) -> Vec<f64> {
    let mut out = vec![0.0; basis.sites];
    for (a, z) in psi.iter().enumerate() {
        let p = z.norm_sqr();
        for (o, &k) in out.iter_mut().zip(basis.state(a)) {
            *o += p * k as f64;
        }
    }
    out
}

/// One-particle reduced density matrix γ_xy = ⟨a†_y a_x⟩/N.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedDensity {
    pub gamma: DMatrix<C64>,
}

impl ReducedDensity {
    pub fn trace(&self) -> f64 {
        self.gamma.trace().re
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (&self.gamma - self.gamma.adjoint()).iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.gamma.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// ‖γ − |φ⟩⟨φ|‖₁.
    pub fn trace_distance_to(&self, phi: &[C64]) -> Result<f64> {
        let m = self.gamma.nrows();
        if phi.len() != m {
            return Err(Error::LengthMismatch { expected: m, got: phi.len() });
        }
        let p = DMatrix::from_fn(m, m, |x, y| phi[x] * phi[y].conj());
        let d = &self.gamma - p;
        Ok(SymmetricEigen::new(d).eigenvalues.iter().map(|x| x.abs()).sum())
    }
}

pub fn reduced_density(basis: &FockBasis, psi: &[C64]) -> Result<ReducedDensity> {
    if psi.len() != basis.dim() {
        return Err(Error::LengthMismatch { expected: basis.dim(), got: psi.len() });
    }
    let m = basis.sites;
    let mut g = DMatrix::<C64>::zeros(m, m);
    let mut buf = Vec::with_capacity(m);
    for (a, &za) in psi.iter().enumerate() {
        if za == C64::new(0.0, 0.0) {
            continue;
        }
        let n = basis.state(a);
        for x in 0..m {
            if n[x] == 0 {
                continue;
            }
            g[(x, x)] += za.norm_sqr() * n[x] as f64;
            for y in 0..m {
                if y == x {
                    continue;
                }
                // a†_y a_x |n⟩ = √(n_x(n_y+1)) |n − e_x + e_y⟩
                let b = basis.hop_index(a, x, y, &mut buf);
                let c = ((n[x] as f64) * (n[y] as f64 + 1.0)).sqrt();
                g[(x, y)] += za * psi[b].conj() * c;
            }
        }
    }
    Ok(ReducedDensity { gamma: g / C64::new(basis.particles as f64, 0.0) })
}

/// Site amplitudes of ψ(t) under the lattice Hartree flow, by Strang steps of size ≤ `dt`.
pub fn hartree_evolve(chain: &Chain, c0: &[C64], t: f64, dt: f64) -> Result<Vec<C64>> {
    chain.check_len(c0.len())?;
    if !(dt > 0.0 && t >= 0.0) {
        return Err(Error::InvalidParameter(format!("need dt > 0 and t ≥ 0, got dt = {dt}, t = {t}")));
    }
    let model = chain.hartree_model()?;
    let mut psi = chain.field(c0)?;
    let steps = (t / dt).ceil() as usize;
    let dt = if steps > 0 { t / steps as f64 } else { 0.0 };
    for _ in 0..steps {
        psi = propagator::step(&model, &psi, dt)?;
    }
    Ok(chain.amplitudes(&psi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldConfig {
    /// Strang step for the Hartree reference.
    pub hartree_dt: f64,
    pub krylov: KrylovConfig,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        Self { hartree_dt: 1e-4, krylov: KrylovConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldRow {
    pub particles: usize,
    pub dim: usize,
    /// ‖γ_N(t) − |ψ(t)⟩⟨ψ(t)|‖₁
    pub deviation: f64,
    /// |Σ⟨nᵢ⟩ − N| at time t.
    pub number_drift: f64,
}

/// δ_N at time t for each N, starting from the product state of `c0`.
pub fn mean_field_deviation(
    chain: &Chain,
    c0: &[C64],
    t: f64,
    particles: &[usize],
    cfg: &MeanFieldConfig,
) -> Result<Vec<MeanFieldRow>> {
    let reference = hartree_evolve(chain, c0, t, cfg.hartree_dt)?;
    particles
        .iter()
        .map(|&n| {
            let h = build_hamiltonian(chain, n)?;
            let psi0 = coherent_state(h.basis(), c0)?;
            let psi = evolve_exact(&h, &psi0, t, &cfg.krylov)?;
            let gamma = reduced_density(h.basis(), &psi)?;
            let number: f64 = mean_occupations(h.basis(), &psi).iter().sum();
            Ok(MeanFieldRow {
                particles: n,
                dim: h.dim(),
                deviation: gamma.trace_distance_to(&reference)?,
                number_drift: (number - n as f64).abs(),
            })
        })
        .collect()
}

/// Lattice Hartree ground state on the chain: e₀ = 2E(1) and its site amplitudes.
#[derive(Clone, Debug)]
pub struct ChainGroundState {
    pub e0: f64,
    /// −ω, the lowest eigenvalue of the effective Hamiltonian.
    pub mu: f64,
    pub amplitudes: Vec<C64>,
}

pub fn chain_ground_state(chain: &Chain, cfg: &MinimizeConfig) -> Result<ChainGroundState> {
    let model = chain.hartree_model()?;
    let gs = minimize(&model, 1.0, cfg)?;
    Ok(ChainGroundState { e0: 2.0 * gs.energy, mu: -gs.omega, amplitudes: chain.amplitudes(&gs.q) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub particles: usize,
    pub dim: usize,
    pub ground_energy: f64,
    /// E⁰_N/N
    pub per_particle: f64,
    /// |E⁰_N/N − e₀|
    pub gap: f64,
    /// ⟨Ψ, H_NΨ⟩/N for the product of Hartree minimizers, an upper bound on E⁰_N/N.
    pub trial: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub e0: f64,
    pub rows: Vec<ScalingRow>,
}

pub fn ground_energy_scaling(
    chain: &Chain,
    particles: &[usize],
    mcfg: &MinimizeConfig,
    lcfg: &LanczosConfig,
) -> Result<ScalingTable> {
    let gs = chain_ground_state(chain, mcfg)?;
    let rows = particles
        .iter()
        .map(|&n| {
            let h = build_hamiltonian(chain, n)?;
            let e = h.ground_energy(lcfg)?;
            let trial = h.expectation(&coherent_state(h.basis(), &gs.amplitudes)?) / n as f64;
            let per = e / n as f64;
            Ok(ScalingRow { particles: n, dim: h.dim(), ground_energy: e, per_particle: per, gap: (per - gs.e0).abs(), trial })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalingTable { e0: gs.e0, rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub exact: f64,
    pub predicted: f64,
    pub gap: f64,
    /// Lies below the threshold Σ_N = E⁰_{N−1}.
    pub below_threshold: bool,
}

/// Exploratory comparison of the low N-body spectrum with
/// E⁰_{N−j} + Σ_{ℓ≤j}(ε_{iℓ} − ε₀ + e₀) over multisets of excited levels iℓ ≥ 1
/// of H_eff = −Δ_h + λV + νΦ∗|Q|². No accuracy claim is attached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeTable {
    pub particles: usize,
    pub threshold: f64,
    pub e0: f64,
    /// Eigenvalues ε_i of H_eff, ascending.
    pub levels: Vec<f64>,
    /// E⁰_k for k = 0..=N.
    pub ground_energies: Vec<f64>,
    pub rows: Vec<ProbeRow>,
}

pub fn conjecture_probe(
    chain: &Chain,
    particles: usize,
    count: usize,
    mcfg: &MinimizeConfig,
    lcfg: &LanczosConfig,
) -> Result<ProbeTable> {
    if particles == 0 || count == 0 {
        return Err(Error::InvalidParameter("need N ≥ 1 and at least one level".into()));
    }
    let gs = chain_ground_state(chain, mcfg)?;
    let mut levels: Vec<f64> =
        SymmetricEigen::new(chain.effective_hamiltonian(&gs.amplitudes)?).eigenvalues.iter().copied().collect();
    levels.sort_by(f64::total_cmp);
    let mut ground = vec![0.0];
    for k in 1..particles {
        ground.push(build_hamiltonian(chain, k)?.ground_energy(lcfg)?);
    }
    let full = build_hamiltonian(chain, particles)?;
    let exact = full.low_spectrum(count, lcfg)?;
    ground.push(exact[0]);
    let threshold = ground[particles - 1];

    let shift = gs.e0 - levels[0];
    let mut predicted = Vec::new();
    let mut pick = Vec::new();
    for j in 0..=particles {
        multisets(&levels[1..], j, 0, &mut pick, &mut |s: f64| {
            predicted.push(ground[particles - j] + s + j as f64 * shift)
        });
    }
    predicted.sort_by(f64::total_cmp);
    let rows = exact
        .iter()
        .zip(&predicted)
        .map(|(&e, &p)| ProbeRow { exact: e, predicted: p, gap: (e - p).abs(), below_threshold: e < threshold })
        .collect();
    Ok(ProbeTable { particles, threshold, e0: gs.e0, levels, ground_energies: ground, rows })
}

// calls `f` with Σ of every size-`j` multiset drawn from levels[from..]
fn multisets(levels: &[f64], j: usize, from: usize, pick: &mut Vec<f64>, f: &mut dyn FnMut(f64)) {
    if pick.len() == j {
        f(pick.iter().sum());
        return;
    }
    for k in from..levels.len() {
        pick.push(levels[k]);
        multisets(levels, j, k, pick, f);
        pick.pop();
    }
}

/// Two-particle Hamiltonian built in first quantization on ℂ^M ⊗ ℂ^M,
/// H₁⊗1 + 1⊗H₁ + κΦ(x₁ − x₂), restricted to the symmetric subspace
/// (orthonormal basis e_i⊗e_i and (e_i⊗e_j + e_j⊗e_i)/√2, i < j).
pub fn two_body_first_quantized(chain: &Chain, kappa: f64) -> DMatrix<f64> {
    let m = chain.sites;
    let h1 = chain.one_particle();
    let full = DMatrix::from_fn(m * m, m * m, |r, c| {
        let (i1, i2) = (r / m, r % m);
        let (j1, j2) = (c / m, c % m);
        let mut v = 0.0;
        if i2 == j2 {
            v += h1[(i1, j1)];
        }
        if i1 == j1 {
            v += h1[(i2, j2)];
        }
        if r == c {
            v += kappa * chain.pair[(i1, i2)];
        }
        v
    });
    let mut sym = Vec::new();
    for i in 0..m {
        for j in i..m {
            let mut v = nalgebra::DVector::zeros(m * m);
            if i == j {
                v[i * m + i] = 1.0;
            } else {
                v[i * m + j] = std::f64::consts::FRAC_1_SQRT_2;
                v[j * m + i] = std::f64::consts::FRAC_1_SQRT_2;
            }
            sym.push(v);
        }
    }
    let p = DMatrix::from_columns(&sym);
    p.transpose() * full * p
}
