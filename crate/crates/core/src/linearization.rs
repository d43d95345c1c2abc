//! The real-linear operator governing small perturbations of a soliton.
//!
//! Writing ψ = e^{iωt}(Q + h) and linearizing gives i∂ₜh = L h with
//!
//! ```text
//! L h = (T + λV + ω + νΦ∗Q²) h + νQ·Φ∗(Q(h + h̄)).
//! ```
//!
//! With h = u + iv this is L h = L₊u + iL₋v, where
//! L₋ = T + λV + ω + νΦ∗Q² and L₊ = L₋ + 2νQ·Φ∗(Q·). Both blocks are symmetric
//! in the plain real L² pairing Re∫h̄₁h₂ on (u, v) pairs; the time evolution is
//! generated by J·diag(L₊, L₋) with J = [[0, 1], [−1, 0]], i.e. ∂ₜu = L₋v,
//! ∂ₜv = −L₊u.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::ground_state::GroundState;
use crate::lanczos::{lowest_eigenpairs, LanczosConfig};
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Plus,
    Minus,
}

pub struct LinearizedOperator<'a> {
    model: &'a Model,
    q: Vec<f64>,
    omega: f64,
    /// λV + ω + ν(Φ∗Q²)
    diag: Vec<f64>,
}

impl<'a> LinearizedOperator<'a> {
    pub fn new(model: &'a Model, gs: &GroundState) -> Result<Self> {
        Self::from_profile(model, &gs.q, gs.omega)
    }

    pub fn from_profile(model: &'a Model, q: &Field, omega: f64) -> Result<Self> {
        model.check(q)?;
        let q: Vec<f64> = q.real_part();
        let rho: Vec<f64> = q.iter().map(|x| x * x).collect();
        let u = model.mean_field(&rho)?;
        let diag = u.iter().zip(model.v()).map(|(a, b)| a + b + omega).collect();
        Ok(Self { model, q, omega, diag })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn profile(&self) -> &[f64] {
        &self.q
    }

    fn kinetic(&self, x: &[f64]) -> Vec<f64> {
        let mut c: Vec<C64> = x.iter().map(|&r| C64::new(r, 0.0)).collect();
        let t_k = self.model.t_k();
        self.model.plan().apply_multiplier(&mut c, |idx| C64::new(t_k[idx], 0.0));
        c.into_iter().map(|z| z.re).collect()
    }

    /// L₋x = (T + λV + ω + νΦ∗Q²)x.
    pub fn apply_minus(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.kinetic(x);
        for ((o, xi), di) in out.iter_mut().zip(x).zip(&self.diag) {
            *o += di * xi;
        }
        out
    }

    /// L₊x = L₋x + 2νQ·Φ∗(Qx).
    pub fn apply_plus(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.apply_minus(x);
        if self.model.twobody().is_interacting() {
            let qx: Vec<f64> = self.q.iter().zip(x).map(|(a, b)| a * b).collect();
            // mean_field only fails on length mismatch, excluded by construction
            let g = self.model.mean_field(&qx).unwrap_or_else(|_| vec![0.0; x.len()]);
            for ((o, qi), gi) in out.iter_mut().zip(&self.q).zip(&g) {
                *o += 2.0 * qi * gi;
            }
        }
        out
    }

    pub fn apply_block(&self, block: Block, x: &[f64]) -> Vec<f64> {
        match block {
            Block::Plus => self.apply_plus(x),
            Block::Minus => self.apply_minus(x),
        }
    }

    /// L h for a complex perturbation; real-linear, not complex-linear.
    pub fn apply(&self, h: &Field) -> Result<Field> {
        self.model.check(h)?;
        let u: Vec<f64> = h.values().iter().map(|z| z.re).collect();
        let v: Vec<f64> = h.values().iter().map(|z| z.im).collect();
        let a = self.apply_plus(&u);
        let b = self.apply_minus(&v);
        let out = a.into_iter().zip(b).map(|(re, im)| C64::new(re, im)).collect();
        Field::new(*self.model.lattice(), out)
    }

    /// Relative residuals ‖L(iQ)‖/‖Q‖ followed by ‖L ∂ⱼQ‖/‖∂ⱼQ‖ for each axis.
    pub fn null_residuals(&self) -> Result<Vec<f64>> {
        let lat = *self.model.lattice();
        let q = Field::from_real(lat, &self.q)?;
        let iq = q.scaled(C64::new(0.0, 1.0));
        let mut out = vec![self.apply(&iq)?.norm() / q.norm()];
        for g in self.model.plan().gradient(&q)? {
            let gn = g.norm();
            if gn == 0.0 {
                return Err(Error::Inapplicable("profile has no gradient".into()));
            }
            out.push(self.apply(&g)?.norm() / gn);
        }
        Ok(out)
    }

    /// Relative residual ‖Lh‖/‖h‖ of an arbitrary perturbation (controls).
    pub fn relative_residual(&self, h: &Field) -> Result<f64> {
        Ok(self.apply(h)?.norm() / h.norm())
    }

    /// The `count` eigenvalues of diag(L₊, L₋) closest to zero, ascending in magnitude,
    /// each tagged with its block.
    pub fn low_spectrum(&self, count: usize, cfg: &LanczosConfig) -> Result<Vec<(f64, Block)>> {
        if count == 0 || count > 20 {
            return Err(Error::InvalidParameter(format!("count = {count} outside 1..=20")));
        }
        let dim = self.q.len();
        // every block has at most one negative eigenvalue below the kernel for a
        // ground state, so `count + 1` lowest per block cover the `count` smallest
        let per = (count + 1).min(dim);
        let mut all = Vec::new();
        for block in [Block::Plus, Block::Minus] {
            let mut op = |x: &[f64]| self.apply_block(block, x);
            for (val, _) in lowest_eigenpairs(&mut op, dim, per, cfg)? {
                all.push((val, block));
            }
        }
        all.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
        all.truncate(count);
        Ok(all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Lattice;
    use crate::ground_state::{minimize, MinimizeConfig};
    use crate::potentials::{ExternalKind, ExternalPotential, Sign, TwoBodyPotential};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(lat: Lattice, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..lat.len()).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        Field::new(lat, v).unwrap()
    }

    fn smooth_random(lat: Lattice, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        Field::from_fn(lat, |x| {
            let g = (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 4.0).exp();
            C64::new(g * (c[0] + c[1] * x[0] + c[2] * x[1]), g * (c[3] + c[4] * x[2] + c[5] * x[0] * x[1]))
        })
        .unwrap()
    }

    fn trap_model() -> Model {
        let lat = Lattice::new(1, 64, 8.0).unwrap();
        let v = ExternalPotential::new(ExternalKind::Harmonic, 1.0).unwrap();
        Model::nonrelativistic(lat, v, TwoBodyPotential::none()).unwrap()
    }

    fn newton_model() -> Model {
        let lat = Lattice::new(3, 32, 8.0).unwrap();
        let phi = TwoBodyPotential::power_law(1.0, Sign::Attractive, 4.0).unwrap();
        Model::nonrelativistic(lat, ExternalPotential::zero(), phi).unwrap()
    }

    #[test]
    fn free_limit_is_the_shifted_linear_operator() {
        let m = trap_model();
        let gs = minimize(&m, 1.0, &MinimizeConfig::default()).unwrap();
        let l = LinearizedOperator::new(&m, &gs).unwrap();
        let h = random_field(*m.lattice(), 1);
        let lin = m.apply_linear(&h, m.v()).add_scaled(C64::new(gs.omega, 0.0), &h).unwrap();
        let got = l.apply(&h).unwrap();
        assert!(got.sub(&lin).unwrap().norm() < 1e-12 * lin.norm());
    }

    #[test]
    fn oscillator_spectrum() {
        let m = trap_model();
        let gs = minimize(&m, 1.0, &MinimizeConfig { tol: 1e-11, ..Default::default() }).unwrap();
        let l = LinearizedOperator::new(&m, &gs).unwrap();
        let spec = l.low_spectrum(6, &LanczosConfig::default()).unwrap();
        let want = [0.0, 0.0, 2.0, 2.0, 4.0, 4.0];
        for ((got, _), w) in spec.iter().zip(want) {
            assert!((got - w).abs() < 1e-6, "{spec:?}");
        }
    }

    #[test]
    fn real_linear_and_symmetric() {
        let m = newton_model();
        let gs = minimize(&m, 1.0, &MinimizeConfig::default()).unwrap();
        let l = LinearizedOperator::new(&m, &gs).unwrap();
        let (h1, h2) = (smooth_random(*m.lattice(), 2), smooth_random(*m.lattice(), 3));
        let (a, b) = (0.7, -1.9);
        let comb = h1.scaled(C64::new(a, 0.0)).add_scaled(C64::new(b, 0.0), &h2).unwrap();
        let lhs = l.apply(&comb).unwrap();
        let rhs = l.apply(&h1).unwrap().scaled(C64::new(a, 0.0)).add_scaled(C64::new(b, 0.0), &l.apply(&h2).unwrap()).unwrap();
        assert!(lhs.sub(&rhs).unwrap().norm() < 1e-12 * lhs.norm());
        // not complex-linear
        let i = C64::new(0.0, 1.0);
        let d = l.apply(&h1.scaled(i)).unwrap().sub(&l.apply(&h1).unwrap().scaled(i)).unwrap();
        assert!(d.norm() > 1e-3 * lhs.norm());
        // symmetric in Re⟨·,·⟩
        let u = l.apply(&h2).unwrap();
        let v = l.apply(&h1).unwrap();
        let s1 = h1.inner(&u).unwrap().re;
        let s2 = v.inner(&h2).unwrap().re;
        assert!((s1 - s2).abs() < 1e-10 * s1.abs().max(1.0), "{s1} {s2}");
    }

    #[test]
    fn symmetry_modes_span_the_kernel() {
        let m = newton_model();
        let gs = minimize(&m, 1.0, &MinimizeConfig { tol: 1e-10, ..Default::default() }).unwrap();
        let l = LinearizedOperator::new(&m, &gs).unwrap();
        let r = l.null_residuals().unwrap();
        assert_eq!(r.len(), 4);
        assert!(r.iter().all(|&x| x < 1e-5), "{r:?}");
        let control = l.relative_residual(&smooth_random(*m.lattice(), 9)).unwrap();
        assert!(control > 0.1, "{control}");
        let spec = l.low_spectrum(5, &LanczosConfig::default()).unwrap();
        let near_zero = spec.iter().filter(|(v, _)| v.abs() < 1e-4).count();
        assert_eq!(near_zero, 4, "{spec:?}");
        assert_eq!(spec.iter().filter(|(v, b)| v.abs() < 1e-4 && *b == Block::Plus).count(), 3);
    }

    #[test]
    fn count_is_bounded() {
        let m = trap_model();
        let gs = minimize(&m, 1.0, &MinimizeConfig::default()).unwrap();
        let l = LinearizedOperator::new(&m, &gs).unwrap();
        assert!(l.low_spectrum(21, &LanczosConfig::default()).is_err());
        assert!(l.apply(&Field::zeros(Lattice::new(1, 32, 8.0).unwrap())).is_err());
    }
}
