//! Property tests for the structural invariants of the lattice, kernels,
//! propagator, linearization and Fock-space modules.

use hartree_core::grid::integrate_real;
use hartree_core::linearization::LinearizedOperator;
use hartree_core::many_body::{
    build_hamiltonian, coherent_state, evolve_exact, hartree_evolve, mean_occupations, reduced_density, Chain,
    KrylovConfig,
};
use hartree_core::observables::{charge, energy, manifold_distance, momentum};
use hartree_core::potentials::{kernel_samples, kernel_symbol, ExternalKind, ExternalPotential, Sign, TwoBodyPotential};
use hartree_core::propagator::{boost, step};
use hartree_core::{Field, Lattice, Model, SpectralPlan, C64};
use proptest::prelude::*;

fn field_from(lat: Lattice, re: &[f64], im: &[f64]) -> Field {
    Field::new(lat, re.iter().zip(im).map(|(a, b)| C64::new(*a, *b)).collect()).unwrap()
}

fn gaussian_at(lat: Lattice, c: [f64; 3], w: f64, amp: f64) -> Field {
    Field::from_fn(lat, |x| {
        let r2: f64 = (0..3).map(|a| (x[a] - c[a]).powi(2)).sum();
        C64::new(amp * (-r2 / (2.0 * w * w)).exp(), 0.0)
    })
    .unwrap()
}

fn small_lattice() -> impl Strategy<Value = Lattice> {
    (1usize..=3, prop::sample::select(vec![8usize, 16]), 1.0f64..6.0)
        .prop_map(|(d, n, l)| Lattice::new(d, if d == 3 { 8 } else { n }, l).unwrap())
}

fn random_field() -> impl Strategy<Value = Field> {
    small_lattice().prop_flat_map(|lat| {
        let len = lat.len();
        (prop::collection::vec(-1.0f64..1.0, len), prop::collection::vec(-1.0f64..1.0, len))
            .prop_map(move |(re, im)| field_from(lat, &re, &im))
    })
}

fn kernel() -> impl Strategy<Value = TwoBodyPotential> {
    let sign = prop_oneof![Just(Sign::Attractive), Just(Sign::Repulsive)];
    (0usize..3, 0.5f64..1.8, sign, 0.1f64..3.0).prop_map(|(k, p, s, nu)| match k {
        0 => TwoBodyPotential::gaussian(p, s, nu).unwrap(),
        1 => TwoBodyPotential::power_law(p, s, nu).unwrap(),
        _ => TwoBodyPotential::new(hartree_core::potentials::TwoBodyKind::Yukawa { mu: p }, s, nu).unwrap(),
    })
}

fn direct_convolution(lat: &Lattice, samples: &[f64], rho: &[f64]) -> Vec<f64> {
    let n = lat.n();
    (0..lat.len())
        .map(|i| {
            let mi = lat.multi_index(i);
            let mut s = 0.0;
            for j in 0..lat.len() {
                let mj = lat.multi_index(j);
                let mut k = [0usize; 3];
                for a in 0..lat.d() {
                    k[a] = (mi[a] + n + n / 2 - mj[a]) % n;
                }
                s += samples[lat.flat_index(k)] * rho[j];
            }
            lat.cell_volume() * s
        })
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn parseval(f in random_field()) {
        let lat = *f.lattice();
        let plan = SpectralPlan::new(lat);
        let hat = plan.forward(&f).unwrap();
        let direct = integrate_real(&lat, &f.density());
        let dk = std::f64::consts::PI / lat.half_width();
        let spectral: f64 = hat.values().iter().map(|z| z.norm_sqr()).sum::<f64>()
            * (dk / (2.0 * std::f64::consts::PI)).powi(lat.d() as i32);
        prop_assert!((direct - spectral).abs() <= 1e-10 * direct.max(1.0));
    }

    #[test]
    fn transform_round_trip(f in random_field()) {
        let plan = SpectralPlan::new(*f.lattice());
        let back = plan.inverse(&plan.forward(&f).unwrap()).unwrap();
        let err = back.values().iter().zip(f.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn convolution_matches_direct_sum_and_commutes(
        lat in small_lattice(),
        seed_a in prop::collection::vec(0.0f64..1.0, 512),
        seed_b in prop::collection::vec(0.0f64..1.0, 512),
    ) {
        // spectral convolution keeps the real part of the kernel symbol, which is
        // exact for reflection-even kernels; symmetrize both inputs
        let even = |v: &[f64]| -> Vec<f64> {
            (0..lat.len())
                .map(|i| {
                    let m = lat.multi_index(i);
                    let mut r = m;
                    for a in 0..lat.d() {
                        r[a] = (lat.n() - m[a]) % lat.n();
                    }
                    0.5 * (v[i] + v[lat.flat_index(r)])
                })
                .collect()
        };
        let (a, b) = (&even(&seed_a)[..], &even(&seed_b)[..]);
        let plan = SpectralPlan::new(lat);
        let ab = plan.convolve(&plan.symbol_of_samples(a), b).unwrap();
        let ba = plan.convolve(&plan.symbol_of_samples(b), a).unwrap();
        let slow = direct_convolution(&lat, a, b);
        let scale = slow.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        prop_assert!(max_abs_diff(&ab, &slow) < 1e-10 * scale);
        prop_assert!(max_abs_diff(&ab, &ba) < 1e-10 * scale);
    }

    #[test]
    fn kernel_symbols_are_radial(phi in kernel(), l in 2.0f64..6.0) {
        let lat = Lattice::new(3, 8, l).unwrap();
        let plan = SpectralPlan::new(lat);
        let s = kernel_symbol(&phi, &plan);
        let n = lat.n();
        let scale = s.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for idx in 0..lat.len() {
            let m = lat.multi_index(idx);
            let flip = |i: usize| (n - i) % n;
            for image in [
                [m[1], m[0], m[2]],
                [m[2], m[1], m[0]],
                [m[1], m[2], m[0]],
                [flip(m[0]), m[1], m[2]],
                [m[0], flip(m[1]), flip(m[2])],
            ] {
                let other = s[lat.flat_index(image)];
                prop_assert!((s[idx] - other).abs() <= 1e-12 * scale, "{} vs {other}", s[idx]);
            }
        }
    }

    #[test]
    fn sampled_attractive_kernels_give_nonpositive_mean_field(
        w in 0.3f64..2.0, nu in 0.1f64..5.0, d in 1usize..=2,
        values in prop::collection::vec(-1.0f64..1.0, 256),
    ) {
        let lat = Lattice::new(d, 16, 4.0).unwrap();
        let m = Model::nonrelativistic(lat, ExternalPotential::zero(), TwoBodyPotential::gaussian(w, Sign::Attractive, nu).unwrap()).unwrap();
        let rho: Vec<f64> = values[..lat.len()].iter().map(|x| x * x).collect();
        let u = m.mean_field(&rho).unwrap();
        let scale = u.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-300);
        prop_assert!(u.iter().all(|x| *x <= 1e-12 * scale));
    }

    #[test]
    fn galilei_energy_shift(
        d in 1usize..=2, phi in kernel(),
        v in prop::array::uniform3(-1.5f64..1.5), c in prop::array::uniform3(-1.0f64..1.0),
        w in 0.7f64..1.2, amp in 0.2f64..1.5,
    ) {
        let lat = Lattice::new(d, 64, 8.0).unwrap();
        let m = Model::nonrelativistic(lat, ExternalPotential::zero(), phi).unwrap();
        // a non-real datum so P(ψ) ≠ 0
        let base = boost(m.plan(), &gaussian_at(lat, c, w, amp), [0.4, -0.3, 0.0], [0.0; 3], 0.0).unwrap();
        let boosted = boost(m.plan(), &base, v, [0.0; 3], 0.0).unwrap();
        let (n, p) = (charge(&base), momentum(m.plan(), &base));
        let vv: f64 = (0..d).map(|a| v[a] * v[a]).sum();
        let vp: f64 = (0..d).map(|a| v[a] * p[a]).sum();
        let want = energy(&m, &base).unwrap() + vv * n / 8.0 + vp / 2.0;
        let got = energy(&m, &boosted).unwrap();
        prop_assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{got} vs {want}");
        prop_assert!((charge(&boosted) - n).abs() < 1e-12 * n);
    }

    #[test]
    fn global_phase_keeps_momentum_and_shift_keeps_charge(
        gamma in -3.0f64..3.0, shift in prop::array::uniform3(-2.0f64..2.0), w in 0.7f64..1.5,
        js in prop::array::uniform2(-8i32..8),
    ) {
        let lat = Lattice::new(2, 32, 6.0).unwrap();
        let plan = SpectralPlan::new(lat);
        let psi = boost(&plan, &gaussian_at(lat, [0.3, -0.2, 0.0], w, 1.0), [0.5, 0.2, 0.0], [0.0; 3], 0.0).unwrap();
        let rotated = psi.scaled(C64::from_polar(1.0, gamma));
        let (p, q) = (momentum(&plan, &psi), momentum(&plan, &rotated));
        prop_assert!((0..2).all(|a| (p[a] - q[a]).abs() < 1e-13 * p[a].abs().max(1.0)));
        // lattice shifts permute samples; off-lattice ones only lose the (tiny) Nyquist content
        let h = lat.spacing();
        let on = boost(&plan, &psi, [0.0; 3], [js[0] as f64 * h, js[1] as f64 * h, 0.0], 0.0).unwrap();
        prop_assert!((charge(&on) - charge(&psi)).abs() < 1e-12 * charge(&psi));
        let off = boost(&plan, &psi, [0.0; 3], shift, 0.0).unwrap();
        prop_assert!((charge(&off) - charge(&psi)).abs() < 1e-8 * charge(&psi));
    }

    #[test]
    fn orbit_distance_ignores_phase_and_lattice_shifts(
        gamma in -3.0f64..3.0, s in prop::array::uniform2(-5i32..5), eps in 0.0f64..0.2,
    ) {
        let lat = Lattice::new(2, 32, 6.0).unwrap();
        let plan = SpectralPlan::new(lat);
        let q = gaussian_at(lat, [0.0; 3], 1.0, 1.0);
        let psi = q.add_scaled(C64::new(eps, 0.0), &gaussian_at(lat, [0.8, 0.1, 0.0], 0.7, 1.0)).unwrap();
        let h = lat.spacing();
        let moved = boost(&plan, &psi, [0.0; 3], [s[0] as f64 * h, s[1] as f64 * h, 0.0], gamma).unwrap();
        let a = manifold_distance(&plan, &psi, &q).unwrap().distance;
        let b = manifold_distance(&plan, &moved, &q).unwrap().distance;
        prop_assert!((a - b).abs() < 1e-10 * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn strang_step_conserves_charge(
        d in 1usize..=2, phi in kernel(), dt in 1e-3f64..5e-2,
        c in prop::array::uniform3(-1.0f64..1.0), trap in 0.0f64..1.0,
    ) {
        let lat = Lattice::new(d, 32, 6.0).unwrap();
        let v = ExternalPotential::new(ExternalKind::Harmonic, trap).unwrap();
        let m = Model::nonrelativistic(lat, v, phi).unwrap();
        let psi = boost(m.plan(), &gaussian_at(lat, c, 0.9, 1.0), [0.7, 0.0, 0.0], [0.0; 3], 0.0).unwrap();
        let next = step(&m, &psi, dt).unwrap();
        prop_assert!((charge(&next) - charge(&psi)).abs() < 1e-12 * charge(&psi));
    }

    #[test]
    fn linearized_operator_is_real_linear_and_symmetric(
        a in -2.0f64..2.0, b in -2.0f64..2.0, omega in 0.1f64..2.0, phi in kernel(),
        xs in prop::collection::vec(-1.0f64..1.0, 4 * 256),
    ) {
        let lat = Lattice::new(2, 16, 4.0).unwrap();
        let m = Model::nonrelativistic(lat, ExternalPotential::zero(), phi).unwrap();
        let q = gaussian_at(lat, [0.0; 3], 1.0, 1.0);
        let l = LinearizedOperator::from_profile(&m, &q, omega).unwrap();
        let n = lat.len();
        let h1 = field_from(lat, &xs[..n], &xs[n..2 * n]);
        let h2 = field_from(lat, &xs[2 * n..3 * n], &xs[3 * n..]);
        let combo = h1.scaled(C64::new(a, 0.0)).add_scaled(C64::new(b, 0.0), &h2).unwrap();
        let lhs = l.apply(&combo).unwrap();
        let rhs = l.apply(&h1).unwrap().scaled(C64::new(a, 0.0)).add_scaled(C64::new(b, 0.0), &l.apply(&h2).unwrap()).unwrap();
        let scale = rhs.norm().max(1.0);
        prop_assert!(lhs.sub(&rhs).unwrap().norm() < 1e-12 * scale);
        // each block is symmetric in the real ℓ² pairing
        let (u, v) = (&xs[..n], &xs[n..2 * n]);
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        for (lu, lv) in [(l.apply_plus(u), l.apply_plus(v)), (l.apply_minus(u), l.apply_minus(v))] {
            let (s1, s2) = (dot(u, &lv), dot(&lu, v));
            prop_assert!((s1 - s2).abs() < 1e-10 * s1.abs().max(1.0), "{s1} vs {s2}");
        }
    }
}

fn chain(nu: f64, lambda: f64) -> Chain {
    let v = ExternalPotential::new(ExternalKind::Harmonic, lambda).unwrap();
    Chain::new(8, 4.0, v, TwoBodyPotential::gaussian(1.0, Sign::Attractive, nu).unwrap()).unwrap()
}

fn random_orbital(re: &[f64], im: &[f64]) -> Vec<C64> {
    let mut c: Vec<C64> = re.iter().zip(im).map(|(a, b)| C64::new(*a, *b)).collect();
    let n = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    c.iter_mut().for_each(|z| *z /= n);
    c
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn exact_evolution_conserves_number_and_energy(
        nu in 0.0f64..2.0, lambda in 0.0f64..0.5, particles in 2usize..=4, t in 0.1f64..1.5,
        re in prop::collection::vec(0.1f64..1.0, 8), im in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let ch = chain(nu, lambda);
        let h = build_hamiltonian(&ch, particles).unwrap();
        let psi0 = coherent_state(h.basis(), &random_orbital(&re, &im)).unwrap();
        let psi = evolve_exact(&h, &psi0, t, &KrylovConfig::default()).unwrap();
        let number: f64 = mean_occupations(h.basis(), &psi).iter().sum();
        prop_assert!((number - particles as f64).abs() < 1e-12 * particles as f64);
        let (e0, e1) = (h.expectation(&psi0), h.expectation(&psi));
        prop_assert!((e0 - e1).abs() < 1e-10 * e0.abs().max(1.0), "{e0} vs {e1}");
    }

    #[test]
    fn reduced_density_is_a_density_matrix(
        nu in 0.0f64..2.0, particles in 2usize..=4, t in 0.0f64..1.0,
        re in prop::collection::vec(0.1f64..1.0, 8), im in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let ch = chain(nu, 0.25);
        let h = build_hamiltonian(&ch, particles).unwrap();
        let c0 = random_orbital(&re, &im);
        let psi = evolve_exact(&h, &coherent_state(h.basis(), &c0).unwrap(), t, &KrylovConfig::default()).unwrap();
        let g = reduced_density(h.basis(), &psi).unwrap();
        prop_assert!((g.trace() - 1.0).abs() < 1e-12);
        prop_assert!(g.hermiticity_defect() < 1e-12);
        let ev = g.eigenvalues();
        prop_assert!(ev.iter().all(|x| *x > -1e-12 && *x < 1.0 + 1e-12));
        let reference = hartree_evolve(&ch, &c0, t, 1e-3).unwrap();
        let delta = g.trace_distance_to(&reference).unwrap();
        prop_assert!(*ev.last().unwrap() >= 1.0 - delta / 2.0 - 1e-12);
    }

    #[test]
    fn chain_reflection_commutes_with_hamiltonian(
        nu in 0.0f64..2.0, lambda in 0.0f64..0.5, particles in 1usize..=3,
        xs in prop::collection::vec(-1.0f64..1.0, 120),
    ) {
        // x_i ↦ −x_i maps site i to (M − i) mod M on the periodic chain
        let ch = chain(nu, lambda);
        let h = build_hamiltonian(&ch, particles).unwrap();
        let basis = h.basis();
        let psi = &xs[..h.dim()];
        let reflect = |v: &[f64]| {
            let mut out = vec![0.0; v.len()];
            for (a, x) in v.iter().enumerate() {
                let n = basis.state(a);
                let r: Vec<u8> = (0..8).map(|i| n[(8 - i) % 8]).collect();
                out[basis.index_of(&r).unwrap()] = *x;
            }
            out
        };
        let lhs = h.apply(&reflect(psi));
        let rhs = reflect(&h.apply(psi));
        let scale = rhs.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-12 * scale);
    }
}

#[test]
fn kernel_samples_are_even() {
    let lat = Lattice::new(2, 16, 3.0).unwrap();
    let s = kernel_samples(&TwoBodyPotential::power_law(1.2, Sign::Attractive, 1.0).unwrap(), &lat);
    let n = lat.n();
    for idx in 0..lat.len() {
        let m = lat.multi_index(idx);
        // samples are stored with the origin at index n/2
        let r = [(n - m[0]) % n, (n - m[1]) % n, 0];
        assert!((s[idx] - s[lat.flat_index(r)]).abs() < 1e-14 * s[idx].abs().max(1.0));
    }
}
