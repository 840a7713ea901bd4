mod common;

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subqm::kernels::*;
use subqm::quadratics::QuadForm;
use subqm::Error;

fn pp(p: f64, x: f64) -> PhasePoint {
    PhasePoint::new(p, x)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(a.abs()).max(1e-300)
}

/// Action of the solution of `−m x'' + a m² x'''' = 0` with endpoint
/// positions and velocities, from the fundamental system
/// `{1, t, cosh βt, sinh βt}` and quadrature of the Lagrangian.
fn bvp_action(x1: PhasePoint, x2: PhasePoint, t: f64, dof: &Dof) -> f64 {
    let (m, b) = (dof.m, dof.beta);
    let row = |s: f64| [1.0, s, (b * s).cosh(), (b * s).sinh()];
    let drow = |s: f64| [0.0, 1.0, b * (b * s).sinh(), b * (b * s).cosh()];
    let (r0, d0, r1, d1) = (row(0.0), drow(0.0), row(t), drow(t));
    let a = Matrix4::from_row_slice(&[
        r0[0], r0[1], r0[2], r0[3], d0[0], d0[1], d0[2], d0[3], r1[0], r1[1], r1[2], r1[3], d1[0], d1[1], d1[2], d1[3],
    ]);
    let rhs = Vector4::new(x1.x, x1.p / m, x2.x, x2.p / m);
    let c = a.lu().solve(&rhs).expect("regular boundary problem");
    let lag = |s: f64| {
        let v = c[1] + c[2] * b * (b * s).sinh() + c[3] * b * (b * s).cosh();
        let acc = c[2] * b * b * (b * s).cosh() + c[3] * b * b * (b * s).sinh();
        C64::new(0.5 * m * (v * v + acc * acc / (b * b)), 0.0)
    };
    common::quad1(lag, 0.0, t).re
}

#[test]
fn action_matches_block_assembly_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let dof = Dof::new(rng.gen_range(0.2..3.0), rng.gen_range(0.2..3.0)).unwrap();
        let t = 10f64.powf(rng.gen_range(-2.5..1.3)) / dof.beta;
        let x1 = pp(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let x2 = pp(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let direct = classical_action_dof(x1, x2, t, &dof).unwrap();
        let k = PropagatorKernel::from_dofs(t, &[dof], 1.0, Regime::Exact).unwrap();
        let blocks = k.action(&[x1], &[x2]).unwrap();
        assert!(rel(blocks, direct) < 1e-10, "s = {}: {blocks} vs {direct}", dof.beta * t);
    }
}

#[test]
fn action_matches_euler_boundary_value_oracle() {
    let dof = Dof::new(1.0, 1.0).unwrap();
    let s = bvp_action(pp(0.0, 0.0), pp(0.0, 1.0), 1.0, &dof);
    let k = classical_action_dof(pp(0.0, 0.0), pp(0.0, 1.0), 1.0, &dof).unwrap();
    assert!(rel(k, s) < 1e-8, "{k} vs {s}");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let dof = Dof::new(rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)).unwrap();
        let t = rng.gen_range(0.05..4.0) / dof.beta;
        let x1 = pp(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let x2 = pp(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let oracle = bvp_action(x1, x2, t, &dof);
        let got = classical_action_dof(x1, x2, t, &dof).unwrap();
        assert!(rel(got, oracle) < 1e-8, "{got} vs {oracle}");
    }
}

#[test]
fn uniform_motion_and_rest() {
    let params = ModelParams::new(vec![1.7], 0.4, 1.0).unwrap();
    let (p, t) = (0.8, 0.6);
    let m = params.mass(0);
    let s = classical_action(&[pp(p, 0.1)], &[pp(p, 0.1 + p * t / m)], t, &params).unwrap();
    assert!(rel(s, p * p * t / (2.0 * m)) < 1e-12);
    let s0 = classical_action(&[pp(0.0, 0.3)], &[pp(0.0, 0.3)], t, &params).unwrap();
    assert_eq!(s0, 0.0);
}

#[test]
fn action_is_time_reversal_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dof = Dof::new(1.3, 0.9).unwrap();
    for _ in 0..100 {
        let t = rng.gen_range(0.01..10.0);
        let x1 = pp(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let x2 = pp(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let fwd = classical_action_dof(x1, x2, t, &dof).unwrap();
        let back = classical_action_dof(pp(-x2.p, x2.x), pp(-x1.p, x1.x), t, &dof).unwrap();
        assert!(rel(fwd, back) < 1e-12);
    }
}

#[test]
fn action_rejects_nonpositive_duration() {
    let dof = Dof::new(1.0, 1.0).unwrap();
    assert!(matches!(classical_action_dof(pp(0., 0.), pp(0., 0.), 0.0, &dof), Err(Error::NonpositiveDuration(_))));
    assert!(matches!(coefficients_abcd(-1.0, &dof), Err(Error::NonpositiveDuration(_))));
}

#[test]
fn relaxation_gap_is_continuous_and_accurate() {
    // Either branch against the direct formula where it is well-conditioned.
    for &s in &[0.3f64, 0.5, 0.9, 0.999_999] {
        let direct = s - 2.0 * (0.5 * s).tanh();
        assert!(rel(relaxation_gap(s), direct) < 1e-12);
    }
    let below = relaxation_gap(1.0 - 1e-12);
    let above = relaxation_gap(1.0);
    assert!(rel(below, above) < 1e-10);
    let s: f64 = 1e-4;
    assert!(rel(relaxation_gap(s), s.powi(3) / 12.0) < 1e-8);
}

#[test]
fn normalization_short_time_scaling_and_monotone() {
    let params = ModelParams::natural();
    let t = 1e-4;
    let lead = 12f64.sqrt() / (t * t) / (2.0 * std::f64::consts::PI);
    assert!(rel(normalization(t, &params).unwrap(), lead) < 1e-6);
    let mut prev = f64::INFINITY;
    for k in 0..60 {
        let t = 10f64.powf(-3.0 + 0.1 * k as f64);
        let v = normalization(t, &params).unwrap();
        assert!(v > 0.0 && v < prev);
        prev = v;
    }
}

#[test]
fn normalization_factorizes_over_dofs() {
    let one = ModelParams::new(vec![1.3], 0.7, 1.0).unwrap();
    let two = ModelParams::new(vec![1.3, 1.3], 0.7, 1.0).unwrap();
    for &t in &[0.01, 0.5, 3.0] {
        let n1 = normalization(t, &one).unwrap();
        assert!(rel(normalization(t, &two).unwrap(), n1 * n1) < 1e-13);
    }
}

#[test]
fn long_time_coefficients() {
    let dof = Dof::new(1.4, 0.8).unwrap();
    let t = 40.0 / dof.beta;
    let e = coefficients_abcd(t, &dof).unwrap();
    let l = coefficients_long(t, &dof).unwrap();
    for (a, b) in [(e.a, l.a), (e.b, l.b), (e.c, l.c), (e.d, l.d)] {
        assert!(rel(a, b) < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn d_is_negative() {
    let dof = Dof::new(1.0, 1.0).unwrap();
    for k in 0..80 {
        let t = 10f64.powf(-4.0 + 0.075 * k as f64);
        assert!(coefficients_abcd(t, &dof).unwrap().d < 0.0);
    }
}

#[test]
fn short_time_action_error_is_second_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let params = ModelParams::new(vec![1.1], 0.9, 1.0).unwrap();
    let beta = params.beta(0);
    let m = params.mass(0);
    for &s in &[1e-3, 1e-2] {
        let t = s / beta;
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let x1 = pp(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let p2 = rng.gen_range(-1.0..1.0);
            let x2 = pp(p2, x1.x + (x1.p + p2) * t / (2.0 * m) + rng.gen_range(-1.0..1.0) * t);
            let exact = classical_action(&[x1], &[x2], t, &params).unwrap();
            let approx = short_time_action_corrected(&[x1], &[x2], t, &params).unwrap();
            worst = worst.max(rel(approx, exact));
        }
        assert!(worst <= s * s, "s = {s}: worst relative error {worst}");
        if s == 1e-3 {
            assert!(worst <= 1e-5);
        }
    }
}

#[test]
fn short_time_action_on_classical_rays() {
    let params = ModelParams::natural();
    let (p, t) = (0.7, 1e-2);
    let x1 = [pp(p, 0.2)];
    let x2 = [pp(p, 0.2 + p * t)];
    assert!(short_time_action(&x1, &x2, t, &params).unwrap().abs() < 1e-12);
    let full = short_time_action_corrected(&x1, &x2, t, &params).unwrap();
    assert!(rel(full, p * p * t / 2.0) < 1e-12);
    assert!(matches!(short_time_action(&x1, &x2, 0.3, &params), Err(Error::RegimeViolation(_))));
}

fn damped_state(hbar: f64) -> QuadForm {
    QuadForm::gaussian(&[0.3, -0.2], &[0.9, 1.2], hbar)
        .unwrap()
        .add_linear(&nalgebra::DVector::from_vec(vec![C64::new(0.1, 0.0), C64::new(0.5, 0.0)]))
        .unwrap()
}

fn apply(k: &PropagatorKernel, psi: &QuadForm) -> QuadForm {
    k.to_form().multiply(&psi.embed(4, &[0, 1]).unwrap()).unwrap().marginalize(&[0, 1]).unwrap()
}

#[test]
fn kernel_is_unitary() {
    let params = ModelParams::new(vec![1.2], 0.8, 1.0).unwrap();
    let psi = damped_state(params.hbar());
    let n0 = psi.l2_norm().unwrap();
    for &s in &[0.01, 0.1, 1.0, 10.0] {
        let k = PropagatorKernel::exact(s / params.beta(0), &params).unwrap();
        let n = apply(&k, &psi).l2_norm().unwrap();
        assert!(rel(n, n0) < 1e-8, "s = {s}: {n} vs {n0}");
    }
}

#[test]
fn kernels_compose() {
    let params = ModelParams::new(vec![0.9], 1.1, 1.0).unwrap();
    let beta = params.beta(0);
    for &s in &[0.01, 0.1, 1.0, 10.0] {
        let (t1, t2) = (0.4 * s / beta, 0.6 * s / beta);
        let k1 = PropagatorKernel::exact(t1, &params).unwrap().to_form().embed(6, &[0, 1, 2, 3]).unwrap();
        let k2 = PropagatorKernel::exact(t2, &params).unwrap().to_form().embed(6, &[2, 3, 4, 5]).unwrap();
        let comp = k1.multiply(&k2).unwrap().marginalize(&[2, 3]).unwrap();
        let k = PropagatorKernel::exact(t1 + t2, &params).unwrap().to_form();
        let err = (comp.m() - k.m()).norm() / k.m().norm();
        assert!(err < 1e-9, "s = {s}: block error {err}");
        assert!((comp.ln_scale().re - k.ln_scale().re).abs() < 1e-8, "s = {s}: norm mismatch");
    }
}

#[test]
fn qm_free_kernel_dispersion() {
    let (m, hbar, t, dx) = (1.3, 0.8, 0.7, 0.6);
    let psi = QuadForm::gaussian(&[0.0], &[dx], hbar).unwrap();
    let k = qm_free_kernel(t, m, hbar).unwrap();
    let out = k.multiply(&psi.embed(2, &[0]).unwrap()).unwrap().marginalize(&[0]).unwrap();
    let width = out.amplitude_covariance().unwrap()[(0, 0)];
    let expected = dx * dx + hbar * hbar * t * t / (m * m * dx * dx);
    assert!(rel(width, expected) < 1e-12);
    assert!(rel(out.l2_norm().unwrap(), psi.l2_norm().unwrap()) < 1e-12);
}

#[test]
fn qm_free_kernel_plane_wave_phase() {
    let (m, hbar, t, k) = (1.3, 0.8, 0.7, 0.9);
    let psi = QuadForm::unit(1, hbar).add_linear(&nalgebra::DVector::from_vec(vec![C64::new(k, 0.0)])).unwrap();
    let out = qm_free_kernel(t, m, hbar).unwrap().multiply(&psi.embed(2, &[0]).unwrap()).unwrap().marginalize(&[0]).unwrap();
    assert!(out.m()[(0, 0)].norm() < 1e-14);
    assert!((out.b()[0] - k).norm() < 1e-14);
    assert!((out.c() - C64::new(-k * k * t / (2.0 * m), 0.0)).norm() < 1e-14);
    assert!(out.ln_scale().norm() < 1e-14);
}

#[test]
fn qm_free_kernel_short_time_limit() {
    let psi = QuadForm::gaussian(&[0.4], &[0.5], 1.0).unwrap();
    let out = qm_free_kernel(1e-9, 1.0, 1.0).unwrap().multiply(&psi.embed(2, &[0]).unwrap()).unwrap().marginalize(&[0]).unwrap();
    let mo = out.moments().unwrap();
    assert!((mo.mean[0] - 0.4).abs() < 1e-8);
    assert!((mo.cov[(0, 0)] - 0.125).abs() < 1e-8);
}

#[test]
fn reduced_kernel_is_momentum_marginal() {
    let dof = Dof::new(1.2, 0.9).unwrap();
    let hbar = 0.7;
    for &s in &[1e-3, 0.05, 0.2] {
        let t = s / dof.beta;
        let short = PropagatorKernel::from_dofs(t, &[dof], hbar, Regime::ShortTime).unwrap().to_form();
        let marg = short.marginalize(&[2]).unwrap();
        let red = reduced_kernel(t, &dof, hbar).unwrap();
        let err = (marg.m() - red.m()).norm() / red.m().norm();
        assert!(err < 1e-10, "s = {s}: {err}");
        assert!((marg.ln_scale() - red.ln_scale()).norm() < 1e-10);
        let (p1, x1) = (0.3, -0.1);
        let e = reduced_kernel_exponent(p1, x1, x1 + t * p1 / dof.m, t, &dof, hbar).unwrap();
        assert!(e.norm() < 1e-12);
    }
    assert!(matches!(reduced_kernel(0.5 / dof.beta, &dof, hbar), Err(Error::RegimeViolation(_))));
    assert!(rel(omega_reduced(0.1), omega_short(0.1) / 4.0) < 1e-15);
}

#[test]
fn relaxation_kernel_matches_action_momentum_part() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let dof = Dof::new(1.5, 0.6).unwrap();
    let hbar = 1.0;
    for _ in 0..200 {
        let (p, q, t) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.05..8.0));
        let s: f64 = dof.beta * t;
        let first = ((p * p + q * q) / s.tanh() - 2.0 * p * q / s.sinh()) / (2.0 * dof.beta_m());
        let e = relaxation_exponent(p, q, t, &dof, hbar, 1.0).unwrap();
        assert!(e.re.abs() < 1e-15);
        assert!(rel(e.im * hbar, first) < 1e-12);
    }
}

#[test]
fn relaxation_kernel_long_time_limit() {
    let dof = Dof::new(1.0, 1.0).unwrap();
    let k = relaxation_kernel(60.0, &dof, 1.0, 2.0).unwrap();
    assert!((k.m()[(0, 0)].re - 0.5).abs() < 1e-15);
    assert!(k.m()[(0, 1)].norm() < 1e-20);
}

#[test]
fn relaxation_kernel_group_property() {
    let dof = Dof::new(1.1, 0.7).unwrap();
    let (hbar, c0) = (0.9, 1.3);
    for &(t1, t2) in &[(0.2, 0.5), (1.0, 2.5), (3.0, 4.0)] {
        let a = relaxation_kernel(t1, &dof, hbar, c0).unwrap().embed(3, &[0, 1]).unwrap();
        let b = relaxation_kernel(t2, &dof, hbar, c0).unwrap().embed(3, &[1, 2]).unwrap();
        let comp = a.multiply(&b).unwrap().marginalize(&[1]).unwrap();
        let k = relaxation_kernel(t1 + t2, &dof, hbar, c0).unwrap();
        assert!((comp.m() - k.m()).norm() / k.m().norm() < 1e-8);
        assert!((comp.ln_scale().re - k.ln_scale().re).abs() < 1e-8);
    }
}

#[test]
fn relaxation_decay_rate_and_norm() {
    let dof = Dof::new(1.0, 1.0).unwrap();
    let psi = QuadForm::gaussian(&[0.2], &[1.0], 1.0).unwrap();
    let d0 = relaxation_decay(&psi, 0.0, &dof, 1.0, 1.0).unwrap();
    let direct = state_decay_sample(&psi).unwrap();
    assert_eq!(d0, direct);
    let mut max_drift: f64 = 0.0;
    for k in 1..=10 {
        let d = relaxation_decay(&psi, k as f64, &dof, 1.0, 1.0).unwrap();
        max_drift = max_drift.max((d.norm - d0.norm).abs() / d0.norm);
        let ratio = d.grad_norm / d0.grad_norm;
        assert!(rel(ratio, (-(k as f64)).exp()) < 0.05, "t = {k}: ratio {ratio}");
    }
    assert!(max_drift <= 1e-8);
}

#[test]
fn relaxation_decay_matches_numeric_derivative() {
    let dof = Dof::new(1.0, 1.0).unwrap();
    let psi = QuadForm::gaussian(&[0.2], &[1.0], 1.0).unwrap();
    let t = 10.0;
    // Rebuild the evolved state and differentiate it numerically.
    let g = 1.0;
    let chirp = |f: &QuadForm, sign: f64| {
        let mut m = f.m().clone();
        m[(0, 0)] += C64::new(sign * g, 0.0);
        QuadForm::new(m, f.b().clone(), f.c(), 1.0).unwrap().with_ln_scale(f.ln_scale())
    };
    let phi = chirp(&psi, 1.0);
    let joint = relaxation_kernel(t, &dof, 1.0, 1.0).unwrap().multiply(&phi.embed(2, &[0]).unwrap()).unwrap();
    let out = chirp(&joint.marginalize(&[0]).unwrap(), -1.0);
    let mo = out.moments().unwrap();
    let sd = mo.cov[(0, 0)].sqrt();
    let h = 1e-4 * sd;
    let grad2 = common::quad1(
        |q| {
            let d = (out.eval(&[q + h]) - out.eval(&[q - h])) / (2.0 * h);
            C64::new(d.norm_sqr(), 0.0)
        },
        mo.mean[0] - 14.0 * sd,
        mo.mean[0] + 14.0 * sd,
    )
    .re;
    let d = relaxation_decay(&psi, t, &dof, 1.0, 1.0).unwrap();
    let d0 = relaxation_decay(&psi, 0.0, &dof, 1.0, 1.0).unwrap();
    assert!(rel(grad2.sqrt(), d.grad_norm) < 1e-6);
    assert!(rel(grad2.sqrt() / d0.grad_norm, (-10f64).exp()) < 0.05);
}

#[test]
fn params_derivations() {
    let p = ModelParams::new(vec![2.0, 3.0], 0.5, 1.0).unwrap();
    assert!(rel(p.tau(1) * p.tau(1), 0.5 * 3.0) < 1e-15);
    assert!(rel(p.beta(0), 1.0) < 1e-15);
    let q = ModelParams::from_tau(1e-30, 1e-9, 1e-34).unwrap();
    assert!(rel(q.tau(0), 1e-9) < 1e-12);
    assert!(ModelParams::new(vec![1.0], -1.0, 1.0).is_err());
}

#[test]
fn action_split_reproduces_coefficients() {
    let dof = Dof::new(1.4, 0.7).unwrap();
    for (regime, ts) in [(Regime::Exact, vec![0.01, 0.5, 3.0, 40.0]), (Regime::ShortTime, vec![0.01, 0.3]), (Regime::LongTime, vec![3.5, 30.0])] {
        for t in ts {
            let k = PropagatorKernel::from_dofs(t, &[dof], 1.0, regime).unwrap();
            let (co, sp) = (k.blocks[0].coeffs, k.blocks[0].split);
            let ch2 = sp.stiffness * sp.shift * sp.shift;
            assert!(rel(co.a, sp.kin_diag + ch2) < 1e-12, "{regime:?} t = {t}");
            assert!((co.b - sp.kin_off - ch2).abs() < 1e-12 * co.a.abs());
            assert!(rel(co.c, sp.stiffness) < 1e-12);
            assert!(rel(co.d, -sp.stiffness * sp.shift) < 1e-12);
        }
    }
}
