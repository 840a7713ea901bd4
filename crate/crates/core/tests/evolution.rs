mod common;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use statrs::function::erf::erf;
use std::f64::consts::PI;
use subqm::evolution::*;
use subqm::kernels::{qm_free_kernel, reduced_kernel, Dof, PropagatorKernel, Regime};
use subqm::quadratics::QuadForm;
use subqm::Error;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(a.abs()).max(1e-300)
}

fn mat_rel(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    (a - b).norm() / b.norm().max(a.norm()).max(1e-300)
}

fn vec_rel(a: &DVector<C64>, b: &DVector<C64>) -> f64 {
    (a - b).norm() / b.norm().max(a.norm()).max(1e-300)
}

fn natural() -> Dof {
    Dof::new(1.0, 1.0).unwrap()
}

/// Correlated normalizable two-variable state with random center and phase.
fn random_state(dof: Dof, hbar: f64, v: &[f64]) -> GaussianState {
    let m = DMatrix::from_row_slice(
        2,
        2,
        &[c(v[0], 1.0 + v[1].abs()), c(v[2], 0.3 * v[3]), c(v[2], 0.3 * v[3]), c(v[4], 1.0 + v[5].abs())],
    );
    let b = DVector::from_vec(vec![c(v[6], v[7]), c(v[8], v[9])]);
    GaussianState::new(QuadForm::new(m, b, c(0.2, 0.0), hbar).unwrap(), vec![dof], 0.0).unwrap()
}

/// Direct quadrature of `∫ K(X¹, X²) ψ(X¹) dX¹` with the kernel built from the action.
fn quad_propagate(state: &GaussianState, kernel: &PropagatorKernel, x2: [f64; 2], box_: f64) -> C64 {
    let hbar = state.hbar();
    let mo = state.form.moments().unwrap();
    let (cp, cx) = (mo.mean[0], mo.mean[1]);
    let pre = kernel.norm_abs() * c(0.0, -1.0);
    let f = |p: f64, x: f64| {
        let s = kernel.blocks[0].action(subqm::kernels::PhasePoint::new(p, x), subqm::kernels::PhasePoint::new(x2[0], x2[1]));
        pre * (c(0.0, s / hbar)).exp() * state.form.eval(&[p, x])
    };
    common::quad2(f, (cp - box_, cp + box_), (cx - box_, cx + box_))
}

#[test]
fn closed_form_matches_direct_quadrature() {
    let dof = natural();
    let state = random_state(dof, 1.0, &[0.3, 0.5, -0.2, 0.4, 0.1, 0.2, 0.4, -0.1, 0.2, 0.3]);
    // Short durations make the kernel too oscillatory for the quadrature.
    for &t in &[3.0, 1.0] {
        let kernel = PropagatorKernel::from_dofs(t, &[dof], 1.0, Regime::Exact).unwrap();
        let out = propagate_with(&state, &kernel).unwrap();
        for &x2 in &[[0.1, -0.3], [0.5, 0.7], [-0.4, 0.2]] {
            let q = quad_propagate(&state, &kernel, x2, 9.0);
            let z = out.form.eval(&x2);
            assert!(common::rel(z, q) < 1e-7, "t = {t}: {z} vs {q}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]
    #[test]
    fn closed_form_matches_marginalization(v in prop::collection::vec(-1.0f64..1.0, 13)) {
        let dofs = vec![Dof::new(1.0 + v[10].abs(), 0.5 + v[11].abs()).unwrap(), Dof::new(0.7, 1.3).unwrap()];
        let hbar = 0.8;
        let a = random_state(dofs[0], hbar, &v);
        let b = random_state(dofs[1], hbar, &v.iter().rev().copied().collect::<Vec<_>>());
        let joint = a.form.embed(4, &[0, 1]).unwrap().multiply(&b.form.embed(4, &[2, 3]).unwrap()).unwrap();
        let state = GaussianState::new(joint, dofs.clone(), 0.0).unwrap();
        // Durations where the literal routes keep ten digits.
        let t = 10f64.powf(-0.5 + 1.5 * v[12].abs());
        let kernel = PropagatorKernel::from_dofs(t, &dofs, hbar, Regime::Exact).unwrap();
        let stable = propagate_with(&state, &kernel).unwrap();
        let x = [0.2, -0.1, 0.3, 0.05];
        for other in [propagate_closed_form(&state, &kernel).unwrap(), propagate_by_marginalization(&state, &kernel).unwrap()] {
            prop_assert!(mat_rel(stable.form.m(), other.form.m()) < 1e-10, "t = {t}: {} vs {}", stable.form.m(), other.form.m());
            prop_assert!(vec_rel(stable.form.b(), other.form.b()) < 1e-10);
            prop_assert!(common::rel(stable.form.eval(&x), other.form.eval(&x)) < 1e-10);
        }
    }
}

#[test]
fn propagation_composes() {
    let dof = Dof::new(1.3, 0.6).unwrap();
    let state = random_state(dof, 0.9, &[0.1, 0.2, 0.3, -0.2, 0.4, 0.1, 0.5, 0.2, -0.3, 0.1]);
    for &(t1, t2) in &[(0.1, 0.25), (0.5, 1.5), (2.0, 3.0)] {
        let a = propagate(&propagate(&state, t1).unwrap(), t2).unwrap();
        let b = propagate(&state, t1 + t2).unwrap();
        assert!(mat_rel(a.form.m(), b.form.m()) < 1e-9);
        assert!(vec_rel(a.form.b(), b.form.b()) < 1e-9);
        assert!(rel(a.form.l2_norm().unwrap(), b.form.l2_norm().unwrap()) < 1e-9);
        assert!((a.t - t1 - t2).abs() < 1e-15);
    }
}

#[test]
fn norm_is_preserved() {
    let dof = Dof::new(0.8, 2.0).unwrap();
    let state = random_state(dof, 1.1, &[0.4, 0.1, -0.3, 0.2, 0.2, 0.6, 0.1, 0.3, 0.2, -0.4]);
    let n0 = state.form.l2_norm().unwrap();
    // Beyond βT ≈ 10 the momentum damping falls below round-off.
    for &t in &[1e-3, 0.05, 0.7, 4.0] {
        let n = propagate(&state, t).unwrap().form.l2_norm().unwrap();
        assert!(rel(n, n0) < 1e-8, "t = {t}: {n} vs {n0}");
    }
}

#[test]
fn moments_drift_matches_quadrature() {
    let dof = Dof::new(1.0, 0.7).unwrap();
    let state = GaussianState::product(vec![dof], 1.0, &[(0.8, -0.4)], &[(0.6, 0.9)]).unwrap();
    let out = propagate(&state, 1.2).unwrap();
    let mo = out.form.moments().unwrap();
    let dens = |p: f64, x: f64| out.form.eval(&[p, x]).norm_sqr();
    let (bp, bx) = ((mo.mean[0] - 8.0, mo.mean[0] + 8.0), (mo.mean[1] - 10.0, mo.mean[1] + 10.0));
    let z = common::quad2(|p, x| c(dens(p, x), 0.0), bp, bx).re;
    let mp = common::quad2(|p, x| c(p * dens(p, x), 0.0), bp, bx).re / z;
    let mx = common::quad2(|p, x| c(x * dens(p, x), 0.0), bp, bx).re / z;
    let vx = common::quad2(|p, x| c((x - mx).powi(2) * dens(p, x), 0.0), bp, bx).re / z;
    assert!((mp - mo.mean[0]).abs() < 1e-8);
    assert!((mx - mo.mean[1]).abs() < 1e-8);
    assert!(rel(vx, mo.cov[(1, 1)]) < 1e-8);
    // Short durations transport the center with the momentum.
    let t = 1e-3;
    let short = propagate(&state, t).unwrap().form.moments().unwrap();
    let factor = (short.mean[1] + 0.4) / (0.8 * t / dof.m);
    assert!((factor - 1.0).abs() < 1e-2, "drift factor {factor}");
}

#[test]
fn relaxed_input_under_long_time_kernel() {
    // M₂ = diag(1/βm, 0), B₂ = k(−1/βm, 1) and the constant
    // −k²T/2m + [4k² − (βml − k)²]/(4βm).
    let dof = Dof::new(1.7, 0.9).unwrap();
    let (l, k, t, hbar) = (0.35, -0.6, 30.0, 0.8);
    let state = GaussianState::relaxed(dof, hbar, l, k).unwrap();
    let out = propagate_regime(&state, t, Regime::LongTime).unwrap();
    let bm = dof.beta_m();
    let m = out.form.m();
    assert!((m[(0, 0)] - c(1.0 / bm, 0.0)).norm() < 1e-12);
    assert!(m[(0, 1)].norm() < 1e-12 && m[(1, 1)].norm() < 1e-12);
    let b = out.form.b();
    assert!((b[0] - c(-k / bm, 0.0)).norm() < 1e-12);
    assert!((b[1] - c(k, 0.0)).norm() < 1e-12);
    let c2 = -k * k * t / (2.0 * dof.m) + (4.0 * k * k - (bm * l - k).powi(2)) / (4.0 * bm);
    assert!((out.form.c() - c(c2, 0.0)).norm() < 1e-12 * c2.abs().max(1.0));
    // The exact kernel agrees up to e^{−βT}.
    let exact = propagate(&state, t).unwrap();
    assert!(mat_rel(exact.form.m(), m) < 1e-10);
    assert!((exact.form.c() - out.form.c()).norm() < 1e-9);
}

#[test]
fn slit_multiplies_by_aperture() {
    let dof = natural();
    let state = random_state(dof, 1.0, &[0.1, 0.2, 0.3, 0.1, -0.2, 0.3, 0.1, 0.0, 0.4, -0.2]);
    let slit = SlitSpec::new(0.3, 0.25).unwrap();
    let out = apply_slit(&state, 0, &slit).unwrap();
    for &(p, x) in &[(0.0, 0.3), (0.4, -0.1), (-0.2, 0.6)] {
        let chi = (2.0 / PI).sqrt() * (-(x - 0.3f64).powi(2) / (2.0 * 0.0625)).exp();
        assert!(common::rel(out.form.eval(&[p, x]), state.form.eval(&[p, x]) * chi) < 1e-13);
    }
    // Aperture integral is 2Δx.
    let unit = GaussianState::unit(vec![dof], 1.0);
    let a = apply_slit(&unit, 0, &slit).unwrap().form.marginalize(&[1]).unwrap();
    assert!(common::rel(a.eval(&[0.0]), c(0.5, 0.0)) < 1e-13);
    assert!(matches!(apply_slit(&unit, 0, &SlitSpec { center: 0.0, half_width: 1e-6 }), Err(Error::InvalidParameter(_))));
    assert!(SlitSpec::new(0.0, 0.0).is_err());
    assert!(matches!(apply_slit(&unit, 1, &slit), Err(Error::DimensionMismatch(_))));
}

#[test]
fn slit_widths_add_precisions() {
    let dof = natural();
    let state = GaussianState::product(vec![dof], 1.0, &[(0.0, 0.1)], &[(2.0, 0.5)]).unwrap();
    let out = apply_slit(&state, 0, &SlitSpec::new(0.1, 0.8).unwrap()).unwrap();
    let r = concentration(&out, 0).unwrap();
    let expect = 1.0 / (1.0 / 0.25 + 1.0 / 0.64);
    assert!(rel(r.dx * r.dx, expect) < 1e-12);
    // A state flat in x takes the slit width exactly.
    let flat = GaussianState::unit(vec![dof], 1.0).with_envelope(0, 0.0, 1.0).unwrap();
    let flat = GaussianState::new(flat.form.damp(0, 0.0, 1.5), vec![dof], 0.0).unwrap();
    let unit = GaussianState::new(QuadForm::unit(2, 1.0).damp(0, 0.0, 1.5), vec![dof], 0.0).unwrap();
    let r = concentration(&apply_slit(&unit, 0, &SlitSpec::new(0.0, 0.3).unwrap()).unwrap(), 0).unwrap();
    assert!(rel(r.dx, 0.3) < 1e-12);
    assert!(concentration(&flat, 0).is_ok());
}

#[test]
fn concentration_report_unwinds_definition() {
    let dof = natural();
    let hbar = 0.5;
    let s = (hbar / 2.0f64).sqrt();
    let state = GaussianState::product(vec![dof], hbar, &[(0.3, -0.2)], &[(2.0 * s, 3.0 * s)]).unwrap();
    let r = concentration(&state, 0).unwrap();
    assert!(rel(r.dx, 3.0 * s) < 1e-12 && rel(r.dp, 2.0 * s) < 1e-12);
    assert!(rel(r.kappa, 2.0 * r.dx * r.dp / hbar) < 1e-15);
    assert!(!r.is_concentrated);
    assert!((r.p0 - 0.3).abs() < 1e-12 && (r.x0 + 0.2).abs() < 1e-12);
    let unit = GaussianState::unit(vec![dof], hbar);
    assert!(matches!(concentration(&unit, 0), Err(Error::NonNormalizable { .. })));
}

#[test]
fn first_slit_concentrates_along_ray() {
    // Short-time kernel: Im M₂ = (ħ/Δ̃²) e eᵀ, e = (−T/m, 1),
    // Δ̃² = δ² + ħ²(βT)⁶/(9δ²β²m²).
    let dof = Dof::new(1.4, 0.8).unwrap();
    let hbar = 0.6;
    let (x10, delta) = (0.2, 0.05);
    for &t in &[1e-3 / dof.beta, 0.01 / dof.beta, 0.1 / dof.beta] {
        let psi = apply_slit(&GaussianState::unit(vec![dof], hbar), 0, &SlitSpec::new(x10, delta).unwrap()).unwrap();
        let out = propagate_regime(&psi, t, Regime::ShortTime).unwrap();
        let s = dof.beta * t;
        let width = delta * delta + hbar * hbar * s.powi(6) / (9.0 * delta * delta * dof.beta_m().powi(2));
        let e = [-t / dof.m, 1.0];
        let im = out.form.im_m();
        for r in 0..2 {
            for q in 0..2 {
                let want = hbar / width * e[r] * e[q];
                assert!((im[(r, q)] - want).abs() < 1e-9 * (hbar / width) * (1.0 + e[r].abs() * e[q].abs()));
            }
        }
    }
}

#[test]
fn concentration_envelope_on_grid() {
    let dof = natural();
    let hbar = 1.0;
    let (x10, delta, t) = (0.0, 0.1, 0.05);
    let psi = apply_slit(&GaussianState::unit(vec![dof], hbar), 0, &SlitSpec::new(x10, delta).unwrap()).unwrap();
    let out = propagate(&psi, t).unwrap();
    let amp = |p: f64, x: f64| out.form.eval(&[p, x]).norm();
    let n = 81;
    let mut samples = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let p = -20.0 + 40.0 * i as f64 / (n - 1) as f64;
            let x = -2.0 + 4.0 * j as f64 / (n - 1) as f64;
            samples.push((p, x, amp(p, x)));
        }
    }
    let peak = samples.iter().map(|s| s.2).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for &(p, x, a) in &samples {
        if a < 1e-3 * peak {
            continue;
        }
        let u = x - x10 - p * t / dof.m;
        let bound = peak * (-u * u / (4.0 * delta * delta)).exp();
        worst = worst.max(a / bound);
    }
    assert!(worst <= 10.0, "envelope constant {worst}");
}

fn pipeline_widths(dof: Dof, hbar: f64, delta: f64, t: f64, regime: Regime) -> ConcentrationReport {
    let x20 = 0.3;
    let slit1 = SlitSpec::new(x20 - 0.5 * t / dof.m, delta).unwrap();
    let slit2 = SlitSpec::new(x20, delta).unwrap();
    concentration(&two_slit_pipeline(dof, hbar, &slit1, &slit2, t, regime).unwrap(), 0).unwrap()
}

#[test]
fn two_slit_pipeline_identity() {
    let dof = Dof::new(1.2, 0.9).unwrap();
    let hbar = 0.7;
    for &s in &[1e-3, 3e-3, 0.01, 0.03, 0.1] {
        let t = s / dof.beta;
        for &delta in &[0.02, 0.1] {
            let r = pipeline_widths(dof, hbar, delta, t, Regime::ShortTime);
            let lhs = r.dp * r.dp * t * t / (dof.m * dof.m);
            let rhs = 2.0 * delta * delta + hbar * hbar * s.powi(6) / (9.0 * delta * delta * dof.beta_m().powi(2));
            assert!(rel(lhs, rhs) < 1e-6, "s = {s}: {lhs} vs {rhs}");
            assert!(rel(r.dx * r.dx, delta * delta) < 1e-6);
        }
    }
}

#[test]
fn exact_kernel_pipeline_approaches_identity() {
    let dof = natural();
    let hbar = 1.0;
    let delta = 0.05;
    for &s in &[1e-3, 0.01, 0.1] {
        let short = pipeline_widths(dof, hbar, delta, s, Regime::ShortTime);
        let exact = pipeline_widths(dof, hbar, delta, s, Regime::Exact);
        assert!(rel(exact.dp, short.dp) < s * s, "s = {s}");
        assert!(rel(exact.dx, short.dx) < s * s);
    }
}

#[test]
fn centered_variant_recenters_state() {
    let dof = Dof::new(0.9, 1.1).unwrap();
    let hbar = 1.0;
    let (x20, p20, t, delta) = (0.4, -1.3, 0.05, 0.03);
    let slit1 = SlitSpec::new(x20 - p20 * t / dof.m, delta).unwrap();
    let slit2 = SlitSpec::new(x20, delta).unwrap();
    for regime in [Regime::ShortTime, Regime::Exact] {
        let r = concentration(&two_slit_pipeline(dof, hbar, &slit1, &slit2, t, regime).unwrap(), 0).unwrap();
        // The exact kernel bends the ray at order (βT)².
        let tol = if regime == Regime::Exact { (dof.beta * t).powi(2) } else { 1e-9 };
        assert!((r.x0 - x20).abs() < 1e-9 && (r.p0 - p20).abs() < tol * p20.abs(), "{regime:?}: {r:?}");
    }
}

#[test]
fn degree_of_concentration() {
    let dof = Dof::new(1.1, 0.8).unwrap();
    let hbar = 0.9;
    for &s in &[1e-3, 0.01, 0.1] {
        let t = s / dof.beta;
        for &delta in &[0.01, 0.05] {
            let r = pipeline_widths(dof, hbar, delta, t, Regime::ShortTime);
            let k2 = 8.0 * dof.m.powi(2) * delta.powi(4) / (t * t * hbar * hbar) + 4.0 / 9.0 * s.powi(4);
            assert!(rel(r.kappa * r.kappa, k2) < 1e-6);
        }
        let eq = 0.5 * s * (t * hbar / dof.m).sqrt();
        let r = pipeline_widths(dof, hbar, eq, t, Regime::ShortTime);
        assert!(rel(r.kappa, s * s) < 0.1, "κ = {} at βT = {s}", r.kappa);
        assert!(r.is_concentrated);
    }
}

/// Position width of `|∫ ψ dp₂|` after the reduced kernel, for the product state
/// with amplitude widths `Δx₁`, `Δp₁`.
fn reduced_pipeline(dx1: f64, dp1: f64, t: f64, dof: &Dof, hbar: f64) -> f64 {
    let psi = QuadForm::gaussian(&[0.2, -0.1], &[dp1, dx1], hbar).unwrap().embed(3, &[0, 1]).unwrap();
    let k = reduced_kernel(t, dof, hbar).unwrap();
    let out = k.multiply(&psi).unwrap().marginalize(&[0, 1]).unwrap();
    hbar / out.m()[(0, 0)].im
}

#[test]
fn subqm_dispersion_example_and_pipeline() {
    let dof = Dof::new(1.0, 0.1).unwrap();
    let v = dispersion_subqm(1.0, 0.01, 1.0, &dof, 1.0).unwrap();
    let want = 1.0 + 0.01 + (1.0 / 9.0) * 1e-6 / (1e-4 + 1e-2);
    assert!((v - want).abs() < 1e-15);
    assert!((v - 1.01001).abs() < 5e-6);
    assert!(rel(reduced_pipeline(1.0, 0.1, 1.0, &dof, 1.0), v) < 1e-8);
    let dof = Dof::new(1.3, 2.0).unwrap();
    for &s in &[1e-3, 0.01, 0.05, 0.1] {
        let t = s / dof.beta;
        for &(dx, dp) in &[(1e-3, 0.2), (0.05, 1e-3), (0.3, 2.0)] {
            let f = dispersion_subqm(dx * dx, dp * dp, t, &dof, 0.7).unwrap();
            assert!(rel(reduced_pipeline(dx, dp, t, &dof, 0.7), f) < 1e-8);
        }
    }
    // β → 0 leaves DetQM transport.
    let tiny = Dof::new(1.0, 1e-8).unwrap();
    let f = dispersion_subqm(0.4, 0.09, 2.0, &tiny, 1.0).unwrap();
    assert!(rel(f, 0.4 + 0.09 * 4.0) < 1e-12);
    assert!(matches!(dispersion_subqm(1.0, 1.0, 0.0, &dof, 1.0), Err(Error::NonpositiveDuration(_))));
}

#[test]
fn concentration_effect_beats_qm_spreading() {
    let dof = Dof::new(1.0, 1.0).unwrap();
    let (dx1, t) = (0.1f64, 0.05);
    let dp1 = 0.01 * 1.0 / (2.0 * dx1);
    let sub = dispersion_subqm(dx1 * dx1, dp1 * dp1, t, &dof, 1.0).unwrap();
    let qm = dispersion_qm(dx1 * dx1, t, dof.m, 1.0).unwrap();
    assert!(sub - dx1 * dx1 < 1e-2 * (qm - dx1 * dx1));
}

#[test]
fn qm_dispersion_examples_and_kernel() {
    let (m, hbar, t) = (1.5, 0.8, 0.6);
    // Matched amplitude width ħT/m doubles; the |ψ|² variance ħT/2m doubles likewise.
    let matched = hbar * t / m;
    assert!(rel(dispersion_qm(matched, t, m, hbar).unwrap(), 2.0 * matched) < 1e-14);
    let var = 0.5 * dispersion_qm(2.0 * hbar * t / (2.0 * m), t, m, hbar).unwrap();
    assert!(rel(var, 2.0 * hbar * t / (2.0 * m)) < 1e-14);
    assert!(rel(dispersion_qm(0.3, 1e-12, m, hbar).unwrap(), 0.3) < 1e-12);
    for &dx2 in &[0.01, 0.3, 2.0] {
        let psi = QuadForm::gaussian(&[0.1], &[f64::sqrt(dx2)], hbar).unwrap().embed(2, &[0]).unwrap();
        let out = qm_free_kernel(t, m, hbar).unwrap().multiply(&psi).unwrap().marginalize(&[0]).unwrap();
        let w = hbar / out.m()[(0, 0)].im;
        assert!(rel(w, dispersion_qm(dx2, t, m, hbar).unwrap()) < 1e-10);
    }
}

fn relaxed_pair(dof: Dof, hbar: f64, k1: f64, k2: f64, envelope: Option<f64>) -> Superposition {
    let mk = |k: f64| {
        let s = GaussianState::relaxed(dof, hbar, 0.0, k).unwrap();
        match envelope {
            Some(w) => s.with_envelope(0, 0.0, w).unwrap(),
            None => s,
        }
    };
    Superposition::new(vec![(c(1.0, 0.0), mk(k1)), (c(0.0, 1.0), mk(k2))]).unwrap()
}

fn samples(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[test]
fn ip2_fringes_follow_qm_at_effective_time() {
    let dof = Dof::new(1.0, 1.0).unwrap();
    let hbar = 1.0;
    let (k1, k2, t) = (0.4, -0.6, 30.0);
    let sup = relaxed_pair(dof, hbar, k1, k2, None).propagate_regime(t, Regime::LongTime).unwrap();
    let xs = samples(-20.0, 20.0, 4001);
    let rho = density_ip2(&sup, &xs).unwrap();
    // QM plane waves at T − 1/2β with weights 1 and i: |1 + i e^{iΔ}|² peaks at Δ = −π/2 mod 2π.
    let te = t - 0.5 / dof.beta;
    let phase = |x: f64| ((k2 - k1) * x - (k2 * k2 - k1 * k1) * te / (2.0 * dof.m)) / hbar + 0.5 * PI;
    let spacing = 2.0 * PI * hbar / (k1 - k2).abs();
    let got = local_maxima(&xs, &rho);
    assert!(got.len() >= 5);
    for x in got {
        let d = phase(x) - (phase(x) / (2.0 * PI)).round() * 2.0 * PI;
        assert!(d.abs() / (2.0 * PI) < 0.01, "fringe at {x} is {} spacings off ({spacing})", d / (2.0 * PI));
    }
    assert!(visibility(&rho) > 0.9);
}

#[test]
fn ip2_amplitude_equals_qm_evolution_with_envelope() {
    let dof = Dof::new(1.3, 0.7).unwrap();
    let hbar = 0.9;
    let (k, w, t) = (0.5, 6.0, 40.0);
    let te = t - 0.5 / dof.beta;
    let state = GaussianState::relaxed(dof, hbar, 0.0, k).unwrap().with_envelope(0, 0.0, w).unwrap();
    let sub = reduced_amplitude(&propagate_regime(&state, t, Regime::LongTime).unwrap()).unwrap();
    let f = QuadForm::gaussian(&[0.0], &[w], hbar).unwrap().add_linear(&DVector::from_vec(vec![c(k, 0.0)])).unwrap();
    let qm = qm_free_kernel(te, dof.m, hbar).unwrap().multiply(&f.embed(2, &[0]).unwrap()).unwrap().marginalize(&[0]).unwrap();
    assert!((sub.m()[(0, 0)] - qm.m()[(0, 0)]).norm() < 1e-12 * qm.m()[(0, 0)].norm());
    let x0 = 0.3;
    let ratio = |x: f64| sub.eval(&[x]) / qm.eval(&[x]);
    let r0 = ratio(x0);
    for &x in &[-5.0, 0.0, 2.0, 9.0] {
        assert!((ratio(x) / r0 - c(1.0, 0.0)).norm() < 1e-9, "x = {x}");
    }
}

#[test]
fn ip1_two_k_is_fringe_free() {
    let dof = Dof::new(1.0, 1.0).unwrap();
    let sup = relaxed_pair(dof, 1.0, 0.4, -0.6, None).propagate_regime(30.0, Regime::LongTime).unwrap();
    let xs = samples(-20.0, 20.0, 801);
    let v1 = visibility(&density_ip1(&sup, &xs).unwrap());
    let v2 = visibility(&density_ip2(&sup, &xs).unwrap());
    assert!(v1 < 1e-6, "IP₁ visibility {v1}");
    assert!(v2 > 0.9, "IP₂ visibility {v2}");
}

#[test]
fn ip1_matches_ip2_for_single_k() {
    let dof = Dof::new(1.0, 1.0).unwrap();
    let s = GaussianState::relaxed(dof, 1.0, 0.0, 0.7).unwrap();
    let sup = Superposition::single(propagate_regime(&s, 10.0, Regime::LongTime).unwrap());
    let xs = samples(-10.0, 10.0, 101);
    let (a, b) = (density_ip1(&sup, &xs).unwrap(), density_ip2(&sup, &xs).unwrap());
    for i in 0..xs.len() {
        assert!(rel(a[i] / a[0], b[i] / b[0]) < 1e-8);
    }
}

#[test]
fn ip1_equal_weights_give_classical_mixture() {
    let dof = natural();
    let hbar = 1.0;
    let (x1, x2, dx, dp) = (-0.4f64, 0.9f64, 0.7f64, 0.1);
    let mk = |x0: f64, p0: f64| GaussianState::product(vec![dof], hbar, &[(p0, x0)], &[(dp, dx)]).unwrap();
    let w = c(0.5f64.sqrt(), 0.0);
    let sup = Superposition::new(vec![(w, mk(x1, 3.0)), (w * c(0.0, 1.0), mk(x2, -3.0))]).unwrap();
    let p_one = |x0: f64, a: f64, b: f64| 0.5 * (erf((b - x0) / dx) - erf((a - x0) / dx));
    for &l in &[0.5, 1.0, 2.5] {
        let got = probability_ip1(&sup, -l, l).unwrap();
        let want = 0.5 * (p_one(x1, -l, l) + p_one(x2, -l, l));
        assert!((got - want).abs() < 1e-10, "L = {l}: {got} vs {want}");
    }
    // Relaxed envelopes: the density is the weighted sum of the single densities.
    let sup = relaxed_pair(dof, hbar, 0.3, -0.5, Some(4.0)).propagate_regime(5.0, Regime::Exact).unwrap();
    let xs = samples(-6.0, 6.0, 25);
    let mix = density_ip1(&sup, &xs).unwrap();
    let a = density_ip1(&Superposition::single(sup.terms[0].1.clone()), &xs).unwrap();
    let b = density_ip1(&Superposition::single(sup.terms[1].1.clone()), &xs).unwrap();
    for i in 0..xs.len() {
        assert!(rel(mix[i], a[i] + b[i]) < 1e-10);
    }
}

#[test]
fn ip2_probability_properties() {
    let dof = Dof::new(1.0, 0.5).unwrap();
    let state = random_state(dof, 1.0, &[0.2, 0.3, 0.1, 0.2, -0.1, 0.4, 0.3, 0.1, -0.2, 0.2]);
    let out = propagate(&state, 1.5).unwrap();
    let sup = Superposition::single(out.clone());
    let whole = probability_ip2(&sup, -1e6, 1e6).unwrap();
    assert!((whole - 1.0).abs() < 1e-10);
    let (a, m, b) = (-0.7, 0.2, 1.4);
    let sum = probability_ip2(&sup, a, m).unwrap() + probability_ip2(&sup, m, b).unwrap();
    assert!((sum - probability_ip2(&sup, a, b).unwrap()).abs() < 1e-10);
    // Global phase and rescaling leave probabilities unchanged.
    let scaled = Superposition::new(vec![(c(-2.0, 3.0), out.clone())]).unwrap();
    assert!((probability_ip2(&scaled, a, b).unwrap() - probability_ip2(&sup, a, b).unwrap()).abs() < 1e-12);
    // A single Gaussian yields a Gaussian density.
    let amp = reduced_amplitude(&out).unwrap();
    let mo = amp.moments().unwrap();
    let sd = mo.cov[(0, 0)].sqrt();
    let want = 0.5 * (erf((b - mo.mean[0]) / (2f64.sqrt() * sd)) - erf((a - mo.mean[0]) / (2f64.sqrt() * sd)));
    assert!((probability_ip2(&sup, a, b).unwrap() - want).abs() < 1e-10);
    assert!(probability_ip2(&sup, 1.0, 1.0).is_err());
    // Plane waves have no finite total.
    let flat = relaxed_pair(dof, 1.0, 0.1, 0.2, None);
    assert!(matches!(probability_ip2(&flat, 0.0, 1.0), Err(Error::NonIntegrable { .. })));
}

#[test]
fn subqm_evolution_equation_with_beta_squared() {
    // iħψ_t = −p²/2m ψ − (ħ²/2) m β² ψ_pp − iħ (p/m) ψ_x.
    let dof = Dof::new(1.3, 0.5).unwrap();
    let hbar = 0.7;
    let state = random_state(dof, hbar, &[0.3, 0.2, -0.1, 0.3, 0.2, 0.1, 0.2, -0.3, 0.1, 0.4]);
    let h = 1e-3;
    for &t in &[0.3, 1.0] {
        let at = |s: f64| propagate(&state, s).unwrap().form;
        let forms: Vec<QuadForm> = [-2.0, -1.0, 1.0, 2.0].iter().map(|k| at(t + k * h)).collect();
        let f0 = at(t);
        for &(p, x) in &[(0.2, -0.1), (-0.5, 0.4), (0.7, 0.8)] {
            let lg = |f: &QuadForm| f.exponent(&[p, x]);
            let dt = (lg(&forms[0]) - 8.0 * lg(&forms[1]) + 8.0 * lg(&forms[2]) - lg(&forms[3])) / (12.0 * h);
            let i = c(0.0, 1.0);
            let g = (f0.m() * DVector::from_vec(vec![c(p, 0.0), c(x, 0.0)]) + f0.b()) * (i / hbar);
            let rhs = |beta: f64| {
                -p * p / (2.0 * dof.m) - 0.5 * hbar * hbar * dof.m * beta * beta * (g[0] * g[0] + i * f0.m()[(0, 0)] / hbar)
                    - i * hbar * (p / dof.m) * g[1]
            };
            let lhs = i * hbar * dt;
            let scale = lhs.norm().max(1.0);
            assert!((lhs - rhs(dof.beta)).norm() < 1e-6 * scale, "t = {t}: {lhs} vs {}", rhs(dof.beta));
            assert!((lhs - rhs(dof.beta.sqrt())).norm() > 1e-3 * scale);
        }
    }
}
