//! Gaussian wave functions under the relaxation-model propagator.
//!
//! States are [`QuadForm`]s over `(p₁, x₁, …, pₙ, xₙ)`. Propagation uses the
//! closed form
//!
//! ```text
//! R   = Q_in + M₁
//! M₂  = Q_out − Q_trᵀ R⁻¹ Q_tr
//! B₂  = −Q_trᵀ R⁻¹ B₁
//! c₂  = c₁ − ½ B₁ᵀ R⁻¹ B₁
//! ```
//!
//! with the prefactor `N_T ∫ exp{(i/2ħ) XᵀRX} dX`. Widths follow the
//! amplitude convention: a factor `exp{−x²/(2Δx²)}` reports `Δx²`.

use nalgebra::{DMatrix, DVector, Matrix2};
use std::f64::consts::PI;

use crate::error::{require_duration, require_positive, Error, Result};
use crate::kernels::{Dof, PropagatorKernel, Regime};
use crate::quadratics::{adjugate_inverse_2x2, QuadForm, C64, I};

/// Relative strength of the `+i0` damping used for undamped momentum integrals.
pub const REGULARIZATION: f64 = 1e-9;

/// Smallest accepted `Δx² βm/ħ` for a slit.
pub const MIN_SLIT_WIDTH: f64 = 1e-10;

/// Wave function over `n` degrees of freedom.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianState {
    pub form: QuadForm,
    pub dofs: Vec<Dof>,
    pub t: f64,
}

/// Gaussian aperture `χ̃(x) = √(2/π) exp{−(x − x₀)²/(2Δx²)}`, so `∫χ̃ = 2Δx`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlitSpec {
    pub center: f64,
    pub half_width: f64,
}

impl SlitSpec {
    pub fn new(center: f64, half_width: f64) -> Result<Self> {
        require_positive("slit half-width", half_width)?;
        Ok(Self { center, half_width })
    }
}

/// Widths, centers and degree of concentration of one degree of freedom.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConcentrationReport {
    pub dx: f64,
    pub dp: f64,
    pub kappa: f64,
    pub p0: f64,
    pub x0: f64,
    pub is_concentrated: bool,
}

/// Index of the momentum of degree of freedom `i`.
pub fn p_index(i: usize) -> usize {
    2 * i
}

/// Index of the position of degree of freedom `i`.
pub fn x_index(i: usize) -> usize {
    2 * i + 1
}

impl GaussianState {
    pub fn new(form: QuadForm, dofs: Vec<Dof>, t: f64) -> Result<Self> {
        if form.dim() != 2 * dofs.len() {
            return Err(Error::DimensionMismatch(format!(
                "form has {} variables for {} degrees of freedom",
                form.dim(),
                dofs.len()
            )));
        }
        Ok(Self { form, dofs, t })
    }

    /// The constant wave function `ψ ≡ 1`.
    pub fn unit(dofs: Vec<Dof>, hbar: f64) -> Self {
        let n = dofs.len();
        Self { form: QuadForm::unit(2 * n, hbar), dofs, t: 0.0 }
    }

    /// Product Gaussian `Πᵢ exp{−(xᵢ−x0ᵢ)²/2Δxᵢ² − (pᵢ−p0ᵢ)²/2Δpᵢ²}`.
    pub fn product(dofs: Vec<Dof>, hbar: f64, center: &[(f64, f64)], widths: &[(f64, f64)]) -> Result<Self> {
        if center.len() != dofs.len() || widths.len() != dofs.len() {
            return Err(Error::DimensionMismatch("one (p, x) pair per degree of freedom".into()));
        }
        let c: Vec<f64> = center.iter().flat_map(|&(p, x)| [p, x]).collect();
        let w: Vec<f64> = widths.iter().flat_map(|&(p, x)| [p, x]).collect();
        Ok(Self { form: QuadForm::gaussian(&c, &w, hbar)?, dofs, t: 0.0 })
    }

    /// Relaxed state `exp{(i/ħ)(p²/2βm + l p + k x)}` of one degree of freedom.
    pub fn relaxed(dof: Dof, hbar: f64, l: f64, k: f64) -> Result<Self> {
        let m = DMatrix::from_row_slice(2, 2, &[C64::new(1.0 / dof.beta_m(), 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
        let b = DVector::from_vec(vec![C64::new(l, 0.0), C64::new(k, 0.0)]);
        Self::new(QuadForm::new(m, b, C64::new(0.0, 0.0), hbar)?, vec![dof], 0.0)
    }

    pub fn n(&self) -> usize {
        self.dofs.len()
    }

    pub fn hbar(&self) -> f64 {
        self.form.hbar()
    }

    /// Multiplies the position profile of dof `i` by `exp{−(x − x₀)²/(2w²)}`.
    pub fn with_envelope(mut self, i: usize, x0: f64, w: f64) -> Result<Self> {
        require_positive("envelope width", w)?;
        self.form = self.form.damp(x_index(i), x0, w);
        Ok(self)
    }
}

fn complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

fn kernel_blocks(kernel: &PropagatorKernel) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = kernel.n();
    let mut qin = DMatrix::zeros(2 * n, 2 * n);
    let mut qout = DMatrix::zeros(2 * n, 2 * n);
    let mut qtr = DMatrix::zeros(2 * n, 2 * n);
    for (i, b) in kernel.blocks.iter().enumerate() {
        for r in 0..2 {
            for s in 0..2 {
                qin[(2 * i + r, 2 * i + s)] = b.qin[(r, s)];
                qout[(2 * i + r, 2 * i + s)] = b.qout[(r, s)];
                qtr[(2 * i + r, 2 * i + s)] = b.qtr[(r, s)];
            }
        }
    }
    (qin, qout, qtr)
}

fn inverse(r: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    if r.nrows() == 2 {
        let a = Matrix2::new(r[(0, 0)], r[(0, 1)], r[(1, 0)], r[(1, 1)]);
        let inv = adjugate_inverse_2x2(&a)?;
        return Ok(DMatrix::from_fn(2, 2, |i, j| inv[(i, j)]));
    }
    let lu = r.clone().lu();
    let det = lu.determinant();
    let tol = 1e-12 * r.norm().powi(r.nrows() as i32);
    if !(det.norm() > tol) {
        return Err(Error::SingularMatrix { det: det.norm(), tol });
    }
    lu.try_inverse().ok_or(Error::SingularMatrix { det: det.norm(), tol })
}

/// Applies a kernel through the literal closed form. Below `βT ≈ 0.1` the
/// Schur complement cancels terms of size `(βT)⁻³`; [`propagate_with`] is the
/// stable equivalent.
pub fn propagate_closed_form(state: &GaussianState, kernel: &PropagatorKernel) -> Result<GaussianState> {
    if kernel.n() != state.n() {
        return Err(Error::DimensionMismatch("kernel and state differ in degrees of freedom".into()));
    }
    let hbar = state.hbar();
    let (qin, qout, qtr) = kernel_blocks(kernel);
    let r = complex(&qin) + state.form.m();
    let rinv = inverse(&r)?;
    let qtr_c = complex(&qtr);
    let m2 = complex(&qout) - qtr_c.transpose() * &rinv * &qtr_c;
    // The Schur complement cancels heavily at short times; drop rounding asymmetry.
    let m2 = (&m2 + m2.transpose()) * C64::new(0.5, 0.0);
    let b1 = state.form.b();
    let rb = &rinv * b1;
    let b2 = -(qtr_c.transpose() * &rb);
    let c2 = state.form.c() - 0.5 * (b1.transpose() * &rb)[(0, 0)];
    let gauss = QuadForm::new(r, DVector::zeros(2 * state.n()), C64::new(0.0, 0.0), hbar)?.ln_integral()?;
    let ln_kernel = C64::new(kernel.ln_norm_abs(), -0.5 * PI * state.n() as f64);
    let form = QuadForm::new(m2, b2, c2, hbar)?.with_ln_scale(state.form.ln_scale() + ln_kernel + gauss);
    Ok(GaussianState { form, dofs: state.dofs.clone(), t: state.t + kernel.t })
}

/// Applies a kernel after trading each `x₁` for `u = x₂ − x₁ − h(p₁ + p₂)`.
/// The stiff part of the action is then diagonal in `u` and its elimination
/// is free of cancellation.
pub fn propagate_with(state: &GaussianState, kernel: &PropagatorKernel) -> Result<GaussianState> {
    let n = state.n();
    if kernel.n() != n {
        return Err(Error::DimensionMismatch("kernel and state differ in degrees of freedom".into()));
    }
    let hbar = state.hbar();
    let d = 2 * n;
    // Y = (p₁, u, …, p₂, x₂, …); X¹ = S·Y.
    let mut sub = DMatrix::<f64>::zeros(d, 2 * d);
    let mut km = DMatrix::<C64>::zeros(2 * d, 2 * d);
    for (i, blk) in kernel.blocks.iter().enumerate() {
        let sp = blk.split;
        let (p1, u, p2, x2) = (p_index(i), x_index(i), d + p_index(i), d + x_index(i));
        sub[(p_index(i), p1)] = 1.0;
        sub[(x_index(i), x2)] = 1.0;
        sub[(x_index(i), u)] = -1.0;
        sub[(x_index(i), p1)] = -sp.shift;
        sub[(x_index(i), p2)] = -sp.shift;
        km[(p1, p1)] = C64::new(sp.kin_diag, 0.0);
        km[(p2, p2)] = C64::new(sp.kin_diag, 0.0);
        km[(p1, p2)] = C64::new(sp.kin_off, 0.0);
        km[(p2, p1)] = C64::new(sp.kin_off, 0.0);
        km[(u, u)] = C64::new(sp.stiffness, 0.0);
    }
    let ln_kernel = C64::new(kernel.ln_norm_abs(), -0.5 * PI * n as f64);
    let k = QuadForm::new(km, DVector::zeros(2 * d), C64::new(0.0, 0.0), hbar)?.with_ln_scale(ln_kernel);
    let psi = state.form.substitute(&sub, &DVector::zeros(d))?;
    let first: Vec<usize> = (0..d).collect();
    let form = k.multiply(&psi)?.marginalize(&first)?;
    Ok(GaussianState { form, dofs: state.dofs.clone(), t: state.t + kernel.t })
}

/// Evolves a state by `t` with the exact kernel.
pub fn propagate(state: &GaussianState, t: f64) -> Result<GaussianState> {
    propagate_regime(state, t, Regime::Exact)
}

/// Evolves a state by `t` with the requested closed form of the kernel.
pub fn propagate_regime(state: &GaussianState, t: f64, regime: Regime) -> Result<GaussianState> {
    require_duration(t)?;
    let kernel = PropagatorKernel::from_dofs(t, &state.dofs, state.hbar(), regime)?;
    propagate_with(state, &kernel)
}

/// Evolves a state by integrating kernel × state over the initial variables.
pub fn propagate_by_marginalization(state: &GaussianState, kernel: &PropagatorKernel) -> Result<GaussianState> {
    let d = 2 * state.n();
    let first: Vec<usize> = (0..d).collect();
    let joint = kernel.to_form().multiply(&state.form.embed(2 * d, &first)?)?;
    let form = joint.marginalize(&first)?;
    Ok(GaussianState { form, dofs: state.dofs.clone(), t: state.t + kernel.t })
}

/// Multiplies the position profile of dof `i` by the slit aperture.
pub fn apply_slit(state: &GaussianState, i: usize, slit: &SlitSpec) -> Result<GaussianState> {
    if i >= state.n() {
        return Err(Error::DimensionMismatch(format!("no degree of freedom {i}")));
    }
    let w2 = slit.half_width * slit.half_width;
    if w2 * state.dofs[i].beta_m() / state.hbar() < MIN_SLIT_WIDTH {
        return Err(Error::InvalidParameter(format!("slit half-width {} is degenerate", slit.half_width)));
    }
    let form = state.form.clone().damp(x_index(i), slit.center, slit.half_width).scaled(C64::new(0.5 * (2.0 / PI).ln(), 0.0));
    Ok(GaussianState { form, dofs: state.dofs.clone(), t: state.t })
}

/// Widths and centers of dof `i` from `|ψ|²`, with `Δ² = ħ [(Im M)⁻¹]`.
pub fn concentration(state: &GaussianState, i: usize) -> Result<ConcentrationReport> {
    let mo = state.form.moments()?;
    let cov = state.form.amplitude_covariance()?;
    let dx = cov[(x_index(i), x_index(i))].sqrt();
    let dp = cov[(p_index(i), p_index(i))].sqrt();
    let kappa = 2.0 * dx * dp / state.hbar();
    Ok(ConcentrationReport { dx, dp, kappa, p0: mo.mean[p_index(i)], x0: mo.mean[x_index(i)], is_concentrated: kappa < 1.0 })
}

/// `ψ ≡ 1 → slit₁ → K_T → slit₂` for one degree of freedom.
pub fn two_slit_pipeline(dof: Dof, hbar: f64, first: &SlitSpec, second: &SlitSpec, t: f64, regime: Regime) -> Result<GaussianState> {
    let psi = GaussianState::unit(vec![dof], hbar);
    let psi = apply_slit(&psi, 0, first)?;
    let psi = propagate_regime(&psi, t, regime)?;
    apply_slit(&psi, 0, second)
}

/// Relaxation-model dispersion
/// `Δx₂² = Δx₁² + Δp₁²T²/m² + (βT)⁶ħ²/(9(Δp₁²(βT)² + Δx₁²m²β²))`.
pub fn dispersion_subqm(dx1_sq: f64, dp1_sq: f64, t: f64, dof: &Dof, hbar: f64) -> Result<f64> {
    require_duration(t)?;
    require_positive("Δx₁²", dx1_sq)?;
    require_positive("Δp₁²", dp1_sq)?;
    let s = dof.beta * t;
    let bm = dof.beta_m();
    Ok(dx1_sq + dp1_sq * t * t / (dof.m * dof.m) + s.powi(6) * hbar * hbar / (9.0 * (dp1_sq * s * s + dx1_sq * bm * bm)))
}

/// Free quantum dispersion `Δx₂² = Δx₁² + ħ²T²/(m²Δx₁²)`.
pub fn dispersion_qm(dx1_sq: f64, t: f64, m: f64, hbar: f64) -> Result<f64> {
    require_duration(t)?;
    require_positive("Δx₁²", dx1_sq)?;
    require_positive("mass", m)?;
    Ok(dx1_sq + (hbar * hbar / (4.0 * dx1_sq)) * (4.0 * t * t / (m * m)))
}

/// Adds `iε/(βm)` to momentum diagonals whose damping vanishes.
fn regularize(form: &QuadForm, dofs: &[Dof], eps: f64) -> Result<QuadForm> {
    let mut m = form.m().clone();
    for (i, d) in dofs.iter().enumerate() {
        let k = p_index(i);
        let scale = 1.0 / d.beta_m();
        if m[(k, k)].im <= eps * scale {
            m[(k, k)] += I * (eps * scale);
        }
    }
    Ok(QuadForm::new(m, form.b().clone(), form.c(), form.hbar())?.with_ln_scale(form.ln_scale()))
}

/// Position amplitude `φ(x) = ∫ ψ(p, x) dp` of a one-dof state.
pub fn reduced_amplitude(state: &GaussianState) -> Result<QuadForm> {
    if state.n() != 1 {
        return Err(Error::DimensionMismatch("reduced amplitude needs one degree of freedom".into()));
    }
    match state.form.marginalize(&[0]) {
        Ok(f) => Ok(f),
        Err(Error::SingularForm { .. }) => regularize(&state.form, &state.dofs, REGULARIZATION)?.marginalize(&[0]),
        Err(e) => Err(e),
    }
}

/// Weighted sum of one-dof Gaussian states.
#[derive(Clone, Debug, PartialEq)]
pub struct Superposition {
    pub terms: Vec<(C64, GaussianState)>,
}

impl Superposition {
    pub fn single(state: GaussianState) -> Self {
        Self { terms: vec![(C64::new(1.0, 0.0), state)] }
    }

    pub fn new(terms: Vec<(C64, GaussianState)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidParameter("empty superposition".into()));
        }
        if terms.iter().any(|(_, s)| s.n() != 1) {
            return Err(Error::DimensionMismatch("superpositions hold one-dof states".into()));
        }
        Ok(Self { terms })
    }

    /// Evolves every term with the same kernel.
    pub fn propagate_regime(&self, t: f64, regime: Regime) -> Result<Self> {
        let terms: Result<Vec<_>> = self.terms.iter().map(|(w, s)| Ok((*w, propagate_regime(s, t, regime)?))).collect();
        Ok(Self { terms: terms? })
    }

    fn amplitudes(&self) -> Result<Vec<(C64, QuadForm)>> {
        self.terms.iter().map(|(w, s)| Ok((*w, reduced_amplitude(s)?))).collect()
    }

    /// Pairwise momentum integrals `∫ ψᵢ ψⱼ* dp`, regularized where undamped.
    fn ip1_pairs(&self) -> Result<Vec<(C64, QuadForm)>> {
        let mut out = Vec::with_capacity(self.terms.len() * self.terms.len());
        for (wi, si) in &self.terms {
            for (wj, sj) in &self.terms {
                let prod = si.form.multiply_conj(&sj.form)?;
                let prod = regularize(&prod, &si.dofs, REGULARIZATION)?;
                out.push((wi * wj.conj(), prod.marginalize(&[0])?));
            }
        }
        Ok(out)
    }
}

/// `ρ(x) = |Σ wᵢ ∫ ψᵢ(p, x) dp|²` at the sample points (unnormalized).
pub fn density_ip2(sup: &Superposition, xs: &[f64]) -> Result<Vec<f64>> {
    let amps = sup.amplitudes()?;
    Ok(xs.iter().map(|&x| amps.iter().map(|(w, f)| w * f.eval(&[x])).sum::<C64>().norm_sqr()).collect())
}

/// `ρ(x) = ∫ |Σ wᵢ ψᵢ(p, x)|² dp` at the sample points (unnormalized).
pub fn density_ip1(sup: &Superposition, xs: &[f64]) -> Result<Vec<f64>> {
    let pairs = sup.ip1_pairs()?;
    Ok(xs.iter().map(|&x| pairs.iter().map(|(w, f)| w * f.eval(&[x])).sum::<C64>().re.max(0.0)).collect())
}

/// Sum of weighted one-variable forms integrated over `[a, b]`, by panelled
/// double-exponential quadrature centred on the forms' means.
fn integrate_interval(terms: &[(C64, QuadForm)], a: f64, b: f64, scale: f64) -> f64 {
    let f = |x: f64| terms.iter().map(|(w, g)| w * g.eval(&[x])).sum::<C64>().re;
    let panels = (((b - a) / scale).ceil() as usize).clamp(4, 4096);
    let h = (b - a) / panels as f64;
    (0..panels).map(|k| quadrature::integrate(f, a + k as f64 * h, a + (k + 1) as f64 * h, 1e-300).integral).sum()
}

fn total_integral(terms: &[(C64, QuadForm)]) -> Result<f64> {
    let mut total = C64::new(0.0, 0.0);
    for (w, g) in terms {
        if !g.is_normalizable(0.0) || g.min_eig_im() <= 0.0 {
            return Err(Error::NonIntegrable { im: g.min_eig_im() });
        }
        total += w * g.ln_integral()?.exp();
    }
    Ok(total.re)
}

fn density_scale(terms: &[(C64, QuadForm)]) -> f64 {
    terms
        .iter()
        .filter_map(|(_, g)| g.moments().ok().map(|m| m.cov[(0, 0)].sqrt()))
        .fold(f64::INFINITY, f64::min)
        .min(1e300)
}

fn probability(terms: Vec<(C64, QuadForm)>, a: f64, b: f64) -> Result<f64> {
    if !(b > a) {
        return Err(Error::InvalidParameter(format!("empty interval [{a}, {b}]")));
    }
    let total = total_integral(&terms)?;
    if !(total > 0.0) {
        return Err(Error::NonIntegrable { im: total });
    }
    let scale = density_scale(&terms);
    // Clip to a window where the density is non-negligible.
    let (lo, hi) = terms.iter().filter_map(|(_, g)| g.moments().ok()).fold((f64::INFINITY, f64::NEG_INFINITY), |acc, m| {
        let s = 40.0 * m.cov[(0, 0)].sqrt();
        (acc.0.min(m.mean[0] - s), acc.1.max(m.mean[0] + s))
    });
    let (a, b) = (a.max(lo), b.min(hi));
    if a >= b {
        return Ok(0.0);
    }
    Ok((integrate_interval(&terms, a, b, scale) / total).clamp(0.0, 1.0))
}

/// Density terms `wᵢwⱼ* φᵢ φⱼ*` of the reduced amplitude.
fn ip2_terms(sup: &Superposition) -> Result<Vec<(C64, QuadForm)>> {
    let amps = sup.amplitudes()?;
    let mut out = Vec::with_capacity(amps.len() * amps.len());
    for (wi, fi) in &amps {
        for (wj, fj) in &amps {
            out.push((wi * wj.conj(), fi.multiply_conj(fj)?));
        }
    }
    Ok(out)
}

/// IP₂ probability of finding the particle in `[a, b]`.
pub fn probability_ip2(sup: &Superposition, a: f64, b: f64) -> Result<f64> {
    probability(ip2_terms(sup)?, a, b)
}

/// IP₁ probability of finding the particle in `[a, b]`.
pub fn probability_ip1(sup: &Superposition, a: f64, b: f64) -> Result<f64> {
    probability(sup.ip1_pairs()?, a, b)
}

/// Fringe visibility `(max − min)/(max + min)` of sampled densities.
pub fn visibility(rho: &[f64]) -> f64 {
    let max = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = rho.iter().copied().fold(f64::INFINITY, f64::min);
    if max + min > 0.0 {
        (max - min) / (max + min)
    } else {
        0.0
    }
}

/// Positions of interior local maxima of sampled densities, refined by a
/// parabola through the three neighbouring samples.
pub fn local_maxima(xs: &[f64], rho: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 1..rho.len().saturating_sub(1) {
        if rho[k] > rho[k - 1] && rho[k] >= rho[k + 1] {
            let (a, b, c) = (rho[k - 1], rho[k], rho[k + 1]);
            let den = a - 2.0 * b + c;
            let shift = if den != 0.0 { 0.5 * (a - c) / den } else { 0.0 };
            out.push(xs[k] + shift * (xs[k + 1] - xs[k]));
        }
    }
    out
}
