//! Correlated random forces: particles share a common force `G₀` besides
//! their own `Gᵢ`. The orthogonal change `x = R y` separates `n − 1` relative
//! coordinates relaxing with `β₁` from the mean coordinate relaxing with `β₃`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{require_duration, require_positive, Error, Result};
use crate::evolution::{p_index, x_index, GaussianState};
use crate::kernels::{classical_action_dof, Dof, PhasePoint, PropagatorKernel, Regime};
use crate::quadratics::QuadForm;

/// `τ₀/τ₁` at or below which the common force counts as fast.
pub const FAST_COMMON_RATIO: f64 = 0.1;

/// Parameters of `n` equal-mass degrees of freedom. `a0 = ∞` switches the
/// common force off (`a₂ = 0`).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CrfParams {
    pub n: usize,
    pub m: f64,
    pub a0: f64,
    pub a1: f64,
    pub hbar: f64,
}

impl CrfParams {
    pub fn new(n: usize, m: f64, a0: f64, a1: f64, hbar: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidCount(n));
        }
        require_positive("mass", m)?;
        require_positive("a1", a1)?;
        require_positive("hbar", hbar)?;
        if !(a0 > 0.0) {
            return Err(Error::InvalidParameter(format!("a0 must be positive, got {a0}")));
        }
        Ok(Self { n, m, a0, a1, hbar })
    }

    /// Parameters giving relaxation rates `β₁` (relative) and `β₃` (mean).
    pub fn from_rates(n: usize, m: f64, beta1: f64, beta3: f64, hbar: f64) -> Result<Self> {
        require_positive("β₁", beta1)?;
        require_positive("β₃", beta3)?;
        let a1 = 1.0 / (beta1 * beta1 * m);
        let a3 = 1.0 / (beta3 * beta3 * m);
        if !(a3 < a1) && beta3 != beta1 {
            return Err(Error::InvalidParameter(format!("β₃ = {beta3} must exceed β₁ = {beta1}")));
        }
        // a₃ = a₀/(n + a₀/a₁) solved for a₀; equal rates mean no common force.
        let a0 = if beta3 == beta1 { f64::INFINITY } else { n as f64 * a3 / (1.0 - a3 / a1) };
        Self::new(n, m, a0, a1, hbar)
    }

    /// `a₂ = −a₁²/(a₀ + n a₁)`.
    pub fn a2(&self) -> f64 {
        -self.a1 * self.a1 / (self.a0 + self.n as f64 * self.a1)
    }

    /// `a₃ = a₁ + n a₂ = a₀/(n + a₀/a₁)`.
    pub fn a3(&self) -> f64 {
        if self.a0.is_infinite() {
            return self.a1;
        }
        self.a0 / (self.n as f64 + self.a0 / self.a1)
    }

    pub fn tau0(&self) -> f64 {
        (self.a0 * self.m).sqrt()
    }

    pub fn tau1(&self) -> f64 {
        (self.a1 * self.m).sqrt()
    }

    pub fn tau3(&self) -> f64 {
        (self.a3() * self.m).sqrt()
    }

    pub fn beta1(&self) -> f64 {
        1.0 / self.tau1()
    }

    pub fn beta3(&self) -> f64 {
        1.0 / self.tau3()
    }

    /// True when `τ₀ ≤ 0.1 τ₁`, the regime the decomposition is meant for.
    pub fn is_fast_common(&self) -> bool {
        self.tau0() <= FAST_COMMON_RATIO * self.tau1()
    }

    /// Degrees of freedom in `y`: `n − 1` relative ones, then the mean.
    pub fn rotated_dofs(&self) -> Vec<Dof> {
        let mut out = vec![Dof { m: self.m, beta: self.beta1() }; self.n - 1];
        out.push(Dof { m: self.m, beta: self.beta3() });
        out
    }
}

/// Orthogonal `n × n` matrix whose last column is `n^(−1/2)(1, …, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationR {
    pub matrix: DMatrix<f64>,
}

impl RotationR {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// `y = Rᵀ x`.
    pub fn to_y(&self, x: &[f64]) -> Vec<f64> {
        (self.matrix.transpose() * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    /// `x = R y`.
    pub fn to_x(&self, y: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(y)).as_slice().to_vec()
    }

    /// `R` acting on `(p₁, x₁, …, pₙ, xₙ)`, momenta and positions alike.
    pub fn phase_space(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                out[(p_index(i), p_index(j))] = self.matrix[(i, j)];
                out[(x_index(i), x_index(j))] = self.matrix[(i, j)];
            }
        }
        out
    }
}

/// Helmert construction: column `j < n` is `(1, …, 1, −j, 0, …)/√(j² + j)`.
pub fn build_rotation(n: usize) -> Result<RotationR> {
    if n < 2 {
        return Err(Error::InvalidCount(n));
    }
    let mut r = DMatrix::zeros(n, n);
    for j in 1..n {
        let norm = ((j * j + j) as f64).sqrt();
        for i in 0..j {
            r[(i, j - 1)] = 1.0 / norm;
        }
        r[(j, j - 1)] = -(j as f64) / norm;
    }
    let c = 1.0 / (n as f64).sqrt();
    for i in 0..n {
        r[(i, n - 1)] = c;
    }
    Ok(RotationR { matrix: r })
}

fn check_len(x1: &[PhasePoint], x2: &[PhasePoint], n: usize) -> Result<()> {
    if x1.len() != n || x2.len() != n {
        return Err(Error::DimensionMismatch(format!("expected {n} phase points, got {} and {}", x1.len(), x2.len())));
    }
    Ok(())
}

/// Action through the rotated coordinates: single-dof actions of the relative
/// `y₁ … yₙ₋₁` at `β₁` plus that of `yₙ` at `β₃`.
pub fn crf_action(x1: &[PhasePoint], x2: &[PhasePoint], t: f64, params: &CrfParams) -> Result<f64> {
    require_duration(t)?;
    check_len(x1, x2, params.n)?;
    let dofs = params.rotated_dofs();
    if params.n == 1 {
        return classical_action_dof(x1[0], x2[0], t, &dofs[0]);
    }
    let r = build_rotation(params.n)?;
    let rot = |pts: &[PhasePoint]| {
        let p = r.to_y(&pts.iter().map(|q| q.p).collect::<Vec<_>>());
        let x = r.to_y(&pts.iter().map(|q| q.x).collect::<Vec<_>>());
        p.into_iter().zip(x).map(|(p, x)| PhasePoint::new(p, x)).collect::<Vec<_>>()
    };
    let (y1, y2) = (rot(x1), rot(x2));
    let mut sum = 0.0;
    for j in 0..params.n {
        sum += classical_action_dof(y1[j], y2[j], t, &dofs[j])?;
    }
    Ok(sum)
}

/// Action through deviations from the mean: `Σᵢ S_β₁(ΔXᵢ¹, ΔXᵢ²) + n S_β₃(X̄¹, X̄²)`.
pub fn crf_action_decomposed(x1: &[PhasePoint], x2: &[PhasePoint], t: f64, params: &CrfParams) -> Result<f64> {
    require_duration(t)?;
    check_len(x1, x2, params.n)?;
    let n = params.n as f64;
    let mean = |pts: &[PhasePoint]| {
        PhasePoint::new(pts.iter().map(|q| q.p).sum::<f64>() / n, pts.iter().map(|q| q.x).sum::<f64>() / n)
    };
    let (m1, m2) = (mean(x1), mean(x2));
    let rel = Dof { m: params.m, beta: params.beta1() };
    let com = Dof { m: params.m, beta: params.beta3() };
    let mut sum = n * classical_action_dof(m1, m2, t, &com)?;
    if params.n > 1 {
        for (a, b) in x1.iter().zip(x2) {
            let da = PhasePoint::new(a.p - m1.p, a.x - m1.x);
            let db = PhasePoint::new(b.p - m2.p, b.x - m2.x);
            sum += classical_action_dof(da, db, t, &rel)?;
        }
    }
    Ok(sum)
}

/// Expresses a state in the rotated coordinates `Y = (q₁, y₁, …, qₙ, yₙ)`.
pub fn to_rotated(state: &GaussianState) -> Result<QuadForm> {
    let n = state.n();
    if n == 1 {
        return Ok(state.form.clone());
    }
    let s = build_rotation(n)?.phase_space();
    state.form.substitute(&s, &DVector::zeros(2 * n))
}

fn from_rotated(form: &QuadForm, n: usize) -> Result<QuadForm> {
    if n == 1 {
        return Ok(form.clone());
    }
    let s = build_rotation(n)?.phase_space().transpose();
    form.substitute(&s, &DVector::zeros(2 * n))
}

fn check_state(state: &GaussianState, params: &CrfParams) -> Result<()> {
    if state.n() != params.n {
        return Err(Error::DimensionMismatch(format!("state has {} degrees of freedom, parameters {}", state.n(), params.n)));
    }
    if state.hbar() != params.hbar {
        return Err(Error::InvalidParameter("state and parameters use different ħ".into()));
    }
    Ok(())
}

/// Evolves an `n`-dof state: rotate to `y`, propagate each block with its own
/// rate, rotate back.
pub fn crf_propagate(state: &GaussianState, t: f64, params: &CrfParams) -> Result<GaussianState> {
    require_duration(t)?;
    check_state(state, params)?;
    let y = GaussianState { form: to_rotated(state)?, dofs: params.rotated_dofs(), t: state.t };
    let kernel = PropagatorKernel::from_dofs(t, &y.dofs, params.hbar, Regime::Exact)?;
    let out = crate::evolution::propagate_with(&y, &kernel)?;
    Ok(GaussianState { form: from_rotated(&out.form, params.n)?, dofs: state.dofs.clone(), t: out.t })
}

/// Relative-sector envelope of an `n`-dof state.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorrelationReport {
    /// Largest relative position width over the relative coordinates.
    pub dx_rel: f64,
    /// Largest relative momentum width; infinite when undamped.
    pub dp_rel: f64,
    /// `2 Δx_rel Δp_rel / ħ` from the measured widths.
    pub kappa_rel: f64,
    /// Smallest eigenvalue of `S/ħ − diag(1/Δp², 1/Δx²)`; non-negative when
    /// `|ψ| ≤ c exp{−½ΣΔxᵢ²/Δx² − ½ΣΔpᵢ²/Δp²}` holds.
    pub margin: f64,
    /// Envelope holds and `2ΔxΔp/ħ < 1` for the requested widths.
    pub is_correlated: bool,
}

/// Pseudo-inverse of a symmetric positive semidefinite matrix.
fn pinv_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let mut inv = DMatrix::zeros(a.nrows(), a.ncols());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 1e-14 * top {
            let v = eig.eigenvectors.column(k);
            inv += v * v.transpose() / l;
        }
    }
    inv
}

/// Checks the relative-sector envelope with widths `dx`, `dp`, uniformly in
/// the mean coordinates.
pub fn correlated_check(state: &GaussianState, dx: f64, dp: f64) -> Result<CorrelationReport> {
    require_positive("Δx", dx)?;
    require_positive("Δp", dp)?;
    let n = state.n();
    if n < 2 {
        return Err(Error::InvalidCount(n));
    }
    let hbar = state.hbar();
    let form = to_rotated(state)?;
    if !form.is_normalizable(1e-12 * form.im_m().norm()) {
        return Err(Error::NonNormalizable { min_eig: form.min_eig_im() });
    }
    let p = form.im_m();
    let r = 2 * (n - 1);
    let prr = p.view((0, 0), (r, r)).into_owned();
    let prm = p.view((0, r), (r, 2)).into_owned();
    let pmm = p.view((r, r), (2, 2)).into_owned();
    let s = &prr - &prm * pinv_psd(&pmm) * prm.transpose();
    let s = (&s + s.transpose()) * 0.5;
    let target = DMatrix::from_fn(r, r, |i, j| if i != j { 0.0 } else if i % 2 == 0 { 1.0 / (dp * dp) } else { 1.0 / (dx * dx) });
    let margin = SymmetricEigen::new(&s / hbar - target).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let (dx_rel, dp_rel) = match s.clone().cholesky() {
        Some(ch) => {
            let cov = ch.inverse() * hbar;
            let pick = |odd: usize| (0..n - 1).map(|j| cov[(2 * j + odd, 2 * j + odd)]).fold(0.0, f64::max).sqrt();
            (pick(1), pick(0))
        }
        None => (f64::INFINITY, f64::INFINITY),
    };
    let tol = 1e-9 * (1.0 / (dx * dx)).max(1.0 / (dp * dp));
    Ok(CorrelationReport {
        dx_rel,
        dp_rel,
        kappa_rel: 2.0 * dx_rel * dp_rel / hbar,
        margin,
        is_correlated: margin >= -tol && 2.0 * dx * dp / hbar < 1.0,
    })
}
