//! Closed-form propagators of the relaxation model and of free quantum mechanics.
//!
//! Per degree of freedom the kernel is `N_T exp{(i/ħ) S̄}` with
//!
//! ```text
//! S̄ = ½ X1ᵀ Q_in X1 + ½ X2ᵀ Q_out X2 + X1ᵀ Q_tr X2,   X = (p, x)
//! ```
//!
//! and, writing `s = βT`, `th = tanh(s/2)`, `D = s − 2 th`,
//!
//! ```text
//! a = (coth s + th²/D)/βm    b = (−csch s + th²/D)/βm
//! c = βm/D                   d = −th/D
//! ```

use nalgebra::{DMatrix, DVector, Matrix2};
use std::f64::consts::PI;

use crate::error::{require_duration, require_positive, Error, Result};
use crate::quadratics::{QuadForm, C64, I};

/// Largest `βT` accepted by the short-time approximations.
pub const SHORT_TIME_LIMIT: f64 = 0.3;

/// Masses, the subquantum constant and ħ.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    masses: Vec<f64>,
    a: f64,
    hbar: f64,
}

/// Mass and relaxation rate of one degree of freedom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dof {
    pub m: f64,
    pub beta: f64,
}

impl Dof {
    pub fn new(m: f64, beta: f64) -> Result<Self> {
        require_positive("mass", m)?;
        require_positive("beta", beta)?;
        Ok(Self { m, beta })
    }

    /// `βm`.
    pub fn beta_m(&self) -> f64 {
        self.beta * self.m
    }

    /// Relaxation time `τ = 1/β`.
    pub fn tau(&self) -> f64 {
        1.0 / self.beta
    }
}

impl ModelParams {
    pub fn new(masses: Vec<f64>, a: f64, hbar: f64) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::InvalidParameter("at least one mass is required".into()));
        }
        for &m in &masses {
            require_positive("mass", m)?;
        }
        require_positive("a", a)?;
        require_positive("hbar", hbar)?;
        Ok(Self { masses, a, hbar })
    }

    /// One particle with relaxation time `tau`, so that `a = τ²/m`.
    pub fn from_tau(m: f64, tau: f64, hbar: f64) -> Result<Self> {
        require_positive("tau", tau)?;
        require_positive("mass", m)?;
        Self::new(vec![m], tau * tau / m, hbar)
    }

    /// `ħ = m = β = 1`.
    pub fn natural() -> Self {
        Self { masses: vec![1.0], a: 1.0, hbar: 1.0 }
    }

    pub fn n(&self) -> usize {
        self.masses.len()
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn hbar(&self) -> f64 {
        self.hbar
    }
    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// `τᵢ = √(a mᵢ)`.
    pub fn tau(&self, i: usize) -> f64 {
        (self.a * self.masses[i]).sqrt()
    }

    /// `βᵢ = 1/τᵢ`.
    pub fn beta(&self, i: usize) -> f64 {
        1.0 / self.tau(i)
    }

    pub fn dof(&self, i: usize) -> Dof {
        Dof { m: self.masses[i], beta: self.beta(i) }
    }

    pub fn dofs(&self) -> Vec<Dof> {
        (0..self.n()).map(|i| self.dof(i)).collect()
    }
}

/// Phase-space point of one degree of freedom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePoint {
    pub p: f64,
    pub x: f64,
}

impl PhasePoint {
    pub fn new(p: f64, x: f64) -> Self {
        Self { p, x }
    }
}

/// Kernel coefficients `(a_T, b_T, c_T, d_T)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Which closed form a kernel was built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Exact,
    ShortTime,
    LongTime,
}

/// `D(s) = s − 2 tanh(s/2)`. Below `s = 1` the value is `N(s)/sinh s` with
/// `N(s) = Σ_{k≥2} (2k−2) s^{2k}/(2k)!`, a sum of positive terms.
pub fn relaxation_gap(s: f64) -> f64 {
    if s >= 1.0 {
        return s - 2.0 * (0.5 * s).tanh();
    }
    let s2 = s * s;
    let mut term = s2 * s2 / 24.0; // s^4/4!
    let mut sum = 0.0;
    let mut k = 2.0;
    loop {
        let add = (2.0 * k - 2.0) * term;
        sum += add;
        if add < 1e-18 * sum {
            break;
        }
        term *= s2 / ((2.0 * k + 1.0) * (2.0 * k + 2.0));
        k += 1.0;
    }
    sum / s.sinh()
}

/// `ω = 1/(βT − 2)`, the long-time rate.
pub fn omega_long(s: f64) -> f64 {
    1.0 / (s - 2.0)
}

/// `ω = 12/(βT)³`, the short-time position stiffness.
pub fn omega_short(s: f64) -> f64 {
    12.0 / (s * s * s)
}

/// `ω̃ = 3/(βT)³`, the stiffness of the momentum-reduced kernel.
pub fn omega_reduced(s: f64) -> f64 {
    3.0 / (s * s * s)
}

/// Exact coefficients for one degree of freedom.
pub fn coefficients_abcd(t: f64, dof: &Dof) -> Result<Coefficients> {
    require_duration(t)?;
    let s = dof.beta * t;
    let bm = dof.beta_m();
    let th = (0.5 * s).tanh();
    let gap = relaxation_gap(s);
    let ratio = th * th / gap;
    // coth and −csch written through tanh(s/2) to avoid overflow for large s.
    let coth = 0.5 * (th + 1.0 / th);
    let csch = {
        let sh = s.sinh();
        if sh.is_finite() {
            1.0 / sh
        } else {
            0.0
        }
    };
    Ok(Coefficients {
        a: (coth + ratio) / bm,
        b: (-csch + ratio) / bm,
        c: bm / gap,
        d: -th / gap,
    })
}

/// Long-time coefficients `a = (1+ω)/βm, b = ω/βm, c = βmω, d = −ω`.
pub fn coefficients_long(t: f64, dof: &Dof) -> Result<Coefficients> {
    require_duration(t)?;
    let s = dof.beta * t;
    if s <= 2.0 {
        return Err(Error::RegimeViolation(format!("long-time coefficients need βT > 2, got {s}")));
    }
    let w = omega_long(s);
    let bm = dof.beta_m();
    Ok(Coefficients { a: (1.0 + w) / bm, b: w / bm, c: bm * w, d: -w })
}

/// Short-time coefficients from the leading expansion in `βT`.
pub fn coefficients_short(t: f64, dof: &Dof) -> Result<Coefficients> {
    require_duration(t)?;
    let s = dof.beta * t;
    short_time_guard(s)?;
    let bm = dof.beta_m();
    let alpha = 1.0 / (bm * s);
    let gamma = bm * omega_short(s);
    let h = t / (2.0 * dof.m);
    Ok(Coefficients { a: alpha + gamma * h * h, b: -alpha + gamma * h * h, c: gamma, d: -gamma * h })
}

fn short_time_guard(s: f64) -> Result<()> {
    if s >= SHORT_TIME_LIMIT {
        return Err(Error::RegimeViolation(format!("short-time form needs βT < {SHORT_TIME_LIMIT}, got {s}")));
    }
    Ok(())
}

/// `ln |N_T|` for one degree of freedom: `−ln(2πħ) − ½ ln(sinh s · D(s))`.
pub fn ln_normalization_dof(t: f64, dof: &Dof, hbar: f64) -> Result<f64> {
    require_duration(t)?;
    let s = dof.beta * t;
    let gap = relaxation_gap(s);
    // ln sinh s computed without overflow.
    let ln_sinh = if s > 20.0 { s - 2f64.ln() + (-(-2.0 * s).exp()).ln_1p() } else { s.sinh().ln() };
    Ok(-(2.0 * PI * hbar).ln() - 0.5 * (ln_sinh + gap.ln()))
}

/// `|N_T| = (2πħ)⁻ⁿ Πᵢ (sinh βᵢT)^(−1/2) (βᵢT − 2 tanh(βᵢT/2))^(−1/2)`.
pub fn normalization(t: f64, params: &ModelParams) -> Result<f64> {
    let mut ln = 0.0;
    for dof in params.dofs() {
        ln += ln_normalization_dof(t, &dof, params.hbar())?;
    }
    Ok(ln.exp())
}

fn check_points(x1: &[PhasePoint], x2: &[PhasePoint], params: &ModelParams) -> Result<()> {
    if x1.len() != params.n() || x2.len() != params.n() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} phase points, got {} and {}",
            params.n(),
            x1.len(),
            x2.len()
        )));
    }
    Ok(())
}

/// Classical action of one degree of freedom:
/// `[(p1²+p2²) coth s − 2p1p2 csch s]/(2βm) + (βm/2D)[Δx − (p1+p2) th/βm]²`.
pub fn classical_action_dof(x1: PhasePoint, x2: PhasePoint, t: f64, dof: &Dof) -> Result<f64> {
    require_duration(t)?;
    let s = dof.beta * t;
    let bm = dof.beta_m();
    let th = (0.5 * s).tanh();
    let coth = 0.5 * (th + 1.0 / th);
    let dp = x2.p - x1.p;
    // (p1²+p2²) coth − 2 p1 p2 csch = (p2−p1)² coth + 2 p1 p2 tanh(s/2).
    let kinetic = (dp * dp * coth + 2.0 * x1.p * x2.p * th) / (2.0 * bm);
    let u = x2.x - x1.x - (x1.p + x2.p) * th / bm;
    Ok(kinetic + bm * u * u / (2.0 * relaxation_gap(s)))
}

/// Classical action summed over all degrees of freedom.
pub fn classical_action(x1: &[PhasePoint], x2: &[PhasePoint], t: f64, params: &ModelParams) -> Result<f64> {
    check_points(x1, x2, params)?;
    let mut sum = 0.0;
    for (i, dof) in params.dofs().iter().enumerate() {
        sum += classical_action_dof(x1[i], x2[i], t, dof)?;
    }
    Ok(sum)
}

/// Leading short-time action
/// `(p2−p1)²/(2βm βT) + (βm/2)(12/(βT)³)[Δx − (p1+p2)T/2m]²`.
pub fn short_time_action_dof(x1: PhasePoint, x2: PhasePoint, t: f64, dof: &Dof) -> Result<f64> {
    require_duration(t)?;
    let s = dof.beta * t;
    short_time_guard(s)?;
    let bm = dof.beta_m();
    let dp = x2.p - x1.p;
    let u = x2.x - x1.x - (x1.p + x2.p) * t / (2.0 * dof.m);
    Ok(dp * dp / (2.0 * bm * s) + 0.5 * bm * omega_short(s) * u * u)
}

/// Next-order terms that the leading short-time action drops:
/// `T(p1² + p1p2 + p2²)/6m + (3m/5T) u² + u(p1+p2)/2` with
/// `u = Δx − (p1+p2)T/2m`. They carry the free kinetic action.
pub fn short_time_remainder_dof(x1: PhasePoint, x2: PhasePoint, t: f64, dof: &Dof) -> Result<f64> {
    require_duration(t)?;
    short_time_guard(dof.beta * t)?;
    let m = dof.m;
    let u = x2.x - x1.x - (x1.p + x2.p) * t / (2.0 * m);
    let kin = t * (x1.p * x1.p + x1.p * x2.p + x2.p * x2.p) / (6.0 * m);
    Ok(kin + 3.0 * m * u * u / (5.0 * t) + 0.5 * u * (x1.p + x2.p))
}

/// Leading short-time action summed over all degrees of freedom.
pub fn short_time_action(x1: &[PhasePoint], x2: &[PhasePoint], t: f64, params: &ModelParams) -> Result<f64> {
    check_points(x1, x2, params)?;
    let mut sum = 0.0;
    for (i, dof) in params.dofs().iter().enumerate() {
        sum += short_time_action_dof(x1[i], x2[i], t, dof)?;
    }
    Ok(sum)
}

/// Short-time action including the next-order remainder.
pub fn short_time_action_corrected(
    x1: &[PhasePoint],
    x2: &[PhasePoint],
    t: f64,
    params: &ModelParams,
) -> Result<f64> {
    check_points(x1, x2, params)?;
    let mut sum = 0.0;
    for (i, dof) in params.dofs().iter().enumerate() {
        sum += short_time_action_dof(x1[i], x2[i], t, dof)? + short_time_remainder_dof(x1[i], x2[i], t, dof)?;
    }
    Ok(sum)
}

/// Action of one degree of freedom as
/// `½k_d(p1² + p2²) + k_o p1p2 + ½c (x2 − x1 − h(p1 + p2))²`.
/// The stiffness `c` grows like `(βT)⁻³`; keeping it apart avoids cancellation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionSplit {
    pub kin_diag: f64,
    pub kin_off: f64,
    pub stiffness: f64,
    pub shift: f64,
}

impl ActionSplit {
    fn exact(t: f64, dof: &Dof) -> Self {
        let s = dof.beta * t;
        let bm = dof.beta_m();
        let th = (0.5 * s).tanh();
        let csch = {
            let sh = s.sinh();
            if sh.is_finite() {
                1.0 / sh
            } else {
                0.0
            }
        };
        Self { kin_diag: 0.5 * (th + 1.0 / th) / bm, kin_off: -csch / bm, stiffness: bm / relaxation_gap(s), shift: th / bm }
    }

    fn short(t: f64, dof: &Dof) -> Self {
        let s = dof.beta * t;
        let bm = dof.beta_m();
        let alpha = 1.0 / (bm * s);
        Self { kin_diag: alpha, kin_off: -alpha, stiffness: bm * omega_short(s), shift: t / (2.0 * dof.m) }
    }

    fn long(t: f64, dof: &Dof) -> Self {
        let bm = dof.beta_m();
        Self { kin_diag: 1.0 / bm, kin_off: 0.0, stiffness: bm * omega_long(dof.beta * t), shift: 1.0 / bm }
    }
}

/// Blocks of one degree of freedom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelBlock {
    pub dof: Dof,
    pub coeffs: Coefficients,
    pub split: ActionSplit,
    pub qin: Matrix2<f64>,
    pub qout: Matrix2<f64>,
    pub qtr: Matrix2<f64>,
    /// `ln |N_T|` of this degree of freedom.
    pub ln_norm: f64,
}

impl KernelBlock {
    fn from_coefficients(dof: Dof, k: Coefficients, split: ActionSplit, ln_norm: f64) -> Self {
        Self {
            dof,
            coeffs: k,
            split,
            qin: Matrix2::new(k.a, -k.d, -k.d, k.c),
            qout: Matrix2::new(k.a, k.d, k.d, k.c),
            qtr: Matrix2::new(k.b, k.d, -k.d, -k.c),
            ln_norm,
        }
    }

    /// Action `½X1ᵀQ_inX1 + ½X2ᵀQ_outX2 + X1ᵀQ_trX2` from the blocks.
    pub fn action(&self, x1: PhasePoint, x2: PhasePoint) -> f64 {
        let v1 = nalgebra::Vector2::new(x1.p, x1.x);
        let v2 = nalgebra::Vector2::new(x2.p, x2.x);
        0.5 * v1.dot(&(self.qin * v1)) + 0.5 * v2.dot(&(self.qout * v2)) + v1.dot(&(self.qtr * v2))
    }
}

/// Free-particle propagator of the relaxation model over `n` degrees of freedom.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagatorKernel {
    pub t: f64,
    pub regime: Regime,
    pub blocks: Vec<KernelBlock>,
    pub hbar: f64,
}

impl PropagatorKernel {
    /// Kernel in the requested closed form.
    pub fn new(t: f64, params: &ModelParams, regime: Regime) -> Result<Self> {
        Self::from_dofs(t, &params.dofs(), params.hbar(), regime)
    }

    /// Kernel for explicit per-dof masses and rates.
    pub fn from_dofs(t: f64, dofs: &[Dof], hbar: f64, regime: Regime) -> Result<Self> {
        require_duration(t)?;
        require_positive("hbar", hbar)?;
        let mut blocks = Vec::with_capacity(dofs.len());
        for dof in dofs {
            let (k, split, ln_norm) = match regime {
                Regime::Exact => (coefficients_abcd(t, dof)?, ActionSplit::exact(t, dof), ln_normalization_dof(t, dof, hbar)?),
                Regime::LongTime => (coefficients_long(t, dof)?, ActionSplit::long(t, dof), ln_normalization_dof(t, dof, hbar)?),
                Regime::ShortTime => {
                    let k = coefficients_short(t, dof)?;
                    let det = (k.b * k.c - k.d * k.d).abs();
                    (k, ActionSplit::short(t, dof), 0.5 * det.ln() - (2.0 * PI * hbar).ln())
                }
            };
            blocks.push(KernelBlock::from_coefficients(*dof, k, split, ln_norm));
        }
        Ok(Self { t, regime, blocks, hbar })
    }

    pub fn exact(t: f64, params: &ModelParams) -> Result<Self> {
        Self::new(t, params, Regime::Exact)
    }

    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    /// `ln |N_T|`.
    pub fn ln_norm_abs(&self) -> f64 {
        self.blocks.iter().map(|b| b.ln_norm).sum()
    }

    /// `|N_T|`.
    pub fn norm_abs(&self) -> f64 {
        self.ln_norm_abs().exp()
    }

    /// Action assembled from the blocks.
    pub fn action(&self, x1: &[PhasePoint], x2: &[PhasePoint]) -> Result<f64> {
        if x1.len() != self.n() || x2.len() != self.n() {
            return Err(Error::DimensionMismatch("phase point count".into()));
        }
        Ok(self.blocks.iter().enumerate().map(|(i, b)| b.action(x1[i], x2[i])).sum())
    }

    /// The kernel as a form over `(X1, X2)` with `X = (p₁, x₁, …, pₙ, xₙ)`.
    /// The prefactor is `|N_T|` times the phase `(−i)ⁿ` of `(2πiħ)⁻ⁿ`.
    pub fn to_form(&self) -> QuadForm {
        let n = self.n();
        let mut m = DMatrix::<C64>::zeros(4 * n, 4 * n);
        for (i, blk) in self.blocks.iter().enumerate() {
            let o1 = 2 * i;
            let o2 = 2 * n + 2 * i;
            for r in 0..2 {
                for s in 0..2 {
                    m[(o1 + r, o1 + s)] = C64::new(blk.qin[(r, s)], 0.0);
                    m[(o2 + r, o2 + s)] = C64::new(blk.qout[(r, s)], 0.0);
                    m[(o1 + r, o2 + s)] = C64::new(blk.qtr[(r, s)], 0.0);
                    m[(o2 + s, o1 + r)] = C64::new(blk.qtr[(r, s)], 0.0);
                }
            }
        }
        let ln = C64::new(self.ln_norm_abs(), -0.5 * PI * n as f64);
        QuadForm::new(m, DVector::zeros(4 * n), C64::new(0.0, 0.0), self.hbar)
            .expect("kernel blocks are symmetric")
            .with_ln_scale(ln)
    }
}

/// Free Schrödinger kernel over `(x1, x2)`: exponent `(i/ħ)(m/2T)(x2 − x1)²`,
/// prefactor `(m/2πiħT)^(1/2)`.
pub fn qm_free_kernel(t: f64, m: f64, hbar: f64) -> Result<QuadForm> {
    require_duration(t)?;
    require_positive("mass", m)?;
    require_positive("hbar", hbar)?;
    let k = m / t;
    let mm = DMatrix::from_row_slice(2, 2, &[C64::new(k, 0.0), C64::new(-k, 0.0), C64::new(-k, 0.0), C64::new(k, 0.0)]);
    let ln = C64::new(0.5 * (m / (2.0 * PI * hbar * t)).ln(), -0.25 * PI);
    Ok(QuadForm::new(mm, DVector::zeros(2), C64::new(0.0, 0.0), hbar)?.with_ln_scale(ln))
}

/// Momentum-reduced short-time kernel over `(p1, x1, x2)`:
/// exponent `(i/2ħ) βm ω̃ (x2 − x1 − T p1/m)²` with `ω̃ = 3/(βT)³`.
pub fn reduced_kernel(t: f64, dof: &Dof, hbar: f64) -> Result<QuadForm> {
    require_duration(t)?;
    let s = dof.beta * t;
    short_time_guard(s)?;
    let k = dof.beta_m() * omega_reduced(s);
    let e = [-t / dof.m, -1.0, 1.0];
    let m = DMatrix::from_fn(3, 3, |r, c| C64::new(k * e[r] * e[c], 0.0));
    // Prefactor of the p₂ integral of the short-time kernel.
    let short = PropagatorKernel::from_dofs(t, &[*dof], hbar, Regime::ShortTime)?;
    let pivot = short.blocks[0].coeffs.a;
    let ln = C64::new(short.ln_norm_abs(), -0.5 * PI) + 0.5 * (2.0 * PI * hbar).ln() - 0.5 * (-I * pivot).ln();
    Ok(QuadForm::new(m, DVector::zeros(3), C64::new(0.0, 0.0), hbar)?.with_ln_scale(ln))
}

/// Exponent of the reduced kernel at a point.
pub fn reduced_kernel_exponent(p1: f64, x1: f64, x2: f64, t: f64, dof: &Dof, hbar: f64) -> Result<C64> {
    require_duration(t)?;
    let s = dof.beta * t;
    short_time_guard(s)?;
    let u = x2 - x1 - t * p1 / dof.m;
    Ok(I / (2.0 * hbar) * dof.beta_m() * omega_reduced(s) * u * u)
}

/// Relaxation kernel `e^{−iH₁t/ħ}` over `(p, q)`:
/// exponent `(i/ħ)(1/2c₀βm)[(p² + q²) coth βt − 2pq csch βt]`,
/// prefactor `(2πiħ c₀βm sinh βt)^(−1/2)`.
pub fn relaxation_kernel(t: f64, dof: &Dof, hbar: f64, c0: f64) -> Result<QuadForm> {
    require_duration(t)?;
    require_positive("c0", c0)?;
    let s = dof.beta * t;
    let g = 1.0 / (c0 * dof.beta_m());
    let th = (0.5 * s).tanh();
    let coth = 0.5 * (th + 1.0 / th);
    let csch = 1.0 / s.sinh();
    let m = DMatrix::from_row_slice(
        2,
        2,
        &[C64::new(g * coth, 0.0), C64::new(-g * csch, 0.0), C64::new(-g * csch, 0.0), C64::new(g * coth, 0.0)],
    );
    let ln_sinh = if s > 20.0 { s - 2f64.ln() } else { s.sinh().ln() };
    let ln = C64::new(-0.5 * ((2.0 * PI * hbar * c0 * dof.beta_m()).ln() + ln_sinh), -0.25 * PI);
    Ok(QuadForm::new(m, DVector::zeros(2), C64::new(0.0, 0.0), hbar)?.with_ln_scale(ln))
}

/// Exponent of the relaxation kernel at `(p, q)`, prefactor excluded.
pub fn relaxation_exponent(p: f64, q: f64, t: f64, dof: &Dof, hbar: f64, c0: f64) -> Result<C64> {
    let k = relaxation_kernel(t, dof, hbar, c0)?;
    Ok(k.exponent(&[p, q]) - k.ln_scale())
}

/// Norm and derivative norm of a relaxing state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecaySample {
    pub norm: f64,
    pub grad_norm: f64,
}

/// Evolves `ψ(q; 0) = psi0` to `ψ(q; t) = U(q) ∫ K_t(q, p) U(p)⁻¹ psi0(p) dp`
/// with the chirp `U(q) = exp{−(i/ħ) q²/(2c₀βm)}`, and returns `‖ψ‖` and
/// `‖∂_q ψ‖`. The derivative norm decays as `e^{−βt}`.
pub fn relaxation_decay(psi0: &QuadForm, t: f64, dof: &Dof, hbar: f64, c0: f64) -> Result<DecaySample> {
    if psi0.dim() != 1 {
        return Err(Error::DimensionMismatch("relaxation acts on one variable".into()));
    }
    if t < 0.0 || !t.is_finite() {
        return Err(Error::NonpositiveDuration(t));
    }
    psi0.moments()?;
    let state = if t == 0.0 {
        psi0.clone()
    } else {
        let g = 1.0 / (c0 * dof.beta_m());
        let chirp = |f: QuadForm, sign: f64| -> Result<QuadForm> {
            let mut mm = f.m().clone();
            mm[(0, 0)] += C64::new(sign * g, 0.0);
            Ok(QuadForm::new(mm, f.b().clone(), f.c(), hbar)?.with_ln_scale(f.ln_scale()))
        };
        let phi = chirp(psi0.clone(), 1.0)?;
        let joint = relaxation_kernel(t, dof, hbar, c0)?.multiply(&phi.embed(2, &[0])?)?;
        chirp(joint.marginalize(&[0])?, -1.0)?
    };
    state_decay_sample(&state)
}

/// `‖f‖` and `‖f′‖` of a one-variable form, using
/// `‖f′‖² = ‖f‖² (|Mμ + B|² + |M|² v)/ħ²` for `|f|²` with mean `μ`, variance `v`.
pub fn state_decay_sample(f: &QuadForm) -> Result<DecaySample> {
    let mo = f.moments()?;
    let norm = f.l2_norm()?;
    let mu = mo.mean[0];
    let v = mo.cov[(0, 0)];
    let m = f.m()[(0, 0)];
    let lin = m * mu + f.b()[0];
    let grad2 = norm * norm * (lin.norm_sqr() + m.norm_sqr() * v) / (f.hbar() * f.hbar());
    Ok(DecaySample { norm, grad_norm: grad2.sqrt() })
}
