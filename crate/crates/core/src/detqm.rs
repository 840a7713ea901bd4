//! Deterministic transport of phase-space wave functions.
//!
//! A wave function `ψ(x, p; t)` is carried along the Hamiltonian flow and
//! picks up the phase `exp{(i/ħ) S}` with `S = ∫ (p H_p − H) dt`:
//!
//! ```text
//! ψ(x², p²; t²) = exp{(i/ħ) S} ψ(x¹, p¹; t¹),   (x¹, p¹) = flow back from (x², p²)
//! ```
//!
//! The matching evolution equation is
//!
//! ```text
//! i ψ_t = (−p²/(2ħm) − i (p/m) ∂_x + i V′ ∂_p + V/ħ) ψ.
//! ```

use nalgebra::Matrix2;
use rayon::prelude::*;
use std::sync::Arc;

use crate::error::{require_positive, Error, Result};
use crate::kernels::Dof;
use crate::quadratics::{C64, I};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Largest relative norm loss tolerated by [`detqm_evolve`].
pub const NORM_LOSS_TOL: f64 = 1e-3;

/// Potential energy of a one-dimensional Hamiltonian `p²/2m + V(x)`.
#[derive(Clone)]
pub enum Potential {
    Free,
    /// `V = ½ m ω² x²`.
    Harmonic { omega: f64 },
    /// `V`, `V′` and `V″` given as functions, integrated with velocity Verlet.
    Custom { v: ScalarFn, dv: ScalarFn, d2v: ScalarFn, max_step: f64 },
}

impl std::fmt::Debug for Potential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Potential::Free => write!(f, "Free"),
            Potential::Harmonic { omega } => write!(f, "Harmonic {{ omega: {omega} }}"),
            Potential::Custom { max_step, .. } => write!(f, "Custom {{ max_step: {max_step} }}"),
        }
    }
}

/// Hamiltonian `p²/2m + V(x)` of one degree of freedom.
#[derive(Clone, Debug)]
pub struct HamiltonianSpec {
    pub m: f64,
    pub potential: Potential,
}

impl HamiltonianSpec {
    pub fn free(m: f64) -> Result<Self> {
        require_positive("mass", m)?;
        Ok(Self { m, potential: Potential::Free })
    }

    pub fn harmonic(m: f64, omega: f64) -> Result<Self> {
        require_positive("mass", m)?;
        require_positive("omega", omega)?;
        Ok(Self { m, potential: Potential::Harmonic { omega } })
    }

    /// Potential given with its first two derivatives.
    pub fn custom(m: f64, v: ScalarFn, dv: ScalarFn, d2v: ScalarFn, max_step: f64) -> Result<Self> {
        require_positive("mass", m)?;
        require_positive("max_step", max_step)?;
        Ok(Self { m, potential: Potential::Custom { v, dv, d2v, max_step } })
    }

    /// Polynomial potential `Σ cₖ xᵏ`.
    pub fn polynomial(m: f64, coeffs: &[f64], max_step: f64) -> Result<Self> {
        let c0: Vec<f64> = coeffs.to_vec();
        let c1: Vec<f64> = (1..c0.len()).map(|k| k as f64 * c0[k]).collect();
        let c2: Vec<f64> = (1..c1.len()).map(|k| k as f64 * c1[k]).collect();
        let horner = |c: Vec<f64>| -> ScalarFn { Arc::new(move |x| c.iter().rev().fold(0.0, |acc, &a| acc * x + a)) };
        Self::custom(m, horner(c0), horner(c1), horner(c2), max_step)
    }

    /// `V(x)`.
    pub fn potential(&self, x: f64) -> f64 {
        match &self.potential {
            Potential::Free => 0.0,
            Potential::Harmonic { omega } => 0.5 * self.m * omega * omega * x * x,
            Potential::Custom { v, .. } => v(x),
        }
    }

    /// `V′(x)`.
    pub fn gradient(&self, x: f64) -> f64 {
        match &self.potential {
            Potential::Free => 0.0,
            Potential::Harmonic { omega } => self.m * omega * omega * x,
            Potential::Custom { dv, .. } => dv(x),
        }
    }

    /// `H(x, p)`.
    pub fn energy(&self, x: f64, p: f64) -> f64 {
        p * p / (2.0 * self.m) + self.potential(x)
    }
}

/// End point of a trajectory segment with its action and tangent map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowResult {
    pub x: f64,
    pub p: f64,
    /// `∫ (p H_p − H) dt` along the segment.
    pub action: f64,
    /// `∂(x_f, p_f)/∂(x_i, p_i)`.
    pub jacobian: Matrix2<f64>,
}

/// Moves `(x, p)` from time `t1` to `t2` along the Hamiltonian flow.
pub fn hamilton_flow(x: f64, p: f64, t1: f64, t2: f64, h: &HamiltonianSpec) -> Result<FlowResult> {
    let dt = t2 - t1;
    if !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite time step {dt}")));
    }
    let m = h.m;
    match &h.potential {
        Potential::Free => Ok(FlowResult {
            x: x + p * dt / m,
            p,
            action: p * p * dt / (2.0 * m),
            jacobian: Matrix2::new(1.0, dt / m, 0.0, 1.0),
        }),
        Potential::Harmonic { omega } => {
            let (s, c) = (omega * dt).sin_cos();
            let mw = m * omega;
            let xf = x * c + p * s / mw;
            let pf = p * c - mw * x * s;
            Ok(FlowResult {
                x: xf,
                p: pf,
                // The Lagrangian of a quadratic Hamiltonian is d/dt(½ p x).
                action: 0.5 * (pf * xf - p * x),
                jacobian: Matrix2::new(c, s / mw, -mw * s, c),
            })
        }
        Potential::Custom { v, dv, d2v, max_step } => {
            let mut steps = (dt.abs() / max_step).ceil() as usize;
            steps = steps.max(2);
            if steps % 2 == 1 {
                steps += 1;
            }
            let tau = dt / steps as f64;
            let (mut q, mut pp) = (x, p);
            let mut jac = Matrix2::identity();
            let lag = |q: f64, p: f64| p * p / (2.0 * m) - v(q);
            let mut simpson = lag(q, pp);
            for k in 1..=steps {
                let g = dv(q);
                let kick = Matrix2::new(1.0, 0.0, -0.5 * tau * d2v(q), 1.0);
                let half = pp - 0.5 * tau * g;
                q += tau * half / m;
                let drift = Matrix2::new(1.0, tau / m, 0.0, 1.0);
                let g2 = dv(q);
                let kick2 = Matrix2::new(1.0, 0.0, -0.5 * tau * d2v(q), 1.0);
                pp = half - 0.5 * tau * g2;
                jac = kick2 * drift * kick * jac;
                if !(q.is_finite() && pp.is_finite() && g.is_finite() && g2.is_finite()) {
                    return Err(Error::StepDiverged(t1 + k as f64 * tau));
                }
                let w = if k == steps {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                simpson += w * lag(q, pp);
            }
            Ok(FlowResult { x: q, p: pp, action: simpson * tau / 3.0, jacobian: jac })
        }
    }
}

/// Rectangular phase-space grid: node `(i, j)` sits at `(x0 + i dx, p0 + j dp)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub x0: f64,
    pub dx: f64,
    pub nx: usize,
    pub p0: f64,
    pub dp: f64,
    pub np: usize,
}

impl GridSpec {
    pub fn new(x0: f64, dx: f64, nx: usize, p0: f64, dp: f64, np: usize) -> Result<Self> {
        require_positive("dx", dx)?;
        require_positive("dp", dp)?;
        if nx < 4 || np < 4 {
            return Err(Error::InvalidParameter("grid needs at least 4 nodes per axis".into()));
        }
        Ok(Self { x0, dx, nx, p0, dp, np })
    }

    /// Grid of `n × n` nodes spanning `center ± 4σ` on each axis.
    pub fn fit(center: (f64, f64), sigma: (f64, f64), n: usize) -> Result<Self> {
        let hx = 4.0 * sigma.0;
        let hp = 4.0 * sigma.1;
        Self::new(center.0 - hx, 2.0 * hx / (n - 1) as f64, n, center.1 - hp, 2.0 * hp / (n - 1) as f64, n)
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn p(&self, j: usize) -> f64 {
        self.p0 + j as f64 * self.dp
    }

    pub fn len(&self) -> usize {
        self.nx * self.np
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of node `(i, j)`; `x` varies fastest.
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dp
    }
}

/// Sampled wave function on a phase-space grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridState {
    pub grid: GridSpec,
    pub values: Vec<C64>,
    pub t: f64,
    pub hbar: f64,
}

/// Catmull-Rom weights for the four nodes around fractional offset `u ∈ [0, 1)`.
fn catmull_rom(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    [
        0.5 * (-u3 + 2.0 * u2 - u),
        0.5 * (3.0 * u3 - 5.0 * u2 + 2.0),
        0.5 * (-3.0 * u3 + 4.0 * u2 + u),
        0.5 * (u3 - u2),
    ]
}

impl GridState {
    /// Samples `f(x, p)` on every node.
    pub fn from_fn(grid: GridSpec, t: f64, hbar: f64, f: impl Fn(f64, f64) -> C64 + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|k| f(grid.x(k % grid.nx), grid.p(k / grid.nx)))
            .collect();
        Self { grid, values, t, hbar }
    }

    pub fn value(&self, i: usize, j: usize) -> C64 {
        self.values[self.grid.index(i, j)]
    }

    /// `Σ |ψ|² dx dp`.
    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.cell_area()
    }

    /// Bicubic Catmull-Rom interpolation; nodes outside the grid count as zero.
    pub fn interpolate(&self, x: f64, p: f64) -> C64 {
        let g = &self.grid;
        let u = (x - g.x0) / g.dx;
        let v = (p - g.p0) / g.dp;
        if !(u > -2.0 && v > -2.0 && u < g.nx as f64 + 1.0 && v < g.np as f64 + 1.0) {
            return C64::new(0.0, 0.0);
        }
        let (iu, iv) = (u.floor(), v.floor());
        let (wu, wv) = (catmull_rom(u - iu), catmull_rom(v - iv));
        let mut acc = C64::new(0.0, 0.0);
        for (b, wb) in wv.iter().enumerate() {
            let j = iv as i64 - 1 + b as i64;
            if j < 0 || j >= g.np as i64 {
                continue;
            }
            for (a, wa) in wu.iter().enumerate() {
                let i = iu as i64 - 1 + a as i64;
                if i < 0 || i >= g.nx as i64 {
                    continue;
                }
                acc += self.values[g.index(i as usize, j as usize)] * (wa * wb);
            }
        }
        acc
    }

    /// Phase-space area of `{|ψ|² > level · max |ψ|²}`, counted by nodes.
    pub fn support_area(&self, level: f64) -> f64 {
        let max = self.values.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        let n = self.values.iter().filter(|z| z.norm_sqr() > level * max).count();
        n as f64 * self.grid.cell_area()
    }
}

/// Pulls every node of the grid back along the flow from `t2` to `t1` and
/// applies the action phase. `t1` must equal the state's time stamp.
pub fn detqm_evolve(state: &GridState, t1: f64, t2: f64, h: &HamiltonianSpec) -> Result<GridState> {
    if (t1 - state.t).abs() > 1e-12 * (1.0 + t1.abs()) {
        return Err(Error::InvalidParameter(format!("state is at t = {}, not {t1}", state.t)));
    }
    let g = state.grid;
    let hbar = state.hbar;
    let values: Result<Vec<C64>> = (0..g.len())
        .into_par_iter()
        .map(|k| {
            let (x2, p2) = (g.x(k % g.nx), g.p(k / g.nx));
            let back = hamilton_flow(x2, p2, t2, t1, h)?;
            // The backward segment carries −S.
            Ok((-I * back.action / hbar).exp() * state.interpolate(back.x, back.p))
        })
        .collect();
    let out = GridState { grid: g, values: values?, t: t2, hbar };
    let before = state.norm_sqr();
    let after = out.norm_sqr();
    if before > 0.0 && after < (1.0 - NORM_LOSS_TOL) * before {
        return Err(Error::SupportEscapedGrid(after / before));
    }
    Ok(out)
}

/// A wave function that can be evaluated anywhere in phase space.
pub trait PhaseSpaceField: Sync {
    fn eval(&self, x: f64, p: f64) -> C64;
}

impl<F: Fn(f64, f64) -> C64 + Sync> PhaseSpaceField for F {
    fn eval(&self, x: f64, p: f64) -> C64 {
        self(x, p)
    }
}

impl PhaseSpaceField for GridState {
    fn eval(&self, x: f64, p: f64) -> C64 {
        self.interpolate(x, p)
    }
}

/// Value at `(x, p)` after evolving the field by `tau` along the flow.
fn transported(field: &dyn PhaseSpaceField, x: f64, p: f64, tau: f64, h: &HamiltonianSpec, hbar: f64) -> Result<C64> {
    if tau == 0.0 {
        return Ok(field.eval(x, p));
    }
    let back = hamilton_flow(x, p, tau, 0.0, h)?;
    Ok((-I * back.action / hbar).exp() * field.eval(back.x, back.p))
}

/// `(−p²/(2ħm) − i(p/m)∂_x + iV′∂_p + V/ħ) ψ` on interior nodes, with
/// central differences. Boundary nodes are zero.
pub fn detqm_rhs(values: &[C64], grid: &GridSpec, h: &HamiltonianSpec, hbar: f64) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); grid.len()];
    for j in 1..grid.np - 1 {
        for i in 1..grid.nx - 1 {
            let (x, p) = (grid.x(i), grid.p(j));
            let k = grid.index(i, j);
            let psi = values[k];
            let dx = (values[grid.index(i + 1, j)] - values[grid.index(i - 1, j)]) / (2.0 * grid.dx);
            let dp = (values[grid.index(i, j + 1)] - values[grid.index(i, j - 1)]) / (2.0 * grid.dp);
            out[k] = psi * (-p * p / (2.0 * hbar * h.m) + h.potential(x) / hbar) - I * (p / h.m) * dx
                + I * h.gradient(x) * dp;
        }
    }
    out
}

/// `(−p²/(2ħm) − (ħ/2) m β² ∂_p² − i(p/m)∂_x) ψ` on interior nodes: the
/// free relaxation-model generator divided by ħ.
pub fn subqm_rhs(values: &[C64], grid: &GridSpec, dof: &Dof, hbar: f64) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); grid.len()];
    let diff = 0.5 * hbar * dof.m * dof.beta * dof.beta;
    for j in 1..grid.np - 1 {
        for i in 1..grid.nx - 1 {
            let p = grid.p(j);
            let k = grid.index(i, j);
            let psi = values[k];
            let dx = (values[grid.index(i + 1, j)] - values[grid.index(i - 1, j)]) / (2.0 * grid.dx);
            let dpp = (values[grid.index(i, j + 1)] - 2.0 * psi + values[grid.index(i, j - 1)]) / (grid.dp * grid.dp);
            out[k] = psi * (-p * p / (2.0 * hbar * dof.m)) - diff * dpp - I * (p / dof.m) * dx;
        }
    }
    out
}

/// Grid L² norm of `iψ_t − RHS ψ` over interior nodes. `ψ_t` comes from a
/// five-point stencil on the exact characteristic evolution of `field`
/// with time step `tau`.
pub fn detqm_residual(
    field: &dyn PhaseSpaceField,
    grid: &GridSpec,
    h: &HamiltonianSpec,
    hbar: f64,
    tau: f64,
) -> Result<f64> {
    require_positive("tau", tau)?;
    let samples: Result<Vec<[C64; 5]>> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let (x, p) = (grid.x(k % grid.nx), grid.p(k / grid.nx));
            let mut s = [C64::new(0.0, 0.0); 5];
            for (n, off) in [-2.0, -1.0, 0.0, 1.0, 2.0].iter().enumerate() {
                s[n] = transported(field, x, p, off * tau, h, hbar)?;
            }
            Ok(s)
        })
        .collect();
    let samples = samples?;
    let values: Vec<C64> = samples.iter().map(|s| s[2]).collect();
    let rhs = detqm_rhs(&values, grid, h, hbar);
    let mut sum = 0.0;
    for j in 1..grid.np - 1 {
        for i in 1..grid.nx - 1 {
            let k = grid.index(i, j);
            let s = &samples[k];
            let dt = (s[0] - 8.0 * s[1] + 8.0 * s[3] - s[4]) / (12.0 * tau);
            sum += (I * dt - rhs[k]).norm_sqr();
        }
    }
    Ok((sum * grid.cell_area()).sqrt())
}

/// [`detqm_residual`] of a grid state on its own grid.
pub fn detqm_residual_state(state: &GridState, h: &HamiltonianSpec, tau: f64) -> Result<f64> {
    detqm_residual(state, &state.grid, h, state.hbar, tau)
}
