//! Exact calculus of complex Gaussian functions.
//!
//! A [`QuadForm`] is the function
//!
//! ```text
//! f(X) = exp{ ln_scale + (i/ħ)(½ XᵀMX + BᵀX + c) }
//! ```
//!
//! with `M` complex symmetric. Damping enters through `Im M ⪰ 0`; a real
//! state `exp{(1/ħ)(−½XᵀAX + iBᵀX)}` corresponds to `M = iA`.
//!
//! Integrals are evaluated by symmetric Gaussian elimination. Every pivot
//! `m` contributes `sqrt(2πħ)·(−i m)^(−1/2)` on the principal branch, which
//! is the correct branch because `−iM` has Hermitian part `Im M ⪰ 0`.
//! Purely oscillatory pivots (`Im m = 0`) use the same formula, which is the
//! exact limit of an `+i0` regularization.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen, Vector2};
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{require_positive, Error, Result};

/// Complex double.
pub type C64 = Complex64;

pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Relative pivot size below which a form is reported singular.
const PIVOT_TOL: f64 = 1e-13;
/// Relative negative imaginary part of a pivot that counts as divergence.
const DIVERGENCE_TOL: f64 = 1e-9;

/// Quadratic-exponential function over `dim` real variables.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadForm {
    m: DMatrix<C64>,
    b: DVector<C64>,
    c: C64,
    ln_scale: C64,
    hbar: f64,
}

/// Mean and covariance of the probability density `|f|² / ∫|f|²`.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl QuadForm {
    /// Builds a form, symmetrizing `m`. Rejects non-square or non-symmetric input.
    pub fn new(m: DMatrix<C64>, b: DVector<C64>, c: C64, hbar: f64) -> Result<Self> {
        require_positive("hbar", hbar)?;
        if m.nrows() != m.ncols() || m.nrows() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "M is {}x{}, B has length {}",
                m.nrows(),
                m.ncols(),
                b.len()
            )));
        }
        let asym = (&m - m.transpose()).norm();
        if asym > 1e-12 * (1.0 + m.norm()) {
            return Err(Error::InvalidParameter(format!("M is not symmetric (|M - Mᵀ| = {asym:e})")));
        }
        let m = (&m + m.transpose()) * C64::new(0.5, 0.0);
        Ok(Self { m, b, c, ln_scale: C64::new(0.0, 0.0), hbar })
    }

    /// The constant function 1.
    pub fn unit(dim: usize, hbar: f64) -> Self {
        Self {
            m: DMatrix::zeros(dim, dim),
            b: DVector::zeros(dim),
            c: C64::new(0.0, 0.0),
            ln_scale: C64::new(0.0, 0.0),
            hbar,
        }
    }

    /// Separable Gaussian `exp{−Σ (xᵢ − x0ᵢ)²/(2wᵢ²)}` (amplitude convention).
    pub fn gaussian(center: &[f64], widths: &[f64], hbar: f64) -> Result<Self> {
        if center.len() != widths.len() {
            return Err(Error::DimensionMismatch("center and widths differ in length".into()));
        }
        let mut f = Self::unit(center.len(), hbar);
        for (k, (&x0, &w)) in center.iter().zip(widths).enumerate() {
            require_positive("width", w)?;
            f = f.damp(k, x0, w);
        }
        Ok(f)
    }

    /// Multiplies by `exp{−(x_k − x0)²/(2w²)}`: adds `iħ/w²` to `M_kk`.
    pub fn damp(mut self, k: usize, x0: f64, w: f64) -> Self {
        let g = self.hbar / (w * w);
        self.m[(k, k)] += I * g;
        self.b[k] += -I * g * x0;
        self.c += I * (0.5 * g * x0 * x0);
        self
    }

    /// Multiplies by the plane wave `exp{(i/ħ) kᵀX}`.
    pub fn add_linear(mut self, k: &DVector<C64>) -> Result<Self> {
        if k.len() != self.dim() {
            return Err(Error::DimensionMismatch("linear term length".into()));
        }
        self.b += k;
        Ok(self)
    }

    /// Multiplies by the constant `exp(ln_factor)`.
    pub fn scaled(mut self, ln_factor: C64) -> Self {
        self.ln_scale += ln_factor;
        self
    }

    /// Sets the logarithmic prefactor.
    pub fn with_ln_scale(mut self, ln_scale: C64) -> Self {
        self.ln_scale = ln_scale;
        self
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }
    pub fn m(&self) -> &DMatrix<C64> {
        &self.m
    }
    pub fn b(&self) -> &DVector<C64> {
        &self.b
    }
    pub fn c(&self) -> C64 {
        self.c
    }
    pub fn ln_scale(&self) -> C64 {
        self.ln_scale
    }
    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    /// Logarithm of `f(x)`.
    pub fn exponent(&self, x: &[f64]) -> C64 {
        let n = self.dim();
        let mut q = C64::new(0.0, 0.0);
        for r in 0..n {
            let mut row = C64::new(0.0, 0.0);
            for s in 0..n {
                row += self.m[(r, s)] * x[s];
            }
            q += x[r] * (0.5 * row + self.b[r]);
        }
        self.ln_scale + I * (q + self.c) / self.hbar
    }

    /// `f(x)`.
    pub fn eval(&self, x: &[f64]) -> C64 {
        self.exponent(x).exp()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!("{} vs {} variables", self.dim(), other.dim())));
        }
        if (self.hbar - other.hbar).abs() > 1e-12 * self.hbar {
            return Err(Error::InvalidParameter("forms carry different hbar".into()));
        }
        Ok(())
    }

    /// Pointwise product.
    pub fn multiply(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            m: &self.m + &other.m,
            b: &self.b + &other.b,
            c: self.c + other.c,
            ln_scale: self.ln_scale + other.ln_scale,
            hbar: self.hbar,
        })
    }

    /// Complex conjugate function `f*`.
    pub fn conj(&self) -> Self {
        Self {
            m: -self.m.map(|z| z.conj()),
            b: -self.b.map(|z| z.conj()),
            c: -self.c.conj(),
            ln_scale: self.ln_scale.conj(),
            hbar: self.hbar,
        }
    }

    /// `f · g*`.
    pub fn multiply_conj(&self, other: &Self) -> Result<Self> {
        self.multiply(&other.conj())
    }

    /// Views the form as a function on `dim` variables, where variable `k`
    /// of `self` becomes variable `positions[k]`.
    pub fn embed(&self, dim: usize, positions: &[usize]) -> Result<Self> {
        if positions.len() != self.dim() || positions.iter().any(|&p| p >= dim) {
            return Err(Error::DimensionMismatch("embedding positions".into()));
        }
        let mut out = Self::unit(dim, self.hbar);
        for (r, &pr) in positions.iter().enumerate() {
            out.b[pr] = self.b[r];
            for (s, &ps) in positions.iter().enumerate() {
                out.m[(pr, ps)] = self.m[(r, s)];
            }
        }
        out.c = self.c;
        out.ln_scale = self.ln_scale;
        Ok(out)
    }

    /// Linear change of variables `g(Y) = f(S·Y + shift)`.
    pub fn substitute(&self, s: &DMatrix<f64>, shift: &DVector<f64>) -> Result<Self> {
        if s.nrows() != self.dim() || shift.len() != self.dim() {
            return Err(Error::DimensionMismatch("substitution matrix".into()));
        }
        let sc = s.map(|v| C64::new(v, 0.0));
        let shc = shift.map(|v| C64::new(v, 0.0));
        let ms = &self.m * &shc;
        let m = sc.transpose() * &self.m * &sc;
        let b = sc.transpose() * (&ms + &self.b);
        let c = self.c + (shc.transpose() * (ms * C64::new(0.5, 0.0) + &self.b))[(0, 0)];
        let mut out = Self::new(m, b, c, self.hbar)?;
        out.ln_scale = self.ln_scale;
        Ok(out)
    }

    /// Integrates over the variables in `block`, returning the form on the
    /// remaining variables (in their original order).
    pub fn marginalize(&self, block: &[usize]) -> Result<Self> {
        let n = self.dim();
        let mut remaining: Vec<usize> = block.to_vec();
        remaining.sort_unstable();
        remaining.dedup();
        if remaining.len() != block.len() || remaining.iter().any(|&j| j >= n) {
            return Err(Error::DimensionMismatch(format!("invalid block {block:?} for {n} variables")));
        }
        let mut m = self.m.clone();
        let mut b = self.b.clone();
        let mut c = self.c;
        let mut ln = self.ln_scale;
        let reference: Vec<f64> = (0..n)
            .map(|j| {
                let d = self.m[(j, j)].norm();
                if d > 0.0 {
                    d
                } else {
                    self.m.row(j).iter().map(|z| z.norm()).fold(0.0, f64::max)
                }
            })
            .collect();
        let half_ln_2pi_hbar = 0.5 * (2.0 * PI * self.hbar).ln();
        while !remaining.is_empty() {
            let (pos, &j) = remaining
                .iter()
                .enumerate()
                .max_by(|(_, &u), (_, &v)| {
                    let ru = m[(u, u)].norm() / reference[u].max(f64::MIN_POSITIVE);
                    let rv = m[(v, v)].norm() / reference[v].max(f64::MIN_POSITIVE);
                    ru.total_cmp(&rv)
                })
                .expect("non-empty block");
            let piv = m[(j, j)];
            if !(piv.norm() > PIVOT_TOL * reference[j]) || !piv.is_finite() {
                return Err(Error::SingularForm { pivot: piv.norm() });
            }
            if piv.im < -DIVERGENCE_TOL * piv.norm() {
                return Err(Error::NonIntegrable { im: piv.im });
            }
            let u = m.column(j).clone_owned();
            let by = b[j];
            for r in 0..n {
                for s in 0..n {
                    m[(r, s)] -= u[r] * u[s] / piv;
                }
            }
            b -= &u * (by / piv);
            c -= by * by / (2.0 * piv);
            ln += half_ln_2pi_hbar - 0.5 * (-I * piv).ln();
            remaining.remove(pos);
        }
        let keep: Vec<usize> = (0..n).filter(|j| !block.contains(j)).collect();
        let k = keep.len();
        let mut mo = DMatrix::zeros(k, k);
        let mut bo = DVector::zeros(k);
        for (r, &kr) in keep.iter().enumerate() {
            bo[r] = b[kr];
            for (s, &ks) in keep.iter().enumerate() {
                mo[(r, s)] = m[(kr, ks)];
            }
        }
        let mo = (&mo + mo.transpose()) * C64::new(0.5, 0.0);
        Ok(Self { m: mo, b: bo, c, ln_scale: ln, hbar: self.hbar })
    }

    /// Logarithm of `∫ f dX` over all variables.
    pub fn ln_integral(&self) -> Result<C64> {
        let all: Vec<usize> = (0..self.dim()).collect();
        let r = self.marginalize(&all)?;
        Ok(r.ln_scale + I * r.c / self.hbar)
    }

    /// Imaginary part of `M`.
    pub fn im_m(&self) -> DMatrix<f64> {
        self.m.map(|z| z.im)
    }

    /// Smallest eigenvalue of `Im M`.
    pub fn min_eig_im(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        SymmetricEigen::new(self.im_m()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True when `Im M` is positive semidefinite up to `-tol`.
    pub fn is_normalizable(&self, tol: f64) -> bool {
        self.min_eig_im() >= -tol
    }

    fn damping_cholesky(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let p = self.im_m();
        p.clone().cholesky().ok_or_else(|| Error::NonNormalizable { min_eig: self.min_eig_im() })
    }

    /// Mean and covariance of `|f|²`; the covariance is `(ħ/2)(Im M)⁻¹`.
    pub fn moments(&self) -> Result<Moments> {
        let ch = self.damping_cholesky()?;
        let imb = self.b.map(|z| z.im);
        let mean = -ch.solve(&imb);
        let cov = ch.inverse() * (0.5 * self.hbar);
        Ok(Moments { mean, cov })
    }

    /// Logarithm of `∫ |f|² dX`.
    pub fn ln_norm_sqr(&self) -> Result<f64> {
        let ch = self.damping_cholesky()?;
        let n = self.dim() as f64;
        let imb = self.b.map(|z| z.im);
        let pinv_b = ch.solve(&imb);
        let ln_det_p: f64 = ch.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let quad = imb.dot(&pinv_b) / self.hbar;
        Ok(2.0 * self.ln_scale.re - 2.0 * self.c.im / self.hbar
            + 0.5 * n * (PI * self.hbar).ln()
            - 0.5 * ln_det_p
            + quad)
    }

    /// `(∫ |f|² dX)^(1/2)`.
    pub fn l2_norm(&self) -> Result<f64> {
        Ok((0.5 * self.ln_norm_sqr()?).exp())
    }

    /// Amplitude-convention widths `Δ² = diag(ħ (Im M)⁻¹)`, so that a factor
    /// `exp{−x²/(2Δ²)}` reports exactly `Δ²`.
    pub fn amplitude_covariance(&self) -> Result<DMatrix<f64>> {
        let ch = self.damping_cholesky()?;
        Ok(ch.inverse() * self.hbar)
    }
}

/// Inverse of a 2×2 matrix through its adjugate.
pub fn adjugate_inverse_2x2(a: &Matrix2<C64>) -> Result<Matrix2<C64>> {
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let norm_sqr: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    let tol = 1e-12 * norm_sqr;
    if !(det.norm() > tol) {
        return Err(Error::SingularMatrix { det: det.norm(), tol });
    }
    let adj = Matrix2::new(a[(1, 1)], -a[(0, 1)], -a[(1, 0)], a[(0, 0)]);
    Ok(adj / det)
}

/// Summand `a (XᵀE + b)²` of a rank-one decomposition over ℝ².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankOneTerm {
    pub a: C64,
    pub e: Vector2<f64>,
    pub b: C64,
}

/// Result of a closed-form Gaussian integral: the exponent, the determinant
/// `Δ` of the quadratic part and the logarithm of the prefactor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankOneIntegral {
    pub exponent: C64,
    pub delta: C64,
    pub ln_prefactor: C64,
}

impl RankOneIntegral {
    /// Logarithm of the full integral.
    pub fn ln_value(&self) -> C64 {
        self.exponent + self.ln_prefactor
    }
}

fn perp(e: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(e[1], -e[0])
}

/// `∫ exp{(i/2ħ) Σ aₖ(XᵀEₖ + bₖ)² + (i/ħ) a₀ XᵀB₀} d²X`.
///
/// The exponent is `(i/2ħ){−Δ⁻¹ Yᵀ(Σ aₖ Eₖ⊥Eₖ⊥ᵀ)Y + Σ aₖbₖ²}` with
/// `Y = Σ aₖbₖEₖ + a₀B₀` and `Δ = det Σ aₖEₖEₖᵀ`.
pub fn integrate_rank_one_2d(
    terms: &[RankOneTerm],
    a0: C64,
    b0: Vector2<f64>,
    hbar: f64,
) -> Result<RankOneIntegral> {
    require_positive("hbar", hbar)?;
    let mut a = Matrix2::<C64>::zeros();
    let mut adj = Matrix2::<C64>::zeros();
    let mut y = Vector2::<C64>::zeros();
    let mut sum_ab2 = C64::new(0.0, 0.0);
    for t in terms {
        let e = t.e.map(|v| C64::new(v, 0.0));
        let ep = perp(&t.e).map(|v| C64::new(v, 0.0));
        a += e * e.transpose() * t.a;
        adj += ep * ep.transpose() * t.a;
        y += e * (t.a * t.b);
        sum_ab2 += t.a * t.b * t.b;
    }
    y += b0.map(|v| C64::new(v, 0.0)) * a0;
    let delta = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let scale: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    if !(delta.norm() > 1e-12 * scale) {
        return Err(Error::SingularForm { pivot: delta.norm() });
    }
    let im = a.map(|z| z.im);
    let im_min = SymmetricEigen::new(im).eigenvalues.min();
    if im_min < -1e-12 * scale.sqrt() {
        return Err(Error::NonIntegrable { im: im_min });
    }
    let quad = (y.transpose() * adj * y)[(0, 0)];
    let exponent = I / (2.0 * hbar) * (-quad / delta + sum_ab2);
    // Eigenvalues of −iA have non-negative real part; take principal roots.
    let na = a * (-I);
    let tr = na[(0, 0)] + na[(1, 1)];
    let det = na[(0, 0)] * na[(1, 1)] - na[(0, 1)] * na[(1, 0)];
    let disc = (tr * tr * 0.25 - det).sqrt();
    let l1 = tr * 0.5 + disc;
    let l2 = tr * 0.5 - disc;
    let ln_prefactor = (2.0 * PI * hbar).ln() - 0.5 * (l1.ln() + l2.ln());
    Ok(RankOneIntegral { exponent, delta, ln_prefactor })
}

/// `∫ exp{(i/2ħ) Σ aₖ(x + bₖ)² + (i/ħ) b₀ x} dx`, exponent
/// `(i/2ħ){−(Σaₖ)⁻¹(Σaₖbₖ + b₀)² + Σaₖbₖ²}`.
pub fn integrate_rank_one_1d(terms: &[(C64, C64)], b0: C64, hbar: f64) -> Result<RankOneIntegral> {
    require_positive("hbar", hbar)?;
    let sa: C64 = terms.iter().map(|t| t.0).sum();
    let sab: C64 = terms.iter().map(|t| t.0 * t.1).sum();
    let sab2: C64 = terms.iter().map(|t| t.0 * t.1 * t.1).sum();
    let scale = terms.iter().map(|t| t.0.norm()).fold(0.0, f64::max);
    if !(sa.norm() > 1e-14 * scale) {
        return Err(Error::SingularForm { pivot: sa.norm() });
    }
    if sa.im < -DIVERGENCE_TOL * sa.norm() {
        return Err(Error::NonIntegrable { im: sa.im });
    }
    let lin = sab + b0;
    let exponent = I / (2.0 * hbar) * (-lin * lin / sa + sab2);
    let ln_prefactor = 0.5 * (2.0 * PI * hbar).ln() - 0.5 * (-I * sa).ln();
    Ok(RankOneIntegral { exponent, delta: sa, ln_prefactor })
}

/// The quadratic form `½XᵀMX + BᵀX + c` equivalent to a rank-one sum.
pub fn assemble_rank_one_2d(terms: &[RankOneTerm], a0: C64, b0: Vector2<f64>, hbar: f64) -> Result<QuadForm> {
    let mut m = DMatrix::<C64>::zeros(2, 2);
    let mut b = DVector::<C64>::zeros(2);
    let mut c = C64::new(0.0, 0.0);
    for t in terms {
        for r in 0..2 {
            b[r] += t.a * t.b * t.e[r];
            for s in 0..2 {
                m[(r, s)] += t.a * t.e[r] * t.e[s];
            }
        }
        c += 0.5 * t.a * t.b * t.b;
    }
    for r in 0..2 {
        b[r] += a0 * b0[r];
    }
    QuadForm::new(m, b, c, hbar)
}
