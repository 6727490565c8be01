//! Dislocation kernels, the interpolated core field, cell problems and the
//! relaxed self-energy density.
//!
//! A curl-free field homogeneous of degree -1 has rows of the form
//! (c e_r + q(theta) e_theta)/r with c constant: the radial component of
//! each row cannot depend on theta. Angular kernels are stored in exactly
//! that reduced form (a constant plus a Fourier series per row), which makes
//! curl vanish identically, keeps circulations exact, and gives closed-form
//! divergences and potentials for the interpolant construction.
//!
//! The factor conventions follow the cell problem without 1/2 and the
//! self-energy density with 1/2; `Convention` switches the latter and both
//! numbers are always derivable from the reports.

use crate::annulus::{divergence_free_kernel, minimize, AnnulusProblem};
use crate::error::{DglError, Result};
use crate::matrix::{Mat2, Vec2};
use crate::wells::QuadraticForm;
use serde::{Deserialize, Serialize};

pub use crate::annulus::AnnulusSolution;

/// Whether the reported self-energy density carries the 1/2 factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convention {
    PsiHalf,
    PsiNoHalf,
}

impl Convention {
    pub fn factor(self) -> f64 {
        match self {
            Convention::PsiHalf => 0.5,
            Convention::PsiNoHalf => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Convention::PsiHalf => "psi-half",
            Convention::PsiNoHalf => "psi-nohalf",
        }
    }
}

impl std::str::FromStr for Convention {
    type Err = DglError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psi-half" => Ok(Convention::PsiHalf),
            "psi-nohalf" => Ok(Convention::PsiNoHalf),
            other => Err(DglError::Config(format!("unknown convention: {other}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Periodic series
// ---------------------------------------------------------------------------

/// Real trigonometric polynomial a0 + sum_m (a_m cos m theta + b_m sin m theta).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FourierSeries {
    pub a0: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl FourierSeries {
    pub fn constant(c: f64) -> Self {
        FourierSeries {
            a0: c,
            cos: Vec::new(),
            sin: Vec::new(),
        }
    }

    /// Fit from samples at the shifted nodes theta_k = (k + 1/2) 2pi/n.
    pub fn fit(samples: &[f64], n_modes: usize) -> Self {
        let n = samples.len();
        let m_max = n_modes.min(n / 2 - 1);
        let mut a0 = 0.0;
        for s in samples {
            a0 += s;
        }
        a0 /= n as f64;
        let mut cos = vec![0.0; m_max];
        let mut sin = vec![0.0; m_max];
        for (k, s) in samples.iter().enumerate() {
            let theta = (k as f64 + 0.5) * 2.0 * std::f64::consts::PI / n as f64;
            for m in 1..=m_max {
                cos[m - 1] += s * (m as f64 * theta).cos();
                sin[m - 1] += s * (m as f64 * theta).sin();
            }
        }
        for m in 0..m_max {
            cos[m] *= 2.0 / n as f64;
            sin[m] *= 2.0 / n as f64;
        }
        FourierSeries { a0, cos, sin }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let mut acc = self.a0;
        let (s1, c1) = theta.sin_cos();
        let (mut sm, mut cm) = (0.0f64, 1.0f64); // sin/cos of m*theta, starting m = 0
        for m in 0..self.cos.len() {
            let (s_next, c_next) = (sm * c1 + cm * s1, cm * c1 - sm * s1);
            sm = s_next;
            cm = c_next;
            acc += self.cos[m] * cm + self.sin[m] * sm;
        }
        acc
    }

    /// Term-by-term derivative.
    pub fn derivative(&self) -> FourierSeries {
        let m_max = self.cos.len();
        let mut cos = vec![0.0; m_max];
        let mut sin = vec![0.0; m_max];
        for m in 1..=m_max {
            cos[m - 1] = m as f64 * self.sin[m - 1];
            sin[m - 1] = -(m as f64) * self.cos[m - 1];
        }
        FourierSeries { a0: 0.0, cos, sin }
    }

    /// Antiderivative of the mean-free part (a0 must be negligible).
    pub fn antiderivative(&self) -> FourierSeries {
        let m_max = self.cos.len();
        let mut cos = vec![0.0; m_max];
        let mut sin = vec![0.0; m_max];
        for m in 1..=m_max {
            sin[m - 1] = self.cos[m - 1] / m as f64;
            cos[m - 1] = -self.sin[m - 1] / m as f64;
        }
        FourierSeries { a0: 0.0, cos, sin }
    }

    pub fn sup_bound(&self) -> f64 {
        self.a0.abs()
            + self
                .cos
                .iter()
                .zip(self.sin.iter())
                .map(|(c, s)| (c * c + s * s).sqrt())
                .sum::<f64>()
    }
}

// ---------------------------------------------------------------------------
// Angular kernels
// ---------------------------------------------------------------------------

/// The angular profile Gamma_xi of the plane dislocation field Gamma(theta)/r
/// solving curl beta = xi delta_0 and div(C beta) = 0.
#[derive(Debug, Clone)]
pub struct AngularKernel {
    pub xi: Vec2,
    /// Constant radial component of each row.
    radial: [f64; 2],
    /// Tangential component of each row as a series; its mean times 2pi is
    /// the circulation, pinned to xi exactly.
    tangential: [FourierSeries; 2],
    /// Theta-derivatives of the tangential series (hot in divergence loops).
    tangential_deriv: [FourierSeries; 2],
    /// sup_theta |Gamma|.
    pub sup_bound: f64,
    /// sup_theta |d_theta Gamma|.
    pub dtheta_bound: f64,
    /// Worst relative deviation seen while reducing the solver field to the
    /// (c, q(theta)) form: radial spread plus curl-free projection error.
    pub extraction_deviation: f64,
    /// (1/2) int_0^2pi C Gamma : Gamma dtheta, the half-convention density.
    pub psi_hat_half: f64,
}

impl AngularKernel {
    /// The closed-form kernel for the identity quadratic form: Gamma_0 only.
    pub fn for_identity_form(xi: Vec2) -> AngularKernel {
        let q0 = xi.x / (2.0 * std::f64::consts::PI);
        let q1 = xi.y / (2.0 * std::f64::consts::PI);
        let sup = xi.norm() / (2.0 * std::f64::consts::PI);
        AngularKernel {
            xi,
            radial: [0.0, 0.0],
            tangential: [FourierSeries::constant(q0), FourierSeries::constant(q1)],
            tangential_deriv: [FourierSeries::constant(0.0), FourierSeries::constant(0.0)],
            sup_bound: sup,
            dtheta_bound: sup,
            extraction_deviation: 0.0,
            psi_hat_half: xi.norm_sq() / (4.0 * std::f64::consts::PI),
        }
    }

    pub fn gamma(&self, theta: f64) -> Mat2 {
        let e_r = Vec2::unit_radial(theta);
        let e_t = Vec2::unit_tangential(theta);
        Mat2::from_rows(
            e_r.scale(self.radial[0]) + e_t.scale(self.tangential[0].eval(theta)),
            e_r.scale(self.radial[1]) + e_t.scale(self.tangential[1].eval(theta)),
        )
    }

    /// The field Gamma(theta)/r; panics at the origin.
    pub fn eval(&self, x: Vec2) -> Mat2 {
        let r = x.norm();
        assert!(r > 0.0, "kernel evaluated at the origin");
        self.gamma(x.y.atan2(x.x)).scale(1.0 / r)
    }

    /// Row-wise divergence q_r'(theta)/r^2, exact for the reduced form.
    pub fn div(&self, x: Vec2) -> Vec2 {
        let r2 = x.norm_sq();
        let theta = x.y.atan2(x.x);
        Vec2::new(
            self.tangential_deriv[0].eval(theta) / r2,
            self.tangential_deriv[1].eval(theta) / r2,
        )
    }

    /// Circulation on any circle around the origin (exact by construction).
    pub fn circulation(&self) -> Vec2 {
        Vec2::new(
            2.0 * std::f64::consts::PI * self.tangential[0].a0,
            2.0 * std::f64::consts::PI * self.tangential[1].a0,
        )
    }
}

/// Inner radius used for the angular-kernel extraction solve.
pub const ANGULAR_KERNEL_DELTA: f64 = 1e-3;

/// Solve the plane cell problem numerically and reduce the minimizer to its
/// angular profile. Fails when the field is not radially settled (variance
/// above 5% across the middle band of radii).
pub fn solve_angular_kernel(form: &QuadraticForm, xi: Vec2) -> Result<AngularKernel> {
    if let QuadraticForm::Identity = form {
        return Ok(AngularKernel::for_identity_form(xi));
    }
    let problem = AnnulusProblem::with_inner_resolution(ANGULAR_KERNEL_DELTA, 1.0, xi, 24);
    let sol = minimize(&problem, form)?;
    let (avg, radial_dev) = sol.radial_average();
    if radial_dev > 0.05 {
        return Err(DglError::UnderResolved(format!(
            "angular kernel varies {:.1}% across radii",
            radial_dev * 100.0
        )));
    }
    let n = avg.len();
    let mut rad_samples = [vec![0.0; n], vec![0.0; n]];
    let mut tan_samples = [vec![0.0; n], vec![0.0; n]];
    for (k, g) in avg.iter().enumerate() {
        let theta = sol.cell_theta(k);
        let e_r = Vec2::unit_radial(theta);
        let e_t = Vec2::unit_tangential(theta);
        for row in 0..2 {
            rad_samples[row][k] = g.row(row).dot(e_r);
            tan_samples[row][k] = g.row(row).dot(e_t);
        }
    }
    let scale = avg.iter().map(|m| m.norm()).fold(0.0, f64::max).max(1e-30);
    let mut radial = [0.0f64; 2];
    let mut projection_dev = 0.0f64;
    for row in 0..2 {
        let mean: f64 = rad_samples[row].iter().sum::<f64>() / n as f64;
        radial[row] = mean;
        for v in &rad_samples[row] {
            projection_dev = projection_dev.max((v - mean).abs() / scale);
        }
    }
    let n_modes = (n / 3).min(64);
    let mut tangential = [
        FourierSeries::fit(&tan_samples[0], n_modes),
        FourierSeries::fit(&tan_samples[1], n_modes),
    ];
    // Pin the circulation exactly: the solver preserves it to quadrature
    // accuracy; the mean coefficient is replaced by the exact value.
    let target = [
        xi.x / (2.0 * std::f64::consts::PI),
        xi.y / (2.0 * std::f64::consts::PI),
    ];
    let mut circulation_dev = 0.0f64;
    for row in 0..2 {
        circulation_dev = circulation_dev.max((tangential[row].a0 - target[row]).abs() / scale);
        tangential[row].a0 = target[row];
    }
    let extraction_deviation = radial_dev.max(projection_dev).max(circulation_dev);

    // Bounds and the half-convention density by fine quadrature.
    let tangential_deriv = [tangential[0].derivative(), tangential[1].derivative()];
    let kernel = AngularKernel {
        xi,
        radial,
        tangential: tangential.clone(),
        tangential_deriv,
        sup_bound: 0.0,
        dtheta_bound: 0.0,
        extraction_deviation,
        psi_hat_half: 0.0,
    };
    let nq = 2048;
    let mut sup = 0.0f64;
    let mut dsup = 0.0f64;
    let mut density = 0.0f64;
    let dq = [tangential[0].derivative(), tangential[1].derivative()];
    for k in 0..nq {
        let theta = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / nq as f64;
        let g = kernel.gamma(theta);
        sup = sup.max(g.norm());
        // d_theta of row (c e_r + q e_theta) = (c + q') e_theta - q e_r.
        let e_r = Vec2::unit_radial(theta);
        let e_t = Vec2::unit_tangential(theta);
        let d0 = e_t.scale(radial[0] + dq[0].eval(theta)) - e_r.scale(tangential[0].eval(theta));
        let d1 = e_t.scale(radial[1] + dq[1].eval(theta)) - e_r.scale(tangential[1].eval(theta));
        dsup = dsup.max(Mat2::from_rows(d0, d1).norm());
        density += form.energy(g);
    }
    density *= 0.5 * 2.0 * std::f64::consts::PI / nq as f64;
    Ok(AngularKernel {
        sup_bound: sup,
        dtheta_bound: dsup,
        psi_hat_half: density,
        ..kernel
    })
}

// ---------------------------------------------------------------------------
// Interpolant
// ---------------------------------------------------------------------------

/// Quintic radial ramp: 1 on B_{1/2}, 0 outside B_1, C^2 everywhere.
pub fn cutoff(r: f64) -> f64 {
    if r <= 0.5 {
        1.0
    } else if r >= 1.0 {
        0.0
    } else {
        let s = 2.0 * (r - 0.5);
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

pub fn cutoff_d1(r: f64) -> f64 {
    if !(0.5..1.0).contains(&r) {
        0.0
    } else {
        let s = 2.0 * (r - 0.5);
        -60.0 * s * s * (1.0 - s) * (1.0 - s)
    }
}

pub fn cutoff_d2(r: f64) -> f64 {
    if !(0.5..1.0).contains(&r) {
        0.0
    } else {
        let s = 2.0 * (r - 0.5);
        -240.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
    }
}

/// The interpolated dislocation field zeta_xi: equal to the divergence-free
/// kernel beta_0 on B_{1/2}, to the C-optimal kernel outside B_1, and to
/// beta_r2 + grad(f u) in between, with u the potential of beta_0 - beta_r2
/// normalized to vanish at (3/4, 0).
#[derive(Debug, Clone)]
pub struct InterpolantZeta {
    pub xi: Vec2,
    far: AngularKernel,
    /// D = Gamma_0 - Gamma, reduced: radial constants and tangential series.
    d_radial: [f64; 2],
    d_tangential: [FourierSeries; 2],
    d_tangential_deriv: [FourierSeries; 2],
    /// Potential u rows: d_radial * log r + p(theta) + const.
    p: [FourierSeries; 2],
    u_const: [f64; 2],
}

/// Base point where the annulus potential is normalized to zero.
pub const POTENTIAL_BASE_POINT: Vec2 = Vec2 { x: 0.75, y: 0.0 };

pub fn interpolant_zeta(kernel: &AngularKernel) -> InterpolantZeta {
    let xi = kernel.xi;
    let q0 = [
        xi.x / (2.0 * std::f64::consts::PI),
        xi.y / (2.0 * std::f64::consts::PI),
    ];
    let d_radial = [-kernel.radial[0], -kernel.radial[1]];
    let d_tangential = [
        diff_series(q0[0], &kernel.tangential[0]),
        diff_series(q0[1], &kernel.tangential[1]),
    ];
    let p = [d_tangential[0].antiderivative(), d_tangential[1].antiderivative()];
    // u_row(r, theta) = d_radial log r + p(theta) + const, zero at (3/4, 0).
    let r0 = POTENTIAL_BASE_POINT.norm();
    let u_const = [
        -(d_radial[0] * r0.ln() + p[0].eval(0.0)),
        -(d_radial[1] * r0.ln() + p[1].eval(0.0)),
    ];
    let d_tangential_deriv = [d_tangential[0].derivative(), d_tangential[1].derivative()];
    InterpolantZeta {
        xi,
        far: kernel.clone(),
        d_radial,
        d_tangential,
        d_tangential_deriv,
        p,
        u_const,
    }
}

fn diff_series(constant: f64, q: &FourierSeries) -> FourierSeries {
    let mut out = q.clone();
    out.a0 = constant - q.a0;
    for c in &mut out.cos {
        *c = -*c;
    }
    for s in &mut out.sin {
        *s = -*s;
    }
    out
}

impl InterpolantZeta {
    fn u_row(&self, row: usize, r: f64, theta: f64) -> f64 {
        self.d_radial[row] * r.ln() + self.p[row].eval(theta) + self.u_const[row]
    }

    /// The field value; exact kernel branches on B_{1/2} and outside B_1.
    pub fn eval(&self, x: Vec2) -> Mat2 {
        let r = x.norm();
        assert!(r > 0.0, "interpolant evaluated at the origin");
        if r >= 1.0 {
            return self.far.eval(x);
        }
        let theta = x.y.atan2(x.x);
        if r <= 0.5 {
            return divergence_free_kernel(self.xi)(x);
        }
        let f = cutoff(r);
        let fp = cutoff_d1(r);
        let e_r = Vec2::unit_radial(theta);
        let e_t = Vec2::unit_tangential(theta);
        let mut rows = [Vec2::ZERO; 2];
        for (row, out) in rows.iter_mut().enumerate() {
            let far_row = (e_r.scale(self.far.radial[row])
                + e_t.scale(self.far.tangential[row].eval(theta)))
            .scale(1.0 / r);
            let d_row = (e_r.scale(self.d_radial[row])
                + e_t.scale(self.d_tangential[row].eval(theta)))
            .scale(1.0 / r);
            *out = far_row + d_row.scale(f) + e_r.scale(fp * self.u_row(row, r, theta));
        }
        Mat2::from_rows(rows[0], rows[1])
    }

    /// Row-wise divergence in closed form. Zero on B_{1/2} identically.
    pub fn div(&self, x: Vec2) -> Vec2 {
        let r = x.norm();
        assert!(r > 0.0);
        let theta = x.y.atan2(x.x);
        if r <= 0.5 {
            return Vec2::ZERO;
        }
        let far_div = |row: usize| self.far.tangential_deriv[row].eval(theta) / (r * r);
        if r >= 1.0 {
            return Vec2::new(far_div(0), far_div(1));
        }
        let f = cutoff(r);
        let fp = cutoff_d1(r);
        let fpp = cutoff_d2(r);
        let mut out = [0.0f64; 2];
        for (row, o) in out.iter_mut().enumerate() {
            // div(beta_r2) + f lap(u) + 2 f'(r) e_r . grad u + u lap(f)
            let lap_u = self.d_tangential_deriv[row].eval(theta) / (r * r);
            let grad_u_radial = self.d_radial[row] / r;
            let u = self.u_row(row, r, theta);
            *o = far_div(row) + f * lap_u + 2.0 * fp * grad_u_radial + u * (fpp + fp / r);
        }
        Vec2::new(out[0], out[1])
    }

    /// The pure far-field kernel (for comparisons outside B_1).
    pub fn far_field(&self, x: Vec2) -> Mat2 {
        self.far.eval(x)
    }

    /// sup |zeta| * |x| / |xi| over a logarithmic radius sweep.
    pub fn scaled_sup_bound(&self) -> f64 {
        let mut worst = 0.0f64;
        for e in -40..=20 {
            let r = 10f64.powf(e as f64 / 10.0);
            for k in 0..64 {
                let theta = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / 64.0;
                let x = Vec2::unit_radial(theta).scale(r);
                worst = worst.max(self.eval(x).norm() * r / self.xi.norm().max(1e-30));
            }
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// Cell problems
// ---------------------------------------------------------------------------

/// Minimum cells across the excised disk required by the resolution contract.
pub const CELLS_ACROSS_CORE: usize = 16;

/// psi(xi, delta, U) = min int_{B_1 \ B_delta} C beta : beta (no 1/2 factor)
/// over curl-free strains with circulation xi on the inner circle.
pub fn cell_energy(xi: Vec2, delta: f64, form: &QuadraticForm) -> Result<f64> {
    if !(delta > 0.0 && delta <= 0.25) {
        return Err(DglError::Config(format!(
            "cell problem requires delta in (0, 1/4], got {delta}"
        )));
    }
    let problem = AnnulusProblem::with_inner_resolution(delta, 1.0, xi, CELLS_ACROSS_CORE);
    Ok(minimize(&problem, form)?.energy)
}

/// psi_eps(xi, U) = (1/|log eps|) min over the annulus B_rho \ B_eps.
pub fn cell_energy_eps(xi: Vec2, eps: f64, rho_eps: f64, form: &QuadraticForm) -> Result<f64> {
    if !(eps > 0.0 && eps < rho_eps / 4.0) {
        return Err(DglError::Config(format!(
            "hard-core annulus requires eps < rho/4, got eps={eps}, rho={rho_eps}"
        )));
    }
    let problem = AnnulusProblem::with_inner_resolution(eps, rho_eps, xi, CELLS_ACROSS_CORE);
    Ok(minimize(&problem, form)?.energy / (1.0 / eps).ln())
}

/// Default inner radii for the slope extrapolation.
pub const HAT_PSI_DELTAS: [f64; 4] = [1e-1, 3e-2, 1e-2, 3e-3];

#[derive(Debug, Clone, Serialize)]
pub struct PsiHatEstimate {
    /// The reported density (convention applied).
    pub value: f64,
    /// Extrapolated slope of psi/|log delta| (no 1/2).
    pub slope: f64,
    /// Fitted 1/|log delta| correction.
    pub correction: f64,
    /// RMS of the fit residuals relative to the slope.
    pub fit_residual: f64,
    pub convention: Convention,
    /// (delta, psi, psi/|log delta|) rows.
    pub samples: Vec<(f64, f64, f64)>,
}

/// Extrapolate psi(xi, delta)/|log delta| = a + b/|log delta| over the delta
/// schedule and return the limit density under the given convention.
pub fn hat_psi(xi: Vec2, form: &QuadraticForm, convention: Convention) -> Result<PsiHatEstimate> {
    hat_psi_with(xi, form, convention, &HAT_PSI_DELTAS)
}

pub fn hat_psi_with(
    xi: Vec2,
    form: &QuadraticForm,
    convention: Convention,
    deltas: &[f64],
) -> Result<PsiHatEstimate> {
    if xi.norm() == 0.0 {
        return Ok(PsiHatEstimate {
            value: 0.0,
            slope: 0.0,
            correction: 0.0,
            fit_residual: 0.0,
            convention,
            samples: deltas.iter().map(|&d| (d, 0.0, 0.0)).collect(),
        });
    }
    let mut samples = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let psi = cell_energy(xi, delta, form)?;
        samples.push((delta, psi, psi / (1.0 / delta).ln()));
    }
    // Least squares for y = a + b x with x = 1/|log delta|.
    let n = samples.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(delta, _, y) in &samples {
        let x = 1.0 / (1.0 / delta).ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let det = n * sxx - sx * sx;
    let a = (sxx * sy - sx * sxy) / det;
    let b = (n * sxy - sx * sy) / det;
    let mut rss = 0.0;
    for &(delta, _, y) in &samples {
        let x = 1.0 / (1.0 / delta).ln();
        let r = y - (a + b * x);
        rss += r * r;
    }
    let fit_residual = (rss / n).sqrt() / a.abs().max(1e-30);
    if fit_residual > 0.05 {
        return Err(DglError::Solver(format!(
            "slope extrapolation residual {:.2}% signals solver noise",
            fit_residual * 100.0
        )));
    }
    Ok(PsiHatEstimate {
        value: convention.factor() * a,
        slope: a,
        correction: b,
        fit_residual,
        convention,
        samples,
    })
}

// ---------------------------------------------------------------------------
// Burgers lattice and the self-energy table
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BurgersLattice {
    pub b1: Vec2,
    pub b2: Vec2,
}

impl BurgersLattice {
    pub fn new(b1: Vec2, b2: Vec2) -> Result<Self> {
        let det = b1.x * b2.y - b1.y * b2.x;
        if det.abs() < 1e-12 {
            return Err(DglError::Config("Burgers basis is linearly dependent".into()));
        }
        Ok(BurgersLattice { b1, b2 })
    }

    pub fn vector(&self, m: i32, n: i32) -> Vec2 {
        self.b1.scale(m as f64) + self.b2.scale(n as f64)
    }

    /// All nonzero lattice vectors of norm <= radius, in deterministic
    /// (m, n) order; symmetric under negation by construction.
    pub fn enumerate(&self, radius: f64) -> Vec<(i32, i32, Vec2)> {
        let det = (self.b1.x * self.b2.y - self.b1.y * self.b2.x).abs();
        let bound = ((radius * (self.b1.norm() + self.b2.norm()) / det).ceil() as i32).max(1);
        let mut out = Vec::new();
        for m in -bound..=bound {
            for n in -bound..=bound {
                if m == 0 && n == 0 {
                    continue;
                }
                let v = self.vector(m, n);
                if v.norm() <= radius + 1e-12 {
                    out.push((m, n, v));
                }
            }
        }
        out
    }

    pub fn max_basis_norm(&self) -> f64 {
        self.b1.norm().max(self.b2.norm())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfEnergyEntry {
    pub coeffs: (i32, i32),
    pub xi: [f64; 2],
    pub psi_hat: f64,
}

/// Tabulated self-energy density over lattice Burgers vectors, with the
/// quadratic form reconstruction that the linear cell problem guarantees.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfEnergyTable {
    pub well: [f64; 4],
    #[serde(rename = "rotation")]
    pub rotation_angle: f64,
    pub convention_flag: String,
    pub entries: Vec<SelfEnergyEntry>,
    pub truncation_radius: f64,
    /// psi_hat as a quadratic form [q11, q12, q22] in the rotated vector.
    pub quadratic_form: [f64; 3],
    /// Relative disagreement between the slope route and the angular route
    /// on the basis vectors (must stay below 5%).
    pub route_disagreement: f64,
}

impl SelfEnergyTable {
    /// Evaluate psi_hat(R^T xi, U) through the tabulated quadratic form.
    pub fn psi_hat(&self, xi: Vec2) -> f64 {
        let r = Mat2::rotation(self.rotation_angle);
        let v = r.transpose().apply(xi);
        self.quadratic_form[0] * v.x * v.x
            + 2.0 * self.quadratic_form[1] * v.x * v.y
            + self.quadratic_form[2] * v.y * v.y
    }
}

/// Build the table: three slope extrapolations determine the quadratic form
/// (the cell problem is linear in xi), every lattice entry is evaluated
/// through it, and the independent angular-kernel route cross-checks the
/// basis values. Disagreement above 5% fails the build.
pub fn build_self_energy_table(
    lattice: &BurgersLattice,
    form: &QuadraticForm,
    well: Mat2,
    rotation_angle: f64,
    truncation_radius: f64,
    convention: Convention,
) -> Result<SelfEnergyTable> {
    let rot = Mat2::rotation(rotation_angle).transpose();
    let e1 = Vec2::new(1.0, 0.0);
    let e2 = Vec2::new(0.0, 1.0);
    let p11 = hat_psi(e1, form, convention)?.value;
    let p22 = hat_psi(e2, form, convention)?.value;
    let p_sum = hat_psi(e1 + e2, form, convention)?.value;
    let q = [p11, 0.5 * (p_sum - p11 - p22), p22];

    // Independent spot check: a direct solve away from the basis.
    let probe = Vec2::new(2.0, -1.0);
    let direct = hat_psi(probe, form, convention)?.value;
    let through_form = q[0] * probe.x * probe.x + 2.0 * q[1] * probe.x * probe.y + q[2] * probe.y * probe.y;
    if (direct - through_form).abs() > 1e-4 * direct.abs().max(1e-30) {
        return Err(DglError::Solver(format!(
            "self-energy is not quadratic in xi: direct {direct:e} vs form {through_form:e}"
        )));
    }

    // Angular-kernel route on both basis vectors and their sum.
    let mut route_disagreement = 0.0f64;
    for v in [e1, e2, e1 + e2, e1 - e2] {
        let kern = solve_angular_kernel(form, v)?;
        let angular = kern.psi_hat_half * convention.factor() / 0.5;
        let slope_route = q[0] * v.x * v.x + 2.0 * q[1] * v.x * v.y + q[2] * v.y * v.y;
        let rel = (angular - slope_route).abs() / slope_route.abs().max(1e-30);
        route_disagreement = route_disagreement.max(rel);
    }
    if route_disagreement > 0.05 {
        return Err(DglError::Solver(format!(
            "self-energy routes disagree by {:.2}%",
            route_disagreement * 100.0
        )));
    }

    let mut entries = Vec::new();
    for (m, n, v) in lattice.enumerate(truncation_radius) {
        let rv = rot.apply(v);
        let psi_hat =
            q[0] * rv.x * rv.x + 2.0 * q[1] * rv.x * rv.y + q[2] * rv.y * rv.y;
        entries.push(SelfEnergyEntry {
            coeffs: (m, n),
            xi: [v.x, v.y],
            psi_hat,
        });
    }
    Ok(SelfEnergyTable {
        well: well.m,
        rotation_angle,
        convention_flag: convention.as_str().to_string(),
        entries,
        truncation_radius,
        quadratic_form: q,
        route_disagreement,
    })
}

// ---------------------------------------------------------------------------
// Relaxation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PhiValue {
    pub value: f64,
    /// The optimal decomposition: (lambda_k, xi_k) with sum lambda xi = xi.
    pub decomposition: Vec<(f64, [f64; 2])>,
}

/// phi(RU, xi): minimize sum lambda_k psi_hat(R^T xi_k) over nonnegative
/// decompositions of xi into tabulated lattice vectors, by a dense two-phase
/// simplex over the enumerated columns.
pub fn relax_phi(table: &SelfEnergyTable, xi: Vec2) -> Result<PhiValue> {
    if xi.norm() == 0.0 {
        return Ok(PhiValue {
            value: 0.0,
            decomposition: Vec::new(),
        });
    }
    let columns: Vec<Vec2> = table
        .entries
        .iter()
        .map(|e| Vec2::new(e.xi[0], e.xi[1]))
        .collect();
    let costs: Vec<f64> = table.entries.iter().map(|e| e.psi_hat).collect();
    if columns.is_empty() {
        return Err(DglError::Infeasible("empty self-energy table".into()));
    }
    let lam = simplex_two_phase(&columns, &costs, xi)?;
    let mut value = 0.0;
    let mut decomposition = Vec::new();
    for (k, l) in lam.iter().enumerate() {
        if *l > 1e-14 {
            value += l * costs[k];
            decomposition.push((*l, [columns[k].x, columns[k].y]));
        }
    }
    decomposition.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    Ok(PhiValue { value, decomposition })
}

/// min c.lambda st sum lambda_k col_k = target, lambda >= 0; two equality
/// constraints, dense revised simplex with Bland's rule.
fn simplex_two_phase(columns: &[Vec2], costs: &[f64], target: Vec2) -> Result<Vec<f64>> {
    let n = columns.len();
    let n_art = 2;
    // Extended columns: real columns then two artificials (identity signed
    // to keep the basic solution nonnegative).
    let sign = Vec2::new(
        if target.x >= 0.0 { 1.0 } else { -1.0 },
        if target.y >= 0.0 { 1.0 } else { -1.0 },
    );
    let col = |j: usize| -> Vec2 {
        if j < n {
            columns[j]
        } else if j == n {
            Vec2::new(sign.x, 0.0)
        } else {
            Vec2::new(0.0, sign.y)
        }
    };
    let mut basis = [n, n + 1];
    let solve_basis = |basis: &[usize; 2]| -> Option<(Mat2, Vec2)> {
        let b_mat = Mat2::new(col(basis[0]).x, col(basis[1]).x, col(basis[0]).y, col(basis[1]).y);
        let inv = b_mat.inverse()?;
        Some((inv, inv.apply(target)))
    };
    let iterate = |basis: &mut [usize; 2], cost_of: &dyn Fn(usize) -> f64, allow: &dyn Fn(usize) -> bool| -> Result<Vec2> {
        for _round in 0..10_000 {
            let (inv, xb) = solve_basis(basis)
                .ok_or_else(|| DglError::Infeasible("degenerate simplex basis".into()))?;
            // y = B^{-T} c_B
            let cb = Vec2::new(cost_of(basis[0]), cost_of(basis[1]));
            let y = inv.transpose().apply(cb);
            // Entering column: Bland's rule on negative reduced cost.
            let mut entering = None;
            for j in 0..n + n_art {
                if basis.contains(&j) || !allow(j) {
                    continue;
                }
                let reduced = cost_of(j) - y.dot(col(j));
                if reduced < -1e-11 {
                    entering = Some(j);
                    break;
                }
            }
            let j = match entering {
                Some(j) => j,
                None => return Ok(xb),
            };
            let d = inv.apply(col(j));
            // Ratio test.
            let mut leave = None;
            let mut best = f64::INFINITY;
            for i in 0..2 {
                let di = if i == 0 { d.x } else { d.y };
                let xi_b = if i == 0 { xb.x } else { xb.y };
                if di > 1e-12 {
                    let ratio = xi_b / di;
                    if ratio < best - 1e-15 {
                        best = ratio;
                        leave = Some(i);
                    }
                }
            }
            let i = leave.ok_or_else(|| {
                DglError::Infeasible("unbounded relaxation (degenerate lattice)".into())
            })?;
            basis[i] = j;
        }
        Err(DglError::Solver("simplex cycling".into()))
    };

    // Phase 1: drive the artificials out.
    let phase1_cost = |j: usize| if j >= n { 1.0 } else { 0.0 };
    let xb = iterate(&mut basis, &phase1_cost, &|_| true)?;
    let obj1 = (if basis[0] >= n { xb.x } else { 0.0 }) + (if basis[1] >= n { xb.y } else { 0.0 });
    if obj1 > 1e-9 * target.norm().max(1.0) {
        return Err(DglError::Infeasible(
            "target is not a nonnegative lattice combination".into(),
        ));
    }
    // Degenerate artificials left in the basis at value zero are swapped out
    // with a zero-step pivot so that phase 2 prices real columns only.
    for slot in 0..2 {
        if basis[slot] < n {
            continue;
        }
        let (inv, _) = solve_basis(&basis)
            .ok_or_else(|| DglError::Infeasible("degenerate simplex basis".into()))?;
        let mut swapped = false;
        for j in 0..n {
            if basis.contains(&j) {
                continue;
            }
            let d = inv.apply(col(j));
            let di = if slot == 0 { d.x } else { d.y };
            if di.abs() > 1e-9 {
                basis[slot] = j;
                swapped = true;
                break;
            }
        }
        if !swapped {
            return Err(DglError::Infeasible(
                "lattice columns do not span the constraint row".into(),
            ));
        }
    }
    // Phase 2 on real columns only.
    let phase2_cost = |j: usize| if j < n { costs[j] } else { f64::INFINITY };
    let xb = iterate(&mut basis, &phase2_cost, &|j| j < n)?;

    let mut lam = vec![0.0f64; n];
    for (slot, b) in basis.iter().enumerate() {
        if *b < n {
            let v = if slot == 0 { xb.x } else { xb.y };
            lam[*b] = v.max(0.0);
        }
    }
    Ok(lam)
}
