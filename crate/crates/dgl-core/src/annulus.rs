//! Quadratic-form minimization over annuli in log-polar coordinates.
//!
//! Every admissible strain on the annulus B_{r2} \ B_{r1} with circulation
//! xi on the inner circle is beta_0(xi) + grad phi with a single-valued
//! potential phi, because the divergence-free kernel already realizes the
//! circulation class. Writing x = e^rho (cos theta, sin theta), the scaled
//! field r * beta becomes
//!
//!   B(rho, theta) = (1/2pi) xi (x) e_theta + d_rho phi (x) e_r + d_theta phi (x) e_theta
//!
//! and the elastic energy turns into int C B : B drho dtheta on the flat
//! cylinder [log r1, log r2] x [0, 2pi): the 1/r^2 of the field cancels the
//! r^2 of the area element, so the annulus problem is a uniform-coefficient
//! problem on a rectangle, periodic in theta, with natural boundary
//! conditions in rho. Cell problems at inner radii of 1e-14 cost the same
//! as at 1e-1.

use crate::error::{DglError, Result};
use crate::matrix::{Mat2, Vec2};
use crate::wells::QuadraticForm;

/// Relative CG tolerance for the cell solves.
const CG_TOL: f64 = 1e-11;

#[derive(Debug, Clone)]
pub struct AnnulusProblem {
    pub r_inner: f64,
    pub r_outer: f64,
    pub xi: Vec2,
    pub n_rho: usize,
    pub n_theta: usize,
}

impl AnnulusProblem {
    /// Resolution such that the local grid spacing at the inner circle is at
    /// most r_inner / cells_across (both radially and tangentially).
    pub fn with_inner_resolution(r_inner: f64, r_outer: f64, xi: Vec2, cells_across: usize) -> Self {
        let log_range = (r_outer / r_inner).ln();
        let n_rho = ((cells_across as f64 * log_range).ceil() as usize).max(48);
        let n_theta = ((2.0 * std::f64::consts::PI * cells_across as f64).ceil() as usize)
            .next_power_of_two()
            .max(128);
        AnnulusProblem {
            r_inner,
            r_outer,
            xi,
            n_rho,
            n_theta,
        }
    }
}

/// Minimizer data: the corrected field at cell centers of the log-polar grid.
pub struct AnnulusSolution {
    pub problem: AnnulusProblem,
    /// Discrete minimum of int C beta : beta over the annulus (no 1/2).
    pub energy: f64,
    /// The scaled field B = r * beta at cell centers, row-major in (rho, theta).
    pub field: Vec<Mat2>,
    pub d_rho: f64,
    pub d_theta: f64,
    pub cg_residual: f64,
    pub cg_iterations: usize,
}

impl AnnulusSolution {
    pub fn cell_theta(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.d_theta
    }

    pub fn cell_log_r(&self, i: usize) -> f64 {
        self.problem.r_inner.ln() + (i as f64 + 0.5) * self.d_rho
    }

    pub fn field_at(&self, i: usize, k: usize) -> Mat2 {
        self.field[i * self.problem.n_theta + k]
    }

    /// Average of the scaled field over the middle third of radii, per theta
    /// cell, together with the worst relative deviation across that band.
    pub fn radial_average(&self) -> (Vec<Mat2>, f64) {
        let n_rho = self.problem.n_rho;
        let n_theta = self.problem.n_theta;
        let (lo, hi) = (n_rho / 3, (2 * n_rho) / 3);
        let band = (hi - lo).max(1);
        let mut avg = vec![Mat2::ZERO; n_theta];
        for k in 0..n_theta {
            let mut acc = Mat2::ZERO;
            for i in lo..hi {
                acc += self.field_at(i, k);
            }
            avg[k] = acc.scale(1.0 / band as f64);
        }
        let scale = avg.iter().map(|m| m.norm()).fold(0.0, f64::max).max(1e-30);
        let mut dev = 0.0f64;
        for k in 0..n_theta {
            for i in lo..hi {
                dev = dev.max((self.field_at(i, k) - avg[k]).norm() / scale);
            }
        }
        (avg, dev)
    }
}

/// The divergence-free circulation kernel beta_0(xi)(x) = xi (x) Jx / (2 pi |x|^2).
pub fn divergence_free_kernel(xi: Vec2) -> impl Fn(Vec2) -> Mat2 + Clone {
    move |x: Vec2| {
        let r2 = x.norm_sq();
        assert!(r2 > 0.0, "kernel evaluated at the origin");
        Mat2::outer(xi, x.perp()).scale(1.0 / (2.0 * std::f64::consts::PI * r2))
    }
}

/// Minimize int_{B_r2 \ B_r1} C beta : beta over strains with circulation xi
/// on the inner circle, by CG on the log-polar potential formulation.
pub fn minimize(problem: &AnnulusProblem, form: &QuadraticForm) -> Result<AnnulusSolution> {
    if !(problem.r_inner > 0.0 && problem.r_inner < problem.r_outer) {
        return Err(DglError::InvalidDomain("annulus radii out of order".into()));
    }
    let n_rho = problem.n_rho;
    let n_theta = problem.n_theta;
    let d_rho = (problem.r_outer / problem.r_inner).ln() / n_rho as f64;
    let d_theta = 2.0 * std::f64::consts::PI / n_theta as f64;
    let area = d_rho * d_theta;
    let n_nodes = (n_rho + 1) * n_theta;
    let n_unknowns = 2 * n_nodes;
    let node = |i: usize, k: usize| i * n_theta + (k % n_theta);
    let inv_2dr = 0.5 / d_rho;
    let inv_2dt = 0.5 / d_theta;

    // Precompute per-theta geometry and the source.
    let thetas: Vec<f64> = (0..n_theta).map(|k| (k as f64 + 0.5) * d_theta).collect();
    let e_r: Vec<Vec2> = thetas.iter().map(|&t| Vec2::unit_radial(t)).collect();
    let e_t: Vec<Vec2> = thetas.iter().map(|&t| Vec2::unit_tangential(t)).collect();
    let gamma0: Vec<Mat2> = e_t
        .iter()
        .map(|&et| Mat2::outer(problem.xi, et).scale(1.0 / (2.0 * std::f64::consts::PI)))
        .collect();

    // Cell-centered derivatives from the four corner nodes.
    let cell_field = |phi: &[f64], i: usize, k: usize, with_source: bool| -> Mat2 {
        let (k1, k2) = (k, (k + 1) % n_theta);
        let mut rows = [Vec2::ZERO; 2];
        for (comp, row) in rows.iter_mut().enumerate() {
            let off = comp * n_nodes;
            let p00 = phi[off + node(i, k1)];
            let p01 = phi[off + node(i, k2)];
            let p10 = phi[off + node(i + 1, k1)];
            let p11 = phi[off + node(i + 1, k2)];
            let drho = (p10 + p11 - p00 - p01) * inv_2dr;
            let dth = (p01 + p11 - p00 - p10) * inv_2dt;
            *row = e_r[k].scale(drho) + e_t[k].scale(dth);
        }
        let mut b = Mat2::from_rows(rows[0], rows[1]);
        if with_source {
            b += gamma0[k];
        }
        b
    };

    // Scatter the energy gradient of one cell back to its corner nodes.
    let scatter = |out: &mut [f64], m: Mat2, i: usize, k: usize| {
        let (k1, k2) = (k, (k + 1) % n_theta);
        for comp in 0..2 {
            let off = comp * n_nodes;
            let row = m.row(comp);
            let g_rho = row.dot(e_r[k]) * area;
            let g_th = row.dot(e_t[k]) * area;
            out[off + node(i, k1)] += -g_rho * inv_2dr - g_th * inv_2dt;
            out[off + node(i, k2)] += -g_rho * inv_2dr + g_th * inv_2dt;
            out[off + node(i + 1, k1)] += g_rho * inv_2dr - g_th * inv_2dt;
            out[off + node(i + 1, k2)] += g_rho * inv_2dr + g_th * inv_2dt;
        }
    };

    // A x: gather gradient of the pure quadratic part (source off).
    let apply = |x: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n_rho {
            for k in 0..n_theta {
                let b = cell_field(x, i, k, false);
                scatter(out, form.matrix_apply(b), i, k);
            }
        }
    };

    // b = -c where c is the linear coupling against the source, and the
    // source energy at phi = 0 for the negligibility threshold below.
    let mut rhs = vec![0.0f64; n_unknowns];
    let mut source_energy = 0.0f64;
    {
        let mut c = vec![0.0f64; n_unknowns];
        for i in 0..n_rho {
            for k in 0..n_theta {
                scatter(&mut c, form.matrix_apply(gamma0[k]), i, k);
                if i == 0 {
                    source_energy += form.energy(gamma0[k]) * area * n_rho as f64;
                }
            }
        }
        for (r, v) in rhs.iter_mut().zip(c.iter()) {
            *r = -v;
        }
    }

    // Diagonal of A for preconditioning (constant by symmetry; compute once).
    let diag_entry = {
        let w = area * (inv_2dr * inv_2dr + inv_2dt * inv_2dt);
        // Each interior node touches 4 cells; the form contributes O(1).
        (4.0 * 2.0 * w).max(1e-30)
    };
    let diag = vec![diag_entry; n_unknowns];

    // When the kernel is already stationary (identity-like forms), the
    // coupling is pure roundoff and the correction energy b^2/diag is far
    // below the source energy; solving would chase noise.
    let b_norm_sq: f64 = rhs.iter().map(|v| v * v).sum();
    let negligible = b_norm_sq / diag_entry <= 1e-16 * source_energy.max(1e-300);
    let (phi, res, iters) = if negligible {
        (vec![0.0f64; n_unknowns], 0.0, 0)
    } else {
        cg_spd(n_unknowns, apply, &rhs, &diag, 20 * (n_rho + n_theta) + 4000)?
    };

    // Energy and field extraction.
    let mut energy = 0.0f64;
    let mut field = Vec::with_capacity(n_rho * n_theta);
    for i in 0..n_rho {
        for k in 0..n_theta {
            let b = cell_field(&phi, i, k, true);
            energy += form.energy(b) * area;
            field.push(b);
        }
    }
    Ok(AnnulusSolution {
        problem: problem.clone(),
        energy,
        field,
        d_rho,
        d_theta,
        cg_residual: res,
        cg_iterations: iters,
    })
}

fn cg_spd(
    n: usize,
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    diag: &[f64],
    max_iter: usize,
) -> Result<(Vec<f64>, f64, usize)> {
    let dot = |a: &[f64], c: &[f64]| -> f64 { a.iter().zip(c).map(|(x, y)| x * y).sum() };
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let res = dot(&r, &r).sqrt();
        if res <= CG_TOL * b_norm {
            return Ok((x, res / b_norm, it + 1));
        }
        for k in 0..n {
            z[k] = r[k] / diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    let res = dot(&r, &r).sqrt() / b_norm;
    if res <= 1e-8 {
        return Ok((x, res, max_iter));
    }
    Err(DglError::Solver(format!(
        "annulus CG stalled at relative residual {res:e}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_form_energy_is_closed_form() {
        // beta_0 is the exact minimizer for the identity form:
        // int |beta_0|^2 = |xi|^2 log(r2/r1) / (2 pi).
        let xi = Vec2::new(1.0, 0.0);
        let problem = AnnulusProblem::with_inner_resolution(1e-2, 1.0, xi, 16);
        let sol = minimize(&problem, &QuadraticForm::Identity).unwrap();
        let exact = xi.norm_sq() * (1.0f64 / 1e-2).ln() / (2.0 * std::f64::consts::PI);
        assert_relative_eq!(sol.energy, exact, max_relative = 1e-9);
        // The corrected field equals the kernel: no radial drift.
        let (avg, dev) = sol.radial_average();
        assert!(dev < 1e-9, "radial deviation {dev}");
        let g0 = Mat2::outer(xi, Vec2::unit_tangential(sol.cell_theta(3)))
            .scale(1.0 / (2.0 * std::f64::consts::PI));
        assert!((avg[3] - g0).norm() < 1e-9);
    }

    #[test]
    fn kernel_circulation_and_annulus_energy() {
        let xi = Vec2::new(0.7, -0.4);
        let kernel = divergence_free_kernel(xi);
        for r in [0.05, 0.3, 2.0] {
            let c = crate::grid::circulation_of(&kernel, Vec2::ZERO, r, 4096);
            assert!((c - xi).norm() < 1e-12 * xi.norm().max(1.0), "r={r}");
        }
        // int_{B_1 \ B_delta} |beta_0|^2 = |xi|^2 |log delta| / (2 pi).
        let delta = 0.03f64;
        let mut quad = 0.0;
        let n = 4000;
        for i in 0..n {
            let r = delta + (1.0 - delta) * (i as f64 + 0.5) / n as f64;
            let mut ring = 0.0;
            for k in 0..256 {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / 256.0;
                ring += kernel(Vec2::unit_radial(theta).scale(r)).norm_sq();
            }
            quad += ring / 256.0 * 2.0 * std::f64::consts::PI * r * (1.0 - delta) / n as f64;
        }
        let exact = xi.norm_sq() * (1.0 / delta).ln() / (2.0 * std::f64::consts::PI);
        assert_relative_eq!(quad, exact, max_relative = 1e-3);
    }

    #[test]
    fn anisotropic_form_lowers_energy_below_kernel_proxy() {
        // For C A : B = 2 <sym A, sym B>, beta_0 is admissible but not
        // optimal; the minimum must sit strictly below the beta_0 energy and
        // above the classical edge-dislocation value b^2/(2 pi) per unit log
        // (for mu = 1, nu = 0, counted without the physical 1/2).
        let xi = Vec2::new(1.0, 0.0);
        let delta = 1e-3;
        let problem = AnnulusProblem::with_inner_resolution(delta, 1.0, xi, 16);
        let form = QuadraticForm::NormalProjection {
            unit_tangent: crate::matrix::J.scale(1.0 / crate::matrix::J.norm()),
        };
        let sol = minimize(&problem, &form).unwrap();
        let log_range = (1.0f64 / delta).ln();
        let proxy = 2.0 * 0.75 * xi.norm_sq() * log_range / (2.0 * std::f64::consts::PI);
        // beta_0 proxy: 2 int |sym beta_0|^2 = (3/2) int |beta_0|^2.
        assert!(sol.energy < proxy, "energy {} proxy {}", sol.energy, proxy);
        // The finite annulus relaxes an O(1) amount below slope * log, so the
        // robust check is the slope between two inner radii: for mu = 1,
        // nu = 0 the classical edge value is |xi|^2/(2 pi) per unit log.
        let delta2 = 1e-5;
        let p2 = AnnulusProblem::with_inner_resolution(delta2, 1.0, xi, 16);
        let e2 = minimize(&p2, &form).unwrap().energy;
        let slope = (e2 - sol.energy) / (delta / delta2).ln();
        let classical_slope = xi.norm_sq() / (2.0 * std::f64::consts::PI);
        assert!(
            (slope - classical_slope).abs() / classical_slope < 0.03,
            "slope {slope} vs classical {classical_slope}"
        );
        // Scaled field has modest variation across radii away from the ends.
        let (_, dev) = sol.radial_average();
        assert!(dev < 0.05, "radial deviation {dev}");
    }

    #[test]
    fn cell_problem_is_two_homogeneous() {
        let xi = Vec2::new(0.6, 0.8);
        let problem = AnnulusProblem::with_inner_resolution(1e-2, 1.0, xi, 8);
        let form = QuadraticForm::NormalProjection {
            unit_tangent: crate::matrix::J.scale(1.0 / crate::matrix::J.norm()),
        };
        let e1 = minimize(&problem, &form).unwrap().energy;
        let mut p2 = problem.clone();
        p2.xi = xi.scale(2.0);
        let e2 = minimize(&p2, &form).unwrap().energy;
        assert_relative_eq!(e2, 4.0 * e1, max_relative = 1e-7);
    }
}
