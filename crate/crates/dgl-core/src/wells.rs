//! Multiwell geometry and the elastic density.
//!
//! The energy landscape is a union of rotation orbits K = SO(2)U_1 u ... u SO(2)U_l
//! of invertible 2x2 matrices. Distances to a single orbit have a closed form:
//! |F - R(theta)U|^2 = |F|^2 + |U|^2 - 2(a cos theta + b sin theta) with
//! a = tr(U F^T) and b = tr(J U F^T), minimized at theta* = atan2(b, a).
//!
//! The default density is W(F) = dist^2(F, K), whose Hessian at a well U is
//! twice the orthogonal projection onto the normal space of the orbit, i.e.
//! C_U A : B = 2(<A,B> - <A,n><B,n>) with n = JU/|JU|. An alternate isotropic
//! mode prescribes C_U A : B = <A,B> directly together with the pointwise
//! quadratic density (1/2)|F - U_1|^2; that mode trades frame indifference for
//! closed-form cell-problem values and is flagged in reports.

use crate::error::{DglError, Result};
use crate::matrix::{Mat2, J};
use serde::{Deserialize, Serialize};

/// Tolerance on singular values of U_i U_j^-1 when checking well incompatibility.
const WELL_INCOMPAT_TOL: f64 = 1e-9;

/// The multiwell set K with derived separation constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WellSet {
    wells: Vec<Mat2>,
    /// (1/8) min_{i != j} dist(K_i, K_j); zero for a single well.
    rho_sep: f64,
    /// max_{F in K} |F| = max_i |U_i|.
    k_infty: f64,
    /// max(diam K, |K|_infty).
    big_m: f64,
}

impl WellSet {
    pub fn new(wells: Vec<Mat2>) -> Result<Self> {
        if wells.is_empty() {
            return Err(DglError::InvalidWellSet("at least one well required".into()));
        }
        for (i, u) in wells.iter().enumerate() {
            if u.det().abs() < 1e-12 {
                return Err(DglError::InvalidWellSet(format!(
                    "well {} is singular (det = {:e})",
                    i,
                    u.det()
                )));
            }
        }
        // Orbits must be pairwise distinct: U_i U_j^-1 must not be a rotation.
        for i in 0..wells.len() {
            for j in 0..wells.len() {
                if i == j {
                    continue;
                }
                let q = wells[i].matmul(wells[j].inverse().unwrap());
                let (s1, s2) = q.singular_values();
                let is_rotation =
                    (s1 - 1.0).abs() < WELL_INCOMPAT_TOL && (s2 - 1.0).abs() < WELL_INCOMPAT_TOL && q.det() > 0.0;
                if is_rotation {
                    return Err(DglError::InvalidWellSet(format!(
                        "wells {} and {} lie on the same rotation orbit",
                        i, j
                    )));
                }
            }
        }
        let k_infty = wells.iter().map(|u| u.norm()).fold(0.0, f64::max);
        let mut min_pair = f64::INFINITY;
        let mut diam: f64 = 0.0;
        for i in 0..wells.len() {
            for j in 0..wells.len() {
                if i == j {
                    continue;
                }
                min_pair = min_pair.min(orbit_distance(wells[i], wells[j]));
                diam = diam.max(orbit_max_distance(wells[i], wells[j]));
            }
        }
        // diam within a single orbit: max_theta |U - R(theta)U|.
        for u in &wells {
            diam = diam.max(orbit_max_distance(*u, *u));
        }
        let rho_sep = if wells.len() >= 2 { min_pair / 8.0 } else { 0.0 };
        if wells.len() >= 2 && rho_sep <= 0.0 {
            return Err(DglError::InvalidWellSet("wells are not separated".into()));
        }
        Ok(WellSet {
            wells,
            rho_sep,
            k_infty,
            big_m: diam.max(k_infty),
        })
    }

    pub fn single(u: Mat2) -> Result<Self> {
        WellSet::new(vec![u])
    }

    pub fn count(&self) -> usize {
        self.wells.len()
    }

    pub fn well(&self, i: usize) -> Mat2 {
        self.wells[i]
    }

    pub fn wells(&self) -> &[Mat2] {
        &self.wells
    }

    pub fn rho_sep(&self) -> f64 {
        self.rho_sep
    }

    pub fn k_infty(&self) -> f64 {
        self.k_infty
    }

    pub fn big_m(&self) -> f64 {
        self.big_m
    }

    /// Whether the first well is the identity (the convention used by the
    /// recovery construction; recorded so reports can state which convention
    /// a run used).
    pub fn first_well_is_identity(&self) -> bool {
        (self.wells[0] - Mat2::IDENTITY).norm() < 1e-12
    }

    /// Distance from F to the single orbit SO(2)U_i, by the closed form.
    pub fn dist_to_well(&self, f: Mat2, i: usize) -> f64 {
        debug_assert!(i < self.wells.len());
        let (d, _) = dist_and_angle_to_orbit(f, self.wells[i]);
        d
    }

    /// Optimal rotation angle for the projection of F onto SO(2)U_i.
    pub fn angle_to_well(&self, f: Mat2, i: usize) -> f64 {
        let (_, theta) = dist_and_angle_to_orbit(f, self.wells[i]);
        theta
    }

    /// Distance to K together with the argmin well index and rotation angle.
    /// Ties break toward the lowest well index.
    pub fn dist_to_k(&self, f: Mat2) -> (f64, usize, f64) {
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for (i, &u) in self.wells.iter().enumerate() {
            let (d, theta) = dist_and_angle_to_orbit(f, u);
            if d < best.0 {
                best = (d, i, theta);
            }
        }
        best
    }

    /// The closest point of K to F.
    pub fn project(&self, f: Mat2) -> Mat2 {
        let (_, i, theta) = self.dist_to_k(f);
        Mat2::rotation(theta).matmul(self.wells[i])
    }
}

/// Distance and optimal angle from F to the orbit SO(2)U.
pub fn dist_and_angle_to_orbit(f: Mat2, u: Mat2) -> (f64, f64) {
    let a = u.matmul(f.transpose()).trace();
    let b = J.matmul(u).matmul(f.transpose()).trace();
    let theta = b.atan2(a);
    let d2 = f.norm_sq() + u.norm_sq() - 2.0 * (a * a + b * b).sqrt();
    (d2.max(0.0).sqrt(), theta)
}

/// dist(SO(2)U, SO(2)V) = min_psi |U - R(psi)V|, exactly via the 1D closed form.
pub fn orbit_distance(u: Mat2, v: Mat2) -> f64 {
    dist_and_angle_to_orbit(u, v).0
}

/// max_psi |U - R(psi)V|, realized at the antipodal angle.
fn orbit_max_distance(u: Mat2, v: Mat2) -> f64 {
    let a = v.matmul(u.transpose()).trace();
    let b = J.matmul(v).matmul(u.transpose()).trace();
    let d2 = u.norm_sq() + v.norm_sq() + 2.0 * (a * a + b * b).sqrt();
    d2.max(0.0).sqrt()
}

/// Which quadratic form C_U backs the cell problems and energy linearizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CuMode {
    /// C_U = Hessian of W = dist^2(., K) at U: twice the projection onto the
    /// normal space of the orbit.
    FromDensity,
    /// C_U = identity form <A, B>; paired with the pointwise quadratic density
    /// (1/2)|F - U_1|^2. Not frame indifferent.
    Identity,
}

impl CuMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CuMode::FromDensity => "from-density",
            CuMode::Identity => "identity",
        }
    }
}

/// The elastic density W together with its quadratic forms at the wells.
#[derive(Debug, Clone)]
pub struct ElasticDensity {
    wells: WellSet,
    mode: CuMode,
    /// Growth constants of (W4); both 1 for the default density.
    pub c1: f64,
    pub c2: f64,
}

impl ElasticDensity {
    pub fn new(wells: WellSet, mode: CuMode) -> Self {
        ElasticDensity {
            wells,
            mode,
            c1: 1.0,
            c2: 1.0,
        }
    }

    pub fn wells(&self) -> &WellSet {
        &self.wells
    }

    pub fn mode(&self) -> CuMode {
        self.mode
    }

    /// The density W(F).
    pub fn eval(&self, f: Mat2) -> f64 {
        match self.mode {
            CuMode::FromDensity => {
                let (d, _, _) = self.wells.dist_to_k(f);
                d * d
            }
            CuMode::Identity => 0.5 * (f - self.wells.well(0)).norm_sq(),
        }
    }

    /// The bilinear form C_U A : B for a configured well.
    pub fn apply_c_u(&self, well_index: usize, a: Mat2, b: Mat2) -> Result<f64> {
        if well_index >= self.wells.count() {
            return Err(DglError::InvalidWellSet(format!(
                "unknown well index {}",
                well_index
            )));
        }
        Ok(self.c_u_form(well_index).apply(a, b))
    }

    /// The quadratic form at the given well as a standalone object.
    pub fn c_u_form(&self, well_index: usize) -> QuadraticForm {
        match self.mode {
            CuMode::FromDensity => {
                let u = self.wells.well(well_index);
                let n = J.matmul(u);
                QuadraticForm::NormalProjection {
                    unit_tangent: n.scale(1.0 / n.norm()),
                }
            }
            CuMode::Identity => QuadraticForm::Identity,
        }
    }

    /// Numerically checks the two-sided coercivity lambda1 |A_sym|^2 <= C_U A:A
    /// <= lambda2 |A_sym|^2 required by the interpolation construction. Returns
    /// (lambda1, lambda2) estimated on a matrix sample, or None when the lower
    /// bound degenerates; callers warn when this fails.
    pub fn coercivity_bounds(&self, well_index: usize, n_samples: usize) -> Option<(f64, f64)> {
        let form = self.c_u_form(well_index);
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        // Deterministic direction sweep over a fixed 4-sphere net.
        for k in 0..n_samples {
            let t = k as f64 + 0.5;
            let a = Mat2::new(
                (1.7 * t).sin(),
                (2.3 * t).cos(),
                (3.1 * t).sin(),
                (0.9 * t).cos(),
            );
            let sym_sq = a.sym().norm_sq();
            if sym_sq < 1e-14 {
                continue;
            }
            let q = form.apply(a, a);
            lo = lo.min(q / sym_sq);
            hi = hi.max(q / sym_sq);
        }
        if lo <= 1e-12 {
            None
        } else {
            Some((lo, hi))
        }
    }
}

/// A symmetric positive semidefinite bilinear form on 2x2 matrices.
#[derive(Debug, Clone, Copy)]
pub enum QuadraticForm {
    /// A : B.
    Identity,
    /// 2(<A,B> - <A,n><B,n>) with |n| = 1; kernel is span{n}.
    NormalProjection { unit_tangent: Mat2 },
}

impl QuadraticForm {
    pub fn apply(&self, a: Mat2, b: Mat2) -> f64 {
        match self {
            QuadraticForm::Identity => a.inner(b),
            QuadraticForm::NormalProjection { unit_tangent: n } => {
                2.0 * (a.inner(b) - a.inner(*n) * b.inner(*n))
            }
        }
    }

    pub fn energy(&self, a: Mat2) -> f64 {
        self.apply(a, a)
    }

    /// C_U A as a matrix, so that <C_U A, B> = apply(A, B).
    pub fn matrix_apply(&self, a: Mat2) -> Mat2 {
        match self {
            QuadraticForm::Identity => a,
            QuadraticForm::NormalProjection { unit_tangent: n } => {
                (a - n.scale(a.inner(*n))).scale(2.0)
            }
        }
    }
}
