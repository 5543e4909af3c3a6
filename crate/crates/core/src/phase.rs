//! Exact symplectic model space `R^{2n}`, Hamiltonian families and affine
//! exact Lagrangian boundary conditions.
//!
//! Coordinates are ordered `x = (q_1, .., q_n, p_1, .., p_n)`. The symplectic
//! form is `omega = sum dp_i ^ dq_i`, i.e. `omega(u, w) = u_p . w_q - u_q . w_p`,
//! and the Hamiltonian vector field is defined by `dH = omega(., X_H)`, which
//! gives `X_H = (dH/dp, -dH/dq) = J grad H` with `J = [[0, I], [-I, 0]]`.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ChordError, Result};

/// A point `(q, p)` of the model space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PhaseState(DVector<f64>);

impl TryFrom<Vec<f64>> for PhaseState {
    type Error = ChordError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        PhaseState::from_vector(DVector::from_vec(v))
    }
}

impl From<PhaseState> for Vec<f64> {
    fn from(x: PhaseState) -> Self {
        x.0.as_slice().to_vec()
    }
}

impl PhaseState {
    pub fn new(q: &[f64], p: &[f64]) -> Result<Self> {
        if q.len() != p.len() || q.is_empty() {
            return Err(ChordError::InvalidParameter(format!(
                "q and p must have equal positive length (got {} and {})",
                q.len(),
                p.len()
            )));
        }
        let v = DVector::from_iterator(q.len() * 2, q.iter().chain(p.iter()).copied());
        Self::from_vector(v)
    }

    pub fn from_vector(v: DVector<f64>) -> Result<Self> {
        if v.len() % 2 != 0 || v.is_empty() {
            return Err(ChordError::InvalidParameter(format!(
                "state vector length {} is not a positive even number",
                v.len()
            )));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(ChordError::NonFinite("phase state".into()));
        }
        Ok(PhaseState(v))
    }

    pub fn dof(&self) -> usize {
        self.0.len() / 2
    }

    pub fn q(&self) -> &[f64] {
        &self.0.as_slice()[..self.dof()]
    }

    pub fn p(&self) -> &[f64] {
        &self.0.as_slice()[self.dof()..]
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

impl Deref for PhaseState {
    type Target = DVector<f64>;
    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

/// `omega(u, w) = u_p . w_q - u_q . w_p`.
pub fn omega(u: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let n = u.len() / 2;
    let mut s = 0.0;
    for i in 0..n {
        s += u[n + i] * w[i] - u[i] * w[n + i];
    }
    s
}

/// `J` with `X_H = J grad H`.
pub fn complex_structure(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

/// Applies `J` to a vector without forming the matrix.
pub fn apply_j(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len() / 2;
    let mut out = DVector::zeros(v.len());
    for i in 0..n {
        out[i] = v[n + i];
        out[n + i] = -v[i];
    }
    out
}

/// The matrix of `omega`: `omega(u, w) = u^T Omega w`. Equals `-J`.
pub fn omega_matrix(n: usize) -> DMatrix<f64> {
    -complex_structure(n)
}

/// Primitive one-form `lambda` with `d lambda = omega`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    /// `lambda = p dq`
    Standard,
    /// `lambda = (p dq - q dp) / 2`
    Symmetric,
}

impl LambdaChoice {
    /// `lambda(x)(u)`.
    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let n = x.len() / 2;
        let mut s = 0.0;
        match self {
            LambdaChoice::Standard => {
                for i in 0..n {
                    s += x[n + i] * u[i];
                }
            }
            LambdaChoice::Symmetric => {
                for i in 0..n {
                    s += 0.5 * (x[n + i] * u[i] - x[i] * u[n + i]);
                }
            }
        }
        s
    }

    /// Matrix `L` with `lambda(x)(u) = x^T L u`; `L - L^T` is the matrix of omega.
    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            match self {
                LambdaChoice::Standard => l[(n + i, i)] = 1.0,
                LambdaChoice::Symmetric => {
                    l[(n + i, i)] = 0.5;
                    l[(i, n + i)] = -0.5;
                }
            }
        }
        l
    }

    /// Liouville field `Y` defined by `lambda = omega(Y, .)`.
    pub fn liouville(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = x.len() / 2;
        let mut y = DVector::zeros(x.len());
        match self {
            LambdaChoice::Standard => {
                for i in 0..n {
                    y[n + i] = x[n + i];
                }
            }
            LambdaChoice::Symmetric => {
                y.copy_from(x);
                y *= 0.5;
            }
        }
        y
    }
}

/// An affine Lagrangian plane `base + span(basis)` with an orthonormal tangent
/// basis and an orthonormal normal frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLagrangian {
    base: DVector<f64>,
    basis: DMatrix<f64>,
    normal: DMatrix<f64>,
}

fn orthonormalize_against(v: &mut DVector<f64>, frame: &[DVector<f64>]) {
    // two passes of modified Gram-Schmidt
    for _ in 0..2 {
        for e in frame {
            let c = e.dot(v);
            v.axpy(-c, e, 1.0);
        }
    }
}

impl AffineLagrangian {
    pub fn new(base: DVector<f64>, rows: &[DVector<f64>]) -> Result<Self> {
        let dim = base.len();
        if dim % 2 != 0 || rows.len() * 2 != dim {
            return Err(ChordError::InvalidParameter(format!(
                "a Lagrangian plane in R^{dim} needs {} basis rows, got {}",
                dim / 2,
                rows.len()
            )));
        }
        if base.iter().chain(rows.iter().flat_map(|r| r.iter())).any(|c| !c.is_finite()) {
            return Err(ChordError::NonFinite("Lagrangian plane".into()));
        }
        let mut frame: Vec<DVector<f64>> = Vec::with_capacity(dim);
        for r in rows {
            if r.len() != dim {
                return Err(ChordError::InvalidParameter("basis row has wrong length".into()));
            }
            let mut v = r.clone();
            let scale = v.norm();
            orthonormalize_against(&mut v, &frame);
            let nv = v.norm();
            if scale == 0.0 || nv < 1e-10 * scale {
                return Err(ChordError::InvalidParameter(
                    "Lagrangian basis rows are linearly dependent".into(),
                ));
            }
            frame.push(v / nv);
        }
        for (i, u) in frame.iter().enumerate() {
            for w in &frame[i + 1..] {
                let om = omega(u, w);
                if om.abs() > 1e-12 {
                    return Err(ChordError::NotLagrangian(om.abs()));
                }
            }
        }
        let n_tan = frame.len();
        for k in 0..dim {
            if frame.len() == dim {
                break;
            }
            let mut v = DVector::zeros(dim);
            v[k] = 1.0;
            orthonormalize_against(&mut v, &frame);
            let nv = v.norm();
            if nv > 1e-8 {
                frame.push(v / nv);
            }
        }
        let basis = DMatrix::from_columns(&frame[..n_tan]);
        let normal = DMatrix::from_columns(&frame[n_tan..]);
        Ok(AffineLagrangian { base, basis, normal })
    }

    /// Plane through `base` spanned by the coordinate axes listed in `free`
    /// (indices into `(q_1, .., q_n, p_1, .., p_n)`).
    pub fn coordinate_plane(base: DVector<f64>, free: &[usize]) -> Result<Self> {
        let dim = base.len();
        let rows: Vec<DVector<f64>> = free
            .iter()
            .map(|&k| {
                let mut e = DVector::zeros(dim);
                if k < dim {
                    e[k] = 1.0;
                }
                e
            })
            .collect();
        if free.iter().any(|&k| k >= dim) {
            return Err(ChordError::InvalidParameter("free coordinate index out of range".into()));
        }
        Self::new(base, &rows)
    }

    pub fn dof(&self) -> usize {
        self.base.len() / 2
    }

    pub fn base_point(&self) -> &DVector<f64> {
        &self.base
    }

    pub fn tangent_basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn normal_frame(&self) -> &DMatrix<f64> {
        &self.normal
    }

    /// `base + basis * u`.
    pub fn point(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.base + &self.basis * u
    }

    /// Lagrangian coordinates of the orthogonal projection of `x`.
    pub fn coordinates(&self, x: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(&(x - &self.base))
    }

    /// Signed distances from the plane along the normal frame.
    pub fn signed_distances(&self, x: &DVector<f64>) -> DVector<f64> {
        self.normal.tr_mul(&(x - &self.base))
    }

    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        self.signed_distances(x).norm()
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.point(&self.coordinates(x))
    }

    /// Projects a tangent vector onto the plane's tangent space.
    pub fn project_tangent(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.basis * self.basis.tr_mul(v)
    }

    /// True iff `lambda` annihilates every tangent vector at the base point and
    /// at `base + b_j` for every basis vector `b_j`.
    pub fn is_exact(&self, lambda: LambdaChoice) -> bool {
        let mut points = vec![self.base.clone()];
        for j in 0..self.basis.ncols() {
            points.push(&self.base + self.basis.column(j));
        }
        points.iter().all(|x| {
            (0..self.basis.ncols())
                .all(|i| lambda.eval(x, &self.basis.column(i).into_owned()).abs() <= 1e-10)
        })
    }
}

/// A smooth one-parameter family `H(., mu)` on `R^{2n}`.
pub trait Hamiltonian: Send + Sync + fmt::Debug {
    fn dof(&self) -> usize;
    fn value(&self, x: &DVector<f64>, mu: f64) -> f64;
    fn gradient(&self, x: &DVector<f64>, mu: f64) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>, mu: f64) -> DMatrix<f64>;
    /// `dH/dmu`.
    fn mu_derivative(&self, x: &DVector<f64>, mu: f64) -> f64;

    /// Spatial gradient of `dH/dmu`. The default differences the gradient in `mu`.
    fn mu_gradient(&self, x: &DVector<f64>, mu: f64) -> DVector<f64> {
        let d = 1e-6 * (1.0 + mu.abs());
        (self.gradient(x, mu + d) - self.gradient(x, mu - d)) / (2.0 * d)
    }

    /// Rejects states where the model is not usable (e.g. near a collision).
    fn admissible(&self, _x: &DVector<f64>) -> Result<()> {
        Ok(())
    }
}

/// A Hamiltonian family together with a primitive, a parameter window and two
/// exact Lagrangian boundary planes. Immutable and cheap to clone.
#[derive(Clone)]
pub struct SystemDescriptor {
    pub id: String,
    model: Arc<dyn Hamiltonian>,
    pub lambda: LambdaChoice,
    pub mu_range: (f64, f64),
    pub lagrangians: [AffineLagrangian; 2],
}

impl fmt::Debug for SystemDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemDescriptor")
            .field("id", &self.id)
            .field("model", &self.model)
            .field("lambda", &self.lambda)
            .field("mu_range", &self.mu_range)
            .finish()
    }
}

impl SystemDescriptor {
    pub fn new(
        id: impl Into<String>,
        model: Arc<dyn Hamiltonian>,
        lambda: LambdaChoice,
        mu_range: (f64, f64),
        lagrangians: [AffineLagrangian; 2],
    ) -> Result<Self> {
        let n = model.dof();
        if n == 0 {
            return Err(ChordError::InvalidParameter("zero degrees of freedom".into()));
        }
        if !(mu_range.0 <= mu_range.1) || !mu_range.0.is_finite() || !mu_range.1.is_finite() {
            return Err(ChordError::InvalidParameter(format!("bad mu range {mu_range:?}")));
        }
        if lagrangians.iter().any(|l| l.dof() != n) {
            return Err(ChordError::InvalidParameter(
                "Lagrangian dimension does not match the model".into(),
            ));
        }
        Ok(SystemDescriptor { id: id.into(), model, lambda, mu_range, lagrangians })
    }

    pub fn with_lambda(mut self, lambda: LambdaChoice) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_mu_range(mut self, mu_range: (f64, f64)) -> Self {
        self.mu_range = mu_range;
        self
    }

    pub fn with_lagrangians(mut self, lagrangians: [AffineLagrangian; 2]) -> Result<Self> {
        if lagrangians.iter().any(|l| l.dof() != self.n()) {
            return Err(ChordError::InvalidParameter(
                "Lagrangian dimension does not match the model".into(),
            ));
        }
        self.lagrangians = lagrangians;
        Ok(self)
    }

    pub fn model(&self) -> &dyn Hamiltonian {
        self.model.as_ref()
    }

    pub fn n(&self) -> usize {
        self.model.dof()
    }

    pub fn check_mu(&self, mu: f64) -> Result<()> {
        let (lo, hi) = self.mu_range;
        if !(mu >= lo && mu <= hi) {
            return Err(ChordError::MuOutOfRange { mu, lo, hi });
        }
        Ok(())
    }

    pub fn h(&self, x: &DVector<f64>, mu: f64) -> f64 {
        self.model.value(x, mu)
    }

    pub fn grad_h(&self, x: &DVector<f64>, mu: f64) -> DVector<f64> {
        self.model.gradient(x, mu)
    }

    pub fn hess_h(&self, x: &DVector<f64>, mu: f64) -> DMatrix<f64> {
        self.model.hessian(x, mu)
    }

    pub fn dh_dmu(&self, x: &DVector<f64>, mu: f64) -> f64 {
        self.model.mu_derivative(x, mu)
    }

    pub fn admissible(&self, x: &DVector<f64>) -> Result<()> {
        self.model.admissible(x)
    }

    /// `X_H` without range checks; used on hot paths.
    pub fn x_h(&self, x: &DVector<f64>, mu: f64) -> DVector<f64> {
        apply_j(&self.model.gradient(x, mu))
    }

    pub fn hamiltonian_vector_field(&self, x: &PhaseState, mu: f64) -> Result<DVector<f64>> {
        self.check_mu(mu)?;
        if x.dof() != self.n() {
            return Err(ChordError::InvalidParameter("state dimension mismatch".into()));
        }
        Ok(self.x_h(x, mu))
    }

    pub fn liouville_field(&self, x: &DVector<f64>) -> DVector<f64> {
        self.lambda.liouville(x)
    }

    /// `f(x) = dH(Y)(x)`.
    pub fn contact_function(&self, x: &DVector<f64>, mu: f64) -> f64 {
        self.grad_h(x, mu).dot(&self.liouville_field(x))
    }

    pub fn lagrangian_exactness_check(&self, which: usize) -> bool {
        self.lagrangians[which.min(1)].is_exact(self.lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn phase_state_validation() {
        let x = PhaseState::new(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(x.q(), &[1.0, 2.0]);
        assert_eq!(x.p(), &[3.0, 4.0]);
        assert!(PhaseState::new(&[1.0], &[1.0, 2.0]).is_err());
        assert!(PhaseState::from_vector(v(&[1.0, 2.0, 3.0])).is_err());
        assert!(matches!(PhaseState::from_vector(v(&[f64::NAN, 0.0])), Err(ChordError::NonFinite(_))));
    }

    #[test]
    fn omega_matrix_and_j_agree() {
        let u = v(&[0.3, -1.2, 0.7, 2.0]);
        let w = v(&[-0.4, 0.5, 1.1, -0.9]);
        let om = omega_matrix(2);
        assert!((omega(&u, &w) - u.dot(&(&om * &w))).abs() < 1e-15);
        assert!((omega(&u, &w) + omega(&w, &u)).abs() < 1e-15);
        assert_eq!(apply_j(&u), complex_structure(2) * &u);
        // omega(u, J u) = |u|^2 under this sign convention
        assert!((omega(&u, &apply_j(&u)) - u.norm_squared()).abs() < 1e-14);
    }

    #[test]
    fn lambda_primitives() {
        let x = v(&[0.3, -1.2, 0.7, 2.0]);
        let u = v(&[-0.4, 0.5, 1.1, -0.9]);
        for l in [LambdaChoice::Standard, LambdaChoice::Symmetric] {
            let m = l.matrix(2);
            assert!((l.eval(&x, &u) - x.dot(&(&m * &u))).abs() < 1e-15);
            assert!((&m - m.transpose() - omega_matrix(2)).amax() < 1e-15);
            assert!((omega(&l.liouville(&x), &u) - l.eval(&x, &u)).abs() < 1e-14);
        }
    }

    #[test]
    fn lagrangian_planes() {
        let plane = AffineLagrangian::coordinate_plane(v(&[0.0, 0.0, 0.0, 0.0]), &[0, 3]).unwrap();
        assert!(plane.is_exact(LambdaChoice::Symmetric));
        let x = v(&[0.5, 0.2, -0.1, 0.4]);
        assert!((plane.distance(&x) - (0.2f64.hypot(0.1))).abs() < 1e-15);
        assert!(plane.distance(&plane.project(&x)) < 1e-15);

        let fiber = AffineLagrangian::coordinate_plane(v(&[1.0, 0.0, 0.0, 0.0]), &[2, 3]).unwrap();
        assert!(fiber.is_exact(LambdaChoice::Standard));
        assert!(!fiber.is_exact(LambdaChoice::Symmetric));

        let err = AffineLagrangian::coordinate_plane(v(&[0.0; 4]), &[0, 2]).unwrap_err();
        assert!(matches!(err, ChordError::NotLagrangian(_)));
        assert!(AffineLagrangian::new(v(&[0.0; 4]), &[v(&[1.0, 0.0, 0.0, 0.0]), v(&[2.0, 0.0, 0.0, 0.0])]).is_err());
        assert!(AffineLagrangian::coordinate_plane(v(&[0.0; 4]), &[0, 7]).is_err());

        // a tilted plane keeps an orthonormal frame
        let tilted = AffineLagrangian::new(v(&[0.0; 2]), &[v(&[1.0, 1.0])]).unwrap();
        let b = tilted.tangent_basis();
        let n = tilted.normal_frame();
        assert!((b.column(0).norm() - 1.0).abs() < 1e-15);
        assert!(b.column(0).dot(&n.column(0)).abs() < 1e-15);
    }
}
