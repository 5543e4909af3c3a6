//! Built-in Hamiltonian families.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ChordError, Result};
use crate::phase::{AffineLagrangian, Hamiltonian, LambdaChoice, SystemDescriptor};

/// `H = (q^2 + p^2 - 1)/2 - mu` when `shift` is set, otherwise `mu` is inert.
#[derive(Debug, Clone, Copy)]
pub struct Harmonic {
    pub shift: bool,
}

impl Hamiltonian for Harmonic {
    fn dof(&self) -> usize {
        1
    }
    fn value(&self, x: &DVector<f64>, mu: f64) -> f64 {
        let s = if self.shift { mu } else { 0.0 };
        0.5 * (x[0] * x[0] + x[1] * x[1] - 1.0) - s
    }
    fn gradient(&self, x: &DVector<f64>, _mu: f64) -> DVector<f64> {
        x.clone()
    }
    fn hessian(&self, _x: &DVector<f64>, _mu: f64) -> DMatrix<f64> {
        DMatrix::identity(2, 2)
    }
    fn mu_derivative(&self, _x: &DVector<f64>, _mu: f64) -> f64 {
        if self.shift {
            -1.0
        } else {
            0.0
        }
    }
    fn mu_gradient(&self, _x: &DVector<f64>, _mu: f64) -> DVector<f64> {
        DVector::zeros(2)
    }
}

/// `H = |p|^2/2 + |q|^2/2 + q1^2 q2 - q2^3/3 - mu - offset`.
#[derive(Debug, Clone, Copy)]
pub struct HenonHeiles {
    pub energy_offset: f64,
}

impl Hamiltonian for HenonHeiles {
    fn dof(&self) -> usize {
        2
    }
    fn value(&self, x: &DVector<f64>, mu: f64) -> f64 {
        let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
        0.5 * (p1 * p1 + p2 * p2) + 0.5 * (q1 * q1 + q2 * q2) + q1 * q1 * q2
            - q2 * q2 * q2 / 3.0
            - mu
            - self.energy_offset
    }
    fn gradient(&self, x: &DVector<f64>, _mu: f64) -> DVector<f64> {
        let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
        DVector::from_vec(vec![q1 + 2.0 * q1 * q2, q2 + q1 * q1 - q2 * q2, p1, p2])
    }
    fn hessian(&self, x: &DVector<f64>, _mu: f64) -> DMatrix<f64> {
        let (q1, q2) = (x[0], x[1]);
        let mut h = DMatrix::identity(4, 4);
        h[(0, 0)] = 1.0 + 2.0 * q2;
        h[(0, 1)] = 2.0 * q1;
        h[(1, 0)] = 2.0 * q1;
        h[(1, 1)] = 1.0 - 2.0 * q2;
        h
    }
    fn mu_derivative(&self, _x: &DVector<f64>, _mu: f64) -> f64 {
        -1.0
    }
    fn mu_gradient(&self, _x: &DVector<f64>, _mu: f64) -> DVector<f64> {
        DVector::zeros(4)
    }
}

/// Planar circular restricted three-body problem in the rotating frame,
/// `H = |p|^2/2 + q2 p1 - q1 p2 - (1-m)/r1 - m/r2 + mu/2`, heavy primary at
/// `(-m, 0)`, light primary at `(1-m, 0)`. On `H = 0` the family parameter
/// `mu` equals the Jacobi constant.
#[derive(Debug, Clone, Copy)]
pub struct RtbpPlanar {
    pub mass_ratio: f64,
    pub collision_floor: f64,
}

impl RtbpPlanar {
    pub fn heavy_position(&self) -> (f64, f64) {
        (-self.mass_ratio, 0.0)
    }

    pub fn light_position(&self) -> (f64, f64) {
        (1.0 - self.mass_ratio, 0.0)
    }

    fn radii(&self, x: &DVector<f64>) -> (f64, f64) {
        let m = self.mass_ratio;
        let r1 = ((x[0] + m).powi(2) + x[1] * x[1]).sqrt();
        let r2 = ((x[0] - 1.0 + m).powi(2) + x[1] * x[1]).sqrt();
        (r1, r2)
    }

    /// Effective potential part `-(1-m)/r1 - m/r2`.
    pub fn potential(&self, q1: f64, q2: f64) -> f64 {
        let m = self.mass_ratio;
        let r1 = ((q1 + m).powi(2) + q2 * q2).sqrt();
        let r2 = ((q1 - 1.0 + m).powi(2) + q2 * q2).sqrt();
        -(1.0 - m) / r1 - m / r2
    }
}

impl Hamiltonian for RtbpPlanar {
    fn dof(&self) -> usize {
        2
    }
    fn value(&self, x: &DVector<f64>, mu: f64) -> f64 {
        let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
        0.5 * (p1 * p1 + p2 * p2) + q2 * p1 - q1 * p2 + self.potential(q1, q2) + 0.5 * mu
    }
    fn gradient(&self, x: &DVector<f64>, _mu: f64) -> DVector<f64> {
        let m = self.mass_ratio;
        let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
        let (r1, r2) = self.radii(x);
        let a = (1.0 - m) / r1.powi(3);
        let b = m / r2.powi(3);
        DVector::from_vec(vec![
            -p2 + a * (q1 + m) + b * (q1 - 1.0 + m),
            p1 + a * q2 + b * q2,
            p1 + q2,
            p2 - q1,
        ])
    }
    fn hessian(&self, x: &DVector<f64>, _mu: f64) -> DMatrix<f64> {
        let m = self.mass_ratio;
        let mut h = DMatrix::zeros(4, 4);
        for (k, c) in [(1.0 - m, -m), (m, 1.0 - m)] {
            let d = [x[0] - c, x[1]];
            let r2 = d[0] * d[0] + d[1] * d[1];
            let r = r2.sqrt();
            let r3 = r * r2;
            let r5 = r3 * r2;
            for i in 0..2 {
                for j in 0..2 {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    h[(i, j)] += k * (delta / r3 - 3.0 * d[i] * d[j] / r5);
                }
            }
        }
        h[(2, 2)] = 1.0;
        h[(3, 3)] = 1.0;
        h[(0, 3)] = -1.0;
        h[(3, 0)] = -1.0;
        h[(1, 2)] = 1.0;
        h[(2, 1)] = 1.0;
        h
    }
    fn mu_derivative(&self, _x: &DVector<f64>, _mu: f64) -> f64 {
        0.5
    }
    fn mu_gradient(&self, _x: &DVector<f64>, _mu: f64) -> DVector<f64> {
        DVector::zeros(4)
    }
    fn admissible(&self, x: &DVector<f64>) -> Result<()> {
        let (r1, r2) = self.radii(x);
        let r = r1.min(r2);
        if r < self.collision_floor {
            return Err(ChordError::CollisionFloor { radius: r, floor: self.collision_floor });
        }
        Ok(())
    }
}

/// Uniform-field system with an analytically placed fold of chords between two
/// fibers: `H = |p|^2/2 + g q2 - g d/2 - k (mu_fold - mu)`.
///
/// Chords run from the fiber over `(0, 0)` to the fiber over `(d, 0)`. They are
/// ballistic arcs at speed `v` with `v^2 = g d + 2k (mu_fold - mu)`: two arcs for
/// `mu < mu_fold`, one degenerate (45 degree) arc at `mu_fold`, none above.
#[derive(Debug, Clone, Copy)]
pub struct ProjectileFold {
    pub gravity: f64,
    pub distance: f64,
    pub coupling: f64,
    pub mu_fold: f64,
}

impl Default for ProjectileFold {
    fn default() -> Self {
        ProjectileFold { gravity: 1.0, distance: 1.0, coupling: 2e-3, mu_fold: 0.5 }
    }
}

impl ProjectileFold {
    /// Launch speed squared on `Sigma_mu`.
    pub fn speed_squared(&self, mu: f64) -> f64 {
        self.gravity * self.distance + 2.0 * self.coupling * (self.mu_fold - mu)
    }
}

impl Hamiltonian for ProjectileFold {
    fn dof(&self) -> usize {
        2
    }
    fn value(&self, x: &DVector<f64>, mu: f64) -> f64 {
        0.5 * (x[2] * x[2] + x[3] * x[3]) + self.gravity * x[1]
            - 0.5 * self.gravity * self.distance
            - self.coupling * (self.mu_fold - mu)
    }
    fn gradient(&self, x: &DVector<f64>, _mu: f64) -> DVector<f64> {
        DVector::from_vec(vec![0.0, self.gravity, x[2], x[3]])
    }
    fn hessian(&self, _x: &DVector<f64>, _mu: f64) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(4, 4);
        h[(2, 2)] = 1.0;
        h[(3, 3)] = 1.0;
        h
    }
    fn mu_derivative(&self, _x: &DVector<f64>, _mu: f64) -> f64 {
        self.coupling
    }
    fn mu_gradient(&self, _x: &DVector<f64>, _mu: f64) -> DVector<f64> {
        DVector::zeros(4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinName {
    Harmonic,
    HarmonicShift,
    HenonHeiles,
    RtbpPlanar,
    SyntheticFold,
}

impl std::str::FromStr for BuiltinName {
    type Err = ChordError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "harmonic" => Ok(BuiltinName::Harmonic),
            "harmonic_shift" => Ok(BuiltinName::HarmonicShift),
            "henon_heiles" => Ok(BuiltinName::HenonHeiles),
            "rtbp_planar" => Ok(BuiltinName::RtbpPlanar),
            "synthetic_fold" => Ok(BuiltinName::SyntheticFold),
            other => Err(ChordError::InvalidParameter(format!("unknown system '{other}'"))),
        }
    }
}

/// Optional parameters; unset fields take the per-system defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BuiltinParams {
    pub mass_ratio: Option<f64>,
    pub collision_floor: Option<f64>,
    pub energy_offset: Option<f64>,
    pub gravity: Option<f64>,
    pub distance: Option<f64>,
    pub coupling: Option<f64>,
    pub mu_fold: Option<f64>,
}

pub const RTBP_DEFAULT_MASS_RATIO: f64 = 1e-3;
pub const RTBP_DEFAULT_COLLISION_FLOOR: f64 = 1e-3;

fn axis(n: usize, k: usize) -> DVector<f64> {
    let mut e = DVector::zeros(2 * n);
    e[k] = 1.0;
    e
}

pub fn builtin_system(name: BuiltinName, params: &BuiltinParams) -> Result<SystemDescriptor> {
    match name {
        BuiltinName::Harmonic | BuiltinName::HarmonicShift => {
            let shift = name == BuiltinName::HarmonicShift;
            let l0 = AffineLagrangian::new(DVector::zeros(2), &[axis(1, 0)])?;
            let l1 = AffineLagrangian::new(DVector::zeros(2), &[axis(1, 1)])?;
            let (id, range) = if shift {
                ("harmonic_shift", (-0.25, 0.5))
            } else {
                ("harmonic", (0.0, 1.0))
            };
            SystemDescriptor::new(id, Arc::new(Harmonic { shift }), LambdaChoice::Symmetric, range, [l0, l1])
        }
        BuiltinName::HenonHeiles => {
            let offset = params.energy_offset.unwrap_or(0.0);
            if !offset.is_finite() {
                return Err(ChordError::InvalidParameter("energy offset must be finite".into()));
            }
            // symmetry plane {q1 = 0, p2 = 0}
            let plane = AffineLagrangian::coordinate_plane(DVector::zeros(4), &[1, 2])?;
            SystemDescriptor::new(
                "henon_heiles",
                Arc::new(HenonHeiles { energy_offset: offset }),
                LambdaChoice::Symmetric,
                (0.01, 0.16),
                [plane.clone(), plane],
            )
        }
        BuiltinName::RtbpPlanar => {
            let m = params.mass_ratio.unwrap_or(RTBP_DEFAULT_MASS_RATIO);
            if !(m > 0.0 && m < 0.5) {
                return Err(ChordError::InvalidParameter(format!(
                    "mass ratio {m} outside (0, 1/2)"
                )));
            }
            let floor = params.collision_floor.unwrap_or(RTBP_DEFAULT_COLLISION_FLOOR);
            if !(floor > 0.0) {
                return Err(ChordError::InvalidParameter("collision floor must be positive".into()));
            }
            // symmetry plane {q2 = 0, p1 = 0}
            let plane = AffineLagrangian::coordinate_plane(DVector::zeros(4), &[0, 3])?;
            SystemDescriptor::new(
                "rtbp_planar",
                Arc::new(RtbpPlanar { mass_ratio: m, collision_floor: floor }),
                LambdaChoice::Symmetric,
                (3.0, 4.5),
                [plane.clone(), plane],
            )
        }
        BuiltinName::SyntheticFold => {
            let d = ProjectileFold::default();
            let model = ProjectileFold {
                gravity: params.gravity.unwrap_or(d.gravity),
                distance: params.distance.unwrap_or(d.distance),
                coupling: params.coupling.unwrap_or(d.coupling),
                mu_fold: params.mu_fold.unwrap_or(d.mu_fold),
            };
            if !(model.gravity > 0.0 && model.distance > 0.0 && model.coupling > 0.0) {
                return Err(ChordError::InvalidParameter(
                    "gravity, distance and coupling must be positive".into(),
                ));
            }
            let mut target = DVector::zeros(4);
            target[0] = model.distance;
            // fibers over the launch and landing points
            let l0 = AffineLagrangian::coordinate_plane(DVector::zeros(4), &[2, 3])?;
            let l1 = AffineLagrangian::coordinate_plane(target, &[2, 3])?;
            SystemDescriptor::new(
                "synthetic_fold",
                Arc::new(model),
                LambdaChoice::Standard,
                (model.mu_fold - 0.5, model.mu_fold + 0.5),
                [l0, l1],
            )
        }
    }
}
