//! Flow lines of the time-dependent Rabinowitz action on discrete path space.
//!
//! A flow line solves `dz/ds + grad A_{mu(s)}(z) = 0` with
//! `mu(s) = mu0 + beta(s) (mu1 - mu0)` and is doubly asymptotic to a critical
//! point. The functional has infinite Morse index and coindex, so the flow is
//! computed as a boundary-value problem on `[-S, S]`: a trapezoidal box scheme
//! in `s`, and at each end the spectral projector of the linearized flow at the
//! seed critical point that kills the modes growing towards that end.
//! [`explicit_descent`] is the plain forward iteration, kept for comparison.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{discrete_action, DiscretePath, PathCoordinates};
use crate::banded::BandMatrix;
use crate::chord::{solve_linear, Chord};
use crate::error::{ChordError, Result};
use crate::phase::SystemDescriptor;

/// C¹ smoothstep ramp: 0 for `s <= -1`, 1 for `s >= 1`.
pub fn smoothstep(s: f64) -> f64 {
    if s <= -1.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let u = 0.5 * (s + 1.0);
        u * u * (3.0 - 2.0 * u)
    }
}

pub fn smoothstep_prime(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let u = 0.5 * (s + 1.0);
        3.0 * u * (1.0 - u)
    }
}

/// Cutoff functions `beta`: zero far out, monotone up then down, at most 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CutoffProfile {
    /// `gamma(T - 1 - |s|)`: vanishes for `|s| >= T`, equals 1 for `|s| <= T - 2`.
    FixedBeta { t: f64 },
    /// The stretching family: `R gamma(2 - |s|)` for `R <= 1`,
    /// `gamma(1 + R - |s|)` for `R >= 1`.
    BetaR { r: f64 },
}

impl CutoffProfile {
    pub fn fixed_beta(t: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(ChordError::InvalidParameter(format!("cutoff half-width must be positive, got {t}")));
        }
        Ok(CutoffProfile::FixedBeta { t })
    }

    pub fn beta_r(r: f64) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(ChordError::InvalidParameter(format!("stretching parameter must be >= 0, got {r}")));
        }
        Ok(CutoffProfile::BetaR { r })
    }

    fn scale_and_shift(&self) -> (f64, f64) {
        match *self {
            CutoffProfile::FixedBeta { t } => (1.0, t - 1.0),
            CutoffProfile::BetaR { r } if r <= 1.0 => (r, 2.0),
            CutoffProfile::BetaR { r } => (1.0, 1.0 + r),
        }
    }

    pub fn beta(&self, s: f64) -> f64 {
        let (a, c) = self.scale_and_shift();
        a * smoothstep(c - s.abs())
    }

    pub fn beta_prime(&self, s: f64) -> f64 {
        let (a, c) = self.scale_and_shift();
        -a * s.signum() * smoothstep_prime(c - s.abs())
    }

    /// Half-width of the support.
    pub fn support(&self) -> f64 {
        let (a, c) = self.scale_and_shift();
        if a == 0.0 {
            0.0
        } else {
            c + 1.0
        }
    }

    /// Half-width of the region where `beta = 1`, if any.
    pub fn plateau(&self) -> Option<f64> {
        let (a, c) = self.scale_and_shift();
        (a == 1.0 && c >= 1.0).then_some(c - 1.0)
    }
}

/// `mu(s) = mu0 + beta(s) (mu1 - mu0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSchedule {
    pub mu0: f64,
    pub mu1: f64,
    pub profile: CutoffProfile,
}

impl FlowSchedule {
    pub fn new(mu0: f64, mu1: f64, profile: CutoffProfile) -> Self {
        FlowSchedule { mu0, mu1, profile }
    }

    /// The time-independent schedule at `mu0`.
    pub fn constant(mu0: f64) -> Self {
        FlowSchedule { mu0, mu1: mu0, profile: CutoffProfile::BetaR { r: 0.0 } }
    }

    pub fn mu(&self, s: f64) -> f64 {
        self.mu0 + self.profile.beta(s) * (self.mu1 - self.mu0)
    }

    pub fn mu_prime(&self, s: f64) -> f64 {
        self.profile.beta_prime(s) * (self.mu1 - self.mu0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradientFlowOptions {
    pub n_intervals: usize,
    pub ds: f64,
    /// Extra flow time beyond the cutoff support at each end.
    pub tail: f64,
    /// Decay lengths `1/|eigenvalue|` the tail must cover at least.
    pub decay_lengths: f64,
    pub max_tail: f64,
    pub tol: f64,
    pub max_newton: usize,
    pub polish_tol: f64,
    pub sigma_floor: f64,
    /// Radius of the ball around the seed, in the product metric.
    pub rho: f64,
    pub approach_tol: f64,
}

impl Default for GradientFlowOptions {
    fn default() -> Self {
        GradientFlowOptions {
            n_intervals: 16,
            ds: 0.1,
            tail: 4.0,
            decay_lengths: 8.0,
            max_tail: 40.0,
            tol: 1e-10,
            max_newton: 25,
            polish_tol: 1e-12,
            sigma_floor: 1e-4,
            rho: 0.5,
            approach_tol: 1e-6,
        }
    }
}

/// One state of a flow line.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPath {
    pub s: f64,
    pub mu: f64,
    pub w: Vec<DVector<f64>>,
    pub sigma: f64,
    pub action: f64,
    pub gradient_norm: f64,
    pub energy_so_far: f64,
}

impl FlowPath {
    pub fn path(&self) -> DiscretePath {
        DiscretePath { nodes: self.w.clone(), sigma: self.sigma }
    }
}

#[derive(Debug, Clone)]
pub struct FlowLine {
    pub schedule: FlowSchedule,
    pub seed: DiscretePath,
    pub states: Vec<FlowPath>,
    pub energy: f64,
    pub action_drop: f64,
    /// `int mu'(s) dA/dmu ds`, the explicit time dependence.
    pub source: f64,
    pub newton_iterations: usize,
    pub max_distance: f64,
    pub kappa_used: f64,
    pub c_used: f64,
}

impl FlowLine {
    /// `2 (mu1 - mu0) kappa c`, with `kappa` the largest sigma along the line
    /// and `c` the largest `|dH/dmu|` at the path midpoints.
    pub fn energy_bound(&self) -> f64 {
        2.0 * (self.schedule.mu1 - self.schedule.mu0).abs() * self.kappa_used * self.c_used
    }

    /// Relative defect of `E = A(-S) - A(S) + source`.
    pub fn energy_identity_error(&self) -> f64 {
        let rhs = self.action_drop + self.source;
        let scale = self.energy.abs().max(rhs.abs());
        if scale < 1e-14 {
            0.0
        } else {
            (self.energy - rhs).abs() / scale
        }
    }

    pub fn final_state(&self) -> &FlowPath {
        self.states.last().expect("flow line has states")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "s,mu,sigma,action,gradient_norm,energy")?;
        for st in &self.states {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                st.s, st.mu, st.sigma, st.action, st.gradient_norm, st.energy_so_far
            )?;
        }
        Ok(())
    }
}

/// Metric gradient of the discrete action, as a tangent path `(w_hat, sigma_hat)`.
/// Boundary components lie in the Lagrangian tangent planes.
pub fn discrete_gradient(sys: &SystemDescriptor, path: &DiscretePath, mu: f64) -> DiscretePath {
    let pc = PathCoordinates::new(sys, path.n_intervals());
    let g = pc.gradient(mu, &pc.to_reduced(path));
    let n = sys.n();
    let nn = path.n_intervals();
    let [l0, l1] = &sys.lagrangians;
    let mut nodes = Vec::with_capacity(nn + 1);
    nodes.push(l0.tangent_basis() * g.rows(0, n));
    for j in 1..nn {
        nodes.push(g.rows(n + 2 * n * (j - 1), 2 * n).into_owned());
    }
    nodes.push(l1.tangent_basis() * g.rows(n + 2 * n * (nn - 1), n));
    DiscretePath { nodes, sigma: g[pc.sigma_index()] }
}

pub fn discrete_action_mu_derivative(sys: &SystemDescriptor, mu: f64, path: &DiscretePath) -> f64 {
    let nn = path.n_intervals();
    let h = 1.0 / nn as f64;
    let sum: f64 = (0..nn)
        .map(|k| sys.dh_dmu(&((&path.nodes[k] + &path.nodes[k + 1]) * 0.5), mu))
        .sum();
    -path.sigma * h * sum
}

fn metric_norm(weights: &DVector<f64>, v: &DVector<f64>) -> f64 {
    v.component_mul(v).dot(weights).sqrt()
}

/// Pseudo-inverse solve for the symmetric Hessian; directions with
/// `|lambda| <= 1e-10 * max|lambda|` (the sawtooth symmetries) get no step.
fn neutral_free_solve(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let eig = SymmetricEigen::new(h.clone());
    let top = eig.eigenvalues.amax();
    if !top.is_finite() || top == 0.0 {
        return solve_linear(h, g);
    }
    let mut x = DVector::zeros(g.len());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > 1e-10 * top {
            let v = eig.eigenvectors.column(k);
            x.axpy(v.dot(g) / l, &v.into_owned(), 1.0);
        }
    }
    Ok(x)
}

/// Newton's method on `dA = 0` in reduced coordinates.
pub fn polish_critical_point(
    pc: &PathCoordinates,
    mu: f64,
    z0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let mut z = z0.clone();
    let mut gn = pc.gradient_norm(mu, &z);
    for _ in 0..max_iter {
        if gn < tol {
            return Ok(z);
        }
        let step = neutral_free_solve(&pc.hessian(mu, &z), &pc.partials(mu, &z))?;
        let mut lam = 1.0;
        loop {
            let trial = &z - &step * lam;
            let tn = pc.gradient_norm(mu, &trial);
            if tn < gn || lam < 1e-3 {
                z = trial;
                gn = tn;
                break;
            }
            lam *= 0.5;
        }
        if !gn.is_finite() {
            return Err(ChordError::NonFinite("gradient during polish".into()));
        }
    }
    if gn < tol {
        Ok(z)
    } else {
        Err(ChordError::NoConvergence { iterations: max_iter, residual: gn })
    }
}

/// Boundary projectors at a nondegenerate critical point: rows of
/// `V_+^T G^{1/2}` (left end) and `V_-^T G^{1/2}` (right end).
///
/// Zero modes are accepted only when they are exact symmetries of the discrete
/// action (the sawtooth `(-1)^j a` with `a` tangent to both planes leaves every
/// midpoint fixed). The flow conserves them, so they are pinned at the left end.
struct EndConditions {
    left: DMatrix<f64>,
    right: DMatrix<f64>,
    min_abs_eigenvalue: f64,
    /// Symmetry directions, `G`-orthonormal.
    gauge: Vec<DVector<f64>>,
}

fn is_symmetry(pc: &PathCoordinates, mu: f64, zstar: &DVector<f64>, v: &DVector<f64>) -> bool {
    let probe = DVector::from_fn(zstar.len(), |i, _| 1e-2 * ((i + 1) as f64).sin());
    [zstar.clone(), zstar + probe].iter().all(|z| {
        let p = pc.partials(mu, z);
        p.dot(v).abs() <= 1e-9 * (p.norm() * v.norm()).max(1e-300)
    })
}

fn end_conditions(pc: &PathCoordinates, mu: f64, zstar: &DVector<f64>) -> Result<EndConditions> {
    let w = pc.metric_weights();
    let isq = w.map(|x| 1.0 / x.sqrt());
    let hess = pc.hessian(mu, zstar);
    let scaled = DMatrix::from_fn(hess.nrows(), hess.ncols(), |i, j| isq[i] * hess[(i, j)] * isq[j]);
    let eig = SymmetricEigen::new(scaled);
    let top = eig.eigenvalues.amax();
    let zero = 1e-10 * top.max(1.0);
    let mut neutral = Vec::new();
    let mut gauge = Vec::new();
    for k in 0..eig.eigenvalues.len() {
        if eig.eigenvalues[k].abs() <= zero {
            let v = eig.eigenvectors.column(k).component_mul(&isq);
            if !is_symmetry(pc, mu, zstar, &v) {
                return Err(ChordError::SeedDegenerate(eig.eigenvalues[k].abs()));
            }
            neutral.push(k);
            gauge.push(v);
        }
    }
    let min_abs = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(k, _)| !neutral.contains(k))
        .fold(f64::INFINITY, |a, (_, v)| a.min(v.abs()));
    let sq = w.map(f64::sqrt);
    let pick = |positive: bool| {
        let cols: Vec<usize> = (0..eig.eigenvalues.len())
            .filter(|&k| {
                if neutral.contains(&k) {
                    positive
                } else {
                    (eig.eigenvalues[k] > 0.0) == positive
                }
            })
            .collect();
        DMatrix::from_fn(cols.len(), w.len(), |r, i| eig.eigenvectors[(i, cols[r])] * sq[i])
    };
    Ok(EndConditions { left: pick(true), right: pick(false), min_abs_eigenvalue: min_abs, gauge })
}

struct Grid {
    s: Vec<f64>,
    mu: Vec<f64>,
    ds: f64,
}

impl Grid {
    fn new(schedule: &FlowSchedule, half: f64, ds: f64) -> Self {
        let m = ((2.0 * half / ds).ceil() as usize).max(2);
        let ds = 2.0 * half / m as f64;
        let s: Vec<f64> = (0..=m).map(|j| -half + ds * j as f64).collect();
        let mu = s.iter().map(|&x| schedule.mu(x)).collect();
        Grid { s, mu, ds }
    }
}

fn bvp_residual(pc: &PathCoordinates, grid: &Grid, ends: &EndConditions, zstar: &DVector<f64>, z: &[DVector<f64>]) -> DVector<f64> {
    let d = pc.dim();
    let m = grid.s.len() - 1;
    let grads: Vec<DVector<f64>> = z.par_iter().zip(&grid.mu).map(|(zj, &mu)| pc.gradient(mu, zj)).collect();
    let kp = ends.left.nrows();
    let mut r = DVector::zeros((m + 1) * d);
    r.rows_mut(0, kp).copy_from(&(&ends.left * (&z[0] - zstar)));
    for j in 0..m {
        let row = &z[j + 1] - &z[j] + (&grads[j] + &grads[j + 1]) * (0.5 * grid.ds);
        r.rows_mut(kp + j * d, d).copy_from(&row);
    }
    r.rows_mut(kp + m * d, ends.right.nrows()).copy_from(&(&ends.right * (&z[m] - zstar)));
    r
}

fn bvp_jacobian(pc: &PathCoordinates, grid: &Grid, ends: &EndConditions, z: &[DVector<f64>]) -> BandMatrix {
    let d = pc.dim();
    let m = grid.s.len() - 1;
    let kp = ends.left.nrows();
    let w = pc.metric_weights();
    let blocks: Vec<DMatrix<f64>> = z
        .par_iter()
        .zip(&grid.mu)
        .map(|(zj, &mu)| {
            let mut hs = pc.hessian(mu, zj);
            for i in 0..d {
                let f = 0.5 * grid.ds / w[i];
                hs.row_mut(i).scale_mut(f);
            }
            hs
        })
        .collect();
    let kl = kp + d - 1;
    let ku = (2 * d - 1 - kp).max(d - 1);
    let mut jac = BandMatrix::zeros((m + 1) * d, kl, ku);
    for r in 0..kp {
        for c in 0..d {
            jac.add(r, c, ends.left[(r, c)]);
        }
    }
    for j in 0..m {
        let r0 = kp + j * d;
        for i in 0..d {
            for c in 0..d {
                let a = blocks[j][(i, c)];
                let b = blocks[j + 1][(i, c)];
                if a != 0.0 {
                    jac.add(r0 + i, j * d + c, a);
                }
                if b != 0.0 {
                    jac.add(r0 + i, (j + 1) * d + c, b);
                }
            }
            jac.add(r0 + i, j * d + i, -1.0);
            jac.add(r0 + i, (j + 1) * d + i, 1.0);
        }
    }
    let r0 = kp + m * d;
    for r in 0..ends.right.nrows() {
        for c in 0..d {
            jac.add(r0 + r, m * d + c, ends.right[(r, c)]);
        }
    }
    jac
}

fn check_states(pc: &PathCoordinates, z: &[DVector<f64>], floor: f64) -> Result<()> {
    let si = pc.sigma_index();
    for zj in z {
        if zj.iter().any(|v| !v.is_finite()) {
            return Err(ChordError::Divergence("non-finite path state".into()));
        }
        if zj[si] < floor {
            return Err(ChordError::SigmaFloor { sigma: zj[si], floor });
        }
    }
    Ok(())
}

/// Damped Newton on the box scheme. Returns the states and the iteration count.
fn solve_bvp(
    pc: &PathCoordinates,
    grid: &Grid,
    ends: &EndConditions,
    zstar: &DVector<f64>,
    mut z: Vec<DVector<f64>>,
    opts: &GradientFlowOptions,
) -> Result<(Vec<DVector<f64>>, usize)> {
    let d = pc.dim();
    let mut r = bvp_residual(pc, grid, ends, zstar, &z);
    let mut rn = r.amax();
    for it in 0..opts.max_newton {
        if rn < opts.tol {
            return Ok((z, it));
        }
        let jac = bvp_jacobian(pc, grid, ends, &z);
        let step = jac.solve(r.as_slice())?;
        let mut lam = 1.0;
        loop {
            let trial: Vec<DVector<f64>> =
                z.iter().enumerate().map(|(j, zj)| zj - DVector::from_column_slice(&step[j * d..(j + 1) * d]) * lam).collect();
            let ok = check_states(pc, &trial, opts.sigma_floor);
            if ok.is_ok() {
                let tr = bvp_residual(pc, grid, ends, zstar, &trial);
                let tn = tr.amax();
                if tn < rn || lam < 1.0 / 256.0 {
                    z = trial;
                    r = tr;
                    rn = tn;
                    break;
                }
            } else if lam < 1.0 / 256.0 {
                return Err(ok.unwrap_err());
            }
            lam *= 0.5;
        }
        if !rn.is_finite() {
            return Err(ChordError::Divergence("flow-line residual blew up".into()));
        }
    }
    if rn < opts.tol {
        Ok((z, opts.max_newton))
    } else {
        Err(ChordError::NoConvergence { iterations: opts.max_newton, residual: rn })
    }
}

/// Seed critical point and the data shared by all flow lines from it.
pub struct FlowSetup<'a> {
    pc: PathCoordinates<'a>,
    mu0: f64,
    zstar: DVector<f64>,
    ends: EndConditions,
}

impl<'a> FlowSetup<'a> {
    /// Resamples `y0` to `opts.n_intervals` if needed and polishes it to a
    /// critical point of the discrete action at `mu0`.
    pub fn new(sys: &'a SystemDescriptor, mu0: f64, y0: &DiscretePath, opts: &GradientFlowOptions) -> Result<Self> {
        sys.check_mu(mu0)?;
        let pc = PathCoordinates::new(sys, opts.n_intervals);
        let y0 = resample(y0, opts.n_intervals);
        let z0 = pc.to_reduced(&y0);
        let mut zstar = polish_critical_point(&pc, mu0, &z0, opts.polish_tol, 50)?;
        check_states(&pc, std::slice::from_ref(&zstar), opts.sigma_floor)?;
        let ends = end_conditions(&pc, mu0, &zstar)?;
        if !ends.gauge.is_empty() {
            // representative without symmetry content; the Hessian is unchanged
            let w = pc.metric_weights();
            for v in &ends.gauge {
                let c = v.component_mul(&w).dot(&zstar);
                zstar.axpy(-c, v, 1.0);
            }
            zstar = polish_critical_point(&pc, mu0, &zstar, opts.polish_tol, 50)?;
        }
        Ok(FlowSetup { pc, mu0, zstar, ends })
    }

    pub fn seed(&self) -> DiscretePath {
        self.pc.from_reduced(&self.zstar)
    }

    /// Smallest `|eigenvalue|` of the metric Hessian at the seed: the slowest
    /// exponential rate at which flow lines settle.
    pub fn spectral_gap(&self) -> f64 {
        self.ends.min_abs_eigenvalue
    }

    /// Number of zero modes of the seed Hessian that are symmetries of the action.
    pub fn neutral_modes(&self) -> usize {
        self.ends.gauge.len()
    }

    fn half_width(&self, schedule: &FlowSchedule, opts: &GradientFlowOptions) -> f64 {
        let tail = opts.tail.max(opts.decay_lengths / self.ends.min_abs_eigenvalue).min(opts.max_tail);
        schedule.profile.support() + tail
    }

    fn grid(&self, schedule: &FlowSchedule, opts: &GradientFlowOptions) -> Grid {
        Grid::new(schedule, self.half_width(schedule, opts), opts.ds)
    }

    fn check_schedule(&self, schedule: &FlowSchedule) -> Result<()> {
        if schedule.mu0 != self.mu0 {
            return Err(ChordError::InvalidParameter("schedule mu0 differs from the seed parameter".into()));
        }
        self.pc.sys.check_mu(schedule.mu1)
    }

    /// Flow line for `schedule` starting Newton from `init` (constant seed if `None`).
    pub fn solve(
        &self,
        schedule: &FlowSchedule,
        init: Option<&[DVector<f64>]>,
        opts: &GradientFlowOptions,
    ) -> Result<FlowLine> {
        self.check_schedule(schedule)?;
        let grid = self.grid(schedule, opts);
        let z0 = match init {
            Some(z) if z.len() == grid.s.len() => z.to_vec(),
            _ => vec![self.zstar.clone(); grid.s.len()],
        };
        let (z, iters) = solve_bvp(&self.pc, &grid, &self.ends, &self.zstar, z0, opts)?;
        Ok(self.assemble(schedule, &grid, &z, iters))
    }

    fn assemble(&self, schedule: &FlowSchedule, grid: &Grid, z: &[DVector<f64>], iters: usize) -> FlowLine {
        let pc = &self.pc;
        let sys = pc.sys;
        let w = pc.metric_weights();
        let mut states = Vec::with_capacity(z.len());
        let mut energy = 0.0;
        let mut source = 0.0;
        let mut max_distance: f64 = 0.0;
        let mut kappa: f64 = 0.0;
        let mut c: f64 = 0.0;
        let mut prev_src = 0.0;
        for (j, zj) in z.iter().enumerate() {
            let mu = grid.mu[j];
            let path = pc.from_reduced(zj);
            if j > 0 {
                let dz = zj - &z[j - 1];
                energy += dz.component_mul(&dz).dot(&w) / grid.ds;
            }
            let src = schedule.mu_prime(grid.s[j]) * discrete_action_mu_derivative(sys, mu, &path);
            if j > 0 {
                source += 0.5 * grid.ds * (src + prev_src);
            }
            prev_src = src;
            max_distance = max_distance.max(metric_norm(&w, &(zj - &self.zstar)));
            kappa = kappa.max(path.sigma);
            for k in 0..path.n_intervals() {
                let m = (&path.nodes[k] + &path.nodes[k + 1]) * 0.5;
                c = c.max(sys.dh_dmu(&m, mu).abs());
            }
            states.push(FlowPath {
                s: grid.s[j],
                mu,
                action: discrete_action(sys, mu, &path),
                gradient_norm: pc.gradient_norm(mu, zj),
                energy_so_far: energy,
                sigma: path.sigma,
                w: path.nodes,
            });
        }
        let action_drop = states[0].action - states[states.len() - 1].action;
        FlowLine {
            schedule: *schedule,
            seed: self.seed(),
            states,
            energy,
            action_drop,
            source,
            newton_iterations: iters,
            max_distance,
            kappa_used: kappa,
            c_used: c,
        }
    }

    /// Reaches `schedule` through the amplitudes `theta (mu1 - mu0)`, warm
    /// starting each solve. Returns the last line reached and its amplitude.
    pub fn continue_amplitude(
        &self,
        schedule: &FlowSchedule,
        opts: &GradientFlowOptions,
    ) -> Result<(FlowLine, f64)> {
        self.check_schedule(schedule)?;
        let at = |theta: f64| FlowSchedule { mu1: self.mu0 + theta * (schedule.mu1 - self.mu0), ..*schedule };
        let mut line = self.solve(&at(0.0), None, opts)?;
        let mut theta = 0.0;
        let mut dtheta: f64 = 1.0;
        while theta < 1.0 {
            let next = (theta + dtheta).min(1.0);
            let z: Vec<DVector<f64>> = line.states.iter().map(|st| self.pc.to_reduced(&st.path())).collect();
            match self.solve(&at(next), Some(&z), opts) {
                Ok(l) if l.max_distance <= 10.0 * opts.rho.max(1.0) => {
                    line = l;
                    theta = next;
                    dtheta = (dtheta * 2.0).min(1.0);
                }
                Ok(_) | Err(_) if dtheta > 1.0 / 256.0 => dtheta *= 0.5,
                Ok(_) => break,
                Err(e) if theta == 0.0 => return Err(e),
                Err(_) => break,
            }
        }
        line.schedule = *schedule;
        Ok((line, theta))
    }
}

/// Linear resampling of a discrete path to `n` intervals.
pub fn resample(path: &DiscretePath, n: usize) -> DiscretePath {
    let m = path.n_intervals();
    if m == n {
        return path.clone();
    }
    let nodes = (0..=n)
        .map(|j| {
            let t = j as f64 / n as f64 * m as f64;
            let k = (t.floor() as usize).min(m - 1);
            let f = t - k as f64;
            &path.nodes[k] * (1.0 - f) + &path.nodes[k + 1] * f
        })
        .collect();
    DiscretePath { nodes, sigma: path.sigma }
}

/// Flow line of the schedule, doubly asymptotic to the critical point nearest `y0`.
pub fn flow(
    sys: &SystemDescriptor,
    y0: &DiscretePath,
    schedule: &FlowSchedule,
    opts: &GradientFlowOptions,
) -> Result<FlowLine> {
    if schedule.mu1 < schedule.mu0 {
        return Err(ChordError::InvalidParameter("flow schedule needs mu0 <= mu1".into()));
    }
    let setup = FlowSetup::new(sys, schedule.mu0, y0, opts)?;
    if schedule.mu1 == schedule.mu0 {
        // start Newton from the unpolished path to exercise the attraction
        let pc = &setup.pc;
        let grid = setup.grid(schedule, opts);
        let z0 = pc.to_reduced(&resample(y0, opts.n_intervals));
        let (z, iters) = solve_bvp(pc, &grid, &setup.ends, &setup.zstar, vec![z0; grid.s.len()], opts)?;
        return Ok(setup.assemble(schedule, &grid, &z, iters));
    }
    let (line, theta) = setup.continue_amplitude(schedule, opts)?;
    if theta < 1.0 {
        return Err(ChordError::Divergence(format!(
            "flow lines stop existing near the ball at amplitude {theta:.4}"
        )));
    }
    Ok(line)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescentOptions {
    pub ds: f64,
    pub s_max: f64,
    pub tol: f64,
    pub max_steps: usize,
    pub sigma_floor: f64,
    pub blow_up: f64,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions { ds: 1e-3, s_max: 50.0, tol: 1e-8, max_steps: 200_000, sigma_floor: 1e-4, blow_up: 1e6 }
    }
}

/// Forward Euler steps `z <- z - ds grad A(z, s)`, halving `ds` whenever the
/// action would increase while `beta` is locally constant.
pub fn explicit_descent(
    sys: &SystemDescriptor,
    y0: &DiscretePath,
    schedule: &FlowSchedule,
    opts: &DescentOptions,
) -> Result<Vec<FlowPath>> {
    let pc = PathCoordinates::new(sys, y0.n_intervals());
    let w = pc.metric_weights();
    let mut z = pc.to_reduced(y0);
    let mut s = -schedule.profile.support();
    let mut ds = opts.ds;
    let mut energy = 0.0;
    let record = |z: &DVector<f64>, s: f64, energy: f64| {
        let mu = schedule.mu(s);
        let path = pc.from_reduced(z);
        FlowPath {
            s,
            mu,
            action: discrete_action(sys, mu, &path),
            gradient_norm: pc.gradient_norm(mu, z),
            energy_so_far: energy,
            sigma: path.sigma,
            w: path.nodes,
        }
    };
    let mut out = vec![record(&z, s, energy)];
    for _ in 0..opts.max_steps {
        let mu = schedule.mu(s);
        let g = pc.gradient(mu, &z);
        if metric_norm(&w, &g) < opts.tol || s > opts.s_max {
            break;
        }
        let constant = schedule.mu_prime(s) == 0.0 && schedule.mu_prime(s + ds) == 0.0;
        let a0 = out.last().map(|p| p.action).unwrap_or(0.0);
        let mut step = ds;
        let next = loop {
            let trial = &z - &g * step;
            if !constant {
                break trial;
            }
            let a1 = discrete_action(sys, mu, &pc.from_reduced(&trial));
            if a1 <= a0 || step < 1e-14 {
                break trial;
            }
            step *= 0.5;
        };
        ds = (step * 1.25).min(opts.ds);
        let dz = &next - &z;
        energy += dz.component_mul(&dz).dot(&w) / step;
        z = next;
        s += step;
        if z.iter().any(|v| !v.is_finite()) || z.amax() > opts.blow_up {
            return Err(ChordError::Divergence(format!("path norm exceeded {:e} at s = {s:.3}", opts.blow_up)));
        }
        let sigma = z[pc.sigma_index()];
        if sigma < opts.sigma_floor {
            return Err(ChordError::SigmaFloor { sigma, floor: opts.sigma_floor });
        }
        out.push(record(&z, s, energy));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StretchOutcome {
    /// Plateau state is a critical point of the target functional.
    Approached,
    /// Flow line exists inside the ball but the plateau gradient stays away from 0.
    Parked,
    /// Flow line exists but leaves the ball.
    Escaped,
    /// No flow line was reached at the full amplitude.
    NotReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StretchRecord {
    pub r: f64,
    pub amplitude_reached: f64,
    pub outcome: StretchOutcome,
    pub plateau_gradient_norm: f64,
    pub plateau_distance: f64,
    pub max_distance: f64,
    pub energy: f64,
    pub energy_bound: f64,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StretchReport {
    pub mu0: f64,
    pub mu1: f64,
    pub seed_sigma: f64,
    pub records: Vec<StretchRecord>,
}

/// Flow lines of the `beta_R` homotopy from the `mu0` chord, one per `R`.
pub fn stretching_experiment(
    sys: &SystemDescriptor,
    seed: &Chord,
    mu1: f64,
    r_list: &[f64],
    opts: &GradientFlowOptions,
) -> Result<StretchReport> {
    let mu0 = seed.mu;
    if !(mu1 > mu0) {
        return Err(ChordError::InvalidParameter("stretching needs mu1 > mu0".into()));
    }
    sys.check_mu(mu1)?;
    let setup = FlowSetup::new(sys, mu0, &DiscretePath::from_chord(seed), opts)?;
    let records = r_list
        .par_iter()
        .map(|&r| -> Result<StretchRecord> {
            let schedule = FlowSchedule::new(mu0, mu1, CutoffProfile::beta_r(r)?);
            let (line, theta) = setup.continue_amplitude(&schedule, opts)?;
            Ok(stretch_record(&setup, &line, r, theta, opts))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StretchReport { mu0, mu1, seed_sigma: setup.seed().sigma, records })
}

fn stretch_record(setup: &FlowSetup, line: &FlowLine, r: f64, theta: f64, opts: &GradientFlowOptions) -> StretchRecord {
    let w = setup.pc.metric_weights();
    let plateau = line.schedule.profile.plateau().unwrap_or(0.0);
    let mid = line
        .states
        .iter()
        .min_by(|a, b| a.s.abs().total_cmp(&b.s.abs()))
        .expect("non-empty flow line");
    let plateau_gradient_norm = line
        .states
        .iter()
        .filter(|st| st.s.abs() <= plateau + 1e-12)
        .map(|st| st.gradient_norm)
        .fold(mid.gradient_norm, f64::min);
    let plateau_distance = metric_norm(&w, &(setup.pc.to_reduced(&mid.path()) - &setup.zstar));
    let outcome = if theta < 1.0 {
        StretchOutcome::NotReached
    } else if line.max_distance > opts.rho {
        StretchOutcome::Escaped
    } else if plateau_gradient_norm < opts.approach_tol {
        StretchOutcome::Approached
    } else {
        StretchOutcome::Parked
    };
    StretchRecord {
        r,
        amplitude_reached: theta,
        outcome,
        plateau_gradient_norm,
        plateau_distance,
        max_distance: line.max_distance,
        energy: line.energy,
        energy_bound: line.energy_bound(),
        newton_iterations: line.newton_iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chord::{shoot, ChordGuess, ShootOptions};
    use crate::systems::{builtin_system, BuiltinName, BuiltinParams};

    fn harmonic_shift_chord(mu: f64) -> (SystemDescriptor, Chord) {
        let sys = builtin_system(BuiltinName::HarmonicShift, &BuiltinParams::default()).unwrap();
        let r = (1.0 + 2.0 * mu).sqrt();
        let chord = shoot(&sys, mu, &ChordGuess::new(&[r], std::f64::consts::FRAC_PI_2), &ShootOptions::default()).unwrap();
        (sys, chord)
    }

    #[test]
    fn cutoff_shapes() {
        let b = CutoffProfile::beta_r(3.0).unwrap();
        assert_eq!(b.beta(0.0), 1.0);
        assert_eq!(b.beta(3.0), 1.0);
        assert_eq!(b.beta(5.0), 0.0);
        assert!((b.beta(4.0) - 0.5).abs() < 1e-15);
        assert_eq!(b.support(), 5.0);
        assert_eq!(b.plateau(), Some(3.0));
        let half = CutoffProfile::beta_r(0.5).unwrap();
        assert!((half.beta(0.0) - 0.5).abs() < 1e-15);
        assert_eq!(half.plateau(), None);
        assert_eq!(CutoffProfile::beta_r(0.0).unwrap().beta(0.3), 0.0);
        // R = 1 branches agree
        let lo = CutoffProfile::BetaR { r: 1.0 - 1e-12 };
        let hi = CutoffProfile::BetaR { r: 1.0 };
        for s in [-2.5, -1.0, 0.0, 0.7, 2.2] {
            assert!((lo.beta(s) - hi.beta(s)).abs() < 1e-11);
        }
        let f = CutoffProfile::fixed_beta(2.5).unwrap();
        for k in -40..=40 {
            let s = k as f64 * 0.1;
            let v = f.beta(s);
            assert!((0.0..=1.0).contains(&v));
            if s.abs() >= 2.5 {
                assert_eq!(v, 0.0);
            }
            let fd = (f.beta(s + 1e-6) - f.beta(s - 1e-6)) / 2e-6;
            if s.abs() > 1e-3 {
                assert!((fd - f.beta_prime(s)).abs() < 1e-6, "s = {s}");
            }
        }
        assert!(CutoffProfile::beta_r(-1.0).is_err());
    }

    #[test]
    fn gradient_at_constant_origin_path() {
        let sys = builtin_system(BuiltinName::Harmonic, &BuiltinParams::default()).unwrap();
        let path = DiscretePath { nodes: vec![DVector::zeros(2); 9], sigma: 1.0 };
        let g = discrete_gradient(&sys, &path, 0.0);
        assert!((g.sigma - 0.5).abs() < 1e-15);
        assert!(g.nodes.iter().all(|v| v.amax() < 1e-15));
    }

    #[test]
    fn flow_returns_to_perturbed_chord() {
        let (sys, chord) = harmonic_shift_chord(0.1);
        let mut y0 = resample(&DiscretePath::from_chord(&chord), 16);
        for (k, v) in y0.nodes.iter_mut().enumerate() {
            let e = 1e-2 * ((k as f64) * 0.7).sin();
            if k == 0 {
                v[0] += e;
            } else if k == 16 {
                v[1] += e;
            } else {
                v[0] += e;
                v[1] -= e;
            }
        }
        y0.sigma += 1e-2;
        let opts = GradientFlowOptions::default();
        let line = flow(&sys, &y0, &FlowSchedule::constant(0.1), &opts).unwrap();
        let last = line.final_state();
        assert!(last.gradient_norm < 1e-8, "{}", last.gradient_norm);
        assert!((last.sigma - std::f64::consts::FRAC_PI_2).abs() < 1e-2);
        assert!(line.energy < 1e-14, "{}", line.energy);
    }

    #[test]
    fn flow_lines_satisfy_energy_identity_and_bound() {
        let (sys, chord) = harmonic_shift_chord(0.0);
        let opts = GradientFlowOptions::default();
        let sched = FlowSchedule::new(0.0, 0.05, CutoffProfile::beta_r(1.5).unwrap());
        let line = flow(&sys, &DiscretePath::from_chord(&chord), &sched, &opts).unwrap();
        assert!(line.energy > 0.0);
        assert!(line.energy_identity_error() < 0.05, "{}", line.energy_identity_error());
        assert!(line.energy <= line.energy_bound());
        // both ends rest on the seed
        assert!(line.states[0].gradient_norm < 1e-4);
        assert!(line.final_state().gradient_norm < 1e-4);
        // action is non-increasing where the functional is frozen
        for pair in line.states.windows(2) {
            if sched.mu_prime(pair[0].s) == 0.0 && sched.mu_prime(pair[1].s) == 0.0 {
                assert!(pair[1].action <= pair[0].action + 1e-12);
            }
        }
        let mut csv = Vec::new();
        line.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), line.states.len() + 1);
    }

    #[test]
    fn stretching_reaches_continued_chord() {
        let (sys, chord) = harmonic_shift_chord(0.0);
        let opts = GradientFlowOptions::default();
        let report = stretching_experiment(&sys, &chord, 0.05, &[0.0, 12.0], &opts).unwrap();
        let r0 = &report.records[0];
        assert_eq!(r0.outcome, StretchOutcome::Approached);
        assert!(r0.plateau_distance < 1e-10 && r0.energy < 1e-20);
        let r12 = &report.records[1];
        assert_eq!(r12.outcome, StretchOutcome::Approached, "{r12:?}");
        assert!(r12.plateau_gradient_norm < 1e-6);
        // sigma of the quarter turn does not change with mu; the radius does
        assert!(r12.plateau_distance > 1e-3);
    }

    #[test]
    fn sawtooth_symmetry_is_pinned_not_rejected() {
        // both boundary planes are momentum fibers, so TL0 and TL1 share the p-plane
        let sys = builtin_system(BuiltinName::SyntheticFold, &BuiltinParams::default()).unwrap();
        let so = ShootOptions { samples: 64, ..Default::default() };
        let seed = shoot(&sys, 0.3, &ChordGuess::new(&[0.72139, 0.69311], 1.38621), &so).unwrap();
        let opts = GradientFlowOptions { n_intervals: 12, ..Default::default() };
        let setup = FlowSetup::new(&sys, 0.3, &DiscretePath::from_chord(&seed), &opts).unwrap();
        assert_eq!(setup.neutral_modes(), 2);
        assert!(setup.spectral_gap() > 1e-3);
        let line = flow(&sys, &DiscretePath::from_chord(&seed), &FlowSchedule::new(0.3, 0.32, CutoffProfile::beta_r(2.0).unwrap()), &opts).unwrap();
        assert!(line.energy <= line.energy_bound());
        assert!(line.energy_identity_error() < 0.05);
    }

    #[test]
    fn explicit_descent_is_monotone_but_leaves_the_chord() {
        let (sys, chord) = harmonic_shift_chord(0.0);
        let mut y0 = resample(&DiscretePath::from_chord(&chord), 16);
        y0.sigma += 1e-3;
        let opts = DescentOptions { s_max: 20.0, ..Default::default() };
        let out = explicit_descent(&sys, &y0, &FlowSchedule::constant(0.0), &opts);
        if let Ok(states) = &out {
            for p in states.windows(2) {
                assert!(p[1].action <= p[0].action + 1e-12);
            }
            assert!(states.last().unwrap().gradient_norm > states[0].gradient_norm);
        }
    }
}
