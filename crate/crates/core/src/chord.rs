//! Chords by Newton shooting on the Lagrangian coordinates and the period,
//! plus the transversality (nondegeneracy) test.
//!
//! Unknowns are `(u, tau)` with the start point `x(u) = base_0 + B_0 u` on `L_0`;
//! equations are `F(u, tau) = (N_1^T (phi^tau(x(u)) - base_1), H(x(u)))`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ChordError, Result};
use crate::flow::{integrate, integrate_with_variational, FlowOptions};
use crate::phase::{omega, AffineLagrangian, PhaseState, SystemDescriptor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub tau_floor: f64,
    /// Number of sample intervals `N` of the returned chord.
    pub samples: usize,
    pub degeneracy_threshold: f64,
    pub flow: FlowOptions,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions {
            tol: 1e-10,
            max_iter: 50,
            tau_floor: 1e-4,
            samples: 256,
            degeneracy_threshold: 1e-6,
            flow: FlowOptions::default(),
        }
    }
}

/// Initial guess: Lagrangian coordinates on `L_0` and a period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordGuess {
    pub u: Vec<f64>,
    pub tau: f64,
}

impl ChordGuess {
    pub fn new(u: &[f64], tau: f64) -> Self {
        ChordGuess { u: u.to_vec(), tau }
    }
}

/// A discretized chord `(v, tau)` at parameter `mu`; `samples[k] = v(k/N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chord {
    pub mu: f64,
    pub tau: f64,
    /// Lagrangian coordinates of `v(0)` on `L_0`.
    pub start: DVector<f64>,
    pub samples: Vec<PhaseState>,
    /// `v((k + 1/2)/N)`, on the curve.
    pub midpoints: Vec<PhaseState>,
    pub residual_norm: f64,
    pub boundary_gap: f64,
    pub iterations: usize,
}

impl Chord {
    pub fn n_intervals(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn start_state(&self) -> &PhaseState {
        &self.samples[0]
    }

    pub fn end_state(&self) -> &PhaseState {
        self.samples.last().expect("chords hold at least two samples")
    }

    pub fn guess(&self) -> ChordGuess {
        ChordGuess { u: self.start.iter().copied().collect(), tau: self.tau }
    }
}

/// Smallest singular value of the transversality matrix and the shooting
/// Jacobian determinant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NondegReport {
    pub sigma_min: f64,
    pub shooting_jac_det: f64,
    pub degenerate: bool,
}

/// Residual and derivatives of the shooting map at `(u, tau; mu)`.
#[derive(Debug, Clone)]
pub struct ShootingEval {
    pub residual: DVector<f64>,
    /// `dF/d(u, tau)`, `(n+1) x (n+1)`.
    pub jacobian: DMatrix<f64>,
    /// `dF/dmu`.
    pub mu_column: DVector<f64>,
    pub start: DVector<f64>,
    pub end: DVector<f64>,
    pub monodromy: DMatrix<f64>,
}

pub fn evaluate_shooting(
    sys: &SystemDescriptor,
    mu: f64,
    u: &DVector<f64>,
    tau: f64,
    flow: &FlowOptions,
) -> Result<ShootingEval> {
    let n = sys.n();
    let [l0, l1] = &sys.lagrangians;
    let x0 = l0.point(u);
    let start = PhaseState::from_vector(x0.clone())?;
    let fr = integrate_with_variational(sys, &start, mu, tau, flow, &[])?;
    let x1 = fr.final_state().as_vector().clone();
    let m = fr.monodromy.expect("variational flow returns the monodromy");
    let s = fr.mu_sensitivity.expect("variational flow returns the mu sensitivity");
    let nrm = l1.normal_frame();

    let mut residual = DVector::zeros(n + 1);
    residual.rows_mut(0, n).copy_from(&l1.signed_distances(&x1));
    residual[n] = sys.h(&x0, mu);

    let mut jac = DMatrix::zeros(n + 1, n + 1);
    let b0 = l0.tangent_basis();
    jac.view_mut((0, 0), (n, n)).copy_from(&(nrm.transpose() * &m * b0));
    jac.view_mut((0, n), (n, 1)).copy_from(&(nrm.transpose() * sys.x_h(&x1, mu)));
    let g0 = sys.grad_h(&x0, mu);
    jac.view_mut((n, 0), (1, n)).copy_from(&(g0.transpose() * b0));

    let mut mu_column = DVector::zeros(n + 1);
    mu_column.rows_mut(0, n).copy_from(&(nrm.transpose() * s));
    mu_column[n] = sys.dh_dmu(&x0, mu);

    Ok(ShootingEval { residual, jacobian: jac, mu_column, start: x0, end: x1, monodromy: m })
}

/// Solves `A x = b`, falling back to a least-squares solve when `A` is singular.
pub(crate) fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(x) = a.clone().lu().solve(b) {
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let svd = a.clone().svd(true, true);
    let eps = 1e-14 * svd.singular_values.max();
    svd.solve(b, eps).map_err(|e| ChordError::Singular(e.to_string()))
}

/// Newton iteration on the shooting map at fixed `mu`. Returns the converged
/// `(u, tau)`, iteration count and the final evaluation.
pub fn newton_shoot(
    sys: &SystemDescriptor,
    mu: f64,
    guess: &ChordGuess,
    opts: &ShootOptions,
) -> Result<(DVector<f64>, f64, usize, ShootingEval)> {
    let n = sys.n();
    if guess.u.len() != n {
        return Err(ChordError::InvalidParameter(format!(
            "guess has {} Lagrangian coordinates, system needs {n}",
            guess.u.len()
        )));
    }
    if !(guess.tau > opts.tau_floor) {
        return Err(ChordError::TauCollapsed { tau: guess.tau, floor: opts.tau_floor });
    }
    let mut u = DVector::from_column_slice(&guess.u);
    let mut tau = guess.tau;
    let mut ev = evaluate_shooting(sys, mu, &u, tau, &opts.flow)?;
    let mut fnorm = ev.residual.amax();
    for it in 0..opts.max_iter {
        if fnorm < opts.tol {
            return Ok((u, tau, it, ev));
        }
        let step = solve_linear(&ev.jacobian, &(-&ev.residual))?;
        let mut lambda = 1.0;
        let mut accepted = None;
        let mut last_err = None;
        for _ in 0..12 {
            let u_try = &u + lambda * step.rows(0, n);
            let tau_try = tau + lambda * step[n];
            if tau_try <= opts.tau_floor {
                last_err = Some(ChordError::TauCollapsed { tau: tau_try, floor: opts.tau_floor });
                lambda *= 0.5;
                continue;
            }
            match evaluate_shooting(sys, mu, &u_try, tau_try, &opts.flow) {
                Ok(e) => {
                    let nn = e.residual.amax();
                    if nn.is_finite() && (nn < fnorm || lambda < 1.0 / 1024.0) {
                        accepted = Some((u_try, tau_try, e, nn));
                        break;
                    }
                }
                Err(e) => last_err = Some(e),
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((u_new, tau_new, e, nn)) => {
                u = u_new;
                tau = tau_new;
                ev = e;
                fnorm = nn;
            }
            None => {
                return Err(last_err
                    .unwrap_or(ChordError::NoConvergence { iterations: it + 1, residual: fnorm }));
            }
        }
    }
    if fnorm < opts.tol {
        return Ok((u, tau, opts.max_iter, ev));
    }
    Err(ChordError::NoConvergence { iterations: opts.max_iter, residual: fnorm })
}

/// Resamples the chord through `(u, tau)` on the uniform grid `t = k/N`.
pub fn sample_chord(
    sys: &SystemDescriptor,
    mu: f64,
    u: &DVector<f64>,
    tau: f64,
    opts: &ShootOptions,
) -> Result<Chord> {
    let n_int = opts.samples.max(1);
    let [l0, l1] = &sys.lagrangians;
    let x0 = PhaseState::from_vector(l0.point(u))?;
    let times: Vec<f64> =
        (1..2 * n_int).map(|k| tau * k as f64 / (2 * n_int) as f64).collect();
    let fr = integrate(sys, &x0, mu, tau, &opts.flow, &times)?;
    let mut samples = Vec::with_capacity(n_int + 1);
    let mut midpoints = Vec::with_capacity(n_int);
    for (k, (_, x)) in fr.states.into_iter().enumerate() {
        if k % 2 == 0 {
            samples.push(x);
        } else {
            midpoints.push(x);
        }
    }
    debug_assert_eq!(samples.len(), n_int + 1);
    let gap = l0.distance(&samples[0]).max(l1.distance(samples.last().unwrap()));
    let residual =
        l1.signed_distances(samples.last().unwrap()).amax().max(sys.h(&samples[0], mu).abs());
    Ok(Chord {
        mu,
        tau,
        start: u.clone(),
        samples,
        midpoints,
        residual_norm: residual,
        boundary_gap: gap,
        iterations: 0,
    })
}

/// Finds a chord from `L_0` to `L_1` on `Sigma_mu` near `guess`.
pub fn shoot(
    sys: &SystemDescriptor,
    mu: f64,
    guess: &ChordGuess,
    opts: &ShootOptions,
) -> Result<Chord> {
    sys.check_mu(mu)?;
    let (u, tau, iters, _) = newton_shoot(sys, mu, guess, opts)?;
    let mut chord = sample_chord(sys, mu, &u, tau, opts)?;
    chord.iterations = iters;
    Ok(chord)
}

/// Orthonormal basis of `T L ∩ ker dH(x)` (dimension `n - 1`).
pub fn reduced_tangent_basis(
    l: &AffineLagrangian,
    grad: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let b = l.tangent_basis();
    let n = b.ncols();
    let g = b.tr_mul(grad);
    let gn = g.norm();
    if !(gn > 1e-12 * grad.norm().max(1e-300)) || gn == 0.0 {
        return Err(ChordError::DimensionError);
    }
    let g = g / gn;
    let mut frame: Vec<DVector<f64>> = vec![g];
    for k in 0..n {
        if frame.len() == n {
            break;
        }
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        for _ in 0..2 {
            for f in &frame {
                let c = f.dot(&e);
                e.axpy(-c, f, 1.0);
            }
        }
        let en = e.norm();
        if en > 1e-8 {
            frame.push(e / en);
        }
    }
    if n == 1 {
        return Ok(DMatrix::zeros(b.nrows(), 0));
    }
    let k = DMatrix::from_columns(&frame[1..]);
    Ok(b * k)
}

/// Transversality test from the shooting evaluation at a converged chord.
pub fn nondegeneracy_from_eval(
    sys: &SystemDescriptor,
    mu: f64,
    ev: &ShootingEval,
    threshold: f64,
) -> Result<NondegReport> {
    let n = sys.n();
    let det = ev.jacobian.determinant();
    let t0 = reduced_tangent_basis(&sys.lagrangians[0], &sys.grad_h(&ev.start, mu))?;
    let t1 = reduced_tangent_basis(&sys.lagrangians[1], &sys.grad_h(&ev.end, mu))?;
    if n == 1 {
        // the boundary submanifolds are points
        return Ok(NondegReport { sigma_min: 1.0, shooting_jac_det: det, degenerate: false });
    }
    // work modulo the flow line through the end point
    let xh = sys.x_h(&ev.end, mu);
    let xh = &xh / xh.norm();
    let quotient = |c: DVector<f64>| {
        let c = &c - &xh * xh.dot(&c);
        let nrm = c.norm();
        if nrm > 0.0 { c / nrm } else { c }
    };
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(2 * n - 2);
    for j in 0..t0.ncols() {
        cols.push(quotient(&ev.monodromy * t0.column(j)));
    }
    for j in 0..t1.ncols() {
        cols.push(quotient(t1.column(j).into_owned()));
    }
    let w = DMatrix::from_columns(&cols);
    let sv = w.svd(false, false).singular_values;
    let sigma_min = sv.min().max(0.0);
    Ok(NondegReport { sigma_min, shooting_jac_det: det, degenerate: sigma_min < threshold })
}

pub fn nondegeneracy(
    sys: &SystemDescriptor,
    chord: &Chord,
    opts: &ShootOptions,
) -> Result<NondegReport> {
    let ev = evaluate_shooting(sys, chord.mu, &chord.start, chord.tau, &opts.flow)?;
    nondegeneracy_from_eval(sys, chord.mu, &ev, opts.degeneracy_threshold)
}

/// `max_u |omega(X_H, u)|` over the unit tangent basis of `L_which`, with `X_H`
/// normalized. Positive whenever `X_H` is not tangent to `L` at `x`.
pub fn transversality_margin(sys: &SystemDescriptor, mu: f64, x: &DVector<f64>, which: usize) -> f64 {
    let xh = sys.x_h(x, mu);
    let xh = &xh / xh.norm();
    let b = sys.lagrangians[which.min(1)].tangent_basis();
    (0..b.ncols())
        .map(|j| omega(&xh, &b.column(j).into_owned()).abs())
        .fold(0.0, f64::max)
}

/// `v_tau(t) = v(t / tau)` sampled at `t = tau k / N`.
pub fn reparametrize_to_period(chord: &Chord) -> Vec<(f64, PhaseState)> {
    let n = chord.n_intervals() as f64;
    chord
        .samples
        .iter()
        .enumerate()
        .map(|(k, x)| (chord.tau * k as f64 / n, x.clone()))
        .collect()
}

/// Inverse of [`reparametrize_to_period`]: unit-interval samples and the period.
pub fn unit_parametrization(trajectory: &[(f64, PhaseState)]) -> (Vec<(f64, PhaseState)>, f64) {
    let tau = trajectory.last().map(|(t, _)| *t).unwrap_or(0.0);
    let out = trajectory.iter().map(|(t, x)| (t / tau, x.clone())).collect();
    (out, tau)
}

/// Surrogate product-metric distance: max over the common grid of the state
/// distance plus `|tau_a - tau_b|`. Chords must share the sample count.
pub fn surrogate_distance(a: &Chord, b: &Chord) -> f64 {
    assert_eq!(a.samples.len(), b.samples.len(), "surrogate distance needs matching grids");
    let d = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| (x.as_vector() - y.as_vector()).norm())
        .fold(0.0, f64::max);
    d + (a.tau - b.tau).abs()
}

/// One start of a crossing scan: first return of the trajectory to the first
/// normal hyperplane of `L_1`, and the second normal coordinate there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub u: Vec<f64>,
    pub return_time: f64,
    pub miss: f64,
}

/// Scans starts on `L_0` (first Lagrangian coordinate from `first`, the second
/// solved from `H = 0` by Newton from `second_guess`). Sign changes of `miss`
/// between neighbours bracket chords. Needs `n = 2`.
pub fn crossing_scan(
    sys: &SystemDescriptor,
    mu: f64,
    first: &[f64],
    second_guess: f64,
    t_max: f64,
    dt: f64,
    flow: &FlowOptions,
) -> Vec<Option<ScanPoint>> {
    use rayon::prelude::*;
    let [l0, l1] = &sys.lagrangians;
    first
        .par_iter()
        .map(|&s| {
            if sys.n() != 2 {
                return None;
            }
            let mut u = DVector::from_vec(vec![s, second_guess]);
            for _ in 0..50 {
                let x = l0.point(&u);
                let h = sys.h(&x, mu);
                if h.abs() < 1e-13 {
                    break;
                }
                let dh = sys.grad_h(&x, mu).dot(&l0.tangent_basis().column(1));
                if dh.abs() < 1e-300 {
                    return None;
                }
                u[1] -= h / dh;
            }
            let x0 = l0.point(&u);
            if sys.h(&x0, mu).abs() > 1e-10 {
                return None;
            }
            let x0 = PhaseState::from_vector(x0).ok()?;
            let steps = (t_max / dt).ceil() as usize;
            let times: Vec<f64> = (1..steps).map(|k| k as f64 * dt).collect();
            let fr = integrate(sys, &x0, mu, t_max, flow, &times).ok()?;
            let dist: Vec<(f64, DVector<f64>)> = fr
                .states
                .iter()
                .map(|(t, x)| (*t, l1.signed_distances(x.as_vector())))
                .collect();
            for w in dist.windows(2).skip(1) {
                let (t0, d0) = (&w[0].0, &w[0].1);
                let (t1, d1) = (&w[1].0, &w[1].1);
                if d0[0] * d1[0] < 0.0 || d1[0] == 0.0 {
                    let f = d0[0] / (d0[0] - d1[0]);
                    return Some(ScanPoint {
                        u: vec![u[0], u[1]],
                        return_time: t0 + f * (t1 - t0),
                        miss: d0[1] + f * (d1[1] - d0[1]),
                    });
                }
            }
            None
        })
        .collect()
}

/// Guesses at sign changes of the miss between neighbouring scan points with
/// comparable return times.
pub fn scan_guesses(points: &[Option<ScanPoint>]) -> Vec<ChordGuess> {
    let mut out = Vec::new();
    for w in points.windows(2) {
        let (Some(a), Some(b)) = (&w[0], &w[1]) else { continue };
        if a.miss * b.miss > 0.0 {
            continue;
        }
        let tmax = a.return_time.max(b.return_time);
        if (a.return_time - b.return_time).abs() > 0.25 * tmax {
            continue;
        }
        let f = a.miss / (a.miss - b.miss);
        out.push(ChordGuess {
            u: a.u.iter().zip(&b.u).map(|(x, y)| x + f * (y - x)).collect(),
            tau: a.return_time + f * (b.return_time - a.return_time),
        });
    }
    out
}
