//! Rabinowitz action functional, its discretization on uniform paths, and the
//! estimates that follow from the contact condition.
//!
//! Discrete action of a path `w_0..w_N` with multiplier `sigma` and `h = 1/N`:
//! `A_d = sum_k lambda(m_k)(w_{k+1} - w_k) - sigma h sum_k H(m_k)` with segment
//! midpoints `m_k`. Boundary nodes live on the Lagrangians.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chord::{shoot, Chord, ShootOptions};
use crate::contact::ContactReport;
use crate::error::{ChordError, Result};
use crate::phase::SystemDescriptor;

/// A discretized element `(w, sigma)` of path space times the multiplier line.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    pub nodes: Vec<DVector<f64>>,
    pub sigma: f64,
}

impl DiscretePath {
    pub fn from_chord(chord: &Chord) -> Self {
        DiscretePath {
            nodes: chord.samples.iter().map(|x| x.as_vector().clone()).collect(),
            sigma: chord.tau,
        }
    }

    pub fn n_intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    fn midpoint(&self, k: usize) -> DVector<f64> {
        (&self.nodes[k] + &self.nodes[k + 1]) * 0.5
    }
}

pub fn discrete_action(sys: &SystemDescriptor, mu: f64, path: &DiscretePath) -> f64 {
    let n_int = path.n_intervals();
    let h = 1.0 / n_int as f64;
    let mut sym = 0.0;
    let mut ham = 0.0;
    for k in 0..n_int {
        let m = path.midpoint(k);
        sym += sys.lambda.eval(&m, &(&path.nodes[k + 1] - &path.nodes[k]));
        ham += sys.h(&m, mu);
    }
    sym - path.sigma * h * ham
}

/// Euclidean partial derivatives of [`discrete_action`] in every node and in sigma.
pub fn discrete_partials(
    sys: &SystemDescriptor,
    mu: f64,
    path: &DiscretePath,
) -> (Vec<DVector<f64>>, f64) {
    let n_int = path.n_intervals();
    let h = 1.0 / n_int as f64;
    let lam = sys.lambda.matrix(sys.n());
    let dim = 2 * sys.n();
    let mut g = vec![DVector::zeros(dim); n_int + 1];
    let mut gs = 0.0;
    for k in 0..n_int {
        let m = path.midpoint(k);
        let d = &path.nodes[k + 1] - &path.nodes[k];
        let gh = sys.grad_h(&m, mu) * (0.5 * path.sigma * h);
        // d/dw_k and d/dw_{k+1} of m^T L d
        let ld = &lam * &d * 0.5;
        let ltm = lam.tr_mul(&m);
        g[k] += &ld - &ltm - &gh;
        g[k + 1] += &ld + &ltm - &gh;
        gs -= h * sys.h(&m, mu);
    }
    (g, gs)
}

/// `dA_d(path)[direction]`.
pub fn discrete_differential(
    sys: &SystemDescriptor,
    mu: f64,
    path: &DiscretePath,
    direction: &DiscretePath,
) -> f64 {
    let (g, gs) = discrete_partials(sys, mu, path);
    g.iter().zip(&direction.nodes).map(|(a, b)| a.dot(b)).sum::<f64>() + gs * direction.sigma
}

/// Reduced coordinates on discrete path space: Lagrangian coordinates for the
/// two boundary nodes, full coordinates for the interior nodes, then `sigma`.
/// The metric is diagonal (trapezoid weights `h`, `h/2` at the ends, 1 for sigma).
#[derive(Debug, Clone, Copy)]
pub struct PathCoordinates<'a> {
    pub sys: &'a SystemDescriptor,
    pub n_intervals: usize,
}

impl<'a> PathCoordinates<'a> {
    pub fn new(sys: &'a SystemDescriptor, n_intervals: usize) -> Self {
        assert!(n_intervals >= 2, "need at least two intervals");
        PathCoordinates { sys, n_intervals }
    }

    pub fn dim(&self) -> usize {
        2 * self.sys.n() * self.n_intervals + 1
    }

    fn node_offset(&self, j: usize) -> usize {
        let n = self.sys.n();
        if j == 0 {
            0
        } else {
            n + 2 * n * (j - 1)
        }
    }

    pub fn sigma_index(&self) -> usize {
        self.dim() - 1
    }

    pub fn to_reduced(&self, path: &DiscretePath) -> DVector<f64> {
        let n = self.sys.n();
        let nn = self.n_intervals;
        assert_eq!(path.n_intervals(), nn);
        let mut z = DVector::zeros(self.dim());
        let [l0, l1] = &self.sys.lagrangians;
        z.rows_mut(0, n).copy_from(&l0.coordinates(&path.nodes[0]));
        for j in 1..nn {
            z.rows_mut(self.node_offset(j), 2 * n).copy_from(&path.nodes[j]);
        }
        z.rows_mut(self.node_offset(nn), n).copy_from(&l1.coordinates(&path.nodes[nn]));
        z[self.sigma_index()] = path.sigma;
        z
    }

    pub fn from_reduced(&self, z: &DVector<f64>) -> DiscretePath {
        let n = self.sys.n();
        let nn = self.n_intervals;
        let [l0, l1] = &self.sys.lagrangians;
        let mut nodes = Vec::with_capacity(nn + 1);
        nodes.push(l0.point(&z.rows(0, n).into_owned()));
        for j in 1..nn {
            nodes.push(z.rows(self.node_offset(j), 2 * n).into_owned());
        }
        nodes.push(l1.point(&z.rows(self.node_offset(nn), n).into_owned()));
        DiscretePath { nodes, sigma: z[self.sigma_index()] }
    }

    pub fn metric_weights(&self) -> DVector<f64> {
        let n = self.sys.n();
        let h = 1.0 / self.n_intervals as f64;
        let mut w = DVector::from_element(self.dim(), h);
        w.rows_mut(0, n).fill(0.5 * h);
        w.rows_mut(self.node_offset(self.n_intervals), n).fill(0.5 * h);
        w[self.sigma_index()] = 1.0;
        w
    }

    /// Euclidean gradient of the action in reduced coordinates.
    pub fn partials(&self, mu: f64, z: &DVector<f64>) -> DVector<f64> {
        let n = self.sys.n();
        let nn = self.n_intervals;
        let path = self.from_reduced(z);
        let (g, gs) = discrete_partials(self.sys, mu, &path);
        let [l0, l1] = &self.sys.lagrangians;
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, n).copy_from(&l0.tangent_basis().tr_mul(&g[0]));
        for j in 1..nn {
            out.rows_mut(self.node_offset(j), 2 * n).copy_from(&g[j]);
        }
        out.rows_mut(self.node_offset(nn), n).copy_from(&l1.tangent_basis().tr_mul(&g[nn]));
        out[self.sigma_index()] = gs;
        out
    }

    /// Metric gradient `G^{-1} dA`.
    pub fn gradient(&self, mu: f64, z: &DVector<f64>) -> DVector<f64> {
        self.partials(mu, z).component_div(&self.metric_weights())
    }

    pub fn gradient_norm(&self, mu: f64, z: &DVector<f64>) -> f64 {
        let g = self.gradient(mu, z);
        g.component_mul(&g).dot(&self.metric_weights()).sqrt()
    }

    /// Hessian of the action in reduced coordinates (symmetric, block tridiagonal
    /// in the nodes plus a dense sigma row and column).
    pub fn hessian(&self, mu: f64, z: &DVector<f64>) -> DMatrix<f64> {
        let n = self.sys.n();
        let nn = self.n_intervals;
        let dim2 = 2 * n;
        let h = 1.0 / nn as f64;
        let path = self.from_reduced(z);
        let sigma = path.sigma;
        let lam = self.sys.lambda.matrix(n);
        let sym = &lam + lam.transpose();
        let om = &lam - lam.transpose();
        let [l0, l1] = &self.sys.lagrangians;
        // embedding of node j: full coordinates = E_j * reduced block
        let embed = |j: usize| -> DMatrix<f64> {
            if j == 0 {
                l0.tangent_basis().clone()
            } else if j == nn {
                l1.tangent_basis().clone()
            } else {
                DMatrix::identity(dim2, dim2)
            }
        };
        let width = |j: usize| if j == 0 || j == nn { n } else { dim2 };
        let mut hess = DMatrix::zeros(self.dim(), self.dim());
        let si = self.sigma_index();
        for k in 0..nn {
            let m = path.midpoint(k);
            let hm = self.sys.hess_h(&m, mu) * (0.25 * sigma * h);
            let gm = self.sys.grad_h(&m, mu) * (0.5 * h);
            let xx = -&sym * 0.5 - &hm;
            let yy = &sym * 0.5 - &hm;
            let xy = &om * 0.5 - &hm;
            let (ek, ek1) = (embed(k), embed(k + 1));
            let (ok, ok1) = (self.node_offset(k), self.node_offset(k + 1));
            let (wk, wk1) = (width(k), width(k + 1));
            let mut add = |r: usize, c: usize, blk: DMatrix<f64>| {
                let mut v = hess.view_mut((r, c), blk.shape());
                v += blk;
            };
            add(ok, ok, ek.transpose() * &xx * &ek);
            add(ok1, ok1, ek1.transpose() * &yy * &ek1);
            let cross = ek.transpose() * &xy * &ek1;
            add(ok1, ok, cross.transpose());
            add(ok, ok1, cross);
            let sk = -(ek.transpose() * &gm);
            let sk1 = -(ek1.transpose() * &gm);
            for i in 0..wk {
                hess[(ok + i, si)] += sk[i];
                hess[(si, ok + i)] += sk[i];
            }
            for i in 0..wk1 {
                hess[(ok1 + i, si)] += sk1[i];
                hess[(si, ok1 + i)] += sk1[i];
            }
        }
        hess
    }

    /// Derivative of the partials with respect to the family parameter.
    pub fn partials_mu_derivative(&self, mu: f64, z: &DVector<f64>) -> DVector<f64> {
        let n = self.sys.n();
        let nn = self.n_intervals;
        let h = 1.0 / nn as f64;
        let path = self.from_reduced(z);
        let [l0, l1] = &self.sys.lagrangians;
        let dim2 = 2 * n;
        let mut full = vec![DVector::zeros(dim2); nn + 1];
        let mut gs = 0.0;
        for k in 0..nn {
            let m = path.midpoint(k);
            let gmu = self.sys.model().mu_gradient(&m, mu) * (0.5 * path.sigma * h);
            full[k] -= &gmu;
            full[k + 1] -= &gmu;
            gs -= h * self.sys.dh_dmu(&m, mu);
        }
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, n).copy_from(&l0.tangent_basis().tr_mul(&full[0]));
        for j in 1..nn {
            out.rows_mut(self.node_offset(j), dim2).copy_from(&full[j]);
        }
        out.rows_mut(self.node_offset(nn), n).copy_from(&l1.tangent_basis().tr_mul(&full[nn]));
        out[self.sigma_index()] = gs;
        out
    }
}

/// Rabinowitz action of a sampled chord: midpoint rule in time, `O(1/N^2)`.
/// Uses the on-curve midpoints and the exact velocity `tau X_H` there; falls
/// back to the secant form of [`discrete_action`] when no midpoints are stored.
pub fn action(sys: &SystemDescriptor, chord: &Chord) -> f64 {
    if chord.midpoints.len() != chord.n_intervals() {
        return discrete_action(sys, chord.mu, &DiscretePath::from_chord(chord));
    }
    let mean: f64 = chord
        .midpoints
        .iter()
        .map(|m| {
            let m = m.as_vector();
            sys.lambda.eval(m, &sys.x_h(m, chord.mu)) - sys.h(m, chord.mu)
        })
        .sum::<f64>()
        / chord.n_intervals() as f64;
    chord.tau * mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub action: f64,
    pub tau: f64,
    pub kappa_used: f64,
    pub bounds: (f64, f64),
    pub within_bounds: bool,
    pub d_action_d_mu: Option<f64>,
}

/// Compares the action with `[tau / kappa, kappa tau]`.
pub fn action_bounds_check(
    sys: &SystemDescriptor,
    chord: &Chord,
    contact: &ContactReport,
) -> Result<ActionRecord> {
    if !contact.passed() {
        return Err(ChordError::ContactFailed(contact.violations.len()));
    }
    let a = action(sys, chord);
    let k = contact.kappa;
    let bounds = (chord.tau / k, k * chord.tau);
    let tol = 1e-6 * (1.0 + a.abs());
    Ok(ActionRecord {
        action: a,
        tau: chord.tau,
        kappa_used: k,
        bounds,
        within_bounds: a >= bounds.0 - tol && a <= bounds.1 + tol,
        d_action_d_mu: None,
    })
}

/// `(analytic, finite difference)` values of `dA/dmu` along the family through
/// `chord`. The analytic one is `-tau int H'_mu(v) dt`; the finite difference
/// re-shoots at `mu +- dmu` (one-sided at the ends of the range).
pub fn action_mu_derivative(
    sys: &SystemDescriptor,
    chord: &Chord,
    dmu: f64,
    opts: &ShootOptions,
) -> Result<(f64, f64)> {
    let path = DiscretePath::from_chord(chord);
    let n_int = path.n_intervals();
    let quad: f64 = (0..n_int).map(|k| sys.dh_dmu(&path.midpoint(k), chord.mu)).sum::<f64>()
        / n_int as f64;
    let analytic = -chord.tau * quad;

    let (lo, hi) = sys.mu_range;
    let mu_p = (chord.mu + dmu).min(hi);
    let mu_m = (chord.mu - dmu).max(lo);
    let mut o = *opts;
    o.samples = n_int;
    let a_at = |mu: f64| -> Result<f64> {
        if mu == chord.mu {
            return Ok(action(sys, chord));
        }
        Ok(action(sys, &shoot(sys, mu, &chord.guess(), &o)?))
    };
    let fd = (a_at(mu_p)? - a_at(mu_m)?) / (mu_p - mu_m);
    Ok((analytic, fd))
}

/// One family member as seen by the envelope monitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyPoint {
    pub mu: f64,
    pub tau: f64,
    pub action: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub mu: f64,
    pub action: f64,
    pub action_bounds: (f64, f64),
    pub tau: f64,
    pub tau_bounds: (f64, f64),
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub kappa_used: f64,
    pub members: Vec<EnvelopeCheck>,
}

impl EnvelopeReport {
    pub fn all_pass(&self) -> bool {
        self.members.iter().all(|m| m.pass)
    }
}

pub const KAPPA_MARGIN: f64 = 0.05;

/// Two-sided exponential envelope of the action along a family segment that
/// starts at `members[0]`, plus the period bounds derived from it.
/// `kappa` is the largest sampled value over the segment, inflated by `margin`.
pub fn family_action_envelope(
    members: &[FamilyPoint],
    contacts: &[ContactReport],
    margin: f64,
) -> Result<EnvelopeReport> {
    if let Some(bad) = contacts.iter().find(|c| !c.passed()) {
        return Err(ChordError::ContactFailed(bad.violations.len()));
    }
    let kappa_sampled = contacts.iter().map(|c| c.kappa).fold(1.0, f64::max);
    let k = kappa_sampled * (1.0 + margin);
    let start = members
        .first()
        .ok_or_else(|| ChordError::InvalidParameter("empty family segment".into()))?;
    if !(start.action > 0.0) {
        return Err(ChordError::InvalidParameter(format!(
            "segment start has non-positive action {}",
            start.action
        )));
    }
    let k2 = k * k;
    let checks = members
        .iter()
        .map(|m| {
            let e = (k2 * (m.mu - start.mu).abs()).exp();
            let ab = (start.action / e, start.action * e);
            let tb = (start.tau / (e * k2), k2 * e * start.tau);
            let tol = 1e-9 * (1.0 + m.action.abs());
            let pass = m.action >= ab.0 - tol
                && m.action <= ab.1 + tol
                && m.tau >= tb.0 * (1.0 - 1e-12)
                && m.tau <= tb.1 * (1.0 + 1e-12);
            EnvelopeCheck { mu: m.mu, action: m.action, action_bounds: ab, tau: m.tau, tau_bounds: tb, pass }
        })
        .collect();
    Ok(EnvelopeReport { kappa_used: k, members: checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chord::{ChordGuess, ShootOptions};
    use crate::contact::{contact_check, SamplerConfig};
    use crate::systems::{builtin_system, BuiltinName, BuiltinParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn harmonic_chord() -> (SystemDescriptor, Chord) {
        let sys = builtin_system(BuiltinName::Harmonic, &BuiltinParams::default()).unwrap();
        let c = shoot(&sys, 0.0, &ChordGuess::new(&[1.0], 1.5), &ShootOptions::default()).unwrap();
        (sys, c)
    }

    #[test]
    fn harmonic_action_is_quarter_pi() {
        let (sys, c) = harmonic_chord();
        assert!((action(&sys, &c) - FRAC_PI_4).abs() < 1e-6);
        // secant form: bias pi^3 / (192 N^2)
        let secant = discrete_action(&sys, 0.0, &DiscretePath::from_chord(&c));
        let bias = PI.powi(3) / (192.0 * 256.0f64.powi(2));
        assert!((secant - FRAC_PI_4 - bias).abs() < 1e-8, "{}", secant - FRAC_PI_4);
    }

    #[test]
    fn constant_path_has_zero_action() {
        let sys = builtin_system(BuiltinName::Harmonic, &BuiltinParams::default()).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let path = DiscretePath { nodes: vec![x; 9], sigma: 3.7 };
        assert_eq!(discrete_action(&sys, 0.0, &path), 0.0);
    }

    #[test]
    fn harmonic_bounds_boundary_case() {
        let (sys, c) = harmonic_chord();
        let rep = contact_check(&sys, 0.0, &SamplerConfig::in_box(&[-2.0, -2.0], &[2.0, 2.0]))
            .unwrap();
        let rec = action_bounds_check(&sys, &c, &rep).unwrap();
        assert!((rec.bounds.0 - FRAC_PI_4).abs() < 1e-8 && (rec.bounds.1 - PI).abs() < 1e-7);
        assert!(rec.within_bounds);
    }

    #[test]
    fn inert_family_has_zero_derivative() {
        let (sys, c) = harmonic_chord();
        let (a, fd) = action_mu_derivative(&sys, &c, 1e-5, &ShootOptions::default()).unwrap();
        assert!(a.abs() < 1e-8 && fd.abs() < 1e-8);
    }

    #[test]
    fn shifted_family_derivative_is_tau() {
        let sys = builtin_system(BuiltinName::HarmonicShift, &BuiltinParams::default()).unwrap();
        let c = shoot(&sys, 0.1, &ChordGuess::new(&[1.1], 1.5), &ShootOptions::default()).unwrap();
        let (a, fd) = action_mu_derivative(&sys, &c, 1e-5, &ShootOptions::default()).unwrap();
        assert!((a - FRAC_PI_2).abs() < 1e-9);
        assert!(((fd - a) / a).abs() < 1e-4);
    }

    #[test]
    fn differential_matches_finite_differences() {
        let sys = builtin_system(BuiltinName::HenonHeiles, &BuiltinParams::default()).unwrap();
        let pc = PathCoordinates::new(&sys, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let z = DVector::from_fn(pc.dim(), |_, _| rng.gen_range(-0.4..0.4)) ;
            let mut z = z;
            z[pc.sigma_index()] = rng.gen_range(0.5..3.0);
            let dz = DVector::from_fn(pc.dim(), |_, _| rng.gen_range(-1.0..1.0));
            let eps = 1e-6;
            let ap = discrete_action(&sys, 0.1, &pc.from_reduced(&(&z + &dz * eps)));
            let am = discrete_action(&sys, 0.1, &pc.from_reduced(&(&z - &dz * eps)));
            let fd = (ap - am) / (2.0 * eps);
            let an = pc.partials(0.1, &z).dot(&dz);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{fd} vs {an}");
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_partials() {
        let sys = builtin_system(BuiltinName::HenonHeiles, &BuiltinParams::default()).unwrap();
        let pc = PathCoordinates::new(&sys, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut z = DVector::from_fn(pc.dim(), |_, _| rng.gen_range(-0.4..0.4));
        z[pc.sigma_index()] = 1.7;
        let hs = pc.hessian(0.1, &z);
        assert!((&hs - hs.transpose()).amax() < 1e-14);
        let eps = 1e-6;
        for j in 0..pc.dim() {
            let mut e = DVector::zeros(pc.dim());
            e[j] = eps;
            let fd = (pc.partials(0.1, &(&z + &e)) - pc.partials(0.1, &(&z - &e))) / (2.0 * eps);
            assert!((&fd - hs.column(j)).amax() < 1e-7, "column {j}");
        }
        let mu_fd = (pc.partials(0.1 + eps, &z) - pc.partials(0.1 - eps, &z)) / (2.0 * eps);
        assert!((mu_fd - pc.partials_mu_derivative(0.1, &z)).amax() < 1e-7);
    }

    #[test]
    fn gradient_vanishes_at_chord_to_second_order() {
        let (sys, _) = harmonic_chord();
        for (n_int, bound) in [(64usize, 1e-3), (256, 1e-4), (1024, 1e-6)] {
            let mut o = ShootOptions::default();
            o.samples = n_int;
            let c = shoot(&sys, 0.0, &ChordGuess::new(&[1.0], 1.5), &o).unwrap();
            let pc = PathCoordinates::new(&sys, n_int);
            let g = pc.gradient_norm(0.0, &pc.to_reduced(&DiscretePath::from_chord(&c)));
            assert!(g < bound, "N = {n_int}: {g}");
        }
    }

    #[test]
    fn envelope_holds_for_shifted_circles() {
        let sys = builtin_system(BuiltinName::HarmonicShift, &BuiltinParams::default()).unwrap();
        let mut members = Vec::new();
        let mut contacts = Vec::new();
        for i in 0..6 {
            let mu = 0.05 * i as f64;
            let r = (1.0 + 2.0 * mu).sqrt();
            members.push(FamilyPoint { mu, tau: FRAC_PI_2, action: FRAC_PI_4 * r * r });
            contacts.push(
                contact_check(&sys, mu, &SamplerConfig::in_box(&[-2.0, -2.0], &[2.0, 2.0])).unwrap(),
            );
        }
        let rep = family_action_envelope(&members, &contacts, KAPPA_MARGIN).unwrap();
        assert!(rep.all_pass());
    }
}
