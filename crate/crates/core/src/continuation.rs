//! Pseudo-arclength continuation of chord families in `mu`, fold and
//! degeneracy events, limit probes and two-sided chord counts near an event.
//!
//! The continuation variable is `z = (u, tau, mu)`; the extended shooting
//! Jacobian `[dF/d(u,tau) | dF/dmu]` is `(n+1) x (n+2)` and its kernel is the
//! family tangent.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::action;
use crate::chord::{
    evaluate_shooting, newton_shoot, nondegeneracy_from_eval, sample_chord, solve_linear,
    surrogate_distance, Chord, ChordGuess, NondegReport, ShootOptions, ShootingEval,
};
use crate::error::{ChordError, Result};
use crate::flow::FlowOptions;
use crate::phase::SystemDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationOptions {
    pub ds_init: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub max_steps: usize,
    pub corrector_max_iter: usize,
    /// Sample intervals of the chords summarized in atlas rows.
    pub samples: usize,
    /// Residual target when refining events.
    pub refine_tol: f64,
    /// Largest angle (radians) between consecutive tangents.
    pub max_turn: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            ds_init: 1e-3,
            ds_min: 1e-6,
            ds_max: 1e-2,
            max_steps: 5000,
            corrector_max_iter: 8,
            samples: 64,
            refine_tol: 1e-12,
            max_turn: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasRow {
    pub mu: f64,
    pub u: Vec<f64>,
    pub tau: f64,
    pub action: f64,
    pub sigma_min: f64,
    pub jac_det: f64,
    pub degenerate: bool,
    /// Unit tangent `(du, dtau, dmu)` oriented along the continuation.
    pub tangent: Vec<f64>,
    pub arclength: f64,
}

impl AtlasRow {
    pub fn z(&self) -> DVector<f64> {
        let mut v: Vec<f64> = self.u.clone();
        v.push(self.tau);
        v.push(self.mu);
        DVector::from_vec(v)
    }

    pub fn tangent_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.tangent)
    }

    pub fn dmu_ds(&self) -> f64 {
        *self.tangent.last().unwrap_or(&0.0)
    }

    pub fn guess(&self) -> ChordGuess {
        ChordGuess { u: self.u.clone(), tau: self.tau }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Fold,
    Degeneracy,
    ContactViolation,
    CollisionStop,
    RangeEnd,
    StallAtDsMin,
}

/// Refined location of an event on the family curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPoint {
    pub mu: f64,
    pub u: Vec<f64>,
    pub tau: f64,
    pub sigma_min: f64,
    pub jac_det: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyEvent {
    pub kind: EventKind,
    pub mu_estimate: f64,
    pub rows: (usize, usize),
    /// A fold and a degeneracy bracket the same point.
    pub coincident: bool,
    pub point: Option<EventPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyAtlas {
    pub system_id: String,
    pub n: usize,
    pub direction: f64,
    pub rows: Vec<AtlasRow>,
    pub events: Vec<FamilyEvent>,
}

impl FamilyAtlas {
    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &FamilyEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn push_contact_violation(&mut self, mu: f64) {
        let i = self
            .rows
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.mu - mu).abs().total_cmp(&(b.1.mu - mu).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.events.push(FamilyEvent {
            kind: EventKind::ContactViolation,
            mu_estimate: mu,
            rows: (i, i),
            coincident: false,
            point: None,
        });
    }
}

fn z_parts(z: &DVector<f64>) -> (DVector<f64>, f64, f64) {
    let k = z.len();
    (z.rows(0, k - 2).into_owned(), z[k - 2], z[k - 1])
}

fn eval_z(sys: &SystemDescriptor, z: &DVector<f64>, flow: &FlowOptions) -> Result<ShootingEval> {
    let (u, tau, mu) = z_parts(z);
    evaluate_shooting(sys, mu, &u, tau, flow)
}

fn extended_jacobian(ev: &ShootingEval) -> DMatrix<f64> {
    let m = ev.jacobian.nrows();
    let mut j = DMatrix::zeros(m, m + 1);
    j.view_mut((0, 0), (m, m)).copy_from(&ev.jacobian);
    j.view_mut((0, m), (m, 1)).copy_from(&ev.mu_column);
    j
}

/// Unit kernel vector of the extended Jacobian, oriented along `reference`.
fn kernel_tangent(jext: &DMatrix<f64>, reference: Option<&DVector<f64>>) -> DVector<f64> {
    let m = jext.nrows();
    let mut sq = DMatrix::zeros(m + 1, m + 1);
    sq.view_mut((0, 0), (m, m + 1)).copy_from(jext);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let mut t = vt.row(imin).transpose();
    t /= t.norm();
    if let Some(r) = reference {
        if t.dot(r) < 0.0 {
            t = -t;
        }
    }
    t
}

struct Corrected {
    z: DVector<f64>,
    ev: ShootingEval,
    iterations: usize,
}

/// Newton on `[F(z); t . (z - anchor) - s] = 0`.
fn correct_on_hyperplane(
    sys: &SystemDescriptor,
    guess: &DVector<f64>,
    anchor: &DVector<f64>,
    t: &DVector<f64>,
    s: f64,
    tol: f64,
    max_iter: usize,
    flow: &FlowOptions,
) -> Result<Corrected> {
    let mut z = guess.clone();
    let m = z.len() - 1;
    for it in 0..=max_iter {
        let ev = eval_z(sys, &z, flow)?;
        let arc = t.dot(&(&z - anchor)) - s;
        let fnorm = ev.residual.amax().max(arc.abs());
        if !fnorm.is_finite() {
            return Err(ChordError::NonFinite("corrector residual".into()));
        }
        if ev.residual.amax() < tol && arc.abs() < tol.max(1e-14) {
            return Ok(Corrected { z, ev, iterations: it });
        }
        if it == max_iter {
            return Err(ChordError::NoConvergence { iterations: it, residual: fnorm });
        }
        let mut a = DMatrix::zeros(m + 1, m + 1);
        a.view_mut((0, 0), (m, m + 1)).copy_from(&extended_jacobian(&ev));
        a.row_mut(m).copy_from(&t.transpose());
        let mut rhs = DVector::zeros(m + 1);
        rhs.rows_mut(0, m).copy_from(&(-&ev.residual));
        rhs[m] = -arc;
        let dz = solve_linear(&a, &rhs)?;
        z += dz;
        let (_, tau, _) = z_parts(&z);
        if !(tau > 0.0) {
            return Err(ChordError::TauCollapsed { tau, floor: 0.0 });
        }
    }
    unreachable!()
}

fn make_row(
    sys: &SystemDescriptor,
    z: &DVector<f64>,
    ev: &ShootingEval,
    tangent: &DVector<f64>,
    arclength: f64,
    sopts: &ShootOptions,
    copts: &ContinuationOptions,
) -> Result<AtlasRow> {
    let (u, tau, mu) = z_parts(z);
    let nd: NondegReport = nondegeneracy_from_eval(sys, mu, ev, sopts.degeneracy_threshold)?;
    let mut so = *sopts;
    so.samples = copts.samples;
    let chord = sample_chord(sys, mu, &u, tau, &so)?;
    Ok(AtlasRow {
        mu,
        u: u.iter().copied().collect(),
        tau,
        action: action(sys, &chord),
        sigma_min: nd.sigma_min,
        jac_det: nd.shooting_jac_det,
        degenerate: nd.degenerate,
        tangent: tangent.iter().copied().collect(),
        arclength,
    })
}

/// Follows the family through `seed` in the direction `dir` (sign of the
/// initial `dmu/ds`) until the end of the parameter range, a collision, a stall
/// or `max_steps`.
pub fn continue_family(
    sys: &SystemDescriptor,
    seed: &Chord,
    dir: f64,
    sopts: &ShootOptions,
    copts: &ContinuationOptions,
) -> Result<FamilyAtlas> {
    let n = sys.n();
    let (lo, hi) = sys.mu_range;
    let mut z = DVector::zeros(n + 2);
    z.rows_mut(0, n).copy_from(&seed.start);
    z[n] = seed.tau;
    z[n + 1] = seed.mu;
    // polish the seed
    let (u0, tau0, _, ev) = newton_shoot(sys, seed.mu, &seed.guess(), sopts)?;
    z.rows_mut(0, n).copy_from(&u0);
    z[n] = tau0;
    let nd = nondegeneracy_from_eval(sys, seed.mu, &ev, sopts.degeneracy_threshold)?;
    if nd.degenerate || nd.shooting_jac_det == 0.0 {
        return Err(ChordError::SeedDegenerate(nd.sigma_min));
    }
    let mut t = kernel_tangent(&extended_jacobian(&ev), None);
    if t[n + 1] * dir < 0.0 {
        t = -t;
    }
    let mut atlas = FamilyAtlas {
        system_id: sys.id.clone(),
        n,
        direction: dir.signum(),
        rows: vec![make_row(sys, &z, &ev, &t, 0.0, sopts, copts)?],
        events: Vec::new(),
    };
    let mut ds = copts.ds_init.clamp(copts.ds_min, copts.ds_max);
    let mut arclength = 0.0;
    let mut steps = 0;
    let mut last_err: Option<ChordError> = None;
    while steps < copts.max_steps {
        let pred = &z + &t * ds;
        let attempt = correct_on_hyperplane(
            sys,
            &pred,
            &z,
            &t,
            ds,
            sopts.tol,
            copts.corrector_max_iter,
            &sopts.flow,
        );
        let accepted = match attempt {
            Ok(c) => {
                let t_new = kernel_tangent(&extended_jacobian(&c.ev), Some(&t));
                let turn = t_new.dot(&t).clamp(-1.0, 1.0).acos();
                if turn > copts.max_turn {
                    last_err = None;
                    None
                } else {
                    Some((c, t_new))
                }
            }
            Err(e) => {
                last_err = Some(e);
                None
            }
        };
        let Some((c, t_new)) = accepted else {
            ds *= 0.5;
            if ds < copts.ds_min {
                let last = atlas.rows.len() - 1;
                let kind = match last_err {
                    Some(ChordError::CollisionFloor { .. }) => EventKind::CollisionStop,
                    _ => EventKind::StallAtDsMin,
                };
                atlas.events.push(FamilyEvent {
                    kind,
                    mu_estimate: z[n + 1],
                    rows: (last, last),
                    coincident: false,
                    point: None,
                });
                break;
            }
            continue;
        };
        let mu_new = c.z[n + 1];
        if mu_new > hi || mu_new < lo {
            let mu_b = if mu_new > hi { hi } else { lo };
            let frac = (mu_b - z[n + 1]) / (mu_new - z[n + 1]);
            let zg = &z + (&c.z - &z) * frac;
            let (ug, taug, _) = z_parts(&zg);
            let guess = ChordGuess { u: ug.iter().copied().collect(), tau: taug };
            let last = atlas.rows.len() - 1;
            if let Ok((ub, taub, _, evb)) = newton_shoot(sys, mu_b, &guess, sopts) {
                let mut zb = DVector::zeros(n + 2);
                zb.rows_mut(0, n).copy_from(&ub);
                zb[n] = taub;
                zb[n + 1] = mu_b;
                let tb = kernel_tangent(&extended_jacobian(&evb), Some(&t));
                let arc = arclength + (&zb - &z).norm();
                atlas.rows.push(make_row(sys, &zb, &evb, &tb, arc, sopts, copts)?);
            }
            let end = atlas.rows.len() - 1;
            atlas.events.push(FamilyEvent {
                kind: EventKind::RangeEnd,
                mu_estimate: mu_b,
                rows: (last, end),
                coincident: false,
                point: None,
            });
            break;
        }
        arclength += ds;
        z = c.z;
        t = t_new;
        atlas.rows.push(make_row(sys, &z, &c.ev, &t, arclength, sopts, copts)?);
        steps += 1;
        if c.iterations <= 3 {
            ds = (ds * 1.5).min(copts.ds_max);
        } else if c.iterations >= 6 {
            ds = (ds * 0.5).max(copts.ds_min);
        }
    }
    Ok(atlas)
}

fn refine_options(sopts: &ShootOptions) -> FlowOptions {
    FlowOptions {
        rtol: sopts.flow.rtol.min(1e-12),
        atol: sopts.flow.atol.min(1e-14),
        ..sopts.flow
    }
}

/// Bisection on the hyperplane coordinate between rows `i` and `i + 1` for a
/// sign change of `indicator(eval, tangent)`.
fn bisect_bracket(
    sys: &SystemDescriptor,
    atlas: &FamilyAtlas,
    i: usize,
    sopts: &ShootOptions,
    copts: &ContinuationOptions,
    indicator: &dyn Fn(&ShootingEval, &DVector<f64>) -> f64,
) -> Result<EventPoint> {
    let n = atlas.n;
    let flow = refine_options(sopts);
    let za = atlas.rows[i].z();
    let zb = atlas.rows[i + 1].z();
    let t = atlas.rows[i].tangent_vector();
    let s_end = t.dot(&(&zb - &za));
    let ind_a = indicator(
        &eval_z(sys, &za, &flow)?,
        &t,
    );
    let (mut a, mut b) = (0.0, s_end);
    let (mut z_lo, mut z_hi) = (za.clone(), zb.clone());
    let mut guess = (&za + &zb) * 0.5;
    let mut best: Option<Corrected> = None;
    for _ in 0..80 {
        let mid = 0.5 * (a + b);
        let c = correct_on_hyperplane(sys, &guess, &za, &t, mid, copts.refine_tol, 20, &flow)
            .or_else(|_| {
                correct_on_hyperplane(sys, &guess, &za, &t, mid, sopts.tol, 20, &flow)
            })?;
        let tan = kernel_tangent(&extended_jacobian(&c.ev), Some(&t));
        let v = indicator(&c.ev, &tan);
        if v * ind_a > 0.0 {
            a = mid;
            z_lo = c.z.clone();
        } else {
            b = mid;
            z_hi = c.z.clone();
        }
        guess = (&z_lo + &z_hi) * 0.5;
        best = Some(c);
        if (b - a).abs() < 1e-9 && (z_lo[n + 1] - z_hi[n + 1]).abs() < 1e-10 {
            break;
        }
    }
    let mid = 0.5 * (a + b);
    let c = match correct_on_hyperplane(sys, &guess, &za, &t, mid, copts.refine_tol, 20, &flow) {
        Ok(c) => c,
        Err(_) => best.ok_or(ChordError::NoConvergence { iterations: 0, residual: f64::NAN })?,
    };
    let (u, tau, mu) = z_parts(&c.z);
    let nd = nondegeneracy_from_eval(sys, mu, &c.ev, sopts.degeneracy_threshold)?;
    Ok(EventPoint {
        mu,
        u: u.iter().copied().collect(),
        tau,
        sigma_min: nd.sigma_min,
        jac_det: nd.shooting_jac_det,
        residual: c.ev.residual.amax(),
    })
}

/// Locates folds (sign change of `dmu/ds`) and degeneracies (sign change of
/// the shooting determinant, or `sigma_min` dipping below threshold) and
/// appends refined events. Returns the number of events added.
pub fn detect_events(
    sys: &SystemDescriptor,
    atlas: &mut FamilyAtlas,
    sopts: &ShootOptions,
    copts: &ContinuationOptions,
) -> Result<usize> {
    let n = atlas.n;
    let before = atlas.events.len();
    let mut found = Vec::new();
    let rows = &atlas.rows;
    for i in 0..rows.len().saturating_sub(1) {
        let (r0, r1) = (&rows[i], &rows[i + 1]);
        if r0.dmu_ds() * r1.dmu_ds() < 0.0 {
            let p = bisect_bracket(sys, atlas, i, sopts, copts, &|_, tan| tan[n + 1])?;
            found.push(FamilyEvent {
                kind: EventKind::Fold,
                mu_estimate: p.mu,
                rows: (i, i + 1),
                coincident: false,
                point: Some(p),
            });
        }
        let det_change = r0.jac_det * r1.jac_det < 0.0;
        if det_change {
            let p =
                bisect_bracket(sys, atlas, i, sopts, copts, &|ev, _| ev.jacobian.determinant())?;
            found.push(FamilyEvent {
                kind: EventKind::Degeneracy,
                mu_estimate: p.mu,
                rows: (i, i + 1),
                coincident: false,
                point: Some(p),
            });
        } else if r1.degenerate
            && i + 2 < rows.len()
            && r1.sigma_min <= r0.sigma_min
            && r1.sigma_min <= rows[i + 2].sigma_min
        {
            found.push(FamilyEvent {
                kind: EventKind::Degeneracy,
                mu_estimate: r1.mu,
                rows: (i + 1, i + 1),
                coincident: false,
                point: None,
            });
        }
    }
    // folds and degeneracies on the same bracket or at the same refined point
    for a in 0..found.len() {
        for b in 0..found.len() {
            if found[a].kind == EventKind::Fold && found[b].kind == EventKind::Degeneracy {
                let same_rows = found[a].rows == found[b].rows;
                let close = (found[a].mu_estimate - found[b].mu_estimate).abs() < 1e-8;
                if same_rows || close {
                    found[a].coincident = true;
                    found[b].coincident = true;
                }
            }
        }
    }
    atlas.events.extend(found);
    Ok(atlas.events.len() - before)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaProbe {
    pub mu_infinity_estimate: f64,
    pub sample_mus: Vec<f64>,
    /// Surrogate distances between consecutive probe chords.
    pub pairwise_c0_distances: Vec<f64>,
    pub action_values: Vec<f64>,
    pub limit_chord: Chord,
    pub limit_nondegeneracy: NondegReport,
    pub limit_degenerate: bool,
    /// Deepest level reached; less than the requested depth if Newton failed.
    pub depth_reached: usize,
    pub probe_chords: Vec<Chord>,
}

impl OmegaProbe {
    pub fn action_spread(&self) -> f64 {
        let max = self.action_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.action_values.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }

    /// `d_k / d_{k+1}` for consecutive distances.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.pairwise_c0_distances.windows(2).map(|w| w[0] / w[1]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeOptions {
    pub delta: f64,
    pub depth: usize,
    pub samples: usize,
    pub tol: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions { delta: 1e-4, depth: 8, samples: 64, tol: 1e-12 }
    }
}

/// Neville extrapolation of `(x_k, y_k)` to `x = 0`.
fn neville_at_zero(xs: &[f64], ys: &[DVector<f64>]) -> DVector<f64> {
    let mut p: Vec<DVector<f64>> = ys.to_vec();
    let m = xs.len();
    for level in 1..m {
        for i in 0..m - level {
            let (xi, xj) = (xs[i], xs[i + level]);
            p[i] = (&p[i + 1] * xi - &p[i] * xj) / (xi - xj);
        }
    }
    p[0].clone()
}

/// Re-shoots the branch that ends at `event` at `mu_inf - delta 2^-nu`
/// (`nu = 0..depth`), measures how consecutive chords contract and how the
/// action settles, and extrapolates the limit chord.
pub fn omega_probe(
    sys: &SystemDescriptor,
    atlas: &FamilyAtlas,
    event: &FamilyEvent,
    sopts: &ShootOptions,
    popts: &ProbeOptions,
) -> Result<OmegaProbe> {
    let n = atlas.n;
    let mu_inf = event.point.as_ref().map(|p| p.mu).unwrap_or(event.mu_estimate);
    let branch_end = event.rows.0;
    let rows = &atlas.rows[..=branch_end];
    let side = if rows.last().map(|r| r.mu).unwrap_or(mu_inf) <= mu_inf { -1.0 } else { 1.0 };
    let mut so = *sopts;
    so.samples = popts.samples;
    so.tol = popts.tol;
    so.flow = refine_options(sopts);

    let mut mus = Vec::new();
    let mut chords: Vec<Chord> = Vec::new();
    let mut zs: Vec<DVector<f64>> = Vec::new();
    for nu in 0..=popts.depth {
        let eps = popts.delta * 0.5f64.powi(nu as i32);
        let mu = mu_inf + side * eps;
        let guess_z = if zs.len() >= 2 {
            let k = zs.len();
            let r = |e: f64| e.sqrt();
            let (r1, r0) = (r(popts.delta * 0.5f64.powi(nu as i32 - 1)), r(popts.delta * 0.5f64.powi(nu as i32 - 2)));
            &zs[k - 1] + (&zs[k - 1] - &zs[k - 2]) * ((r(eps) - r1) / (r1 - r0))
        } else if let Some(last) = zs.last() {
            last.clone()
        } else {
            // interpolate the atlas rows along the branch
            let mut best = rows.last().expect("non-empty").z();
            for w in rows.windows(2).rev() {
                let (a, b) = (w[0].mu, w[1].mu);
                if (a - mu) * (b - mu) <= 0.0 && a != b {
                    let f = (mu - a) / (b - a);
                    best = w[0].z() + (w[1].z() - w[0].z()) * f;
                    break;
                }
            }
            best.rows(0, n + 1).into_owned()
        };
        let guess = ChordGuess { u: guess_z.rows(0, n).iter().copied().collect(), tau: guess_z[n] };
        let solved = newton_shoot(sys, mu, &guess, &so).or_else(|_| {
            let mut loose = so;
            loose.tol = sopts.tol;
            newton_shoot(sys, mu, &guess, &loose)
        });
        let Ok((u, tau, _, _)) = solved else { break };
        let chord = sample_chord(sys, mu, &u, tau, &so)?;
        let mut zz = DVector::zeros(n + 1);
        zz.rows_mut(0, n).copy_from(&u);
        zz[n] = tau;
        zs.push(zz);
        mus.push(mu);
        chords.push(chord);
    }
    if chords.len() < 2 {
        return Err(ChordError::NoConvergence { iterations: chords.len(), residual: f64::NAN });
    }
    let distances: Vec<f64> =
        chords.windows(2).map(|w| surrogate_distance(&w[0], &w[1])).collect();
    let actions: Vec<f64> = chords.iter().map(|c| action(sys, c)).collect();

    let take = zs.len().min(4);
    let xs: Vec<f64> = mus[mus.len() - take..].iter().map(|m| (m - mu_inf).abs().sqrt()).collect();
    let z_lim = neville_at_zero(&xs, &zs[zs.len() - take..]);
    let u_lim = z_lim.rows(0, n).into_owned();
    let limit = sample_chord(sys, mu_inf, &u_lim, z_lim[n], &so)?;
    let ev = evaluate_shooting(sys, mu_inf, &u_lim, z_lim[n], &so.flow)?;
    let nd = nondegeneracy_from_eval(sys, mu_inf, &ev, sopts.degeneracy_threshold)?;
    Ok(OmegaProbe {
        mu_infinity_estimate: mu_inf,
        sample_mus: mus,
        pairwise_c0_distances: distances,
        action_values: actions,
        limit_chord: limit,
        limit_nondegeneracy: nd,
        limit_degenerate: nd.degenerate,
        depth_reached: chords.len() - 1,
        probe_chords: chords,
    })
}

/// Runs Newton from every guess concurrently and returns the distinct
/// converged chords (pairwise surrogate distance above `distinct`), sorted by
/// residual.
pub fn multi_start(
    sys: &SystemDescriptor,
    mu: f64,
    guesses: &[ChordGuess],
    sopts: &ShootOptions,
    distinct: f64,
) -> Vec<Chord> {
    let mut found: Vec<Chord> = guesses
        .par_iter()
        .filter_map(|g| {
            let (u, tau, _, ev) = newton_shoot(sys, mu, g, sopts).ok()?;
            let mut c = sample_chord(sys, mu, &u, tau, sopts).ok()?;
            c.residual_norm = ev.residual.amax();
            Some(c)
        })
        .collect();
    found.sort_by(|a, b| a.residual_norm.total_cmp(&b.residual_norm));
    let mut out: Vec<Chord> = Vec::new();
    for c in found {
        if out.iter().all(|o| surrogate_distance(o, &c) > distinct) {
            out.push(c);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CensusOptions {
    pub delta: f64,
    pub radius: f64,
    pub distinct: f64,
    /// Grid points per unknown of the multi-start box.
    pub grid: usize,
    /// Half-width of the multi-start box, in units of `radius`.
    pub box_scale: f64,
    /// Newton iteration cap per start.
    pub max_iter: usize,
}

impl Default for CensusOptions {
    fn default() -> Self {
        CensusOptions { delta: 1e-3, radius: 1e-2, distinct: 1e-6, grid: 5, box_scale: 1.0, max_iter: 12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Census {
    pub count_below: usize,
    pub count_above: usize,
    pub chords_below: Vec<Chord>,
    pub chords_above: Vec<Chord>,
}

/// Counts distinct chords within `radius` of `center` at `mu_inf -+ delta`
/// ("below" is the side the family came from when `side = -1`).
pub fn theorem_b_census(
    sys: &SystemDescriptor,
    mu_inf: f64,
    center: &Chord,
    sopts: &ShootOptions,
    copts: &CensusOptions,
) -> Census {
    let n = sys.n();
    let m = copts.grid.max(2);
    let half = copts.radius * copts.box_scale;
    let total = m.pow((n + 1) as u32);
    let guesses: Vec<ChordGuess> = (0..total)
        .map(|idx| {
            let mut r = idx;
            let mut offs = Vec::with_capacity(n + 1);
            for _ in 0..=n {
                offs.push(-half + 2.0 * half * (r % m) as f64 / (m - 1) as f64);
                r /= m;
            }
            ChordGuess {
                u: (0..n).map(|i| center.start[i] + offs[i]).collect(),
                tau: center.tau + offs[n],
            }
        })
        .collect();
    let mut so = *sopts;
    so.samples = center.n_intervals();
    so.max_iter = copts.max_iter;
    let count = |mu: f64| -> Vec<Chord> {
        if sys.check_mu(mu).is_err() {
            return Vec::new();
        }
        multi_start(sys, mu, &guesses, &so, copts.distinct)
            .into_iter()
            .filter(|c| surrogate_distance(c, center) < copts.radius)
            .collect()
    };
    let below = count(mu_inf - copts.delta);
    let above = count(mu_inf + copts.delta);
    Census {
        count_below: below.len(),
        count_above: above.len(),
        chords_below: below,
        chords_above: above,
    }
}
