//! Hamiltonian flow and variational equations, integrated with an adaptive
//! Dormand-Prince 5(4) pair with continuous (dense) output.

use nalgebra::{DMatrix, DVector};

use crate::error::{ChordError, Result};
use crate::phase::{PhaseState, SystemDescriptor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { rtol: 1e-10, atol: 1e-12, max_steps: 1_000_000 }
    }
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    /// `(t, x(t))` at `t = 0`, every requested sample time and `t_final`.
    pub states: Vec<(f64, PhaseState)>,
    /// `D phi^t` at the final time.
    pub monodromy: Option<DMatrix<f64>>,
    /// `d phi^t / d mu` at the final time.
    pub mu_sensitivity: Option<DVector<f64>>,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub max_h_drift: f64,
}

impl FlowResult {
    pub fn final_state(&self) -> &PhaseState {
        &self.states.last().expect("flow result always holds the initial state").1
    }
}

// Dormand-Prince coefficients
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

pub(crate) struct Dopri5Stats {
    pub accepted: usize,
    pub rejected: usize,
}

/// Integrates `y' = f(t, y)` on `[0, t_final]`, reporting `y` at each time in
/// `sample_times` (sorted, within `(0, t_final]`) and calling `on_step` after
/// each accepted step with the new state.
pub(crate) fn dopri5<F, G>(
    mut f: F,
    y0: &[f64],
    t_final: f64,
    sample_times: &[f64],
    opts: &FlowOptions,
    mut on_step: G,
) -> Result<(Vec<Vec<f64>>, Dopri5Stats)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    G: FnMut(&[f64]),
{
    let dim = y0.len();
    let mut y = y0.to_vec();
    let mut t = 0.0;
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut k5 = vec![0.0; dim];
    let mut k6 = vec![0.0; dim];
    let mut k7 = vec![0.0; dim];
    let mut ytmp = vec![0.0; dim];
    let mut ynew = vec![0.0; dim];
    let mut out = Vec::with_capacity(sample_times.len());
    let mut next_sample = 0;
    let mut stats = Dopri5Stats { accepted: 0, rejected: 0 };

    f(t, &y, &mut k1)?;
    let scale = |a: f64, b: f64| opts.atol + opts.rtol * a.abs().max(b.abs());

    // initial step guess
    let mut h = {
        let d0 = rms(y.iter().map(|&v| v / scale(v, v)));
        let d1 = rms(y.iter().zip(&k1).map(|(&v, &k)| k / scale(v, v)));
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        for i in 0..dim {
            ytmp[i] = y[i] + h0 * k1[i];
        }
        f(h0, &ytmp, &mut k2)?;
        let d2 = rms(y.iter().zip(k1.iter().zip(&k2)).map(|(&v, (&a, &b))| (b - a) / scale(v, v)))
            / h0;
        let m = d1.max(d2);
        let h1 = if m <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / m).powf(0.2) };
        (100.0 * h0).min(h1)
    };
    h = h.min(t_final);

    let mut last = false;
    let mut steps = 0usize;
    while !last || t < t_final {
        if steps >= opts.max_steps {
            return Err(ChordError::StepSizeUnderflow { t, h });
        }
        steps += 1;
        if t + h >= t_final || t + 1.01 * h >= t_final {
            h = t_final - t;
            last = true;
        } else {
            last = false;
        }
        if h <= 1e-14 * t.abs().max(1e-3) {
            return Err(ChordError::StepSizeUnderflow { t, h });
        }

        for i in 0..dim {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, &ytmp, &mut k2)?;
        for i in 0..dim {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, &ytmp, &mut k3)?;
        for i in 0..dim {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, &ytmp, &mut k4)?;
        for i in 0..dim {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, &ytmp, &mut k5)?;
        for i in 0..dim {
            ytmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, &ytmp, &mut k6)?;
        for i in 0..dim {
            ynew[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + h, &ynew, &mut k7)?;

        let err = rms((0..dim).map(|i| {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            e / scale(y[i], ynew[i])
        }));

        if !err.is_finite() {
            stats.rejected += 1;
            h *= 0.2;
            last = false;
            continue;
        }
        if err > 1.0 {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            last = false;
            continue;
        }

        // accepted: emit dense output for samples inside (t, t + h]
        let t_new = if last { t_final } else { t + h };
        while next_sample < sample_times.len() && sample_times[next_sample] <= t_new {
            let ts = sample_times[next_sample];
            let theta = ((ts - t) / h).clamp(0.0, 1.0);
            let theta1 = 1.0 - theta;
            let v: Vec<f64> = (0..dim)
                .map(|i| {
                    let r1 = y[i];
                    let r2 = ynew[i] - y[i];
                    let r3 = h * k1[i] - r2;
                    let r4 = r2 - h * k7[i] - r3;
                    let r5 = h
                        * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                            + D7 * k7[i]);
                    if theta >= 1.0 {
                        ynew[i]
                    } else {
                        r1 + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5)))
                    }
                })
                .collect();
            out.push(v);
            next_sample += 1;
        }

        stats.accepted += 1;
        t = t_new;
        std::mem::swap(&mut y, &mut ynew);
        std::mem::swap(&mut k1, &mut k7);
        on_step(&y);
        let fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
        h *= fac;
    }
    // samples at exactly t_final that slipped through rounding
    while next_sample < sample_times.len() {
        out.push(y.clone());
        next_sample += 1;
    }
    Ok((out, stats))
}

fn rms(it: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in it {
        s += v * v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

fn sample_grid(t_final: f64, sample_times: &[f64]) -> Vec<f64> {
    let mut ts: Vec<f64> =
        sample_times.iter().copied().filter(|&t| t > 0.0 && t < t_final).collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();
    ts.push(t_final);
    ts
}

fn check_inputs(sys: &SystemDescriptor, x0: &PhaseState, t_final: f64) -> Result<()> {
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(ChordError::InvalidParameter(format!("t_final must be positive, got {t_final}")));
    }
    if x0.dof() != sys.n() {
        return Err(ChordError::InvalidParameter("state dimension mismatch".into()));
    }
    sys.admissible(x0)
}

/// Integrates `x' = X_H(x)` from `x0` for time `t_final`.
pub fn integrate(
    sys: &SystemDescriptor,
    x0: &PhaseState,
    mu: f64,
    t_final: f64,
    opts: &FlowOptions,
    sample_times: &[f64],
) -> Result<FlowResult> {
    check_inputs(sys, x0, t_final)?;
    let h0 = sys.h(x0, mu);
    let mut drift = 0.0f64;
    let grid = sample_grid(t_final, sample_times);
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let x = DVector::from_column_slice(y);
        sys.admissible(&x)?;
        let v = sys.x_h(&x, mu);
        if v.iter().any(|c| !c.is_finite()) {
            return Err(ChordError::NonFinite("Hamiltonian vector field".into()));
        }
        dy.copy_from_slice(v.as_slice());
        Ok(())
    };
    let (samples, stats) = dopri5(rhs, x0.as_slice(), t_final, &grid, opts, |y| {
        let x = DVector::from_column_slice(y);
        drift = drift.max((sys.h(&x, mu) - h0).abs());
    })?;
    let mut states = Vec::with_capacity(grid.len() + 1);
    states.push((0.0, x0.clone()));
    for (t, y) in grid.iter().zip(samples) {
        states.push((*t, PhaseState::from_vector(DVector::from_vec(y))?));
    }
    Ok(FlowResult {
        states,
        monodromy: None,
        mu_sensitivity: None,
        steps_accepted: stats.accepted,
        steps_rejected: stats.rejected,
        max_h_drift: drift,
    })
}

/// Integrates the flow together with `M' = J Hess H(x) M`, `M(0) = I`, and the
/// parameter sensitivity `s' = J Hess H(x) s + J grad H'_mu(x)`, `s(0) = 0`,
/// on one combined state vector.
pub fn integrate_with_variational(
    sys: &SystemDescriptor,
    x0: &PhaseState,
    mu: f64,
    t_final: f64,
    opts: &FlowOptions,
    sample_times: &[f64],
) -> Result<FlowResult> {
    check_inputs(sys, x0, t_final)?;
    let d = 2 * sys.n();
    let n = sys.n();
    let h0 = sys.h(x0, mu);
    let mut drift = 0.0f64;
    let grid = sample_grid(t_final, sample_times);

    let mut y0 = Vec::with_capacity(d + d * d + d);
    y0.extend_from_slice(x0.as_slice());
    y0.extend_from_slice(DMatrix::<f64>::identity(d, d).as_slice());
    y0.extend(std::iter::repeat(0.0).take(d));

    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let x = DVector::from_column_slice(&y[..d]);
        sys.admissible(&x)?;
        let v = sys.x_h(&x, mu);
        let hess = sys.hess_h(&x, mu);
        // A = J Hess
        let mut a = DMatrix::zeros(d, d);
        for i in 0..n {
            a.row_mut(i).copy_from(&hess.row(n + i));
            a.row_mut(n + i).copy_from(&(-hess.row(i)));
        }
        let m = DMatrix::from_column_slice(d, d, &y[d..d + d * d]);
        let s = DVector::from_column_slice(&y[d + d * d..]);
        let dm = &a * m;
        let gj = crate::phase::apply_j(&sys.model().mu_gradient(&x, mu));
        let ds = &a * s + gj;
        if v.iter().chain(dm.iter()).chain(ds.iter()).any(|c| !c.is_finite()) {
            return Err(ChordError::NonFinite("variational right-hand side".into()));
        }
        dy[..d].copy_from_slice(v.as_slice());
        dy[d..d + d * d].copy_from_slice(dm.as_slice());
        dy[d + d * d..].copy_from_slice(ds.as_slice());
        Ok(())
    };
    let (samples, stats) = dopri5(rhs, &y0, t_final, &grid, opts, |y| {
        let x = DVector::from_column_slice(&y[..d]);
        drift = drift.max((sys.h(&x, mu) - h0).abs());
    })?;
    let last = samples.last().expect("grid always contains t_final").clone();
    let mut states = Vec::with_capacity(grid.len() + 1);
    states.push((0.0, x0.clone()));
    for (t, y) in grid.iter().zip(samples) {
        states.push((*t, PhaseState::from_vector(DVector::from_column_slice(&y[..d]))?));
    }
    Ok(FlowResult {
        states,
        monodromy: Some(DMatrix::from_column_slice(d, d, &last[d..d + d * d])),
        mu_sensitivity: Some(DVector::from_column_slice(&last[d + d * d..])),
        steps_accepted: stats.accepted,
        steps_rejected: stats.rejected,
        max_h_drift: drift,
    })
}

/// Flow map `phi^t(x)` without samples.
pub fn flow_map(
    sys: &SystemDescriptor,
    x0: &PhaseState,
    mu: f64,
    t: f64,
    opts: &FlowOptions,
) -> Result<PhaseState> {
    Ok(integrate(sys, x0, mu, t, opts, &[])?.final_state().clone())
}
