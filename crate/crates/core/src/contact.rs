//! Sampling of the level set `Sigma_mu` and the contact function `f = dH(Y)`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ChordError, Result};
use crate::phase::{PhaseState, SystemDescriptor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Lower corner of the sampling box in phase space.
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    /// Uniform random points drawn in the box.
    pub random_points: usize,
    /// Points per axis of an additional tensor grid (0 disables it).
    pub grid_per_axis: usize,
    pub seed: u64,
    pub min_accepted: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            box_lo: Vec::new(),
            box_hi: Vec::new(),
            random_points: 2000,
            grid_per_axis: 0,
            seed: 7,
            min_accepted: 100,
            max_iter: 25,
            tol: 1e-10,
        }
    }
}

impl SamplerConfig {
    pub fn in_box(lo: &[f64], hi: &[f64]) -> Self {
        SamplerConfig { box_lo: lo.to_vec(), box_hi: hi.to_vec(), ..Default::default() }
    }

    fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter().zip(self.box_lo.iter().zip(&self.box_hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactReport {
    pub mu: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub kappa: f64,
    pub sample_count: usize,
    pub violations: Vec<PhaseState>,
}

impl ContactReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// Report for an ensemble of parameters: extreme values, largest kappa.
    pub fn merge(reports: &[ContactReport]) -> Option<ContactReport> {
        let first = reports.first()?;
        let mut out = first.clone();
        for r in &reports[1..] {
            out.f_min = out.f_min.min(r.f_min);
            out.f_max = out.f_max.max(r.f_max);
            out.kappa = out.kappa.max(r.kappa);
            out.sample_count += r.sample_count;
            out.violations.extend(r.violations.iter().cloned());
        }
        Some(out)
    }
}

/// Newton projection along `grad H` onto `H_mu = 0`.
pub fn project_to_level(
    sys: &SystemDescriptor,
    x: &DVector<f64>,
    mu: f64,
    max_iter: usize,
    tol: f64,
) -> Option<DVector<f64>> {
    let mut x = x.clone();
    for _ in 0..max_iter {
        if sys.admissible(&x).is_err() {
            return None;
        }
        let h = sys.h(&x, mu);
        if !h.is_finite() {
            return None;
        }
        if h.abs() < tol {
            return Some(x);
        }
        let g = sys.grad_h(&x, mu);
        let g2 = g.norm_squared();
        if !(g2 > 1e-300) {
            return None;
        }
        x.axpy(-h / g2, &g, 1.0);
    }
    let h = sys.h(&x, mu);
    (h.abs() < tol && sys.admissible(&x).is_ok()).then_some(x)
}

pub fn contact_check(sys: &SystemDescriptor, mu: f64, cfg: &SamplerConfig) -> Result<ContactReport> {
    let dim = 2 * sys.n();
    if cfg.box_lo.len() != dim || cfg.box_hi.len() != dim {
        return Err(ChordError::InvalidParameter(format!("sampling box must have {dim} coordinates")));
    }
    if cfg.box_lo.iter().zip(&cfg.box_hi).any(|(a, b)| !(a < b)) {
        return Err(ChordError::InvalidParameter("empty sampling box".into()));
    }
    let mut starts: Vec<DVector<f64>> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.random_points {
        starts.push(DVector::from_fn(dim, |i, _| rng.gen_range(cfg.box_lo[i]..cfg.box_hi[i])));
    }
    if cfg.grid_per_axis >= 2 {
        let m = cfg.grid_per_axis;
        let total = m.pow(dim as u32);
        for idx in 0..total {
            let mut r = idx;
            starts.push(DVector::from_fn(dim, |i, _| {
                let k = r % m;
                r /= m;
                cfg.box_lo[i] + (cfg.box_hi[i] - cfg.box_lo[i]) * k as f64 / (m - 1) as f64
            }));
        }
    }

    let mut f_min = f64::INFINITY;
    let mut f_max = f64::NEG_INFINITY;
    let mut accepted = 0;
    let mut violations = Vec::new();
    for x0 in &starts {
        let Some(x) = project_to_level(sys, x0, mu, cfg.max_iter, cfg.tol) else { continue };
        if !cfg.contains(&x) {
            continue;
        }
        accepted += 1;
        let f = sys.contact_function(&x, mu);
        f_min = f_min.min(f);
        f_max = f_max.max(f);
        if f <= 0.0 {
            violations.push(PhaseState::from_vector(x)?);
        }
    }
    if accepted < cfg.min_accepted.max(1) {
        return Err(ChordError::SamplingFailed { accepted, required: cfg.min_accepted });
    }
    let kappa = if f_min > 0.0 { f_max.max(1.0 / f_min).max(1.0) } else { f64::INFINITY };
    Ok(ContactReport { mu, f_min, f_max, kappa, sample_count: accepted, violations })
}
