#![allow(dead_code)]

use nalgebra::DVector;

use reeb_chords::chord::{sample_chord, shoot, Chord, ChordGuess, ShootOptions};
use reeb_chords::contact::{contact_check, ContactReport, SamplerConfig};
use reeb_chords::continuation::{continue_family, detect_events, ContinuationOptions, FamilyAtlas};
use reeb_chords::systems::{builtin_system, BuiltinName, BuiltinParams};
use reeb_chords::SystemDescriptor;

pub fn system(name: BuiltinName) -> SystemDescriptor {
    builtin_system(name, &BuiltinParams::default()).unwrap()
}

pub fn harmonic_chord(samples: usize) -> (SystemDescriptor, Chord) {
    let sys = system(BuiltinName::Harmonic);
    let opts = ShootOptions { samples, ..Default::default() };
    let c = shoot(&sys, 0.0, &ChordGuess::new(&[1.1], 1.4), &opts).unwrap();
    (sys, c)
}

/// Lower-branch (flat) arc of the projectile system.
pub fn synthetic_seed(mu: f64, samples: usize) -> (SystemDescriptor, Chord) {
    let sys = system(BuiltinName::SyntheticFold);
    let opts = ShootOptions { samples, ..Default::default() };
    let c = shoot(&sys, mu, &ChordGuess::new(&[0.72139, 0.69311], 1.38621), &opts).unwrap();
    (sys, c)
}

pub fn harmonic_shift_family() -> (SystemDescriptor, FamilyAtlas) {
    let sys = system(BuiltinName::HarmonicShift);
    let opts = ShootOptions::default();
    let seed = shoot(&sys, 0.0, &ChordGuess::new(&[1.0], std::f64::consts::FRAC_PI_2), &opts).unwrap();
    let copts = ContinuationOptions::default();
    let mut atlas = continue_family(&sys, &seed, 1.0, &opts, &copts).unwrap();
    detect_events(&sys, &mut atlas, &opts, &copts).unwrap();
    (sys, atlas)
}

pub struct RtbpSeed {
    pub mu: f64,
    pub u: [f64; 2],
    pub tau: f64,
}

/// Short retrograde orbits around the heavy primary.
pub const RTBP_LOWER: RtbpSeed = RtbpSeed { mu: 3.0, u: [0.24891042758348106, -2.0004199675583014], tau: 0.349074482289 };
/// Longer orbits that fold back near Jacobi energy 3.164.
pub const RTBP_UPPER: RtbpSeed =
    RtbpSeed { mu: 3.0653841409022107, u: [0.7351869474813874, 1.1786746936563923], tau: 5.8240436117222405 };

pub fn rtbp_family(seed: &RtbpSeed) -> (SystemDescriptor, FamilyAtlas) {
    let sys = system(BuiltinName::RtbpPlanar);
    let opts = ShootOptions::default();
    let c = shoot(&sys, seed.mu, &ChordGuess::new(&seed.u, seed.tau), &opts).unwrap();
    let copts = ContinuationOptions::default();
    let mut atlas = continue_family(&sys, &c, 1.0, &opts, &copts).unwrap();
    detect_events(&sys, &mut atlas, &opts, &copts).unwrap();
    (sys, atlas)
}

/// Chords of the atlas rows with index `idx`, at `samples` intervals.
pub fn row_chords(sys: &SystemDescriptor, atlas: &FamilyAtlas, idx: &[usize], samples: usize) -> Vec<Chord> {
    let opts = ShootOptions { samples, ..Default::default() };
    idx.iter()
        .map(|&i| {
            let r = &atlas.rows[i];
            sample_chord(sys, r.mu, &DVector::from_column_slice(&r.u), r.tau, &opts).unwrap()
        })
        .collect()
}

pub fn spread_indices(len: usize, count: usize) -> Vec<usize> {
    let count = count.min(len).max(1);
    if count == 1 {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..count).map(|k| k * (len - 1) / (count - 1)).collect();
    v.dedup();
    v
}

/// Sampler for `Sigma_mu` inside the bounding box of the family's chords,
/// widened by 10% per side.
pub fn family_sampler(sys: &SystemDescriptor, atlas: &FamilyAtlas) -> SamplerConfig {
    let idx = spread_indices(atlas.rows.len(), 12);
    let chords = row_chords(sys, atlas, &idx, 64);
    let dim = 2 * sys.n();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for c in &chords {
        for x in &c.samples {
            for i in 0..dim {
                lo[i] = lo[i].min(x[i]);
                hi[i] = hi[i].max(x[i]);
            }
        }
    }
    for i in 0..dim {
        let pad = 0.1 * (hi[i] - lo[i]).max(1e-3);
        lo[i] -= pad;
        hi[i] += pad;
    }
    SamplerConfig { random_points: 20000, min_accepted: 50, ..SamplerConfig::in_box(&lo, &hi) }
}

/// Contact reports at the parameters of the rows `idx`, or the first failure.
pub fn family_contact(
    sys: &SystemDescriptor,
    atlas: &FamilyAtlas,
    idx: &[usize],
) -> std::result::Result<Vec<ContactReport>, String> {
    let cfg = family_sampler(sys, atlas);
    let mut out = Vec::new();
    for &i in idx {
        let mu = atlas.rows[i].mu;
        let rep = contact_check(sys, mu, &cfg).map_err(|e| format!("mu = {mu}: {e}"))?;
        if !rep.passed() {
            return Err(format!("mu = {mu}: f_min = {:.3e}", rep.f_min));
        }
        out.push(rep);
    }
    Ok(out)
}

pub fn synthetic_family() -> (SystemDescriptor, FamilyAtlas) {
    let (sys, seed) = synthetic_seed(0.3, 256);
    let opts = ShootOptions::default();
    let copts = ContinuationOptions::default();
    let mut atlas = continue_family(&sys, &seed, 1.0, &opts, &copts).unwrap();
    detect_events(&sys, &mut atlas, &opts, &copts).unwrap();
    (sys, atlas)
}

/// Closed-form ballistic arcs of the projectile system at `mu`: launch
/// momenta on the first fiber and flight times, flat arc first.
pub fn projectile_arcs(mu: f64) -> Vec<([f64; 2], f64)> {
    let m = reeb_chords::systems::ProjectileFold::default();
    let v2 = m.speed_squared(mu);
    let s = m.gravity * m.distance / v2;
    if s > 1.0 {
        return Vec::new();
    }
    let v = v2.sqrt();
    let t = 0.5 * s.asin();
    [t, std::f64::consts::FRAC_PI_2 - t]
        .iter()
        .map(|&th| ([v * th.cos(), v * th.sin()], 2.0 * v * th.sin() / m.gravity))
        .collect()
}

/// Fold parameter from a 1-D search: the largest horizontal range over launch
/// angles (golden section) equals the fiber distance, located by bisection in mu.
pub fn projectile_fold_by_bisection() -> f64 {
    let m = reeb_chords::systems::ProjectileFold::default();
    let max_range = |mu: f64| {
        let v2 = m.gravity * m.distance + 2.0 * m.coupling * (m.mu_fold - mu);
        let range = |th: f64| v2 * (2.0 * th).sin() / m.gravity;
        let (mut a, mut b) = (0.0, std::f64::consts::FRAC_PI_2);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if range(c) > range(d) {
                b = d;
            } else {
                a = c;
            }
        }
        range(0.5 * (a + b))
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if max_range(mid) > m.distance {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A state in a region where the system is regular; RTBP stays near the heavy primary.
pub fn regular_state(name: BuiltinName, r: &[f64]) -> DVector<f64> {
    match name {
        BuiltinName::Harmonic | BuiltinName::HarmonicShift => DVector::from_vec(vec![2.0 * r[0], 2.0 * r[1]]),
        BuiltinName::HenonHeiles => DVector::from_fn(4, |i, _| 0.4 * r[i]),
        BuiltinName::RtbpPlanar => {
            // near-circular Kepler orbit about the heavy primary, either sense
            let rad = 0.3 + 0.2 * r[0].abs();
            let ang = std::f64::consts::PI * r[1];
            let (q1, q2) = (-1e-3 + rad * ang.cos(), rad * ang.sin());
            let speed = (0.999 / rad).sqrt() * (1.0 + 0.2 * r[2]) * r[3].signum();
            let (v1, v2) = (-speed * ang.sin(), speed * ang.cos());
            // inertial velocity v = p + (q2, -q1)
            DVector::from_vec(vec![q1, q2, v1 - q2, v2 + q1])
        }
        BuiltinName::SyntheticFold => DVector::from_fn(4, |i, _| r[i]),
    }
}

