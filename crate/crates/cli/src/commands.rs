use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use reeb_chords::action::{action, DiscretePath};
use reeb_chords::atlas_io::{write_atlas, write_plot_bundle, ProbeSummary};
use reeb_chords::chord::{crossing_scan, nondegeneracy, scan_guesses, shoot, Chord, ShootOptions};
use reeb_chords::contact::contact_check;
use reeb_chords::continuation::{
    continue_family, detect_events, omega_probe, theorem_b_census, EventKind, FamilyAtlas,
};
use reeb_chords::floer::{
    flow, resample, stretching_experiment, CutoffProfile, FlowSchedule, StretchOutcome,
};
use reeb_chords::{ChordError, PhaseState, SystemDescriptor};

use crate::config::{ConfigError, FlowMode, RunConfig, SeededGuess};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("usage: {0}")]
    Usage(String),
    #[error("solver failure: {0}")]
    Solver(#[from] ChordError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_USAGE,
            CliError::Solver(_) | CliError::Io(_) => EXIT_SOLVER,
        }
    }
}

pub struct Context {
    pub cfg: RunConfig,
    pub sys: SystemDescriptor,
    pub out: PathBuf,
    pub seeds: Vec<SeededGuess>,
    pub verbose: bool,
}

impl Context {
    pub fn new(config: &Path, seed_file: Option<&Path>, out: Option<&Path>, verbose: bool) -> Result<Self, CliError> {
        let cfg = RunConfig::load(config)?;
        let sys = cfg.system().map_err(|e| CliError::Usage(e.to_string()))?;
        let out = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.dir.clone());
        std::fs::create_dir_all(&out)?;
        let seeds = match seed_file {
            Some(p) => read_seed_file(p)?,
            None => Vec::new(),
        };
        Ok(Context { cfg, sys, out, seeds, verbose })
    }

    fn shoot_options(&self) -> ShootOptions {
        self.cfg.solver.shoot_options()
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// One JSON object per line: `{"mu": .., "u": [..], "tau": .., "direction": ..}`.
pub fn read_seed_file(path: &Path) -> Result<Vec<SeededGuess>, CliError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let g: SeededGuess = serde_json::from_str(&line)
            .map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), k + 1)))?;
        out.push(g);
    }
    Ok(out)
}

fn json_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> Result<(), CliError> {
    let s = serde_json::to_string(value).map_err(|e| CliError::Usage(e.to_string()))?;
    writeln!(out, "{s}")?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ContactLine {
    mu: f64,
    f_min: f64,
    f_max: f64,
    kappa: Option<f64>,
    sample_count: usize,
    passed: bool,
    violation_count: usize,
    violations: Vec<PhaseState>,
}

pub fn cmd_contact_check(ctx: &Context) -> Result<i32, CliError> {
    let sec = ctx
        .cfg
        .contact_check
        .as_ref()
        .ok_or_else(|| CliError::Usage("config has no [contact_check] section".into()))?;
    if sec.mu.is_empty() {
        return Err(CliError::Usage("contact_check.mu is empty".into()));
    }
    let mut out = BufWriter::new(File::create(ctx.out.join("contact.jsonl"))?);
    let mut all = true;
    for &mu in &sec.mu {
        ctx.sys.check_mu(mu)?;
        let r = contact_check(&ctx.sys, mu, &sec.sampler)?;
        all &= r.passed();
        println!(
            "mu = {mu:.6}  f_min = {:.6e}  f_max = {:.6e}  kappa = {:.6}  samples = {}  {}",
            r.f_min,
            r.f_max,
            r.kappa,
            r.sample_count,
            if r.passed() { "pass" } else { "FAIL" }
        );
        json_line(
            &mut out,
            &ContactLine {
                mu,
                f_min: r.f_min,
                f_max: r.f_max,
                kappa: r.kappa.is_finite().then_some(r.kappa),
                sample_count: r.sample_count,
                passed: r.passed(),
                violation_count: r.violations.len(),
                violations: r.violations.iter().take(20).cloned().collect(),
            },
        )?;
    }
    out.flush()?;
    Ok(if all { EXIT_OK } else { EXIT_CHECK_FAILED })
}

#[derive(Debug, Serialize)]
pub struct ChordRecord {
    pub mu: f64,
    pub u: Vec<f64>,
    pub tau: f64,
    pub action: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub sigma_min: f64,
    pub jac_det: f64,
    pub degenerate: bool,
}

fn chord_record(sys: &SystemDescriptor, c: &Chord, opts: &ShootOptions) -> Result<ChordRecord, CliError> {
    let nd = nondegeneracy(sys, c, opts)?;
    Ok(ChordRecord {
        mu: c.mu,
        u: c.start.iter().copied().collect(),
        tau: c.tau,
        action: action(sys, c),
        residual_norm: c.residual_norm,
        iterations: c.iterations,
        sigma_min: nd.sigma_min,
        jac_det: nd.shooting_jac_det,
        degenerate: nd.degenerate,
    })
}

pub fn cmd_find_chord(ctx: &Context) -> Result<i32, CliError> {
    let sec = ctx.cfg.find_chord.clone().unwrap_or_default();
    let opts = ctx.shoot_options();
    let mut guesses: Vec<SeededGuess> = sec.guesses.clone();
    guesses.extend(ctx.seeds.iter().cloned());
    if guesses.is_empty() && sec.scan.is_none() {
        return Err(CliError::Usage("no guesses, seed file or scan given".into()));
    }
    let mut out = BufWriter::new(File::create(ctx.out.join("chords.jsonl"))?);
    let mut failure: Option<ChordError> = None;
    for g in &guesses {
        match shoot(&ctx.sys, g.mu, &g.guess(), &opts) {
            Ok(c) => {
                let rec = chord_record(&ctx.sys, &c, &opts)?;
                println!("chord mu = {} u = {:?} tau = {:.12} action = {:.12}", rec.mu, rec.u, rec.tau, rec.action);
                json_line(&mut out, &rec)?;
            }
            Err(e) => {
                eprintln!("guess at mu = {} failed: {e}", g.mu);
                failure.get_or_insert(e);
            }
        }
    }
    if let Some(scan) = &sec.scan {
        ctx.sys.check_mu(scan.mu)?;
        if scan.count < 2 {
            return Err(CliError::Usage("scan.count must be at least 2".into()));
        }
        let first: Vec<f64> = (0..scan.count)
            .map(|k| scan.first_lo + (scan.first_hi - scan.first_lo) * k as f64 / (scan.count - 1) as f64)
            .collect();
        let pts = crossing_scan(&ctx.sys, scan.mu, &first, scan.second_guess, scan.t_max, scan.dt, &opts.flow);
        let cand = scan_guesses(&pts);
        ctx.log(format!("scan produced {} candidates", cand.len()));
        let mut found: Vec<Chord> = Vec::new();
        for g in &cand {
            let Ok(c) = shoot(&ctx.sys, scan.mu, g, &opts) else { continue };
            if found.iter().any(|f| reeb_chords::chord::surrogate_distance(f, &c) < 1e-6) {
                continue;
            }
            let rec = chord_record(&ctx.sys, &c, &opts)?;
            println!("scan chord mu = {} u = {:?} tau = {:.12}", rec.mu, rec.u, rec.tau);
            json_line(&mut out, &rec)?;
            found.push(c);
        }
        if found.is_empty() {
            failure.get_or_insert(ChordError::NoConvergence { iterations: 0, residual: f64::INFINITY });
        }
    }
    out.flush()?;
    match failure {
        Some(e) => Err(CliError::Solver(e)),
        None => Ok(EXIT_OK),
    }
}

#[derive(Debug, Serialize)]
struct CensusLine {
    family: usize,
    event_index: usize,
    mu_infinity: f64,
    delta: f64,
    count_below: usize,
    count_above: usize,
}

#[derive(Debug, Serialize)]
struct FamilySummary {
    family: usize,
    rows: usize,
    mu_min: f64,
    mu_max: f64,
    events: Vec<(String, f64)>,
}

pub fn cmd_continue(ctx: &Context) -> Result<i32, CliError> {
    let sec = ctx.cfg.continue_.clone().unwrap_or_default();
    let mut seeds = sec.seeds.clone();
    seeds.extend(ctx.seeds.iter().cloned());
    if seeds.is_empty() {
        return Err(CliError::Usage("no continuation seeds".into()));
    }
    let opts = ctx.shoot_options();
    let copts = ctx.cfg.continuation;
    let mut atlases: Vec<FamilyAtlas> = Vec::new();
    let mut summary = Vec::new();
    let mut census_lines = Vec::new();
    for (i, s) in seeds.iter().enumerate() {
        let seed = shoot(&ctx.sys, s.mu, &s.guess(), &opts)?;
        let mut atlas = continue_family(&ctx.sys, &seed, s.direction, &opts, &copts)?;
        detect_events(&ctx.sys, &mut atlas, &opts, &copts)?;
        ctx.log(format!("family {i}: {} rows, {} events", atlas.rows.len(), atlas.events.len()));
        let mut probes = Vec::new();
        if sec.probe_events {
            for (k, e) in atlas.events.iter().enumerate() {
                let probe_it = e.kind == EventKind::Fold || (e.kind == EventKind::Degeneracy && !e.coincident);
                if !probe_it {
                    continue;
                }
                match omega_probe(&ctx.sys, &atlas, e, &opts, &ctx.cfg.probe) {
                    Ok(p) => {
                        if ctx.cfg.census.enabled && e.kind == EventKind::Fold {
                            let c = theorem_b_census(&ctx.sys, p.mu_infinity_estimate, &p.limit_chord, &opts, &ctx.cfg.census.options);
                            println!(
                                "family {i} event {k}: census at mu_inf -+ {:e}: {} below, {} above",
                                ctx.cfg.census.options.delta, c.count_below, c.count_above
                            );
                            census_lines.push(CensusLine {
                                family: i,
                                event_index: k,
                                mu_infinity: p.mu_infinity_estimate,
                                delta: ctx.cfg.census.options.delta,
                                count_below: c.count_below,
                                count_above: c.count_above,
                            });
                        }
                        probes.push(ProbeSummary::from_probe(k, &p));
                    }
                    Err(err) => eprintln!("family {i} event {k}: probe failed: {err}"),
                }
            }
        }
        write_atlas(&ctx.out.join(format!("family_{i}.atlas.jsonl")), &atlas, &probes)?;
        let events: Vec<(String, f64)> = atlas
            .events
            .iter()
            .map(|e| (format!("{:?}", e.kind), e.point.as_ref().map(|p| p.mu).unwrap_or(e.mu_estimate)))
            .collect();
        for (kind, mu) in &events {
            println!("family {i}: {kind} at mu = {mu:.12}");
        }
        let mus = atlas.rows.iter().map(|r| r.mu);
        summary.push(FamilySummary {
            family: i,
            rows: atlas.rows.len(),
            mu_min: mus.clone().fold(f64::INFINITY, f64::min),
            mu_max: mus.fold(f64::NEG_INFINITY, f64::max),
            events,
        });
        atlases.push(atlas);
    }
    let refs: Vec<&FamilyAtlas> = atlases.iter().collect();
    write_plot_bundle(&ctx.out, &refs)?;
    let mut f = BufWriter::new(File::create(ctx.out.join("summary.jsonl"))?);
    for s in &summary {
        json_line(&mut f, s)?;
    }
    for c in &census_lines {
        json_line(&mut f, c)?;
    }
    f.flush()?;
    Ok(EXIT_OK)
}

/// Deterministic perturbation of the interior nodes and sigma, relative size `eps`.
fn perturb(path: &mut DiscretePath, eps: f64) {
    let last = path.nodes.len() - 1;
    for (k, v) in path.nodes.iter_mut().enumerate() {
        if k == 0 || k == last {
            continue;
        }
        for (i, x) in v.iter_mut().enumerate() {
            *x += eps * (0.7 * k as f64 + 1.3 * i as f64).sin();
        }
    }
    path.sigma *= 1.0 + eps;
}

pub fn cmd_gradient_flow(ctx: &Context) -> Result<i32, CliError> {
    let sec = ctx
        .cfg
        .gradient_flow
        .as_ref()
        .ok_or_else(|| CliError::Usage("config has no [gradient_flow] section".into()))?;
    let opts = ctx.shoot_options();
    let seed = shoot(&ctx.sys, sec.seed.mu, &sec.seed.guess(), &opts)?;
    let fopts = &sec.options;
    match sec.mode {
        FlowMode::Flow => {
            let profile = sec.profile.unwrap_or(CutoffProfile::BetaR { r: 0.0 });
            let schedule = FlowSchedule::new(seed.mu, sec.mu1, profile);
            let mut y0 = resample(&DiscretePath::from_chord(&seed), fopts.n_intervals);
            perturb(&mut y0, sec.perturbation);
            let line = flow(&ctx.sys, &y0, &schedule, fopts)?;
            line.write_csv(BufWriter::new(File::create(ctx.out.join("flow.csv"))?))?;
            let last = line.final_state();
            let bound = line.energy_bound();
            println!(
                "flow: energy = {:.6e}  bound 2(mu1-mu0)kc = {:.6e}  identity defect = {:.3e}  final gradient = {:.3e}",
                line.energy,
                bound,
                line.energy_identity_error(),
                last.gradient_norm
            );
            if line.energy > 1.2 * bound + 1e-14 {
                println!("energy monitor: FAIL");
                return Ok(EXIT_CHECK_FAILED);
            }
            if line.max_distance > fopts.rho {
                println!("flow line leaves the ball (max distance {:.3e})", line.max_distance);
                return Ok(EXIT_SOLVER);
            }
            Ok(EXIT_OK)
        }
        FlowMode::Stretch => {
            if sec.r_list.is_empty() {
                return Err(CliError::Usage("gradient_flow.r_list is empty".into()));
            }
            let report = stretching_experiment(&ctx.sys, &seed, sec.mu1, &sec.r_list, fopts)?;
            let mut f = BufWriter::new(File::create(ctx.out.join("stretch.jsonl"))?);
            for r in &report.records {
                println!(
                    "R = {:<6} {:?}  plateau gradient = {:.3e}  max distance = {:.3e}  energy = {:.3e} (bound {:.3e})",
                    r.r, r.outcome, r.plateau_gradient_norm, r.max_distance, r.energy, r.energy_bound
                );
                json_line(&mut f, r)?;
            }
            f.flush()?;
            let worst = report.records.iter().map(|r| r.outcome).fold(StretchOutcome::Approached, |a, b| {
                let rank = |o: StretchOutcome| match o {
                    StretchOutcome::Approached => 0,
                    StretchOutcome::Parked => 1,
                    StretchOutcome::Escaped | StretchOutcome::NotReached => 2,
                };
                if rank(b) > rank(a) {
                    b
                } else {
                    a
                }
            });
            Ok(match worst {
                StretchOutcome::Approached => EXIT_OK,
                StretchOutcome::Parked => EXIT_CHECK_FAILED,
                _ => EXIT_SOLVER,
            })
        }
    }
}
