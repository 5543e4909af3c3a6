//! Line-delimited atlas files and the plot bundle.
//!
//! An atlas file is JSON lines: one header, then `row`, `event` and `probe`
//! records in any order. Floats are written in shortest round-trip form, so a
//! reread atlas is bit-identical.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chord::NondegReport;
use crate::continuation::{AtlasRow, FamilyAtlas, FamilyEvent, OmegaProbe};
use crate::error::{ChordError, Result};

pub const ATLAS_FORMAT: &str = "chord-atlas";
pub const ATLAS_VERSION: u32 = 1;
pub const ROW_FIELDS: [&str; 9] =
    ["mu", "u", "tau", "action", "sigma_min", "jac_det", "degenerate", "tangent", "arclength"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasHeader {
    pub format: String,
    pub version: u32,
    pub system_id: String,
    pub n: usize,
    pub direction: f64,
    pub row_fields: Vec<String>,
}

/// Probe results stored next to the event they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub event_index: usize,
    pub mu_infinity_estimate: f64,
    pub sample_mus: Vec<f64>,
    pub pairwise_c0_distances: Vec<f64>,
    pub action_values: Vec<f64>,
    pub limit_u: Vec<f64>,
    pub limit_tau: f64,
    pub limit_nondegeneracy: NondegReport,
    pub limit_degenerate: bool,
    pub depth_reached: usize,
}

impl ProbeSummary {
    pub fn from_probe(event_index: usize, p: &OmegaProbe) -> Self {
        ProbeSummary {
            event_index,
            mu_infinity_estimate: p.mu_infinity_estimate,
            sample_mus: p.sample_mus.clone(),
            pairwise_c0_distances: p.pairwise_c0_distances.clone(),
            action_values: p.action_values.clone(),
            limit_u: p.limit_chord.start.iter().copied().collect(),
            limit_tau: p.limit_chord.tau,
            limit_nondegeneracy: p.limit_nondegeneracy,
            limit_degenerate: p.limit_degenerate,
            depth_reached: p.depth_reached,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum AtlasLine {
    Header(AtlasHeader),
    Row(AtlasRow),
    Event(FamilyEvent),
    Probe(ProbeSummary),
}

/// Appends records to an atlas file as they are produced.
pub struct AtlasWriter {
    out: BufWriter<File>,
}

impl AtlasWriter {
    pub fn create(path: &Path, system_id: &str, n: usize, direction: f64) -> Result<Self> {
        let mut w = AtlasWriter { out: BufWriter::new(File::create(path)?) };
        w.line(&AtlasLine::Header(AtlasHeader {
            format: ATLAS_FORMAT.into(),
            version: ATLAS_VERSION,
            system_id: system_id.into(),
            n,
            direction,
            row_fields: ROW_FIELDS.iter().map(|s| s.to_string()).collect(),
        }))?;
        Ok(w)
    }

    fn line(&mut self, rec: &AtlasLine) -> Result<()> {
        let s = serde_json::to_string(rec).map_err(|e| ChordError::Io(e.to_string()))?;
        writeln!(self.out, "{s}")?;
        Ok(())
    }

    pub fn row(&mut self, row: &AtlasRow) -> Result<()> {
        self.line(&AtlasLine::Row(row.clone()))
    }

    pub fn event(&mut self, event: &FamilyEvent) -> Result<()> {
        self.line(&AtlasLine::Event(event.clone()))
    }

    pub fn probe(&mut self, probe: &ProbeSummary) -> Result<()> {
        self.line(&AtlasLine::Probe(probe.clone()))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_atlas(path: &Path, atlas: &FamilyAtlas, probes: &[ProbeSummary]) -> Result<()> {
    let mut w = AtlasWriter::create(path, &atlas.system_id, atlas.n, atlas.direction)?;
    for r in &atlas.rows {
        w.row(r)?;
    }
    for e in &atlas.events {
        w.event(e)?;
    }
    for p in probes {
        w.probe(p)?;
    }
    w.finish()
}

pub fn read_atlas(path: &Path) -> Result<(FamilyAtlas, Vec<ProbeSummary>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut header: Option<AtlasHeader> = None;
    let mut rows = Vec::new();
    let mut events = Vec::new();
    let mut probes = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AtlasLine = serde_json::from_str(&line)
            .map_err(|e| ChordError::Io(format!("{}:{}: {e}", path.display(), k + 1)))?;
        match rec {
            AtlasLine::Header(h) => {
                if h.format != ATLAS_FORMAT || h.version != ATLAS_VERSION {
                    return Err(ChordError::Io(format!("unsupported atlas format {} v{}", h.format, h.version)));
                }
                header = Some(h);
            }
            AtlasLine::Row(r) => rows.push(r),
            AtlasLine::Event(e) => events.push(e),
            AtlasLine::Probe(p) => probes.push(p),
        }
    }
    let h = header.ok_or_else(|| ChordError::Io(format!("{}: missing header line", path.display())))?;
    Ok((FamilyAtlas { system_id: h.system_id, n: h.n, direction: h.direction, rows, events }, probes))
}

pub const FAMILY_CSV_HEADER: &str = "mu,start_coordinate,tau,action,sigma_min";

/// Plot table of one family; `start_coordinate` is the first Lagrangian coordinate.
pub fn write_family_csv<W: Write>(mut out: W, atlas: &FamilyAtlas) -> Result<()> {
    writeln!(out, "{FAMILY_CSV_HEADER}")?;
    for r in &atlas.rows {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.mu, r.u[0], r.tau, r.action, r.sigma_min
        )?;
    }
    Ok(())
}

/// Event markers for the plot: `mu,start_coordinate,kind`.
pub fn write_events_csv<W: Write>(mut out: W, atlases: &[&FamilyAtlas]) -> Result<()> {
    writeln!(out, "mu,start_coordinate,kind")?;
    for atlas in atlases {
        for e in &atlas.events {
            let (mu, x) = match &e.point {
                Some(p) => (p.mu, p.u[0]),
                None => (e.mu_estimate, atlas.rows[e.rows.0].u[0]),
            };
            let kind = serde_json::to_value(e.kind).map_err(|err| ChordError::Io(err.to_string()))?;
            writeln!(out, "{mu:.16e},{x:.16e},{}", kind.as_str().unwrap_or("event"))?;
        }
    }
    Ok(())
}

/// Gnuplot script drawing every family CSV (parameter horizontal, start
/// coordinate vertical) and the event markers.
pub fn gnuplot_script(family_csvs: &[String], events_csv: Option<&str>, png: &str) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str(&format!("set terminal pngcairo size 900,600\nset output '{png}'\n"));
    s.push_str("set xlabel 'family parameter'\nset ylabel 'chord start coordinate'\nset key outside\n");
    let mut parts: Vec<String> = family_csvs
        .iter()
        .enumerate()
        .map(|(i, f)| format!("'{f}' using 1:2 skip 1 with lines lw 2 title 'family {i}'"))
        .collect();
    if let Some(ev) = events_csv {
        parts.push(format!("'{ev}' using 1:2 skip 1 with points pt 7 ps 1.5 title 'events'"));
    }
    s.push_str("plot ");
    s.push_str(&parts.join(", \\\n     "));
    s.push('\n');
    s
}

/// Writes `family_<i>.csv`, `events.csv` and `families.gp` into `dir`.
pub fn write_plot_bundle(dir: &Path, atlases: &[&FamilyAtlas]) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for (i, a) in atlases.iter().enumerate() {
        let name = format!("family_{i}.csv");
        write_family_csv(BufWriter::new(File::create(dir.join(&name))?), a)?;
        names.push(name);
    }
    write_events_csv(BufWriter::new(File::create(dir.join("events.csv"))?), atlases)?;
    let script = gnuplot_script(&names, Some("events.csv"), "families.png");
    std::fs::write(dir.join("families.gp"), script)?;
    let mut all = names;
    all.push("events.csv".into());
    all.push("families.gp".into());
    Ok(all)
}

/// Rows of a family CSV, parsed back.
pub fn read_family_csv(path: &Path) -> Result<Vec<[f64; 5]>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(FAMILY_CSV_HEADER) {
        return Err(ChordError::Io(format!("{}: unexpected header", path.display())));
    }
    lines
        .map(|l| {
            let v: Vec<f64> = l
                .split(',')
                .map(|t| t.parse::<f64>().map_err(|e| ChordError::Io(e.to_string())))
                .collect::<Result<_>>()?;
            v.try_into().map_err(|_| ChordError::Io(format!("bad row '{l}'")))
        })
        .collect()
}
