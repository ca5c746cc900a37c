//! Result files: trajectory and potential tables, text reports, SVG plots
//! and batch summaries.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{ibr_run, GameError, IbrConfig, IbrReport};
use crate::highway::{Lane, Profile, Scenario, Strategy, VehicleGraph};

/// Slack allowed on `Φ(θ^{k+1}) ≤ Φ(θ^k)` before a run counts as non-monotone.
pub const MONOTONICITY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExportError + '_ {
    move |source| ExportError::Io { path: path.to_path_buf(), source }
}

/// One row of the trajectory table. `a` and `b` are empty on the last step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub vehicle: usize,
    pub s: f64,
    pub v: f64,
    pub lane: Lane,
    pub a: Option<f64>,
    pub b: Option<Lane>,
}

pub fn trajectory_rows(profile: &Profile) -> Vec<TrajectoryRow> {
    let horizon = profile.strategies.first().map_or(0, Strategy::horizon);
    let mut rows = Vec::with_capacity(horizon * profile.len());
    for t in 0..horizon {
        for (vehicle, st) in profile.strategies.iter().enumerate() {
            rows.push(TrajectoryRow {
                t,
                vehicle,
                s: st.s[t],
                v: st.v[t],
                lane: st.z[t],
                a: st.a.get(t).copied(),
                b: st.b.get(t).copied(),
            });
        }
    }
    rows
}

/// Rebuilds a profile from trajectory rows in any order. Returns `None` when
/// some vehicle is missing a step.
pub fn profile_from_rows(rows: &[TrajectoryRow]) -> Option<Profile> {
    let n = rows.iter().map(|r| r.vehicle + 1).max().unwrap_or(0);
    let horizon = rows.iter().map(|r| r.t + 1).max().unwrap_or(0);
    let mut cells: Vec<Vec<Option<TrajectoryRow>>> = vec![vec![None; horizon]; n];
    for r in rows {
        cells[r.vehicle][r.t] = Some(*r);
    }
    let strategies = cells
        .into_iter()
        .map(|steps| {
            let steps: Vec<TrajectoryRow> = steps.into_iter().collect::<Option<_>>()?;
            let last = steps.len().saturating_sub(1);
            Some(Strategy {
                s: steps.iter().map(|r| r.s).collect(),
                v: steps.iter().map(|r| r.v).collect(),
                z: steps.iter().map(|r| r.lane).collect(),
                a: steps[..last].iter().map(|r| r.a).collect::<Option<_>>()?,
                b: steps[..last].iter().map(|r| r.b).collect::<Option<_>>()?,
            })
        })
        .collect::<Option<_>>()?;
    Some(Profile::new(strategies))
}

pub fn write_trajectories(path: &Path, profile: &Profile) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in trajectory_rows(profile) {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_trajectories(path: &Path) -> Result<Profile, ExportError> {
    let read = |message: String| ExportError::Read { path: path.to_path_buf(), message };
    let mut r = csv::Reader::from_path(path).map_err(|e| read(e.to_string()))?;
    let rows: Vec<TrajectoryRow> = r.deserialize().collect::<Result<_, _>>().map_err(|e| read(e.to_string()))?;
    profile_from_rows(&rows).ok_or_else(|| read("some vehicle is missing a time step".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialRow {
    pub sweep: usize,
    pub phi: f64,
}

pub fn write_potential(path: &Path, potential_per_sweep: &[f64]) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for (sweep, &phi) in potential_per_sweep.iter().enumerate() {
        w.serialize(PotentialRow { sweep, phi }).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_potential(path: &Path) -> Result<Vec<f64>, ExportError> {
    let read = |message: String| ExportError::Read { path: path.to_path_buf(), message };
    let mut r = csv::Reader::from_path(path).map_err(|e| read(e.to_string()))?;
    let rows: Vec<PotentialRow> = r.deserialize().collect::<Result<_, _>>().map_err(|e| read(e.to_string()))?;
    Ok(rows.into_iter().map(|r| r.phi).collect())
}

fn csv_err(path: &Path, e: csv::Error) -> ExportError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => ExportError::Io { path: path.to_path_buf(), source },
        other => ExportError::Io { path: path.to_path_buf(), source: io::Error::other(format!("{other:?}")) },
    }
}

/// Human-readable run report.
pub fn render_report(report: &IbrReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "converged: {}", report.converged);
    let _ = writeln!(out, "sweeps: {}", report.sweeps_used);
    let _ = writeln!(out, "wall_clock_seconds: {:.3}", report.wall_clock_seconds);
    let phi: Vec<String> = report.potential_per_sweep.iter().map(|p| format!("{p:.6}")).collect();
    let _ = writeln!(out, "potential: [{}]", phi.join(", "));
    let tight = report.updates.iter().filter(|u| u.response.tight).count();
    let _ = writeln!(out, "tight_updates: {tight}/{}", report.updates.len());
    let _ = writeln!(out, "max_update_eps: {:.6e}", report.max_update_eps());
    let _ = writeln!(out, "\n[updates]");
    let _ = writeln!(out, "sweep vehicle cost_before cost_after relaxed rounded eps tight");
    for u in &report.updates {
        let r = &u.response;
        let _ = writeln!(
            out,
            "{} {} {:.6} {:.6} {:.6} {:.6} {:.3e} {}",
            u.sweep,
            r.vehicle,
            u.cost_before,
            u.cost_after,
            r.relaxed_value,
            r.rounded_value,
            r.eps_bound(),
            r.tight
        );
    }
    match &report.certificate {
        Some(c) => {
            let _ = writeln!(out, "\n[regret]");
            let _ = writeln!(out, "vehicle cost lower upper");
            for r in &c.regrets {
                let _ = writeln!(out, "{} {:.6} {:.6e} {:.6e}", r.vehicle, r.cost, r.lower, r.upper);
            }
            let _ = writeln!(out, "eps_gne_bound: {:.6e}", c.eps_gne_bound);
        }
        None => {
            let _ = writeln!(out, "\n[regret]\nnot certified");
        }
    }
    out
}

const LANE_COLORS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Lane-versus-position plot: every vehicle's path with a marker every
/// `stride` steps.
pub fn svg_lanes(scenario: &Scenario, profile: &Profile, stride: usize) -> String {
    let (w, h, pad) = (900.0, 60.0 * scenario.lane_count() as f64 + 60.0, 40.0);
    let s_lo = profile.strategies.iter().flat_map(|st| st.s.iter()).copied().fold(f64::INFINITY, f64::min);
    let s_hi = profile.strategies.iter().flat_map(|st| st.s.iter()).copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (s_hi - s_lo).max(1.0);
    let x = |s: f64| pad + (s - s_lo) / span * (w - 2.0 * pad);
    let lanes = scenario.lane_count() as f64;
    let y = |lane: Lane| h - pad - (f64::from(lane) - 0.5) / lanes * (h - 2.0 * pad);
    let mut out = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
    for lane in scenario.lanes() {
        let yl = y(lane);
        let _ = writeln!(
            out,
            "<line x1=\"{pad}\" y1=\"{yl:.1}\" x2=\"{:.1}\" y2=\"{yl:.1}\" stroke=\"#ddd\"/><text x=\"4\" y=\"{:.1}\" font-size=\"11\">lane {lane}</text>",
            w - pad,
            yl + 4.0
        );
    }
    for (i, st) in profile.strategies.iter().enumerate() {
        let color = LANE_COLORS[i % LANE_COLORS.len()];
        let jitter = (i as f64 - 0.5 * profile.len() as f64) * 2.0;
        let points: Vec<String> =
            st.s.iter().zip(&st.z).map(|(&s, &l)| format!("{:.1},{:.1}", x(s), y(l) + jitter)).collect();
        let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>", points.join(" "));
        for t in (0..st.horizon()).step_by(stride.max(1)) {
            let _ = writeln!(out, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"{color}\"/>", x(st.s[t]), y(st.z[t]) + jitter);
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"{color}\">{i}</text>",
            x(st.s[0]) - 10.0,
            y(st.z[0]) + jitter - 5.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Potential-per-sweep curves, each normalized by its starting value, plus
/// their mean over the runs still going at each sweep.
pub fn svg_potential(curves: &[Vec<f64>]) -> String {
    let (w, h, pad) = (640.0, 400.0, 40.0);
    let normalized: Vec<Vec<f64>> = curves
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| c.iter().map(|p| p / c[0].abs().max(f64::MIN_POSITIVE)).collect())
        .collect();
    let sweeps = normalized.iter().map(Vec::len).max().unwrap_or(1).max(2);
    let top = normalized.iter().flatten().copied().fold(1.0, f64::max);
    let x = |k: usize| pad + k as f64 / (sweeps - 1) as f64 * (w - 2.0 * pad);
    let y = |p: f64| h - pad - p / top * (h - 2.0 * pad);
    let mut out = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
    let _ = writeln!(out, "<text x=\"{pad}\" y=\"20\" font-size=\"12\">potential / initial potential per sweep</text>");
    for c in &normalized {
        let pts: Vec<String> = c.iter().enumerate().map(|(k, &p)| format!("{:.1},{:.1}", x(k), y(p))).collect();
        let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"#bbb\" points=\"{}\"/>", pts.join(" "));
    }
    let mean: Vec<String> = (0..sweeps)
        .filter_map(|k| {
            let vals: Vec<f64> = normalized.iter().filter_map(|c| c.get(k).copied()).collect();
            (!vals.is_empty()).then(|| format!("{:.1},{:.1}", x(k), y(vals.iter().sum::<f64>() / vals.len() as f64)))
        })
        .collect();
    let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"2.5\" points=\"{}\"/>", mean.join(" "));
    out.push_str("</svg>\n");
    out
}

/// Text listing of a best-response graph: one line per vertex with its
/// absolute position and speed box, then one line per edge.
pub fn describe_graph(vg: &VehicleGraph) -> String {
    let g = &vg.graph;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "vehicle {} graph: {} vertices, {} edges, source {}, target {}",
        vg.ego,
        g.vertices().len(),
        g.edges().len(),
        g.source(),
        g.target()
    );
    for (id, (vertex, label)) in g.vertices().iter().zip(&vg.labels).enumerate() {
        match label {
            Some(l) => {
                let set = &vertex.set;
                let _ = write!(out, "v {id} t {} lane {} gap {} ", l.t, l.lane, l.gap);
                let _ = match set.pin() {
                    Some(x) => {
                        let (s, v) = vg.to_absolute(l.t, x);
                        writeln!(out, "pinned s {s:.3} v {v:.3}")
                    }
                    None => {
                        let (s_lo, v_lo) = vg.to_absolute(l.t, set.lo());
                        let (s_hi, v_hi) = vg.to_absolute(l.t, set.hi());
                        writeln!(out, "s [{s_lo:.3}, {s_hi:.3}] v [{v_lo:.3}, {v_hi:.3}]")
                    }
                };
            }
            None => {
                let _ = writeln!(out, "v {id} target");
            }
        }
    }
    for (k, e) in g.edges().iter().enumerate() {
        let _ = writeln!(out, "e {k} {} -> {}", e.tail, e.head);
    }
    out
}

/// Files written for one run into `dir`.
pub fn export_run(
    dir: &Path,
    scenario: &Scenario,
    profile: Option<&Profile>,
    report: &IbrReport,
    svg: bool,
) -> Result<(), ExportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    if let Some(profile) = profile {
        write_trajectories(&dir.join("trajectory.csv"), profile)?;
        if svg {
            let path = dir.join("lanes.svg");
            fs::write(&path, svg_lanes(scenario, profile, 5)).map_err(io_err(&path))?;
        }
    }
    write_potential(&dir.join("potential.csv"), &report.potential_per_sweep)?;
    let path = dir.join("report.txt");
    fs::write(&path, render_report(report)).map_err(io_err(&path))
}

/// Summary of one scenario of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub index: usize,
    /// `None` on success, otherwise the error message.
    pub error: Option<String>,
    /// Potential per completed sweep, including partial runs.
    pub potential: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
    pub tight_updates: usize,
    pub updates: usize,
    pub max_update_eps: f64,
    pub eps_gne_bound: Option<f64>,
    pub violations: usize,
    pub wall_clock_seconds: f64,
}

impl SummaryRow {
    pub fn max_potential_increase(&self) -> f64 {
        self.potential.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn monotone(&self) -> bool {
        self.potential.windows(2).all(|w| w[1] <= w[0] + MONOTONICITY_TOL)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchSummary {
    pub rows: Vec<SummaryRow>,
}

impl BatchSummary {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    /// Every sweep of every run, partial runs included, kept the potential
    /// from increasing.
    pub fn monotone(&self) -> bool {
        self.rows.iter().all(SummaryRow::monotone)
    }

    pub fn tight_fraction(&self) -> f64 {
        let (tight, all) = self.rows.iter().fold((0, 0), |(t, a), r| (t + r.tight_updates, a + r.updates));
        if all == 0 {
            1.0
        } else {
            tight as f64 / all as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scenario,status,converged,sweeps,phi_initial,phi_final,max_phi_increase,tight_updates,updates,max_update_eps,eps_gne_bound,violations,wall_clock_seconds\n",
        );
        for r in &self.rows {
            let status = match &r.error {
                None => "ok".to_string(),
                Some(e) => format!("\"failed: {}\"", e.replace('"', "'")),
            };
            let phi0 = r.potential.first().map_or(String::new(), |p| format!("{p:.6}"));
            let phi1 = r.potential.last().map_or(String::new(), |p| format!("{p:.6}"));
            let inc = if r.potential.len() > 1 { format!("{:.3e}", r.max_potential_increase()) } else { String::new() };
            let gne = r.eps_gne_bound.map_or(String::new(), |e| format!("{e:.6e}"));
            let _ = writeln!(
                out,
                "{},{status},{},{},{phi0},{phi1},{inc},{},{},{:.6e},{gne},{},{:.3}",
                r.index, r.converged, r.sweeps, r.tight_updates, r.updates, r.max_update_eps, r.violations, r.wall_clock_seconds
            );
        }
        out
    }

    pub fn verdict(&self) -> String {
        format!(
            "runs: {}, failed: {}, potential monotone in every sweep: {}, tight best responses: {:.1}%",
            self.rows.len(),
            self.failures(),
            if self.monotone() { "yes" } else { "no" },
            100.0 * self.tight_fraction()
        )
    }
}

fn summarize(index: usize, scenario: &Scenario, outcome: &Result<(Profile, IbrReport), GameError>) -> SummaryRow {
    let (report, profile, error) = match outcome {
        Ok((profile, report)) => (Some(report), Some(profile), None),
        Err(GameError::Update { partial, .. }) => (Some(&**partial), None, Some(outcome.as_ref().unwrap_err().to_string())),
        Err(e) => (None, None, Some(e.to_string())),
    };
    SummaryRow {
        index,
        error,
        potential: report.map_or_else(Vec::new, |r| r.potential_per_sweep.clone()),
        converged: report.is_some_and(|r| r.converged) && profile.is_some(),
        sweeps: report.map_or(0, |r| r.sweeps_used),
        tight_updates: report.map_or(0, |r| r.updates.iter().filter(|u| u.response.tight).count()),
        updates: report.map_or(0, |r| r.updates.len()),
        max_update_eps: report.map_or(0.0, IbrReport::max_update_eps),
        eps_gne_bound: report.and_then(IbrReport::eps_gne_bound),
        violations: profile.map_or(0, |p| crate::highway::validate_profile(scenario, p).len()),
        wall_clock_seconds: report.map_or(0.0, |r| r.wall_clock_seconds),
    }
}

/// Runs every scenario, writes its files under `out_dir/scenario_NNN` when
/// `out_dir` is given, and writes `summary.csv` and `potential.svg` there.
/// Solver failures are recorded in the summary and do not stop the batch.
pub fn run_and_export(
    scenarios: &[Scenario],
    config: &IbrConfig,
    out_dir: Option<&Path>,
    svg: bool,
) -> Result<(BatchSummary, Vec<Result<(Profile, IbrReport), GameError>>), ExportError> {
    let mut summary = BatchSummary::default();
    let mut outcomes = Vec::with_capacity(scenarios.len());
    for (index, scenario) in scenarios.iter().enumerate() {
        let outcome = ibr_run(scenario, config);
        let row = summarize(index, scenario, &outcome);
        log::info!(
            "scenario {index}: {}",
            row.error.as_deref().map_or_else(|| format!("ok, {} sweeps", row.sweeps), |e| format!("failed: {e}"))
        );
        if let Some(dir) = out_dir {
            let dir = dir.join(format!("scenario_{index:03}"));
            match &outcome {
                Ok((profile, report)) => export_run(&dir, scenario, Some(profile), report, svg)?,
                Err(GameError::Update { partial, .. }) => export_run(&dir, scenario, None, partial, svg)?,
                Err(_) => {}
            }
        }
        summary.rows.push(row);
        outcomes.push(outcome);
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("summary.csv");
        fs::write(&path, summary.to_csv()).map_err(io_err(&path))?;
        if svg {
            let curves: Vec<Vec<f64>> = summary.rows.iter().map(|r| r.potential.clone()).collect();
            let path = dir.join("potential.svg");
            fs::write(&path, svg_potential(&curves)).map_err(io_err(&path))?;
        }
    }
    Ok((summary, outcomes))
}
