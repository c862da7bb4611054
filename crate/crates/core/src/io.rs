//! CSV artifacts. Floats are written with 17 significant digits so every
//! value round-trips exactly; missing values are empty fields.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::kalman_jump::{FilterTrajectory, Side};
use crate::model::ValidatedScenario;
use crate::oracle_grid::GridTrajectory;
use crate::particle::ParticleRun;
use crate::simulate::{ObservationEvent, Simulation};

/// `v` with 17 significant digits (scientific notation).
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

fn indexed2(prefix: &str, r: usize, c: usize) -> Vec<String> {
    (1..=r).flat_map(|i| (1..=c).map(move |j| format!("{prefix}_{i}{j}"))).collect()
}

pub fn paths_header(m: usize, n: usize) -> Vec<String> {
    let mut h = vec!["path_id".to_string(), "t".to_string()];
    h.extend(indexed("x", m));
    h.extend(indexed("y", n));
    h.push("is_jump_time".into());
    h.push("event_index".into());
    h
}

/// One row per grid point of the simulated path.
pub fn write_paths<W: Write>(w: W, path_id: u64, sim: &Simulation) -> Result<()> {
    let p = &sim.path;
    let mut out = writer(w);
    out.write_record(paths_header(p.m, p.n)).map_err(csv_err)?;
    for k in 0..p.len() {
        let mut rec = vec![path_id.to_string(), fmt_f64(p.times[k])];
        rec.extend(p.x_row(k).iter().map(|v| fmt_f64(*v)));
        rec.extend(p.y_row(k).iter().map(|v| fmt_f64(*v)));
        rec.push(if p.event_at[k].is_some() { "1" } else { "0" }.into());
        rec.push(p.event_at[k].map(|i| i.to_string()).unwrap_or_default());
        out.write_record(rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn events_header(n: usize) -> Vec<String> {
    let mut h = vec!["path_id".to_string(), "i".to_string(), "T_i".to_string()];
    h.extend(indexed("dY", n));
    h
}

pub fn write_events<W: Write>(w: W, path_id: u64, n: usize, events: &[ObservationEvent]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(events_header(n)).map_err(csv_err)?;
    for ev in events {
        let mut rec = vec![path_id.to_string(), ev.index.to_string(), fmt_f64(ev.time)];
        rec.extend(ev.dy.iter().map(|v| fmt_f64(*v)));
        out.write_record(rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads an events file back. Rows of other paths are skipped when
/// `path_id` is given; otherwise the first path in the file is used.
/// `Y_-` is rebuilt by summing increments and jump counts follow the
/// scenario's schedule.
pub fn read_events<R: Read>(r: R, sc: &ValidatedScenario, path_id: Option<u64>) -> Result<Vec<ObservationEvent>> {
    let n = sc.model().n();
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let want: Vec<String> = events_header(n);
    if header.iter().collect::<Vec<_>>() != want.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Parse(format!("events header {:?} does not match {:?}", header, want)));
    }
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
    let mut chosen = path_id;
    let mut events = Vec::new();
    let mut y = vec![0.0; n];
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let id: u64 = rec[0].trim().parse().map_err(|e| Error::Parse(format!("path_id: {e}")))?;
        if *chosen.get_or_insert(id) != id {
            continue;
        }
        let index: usize = rec[1].trim().parse().map_err(|e| Error::Parse(format!("event index: {e}")))?;
        let time = parse(&rec[2])?;
        let dy = (0..n).map(|j| parse(&rec[3 + j])).collect::<Result<Vec<_>>>()?;
        let y_pre = y.clone();
        y.iter_mut().zip(&dy).for_each(|(a, b)| *a += b);
        events.push(ObservationEvent { index, time, y_pre, dy, jumps: 1 });
    }
    if events.windows(2).any(|w| w[1].time <= w[0].time) {
        return Err(Error::NonIncreasingTimes("event times in the events file".into()));
    }
    let y_after: Vec<f64> = events.iter().map(|e| e.y_pre[0] + e.dy[0]).collect();
    for (ev, j) in events.iter_mut().zip(sc.schedule().jumps_per_event(&y_after)) {
        ev.jumps = j;
    }
    Ok(events)
}

pub fn kalman_header(m: usize, n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "side".to_string()];
    h.extend(indexed("m", m));
    h.extend(indexed2("P", m, m));
    h.push("event_index".into());
    if m == 1 && n == 1 {
        h.extend(["v", "S", "K"].map(String::from));
    } else {
        h.extend(indexed("v", n));
        h.extend(indexed2("S", n, n));
        h.extend(indexed2("K", m, n));
    }
    h
}

/// Kalman trajectory; `v`, `S`, `K` are filled on post-event rows.
pub fn write_kalman<W: Write>(w: W, traj: &FilterTrajectory, m: usize, n: usize) -> Result<()> {
    let mut out = writer(w);
    out.write_record(kalman_header(m, n)).map_err(csv_err)?;
    for r in &traj.rows {
        let mut rec = vec![fmt_f64(r.t), r.side.as_str().to_string()];
        rec.extend(r.mean.iter().map(|v| fmt_f64(*v)));
        // row-major
        rec.extend((0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| fmt_f64(r.cov[(i, j)])));
        rec.push(r.event_index.map(|i| i.to_string()).unwrap_or_default());
        let cells = |mat: Option<&nalgebra::DMatrix<f64>>, rows: usize, cols: usize| -> Vec<String> {
            (0..rows)
                .flat_map(|i| (0..cols).map(move |j| (i, j)))
                .map(|(i, j)| opt(mat.map(|x| x[(i, j)])))
                .collect()
        };
        rec.extend((0..n).map(|i| opt(r.innovation.as_ref().map(|v| v[i]))));
        rec.extend(cells(r.s.as_ref(), n, n));
        rec.extend(cells(r.gain.as_ref(), m, n));
        out.write_record(rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub const PARTICLE_SUMMARY_HEADER: [&str; 6] = ["t", "phi_name", "estimate", "bootstrap_se", "ess", "log_rho1"];

/// Particle summary; rows on both sides of an event share `t`, pre first.
pub fn write_particle_summary<W: Write>(w: W, run: &ParticleRun) -> Result<()> {
    let mut out = writer(w);
    out.write_record(PARTICLE_SUMMARY_HEADER).map_err(csv_err)?;
    for r in &run.summary {
        out.write_record([
            fmt_f64(r.t),
            r.phi.clone(),
            fmt_f64(r.estimate),
            fmt_f64(r.se),
            fmt_f64(r.ess),
            fmt_f64(r.log_rho1),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn snapshot_header(m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "particle_id".to_string()];
    h.extend(indexed("x", m));
    h.push("log_w".into());
    h
}

pub fn write_snapshots<W: Write>(w: W, run: &ParticleRun, m: usize) -> Result<()> {
    let mut out = writer(w);
    out.write_record(snapshot_header(m)).map_err(csv_err)?;
    for s in &run.snapshots {
        for (j, (x, l)) in s.positions.chunks_exact(m).zip(&s.log_w).enumerate() {
            let mut rec = vec![fmt_f64(s.t), j.to_string()];
            rec.extend(x.iter().map(|v| fmt_f64(*v)));
            rec.push(fmt_f64(*l));
            out.write_record(rec).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub const GRID_SUMMARY_HEADER: [&str; 6] = ["t", "side", "event_index", "mean", "var", "mass"];
pub const GRID_DENSITY_HEADER: [&str; 4] = ["t", "side", "node_x", "p"];

pub fn write_grid_summary<W: Write>(w: W, traj: &GridTrajectory) -> Result<()> {
    let mut out = writer(w);
    out.write_record(GRID_SUMMARY_HEADER).map_err(csv_err)?;
    for r in &traj.rows {
        out.write_record([
            fmt_f64(r.t),
            r.side.as_str().to_string(),
            r.event_index.map(|i| i.to_string()).unwrap_or_default(),
            fmt_f64(r.mean),
            fmt_f64(r.var),
            fmt_f64(r.mass),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Density dump of the rows kept by the grid run.
pub fn write_grid_densities<W: Write>(w: W, traj: &GridTrajectory) -> Result<()> {
    let mut out = writer(w);
    out.write_record(GRID_DENSITY_HEADER).map_err(csv_err)?;
    for (t, side, d) in &traj.densities {
        for k in 0..d.nodes() {
            out.write_record([fmt_f64(*t), side.as_str().to_string(), fmt_f64(d.x(k)), fmt_f64(d.p[k])])
                .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Wide table keyed by `(t, side)`; each column is one method's value and
/// may be missing at some keys.
#[derive(Debug, Clone, Default)]
pub struct Comparison {
    pub columns: Vec<String>,
    pub rows: Vec<(f64, Side, Vec<Option<f64>>)>,
}

impl Comparison {
    /// Adds a column from `(t, side, value)` triples; keys are matched in
    /// order of appearance, so the time axes of all columns must agree.
    pub fn add(&mut self, name: &str, values: &[(f64, Side, f64)]) {
        let col = self.columns.len();
        self.columns.push(name.to_string());
        for row in &mut self.rows {
            row.2.push(None);
        }
        for (t, side, v) in values {
            let hit = self.rows.iter_mut().find(|r| (r.0 - t).abs() < 1e-12 && r.1 == *side);
            match hit {
                Some(r) => r.2[col] = Some(*v),
                None => {
                    let mut cells = vec![None; col + 1];
                    cells[col] = Some(*v);
                    self.rows.push((*t, *side, cells));
                }
            }
        }
        let order = |s: Side| match s {
            Side::Pre => 0,
            Side::Interior => 1,
            Side::Post => 2,
        };
        self.rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(order(a.1).cmp(&order(b.1))));
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string(), "side".to_string()];
        h.extend(self.columns.iter().cloned());
        h
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut out = writer(w);
        out.write_record(self.header()).map_err(csv_err)?;
        for (t, side, cells) in &self.rows {
            let mut rec = vec![fmt_f64(*t), side.as_str().to_string()];
            rec.extend(cells.iter().map(|c| opt(*c)));
            out.write_record(rec).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Largest absolute difference between two columns over shared keys.
    pub fn max_abs_diff(&self, a: &str, b: &str) -> Option<f64> {
        let ia = self.columns.iter().position(|c| c == a)?;
        let ib = self.columns.iter().position(|c| c == b)?;
        self.rows
            .iter()
            .filter_map(|r| Some((r.2[ia]? - r.2[ib]?).abs()))
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |x| x.max(d))))
    }
}

pub const FIGURE1_HEADER: [&str; 7] = ["t", "side", "x_true", "kalman_m", "kalman_P", "nojump_m", "nojump_P"];

/// Jump-aware Kalman filter next to one that ignores the signal jumps
/// (`Q = 0`), with the simulated signal for reference. Scalar models only.
pub fn write_figure1<W: Write>(w: W, sc: &ValidatedScenario, sim: &Simulation) -> Result<()> {
    use crate::kalman_jump::{run_filter_with, GaussianBelief, LinearModelParams};
    let params = LinearModelParams::from_scenario(sc)?;
    if params.lambda.nrows() != 1 || params.a.nrows() != 1 {
        return Err(Error::incompatible("figure1", "the comparison is defined for scalar models"));
    }
    let mut blind = params.clone();
    blind.q.fill(0.0);
    blind.xi_mean.fill(0.0);
    let start = GaussianBelief::point(0.0, &sc.model().spec.x0);
    let ordering = sc.filter().ordering;
    let times = sc.report_times();
    let with = run_filter_with(&params, start.clone(), &sim.events, &times, sc.horizon(), ordering)?;
    let without = run_filter_with(&blind, start, &sim.events, &times, sc.horizon(), ordering)?;
    let path = &sim.path;
    let mut out = writer(w);
    out.write_record(FIGURE1_HEADER).map_err(csv_err)?;
    for (a, b) in with.rows.iter().zip(&without.rows) {
        let x_true = match (a.side, a.event_index) {
            (Side::Pre, Some(i)) => path.pre_jump[i - 1][0],
            _ => path.x_row(path.row_at(a.t))[0],
        };
        out.write_record([
            fmt_f64(a.t),
            a.side.as_str().to_string(),
            fmt_f64(x_true),
            fmt_f64(a.mean[0]),
            fmt_f64(a.cov[(0, 0)]),
            fmt_f64(b.mean[0]),
            fmt_f64(b.cov[(0, 0)]),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
