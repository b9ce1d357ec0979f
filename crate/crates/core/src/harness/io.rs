//! CSV ingestion and emission.
//!
//! | kind         | header                        |
//! |--------------|-------------------------------|
//! | dataset      | `x1,…,xd,y`                   |
//! | trajectories | `traj_id,t,x,y`               |
//! | traffic      | `station_id,t_hours,prb_usage` |
//!
//! Lines starting with `#` are comments. Floats are written in shortest
//! round-trip form, so a write followed by a read reproduces every value.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use super::traffic::TrafficSeries;
use crate::error::{Error, Result};
use crate::gp::Dataset;
use crate::tracking::{StateSample, Trajectory};

fn ingestion(path: &Path, line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Ingestion { file: path.to_path_buf(), line, column: column.to_string(), message: message.into() }
}

struct Table {
    headers: Vec<String>,
    /// `(line number, fields)`.
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingestion(path, 0, "", e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| ingestion(path, 1, "", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ingestion(path, line, "", e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { headers, rows })
}

fn expect_headers(path: &Path, got: &[String], want: &[&str]) -> Result<()> {
    if got.len() != want.len() || got.iter().zip(want).any(|(g, w)| g != w) {
        return Err(ingestion(
            path,
            1,
            "",
            format!("expected header `{}`, found `{}`", want.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn parse_f64(path: &Path, line: u64, column: &str, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| ingestion(path, line, column, format!("`{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(ingestion(path, line, column, "value is not finite"));
    }
    Ok(v)
}

fn parse_u64(path: &Path, line: u64, column: &str, field: &str) -> Result<u64> {
    field
        .parse()
        .map_err(|_| ingestion(path, line, column, format!("`{field}` is not a non-negative integer")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_comment(w: &mut impl Write, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    Ok(())
}

/// Reads a regression dataset with header `x1,…,xd,y`.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let t = read_table(path)?;
    let d = t.headers.len().saturating_sub(1);
    let want: Vec<String> = (1..=d).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
    let want_ref: Vec<&str> = want.iter().map(String::as_str).collect();
    if d == 0 {
        return Err(ingestion(path, 1, "", "dataset needs at least one input column and `y`"));
    }
    expect_headers(path, &t.headers, &want_ref)?;
    if t.rows.is_empty() {
        return Err(ingestion(path, 2, "", "dataset has no rows"));
    }
    let mut inputs = Vec::with_capacity(t.rows.len() * d);
    let mut outputs = Vec::with_capacity(t.rows.len());
    for (line, fields) in &t.rows {
        for (j, f) in fields.iter().enumerate() {
            let v = parse_f64(path, *line, &want[j], f)?;
            if j < d {
                inputs.push(v);
            } else {
                outputs.push(v);
            }
        }
    }
    Dataset::new(DMatrix::from_row_slice(t.rows.len(), d, &inputs), outputs.into())
}

pub fn write_dataset(path: &Path, data: &Dataset, comment: Option<&str>) -> Result<()> {
    let mut w = create(path)?;
    write_comment(&mut w, comment)?;
    let d = data.dim();
    let header: Vec<String> = (1..=d).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
    writeln!(w, "{}", header.join(","))?;
    for i in 0..data.len() {
        let row: Vec<String> = (0..d)
            .map(|j| data.inputs()[(i, j)].to_string())
            .chain([data.outputs()[i].to_string()])
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads trajectories with header `traj_id,t,x,y`. Rows of one trajectory
/// must be contiguous. Owners are assigned in order of appearance modulo
/// `clients`.
pub fn read_trajectories(path: &Path, clients: usize) -> Result<Vec<Trajectory>> {
    let t = read_table(path)?;
    expect_headers(path, &t.headers, &["traj_id", "t", "x", "y"])?;
    let mut out: Vec<Trajectory> = Vec::new();
    let mut current: Option<(usize, u64, Vec<StateSample>)> = None;
    let mut seen = std::collections::BTreeSet::new();
    let clients = clients.max(1);
    let flush = |cur: Option<(usize, u64, Vec<StateSample>)>, out: &mut Vec<Trajectory>| -> Result<()> {
        if let Some((id, first_line, samples)) = cur {
            if samples.len() < 2 {
                return Err(ingestion(path, first_line, "traj_id", format!("trajectory {id} has fewer than two samples")));
            }
            let owner = out.len() % clients;
            out.push(Trajectory::new(id, owner, samples).map_err(|e| ingestion(path, first_line, "t", e.to_string()))?);
        }
        Ok(())
    };
    for (line, f) in &t.rows {
        let id = parse_u64(path, *line, "traj_id", &f[0])? as usize;
        let sample = StateSample {
            t: parse_f64(path, *line, "t", &f[1])?,
            x: parse_f64(path, *line, "x", &f[2])?,
            y: parse_f64(path, *line, "y", &f[3])?,
        };
        match current.as_mut() {
            Some((cur_id, _, samples)) if *cur_id == id => {
                let prev = samples.last().expect("nonempty").t;
                if !(sample.t > prev) {
                    return Err(ingestion(path, *line, "t", format!("time {} does not increase (previous {prev})", sample.t)));
                }
                if samples.len() >= 2 {
                    let dt = samples[1].t - samples[0].t;
                    if ((sample.t - prev) - dt).abs() > 1e-6 * dt.abs().max(1.0) {
                        return Err(ingestion(path, *line, "t", format!("irregular time step {} (expected {dt})", sample.t - prev)));
                    }
                }
                samples.push(sample);
            }
            _ => {
                if !seen.insert(id) {
                    return Err(ingestion(path, *line, "traj_id", format!("rows of trajectory {id} are not contiguous")));
                }
                flush(current.take(), &mut out)?;
                current = Some((id, *line, vec![sample]));
            }
        }
    }
    flush(current.take(), &mut out)?;
    if out.is_empty() {
        return Err(ingestion(path, 2, "", "file holds no trajectory"));
    }
    Ok(out)
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory], comment: Option<&str>) -> Result<()> {
    let mut w = create(path)?;
    write_comment(&mut w, comment)?;
    writeln!(w, "traj_id,t,x,y")?;
    for t in trajectories {
        for s in t.samples() {
            writeln!(w, "{},{},{},{}", t.id, s.t, s.x, s.y)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads traffic series with header `station_id,t_hours,prb_usage`; one
/// series per station in order of first appearance.
pub fn read_traffic(path: &Path) -> Result<Vec<TrafficSeries>> {
    let t = read_table(path)?;
    expect_headers(path, &t.headers, &["station_id", "t_hours", "prb_usage"])?;
    let mut out: Vec<TrafficSeries> = Vec::new();
    for (line, f) in &t.rows {
        let station = parse_u64(path, *line, "station_id", &f[0])?;
        let time = parse_f64(path, *line, "t_hours", &f[1])?;
        let usage = parse_f64(path, *line, "prb_usage", &f[2])?;
        if !(0.0..=100.0).contains(&usage) {
            return Err(ingestion(path, *line, "prb_usage", format!("usage {usage} outside [0, 100]")));
        }
        let series = match out.iter_mut().find(|s| s.station_id == station) {
            Some(s) => s,
            None => {
                out.push(TrafficSeries { station_id: station, samples: Vec::new() });
                out.last_mut().expect("just pushed")
            }
        };
        if let Some(&(prev, _)) = series.samples.last() {
            if !(time > prev) {
                return Err(ingestion(path, *line, "t_hours", format!("time {time} does not increase (previous {prev})")));
            }
        }
        series.samples.push((time, usage));
    }
    if out.is_empty() {
        return Err(ingestion(path, 2, "", "file holds no traffic samples"));
    }
    Ok(out)
}

pub fn write_traffic(path: &Path, series: &[TrafficSeries], comment: Option<&str>) -> Result<()> {
    let mut w = create(path)?;
    write_comment(&mut w, comment)?;
    writeln!(w, "station_id,t_hours,prb_usage")?;
    for s in series {
        for (t, u) in &s.samples {
            writeln!(w, "{},{},{}", s.station_id, t, u)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes rows of already-formatted cells under a header.
pub fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>], comment: Option<&str>) -> Result<()> {
    let mut w = create(path)?;
    write_comment(&mut w, comment)?;
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    write_text(path, &(text + "\n"))
}
