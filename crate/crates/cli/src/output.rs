//! Output directory ownership and trace serialization.
//!
//! Trace records carry no timing, so identical runs produce identical
//! trace files; wall times go to a separate table.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use detfree_gp::ChainTrace64;

use crate::error::{HarnessError, Result};

pub const LOCK_FILE: &str = ".lock";
pub const TRACE_FILE: &str = "traces.csv";
pub const TIMING_FILE: &str = "timings.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FAILURE_FILE: &str = "failure.txt";

/// An output directory held exclusively through a lock file, released on drop.
#[derive(Debug)]
pub struct OutputDir {
    path: PathBuf,
}

impl OutputDir {
    pub fn acquire(path: &Path) -> Result<Self> {
        std::fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))?;
        let lock = path.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                HarnessError::io(&lock, std::io::Error::new(e.kind(), "output directory is in use by another run"))
            } else {
                HarnessError::io(&lock, e)
            }
        })?;
        writeln!(f, "{}", std::process::id()).map_err(|e| HarnessError::io(&lock, e))?;
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.file(name);
        std::fs::write(&p, text).map_err(|e| HarnessError::io(&p, e))?;
        Ok(p)
    }

    pub fn write_json<S: serde::Serialize>(&self, name: &str, value: &S) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value).expect("summary is serializable");
        self.write_text(name, &(text + "\n"))
    }

    /// Writes a header plus rows of already formatted cells.
    pub fn write_table(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let p = self.file(name);
        let mut w = csv_writer(&p)?;
        let io = |e: csv::Error| HarnessError::io(&p, e.into());
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(r).map_err(io)?;
        }
        w.flush().map_err(|e| HarnessError::io(&p, e))?;
        Ok(p)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(self.path.join(LOCK_FILE));
    }
}

fn csv_writer(p: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(p).map_err(|e| HarnessError::io(p, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

/// Shortest representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn theta_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> =
        ["chain", "step", "accepted", "delta_h", "accept_prob", "solver_iterations"].iter().map(|s| s.to_string()).collect();
    h.extend((0..n).map(|k| format!("theta_{k}")));
    h
}

/// One record per chain and outer step, step 0 being the initial state
/// with empty update fields: `B (T + 1)` records in total.
pub fn write_traces(path: &Path, traces: &[ChainTrace64]) -> Result<()> {
    let n = traces.iter().find_map(|t| t.theta.first().map(Vec::len)).unwrap_or(0);
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| HarnessError::io(path, e.into());
    w.write_record(theta_header(n)).map_err(io)?;
    for t in traces {
        for (s, th) in t.theta.iter().enumerate() {
            let mut rec = vec![t.chain_id.to_string(), s.to_string()];
            if s == 0 {
                rec.extend(std::iter::repeat_n(String::new(), 4));
            } else {
                rec.push(u8::from(t.accepted[s - 1]).to_string());
                rec.push(fmt_f64(t.delta_h[s - 1]));
                rec.push(fmt_f64(t.accept_prob[s - 1]));
                rec.push(t.solver_iterations[s - 1].to_string());
            }
            rec.extend(th.iter().map(|&v| fmt_f64(v)));
            w.write_record(&rec).map_err(io)?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_timings(path: &Path, traces: &[ChainTrace64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| HarnessError::io(path, e.into());
    w.write_record(["chain", "step", "seconds"]).map_err(io)?;
    for t in traces {
        for (s, &sec) in t.wall_times.iter().enumerate() {
            w.write_record([t.chain_id.to_string(), (s + 1).to_string(), fmt_f64(sec)]).map_err(io)?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn parse_cell<T: std::str::FromStr>(path: &Path, line: usize, s: &str, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| HarnessError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("`{s}` is not a valid {what}"),
    })
}

fn parse_float(path: &Path, line: usize, s: &str) -> Result<f64> {
    match s.trim() {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        other => parse_cell(path, line, other, "number"),
    }
}

/// Reads a trace file back, attaching wall times from `timings` if given.
pub fn read_traces(path: &Path, timings: Option<&Path>) -> Result<Vec<ChainTrace64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::io(path, e.into()))?;
    let header = r.headers().map_err(|e| HarnessError::io(path, e.into()))?.clone();
    let n = header.iter().filter(|h| h.starts_with("theta_")).count();
    if header.len() != 6 + n || header.iter().take(6).ne(theta_header(0).iter().map(String::as_str)) {
        return Err(HarnessError::Parse { path: path.to_path_buf(), line: 1, message: "not a trace file".into() });
    }
    let mut traces: Vec<ChainTrace64> = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| HarnessError::Parse { path: path.to_path_buf(), line, message: e.to_string() })?;
        let chain: usize = parse_cell(path, line, &rec[0], "chain id")?;
        let step: usize = parse_cell(path, line, &rec[1], "step")?;
        let theta = (0..n).map(|j| parse_float(path, line, &rec[6 + j])).collect::<Result<Vec<f64>>>()?;
        if step == 0 {
            if traces.iter().any(|t| t.chain_id == chain) {
                return Err(HarnessError::Parse { path: path.to_path_buf(), line, message: format!("chain {chain} restarts") });
            }
            let mut t = ChainTrace64::new(chain, 0);
            t.theta.push(theta);
            traces.push(t);
            continue;
        }
        let t = match traces.last_mut() {
            Some(t) if t.chain_id == chain && t.theta.len() == step => t,
            _ => {
                return Err(HarnessError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("chain {chain} step {step} is out of order"),
                })
            }
        };
        t.theta.push(theta);
        t.accepted.push(parse_cell::<u8>(path, line, &rec[2], "flag")? != 0);
        t.delta_h.push(parse_float(path, line, &rec[3])?);
        t.accept_prob.push(parse_float(path, line, &rec[4])?);
        t.solver_iterations.push(parse_cell(path, line, &rec[5], "count")?);
        t.wall_times.push(0.0);
    }
    if let Some(tp) = timings.filter(|p| p.exists()) {
        let mut r = csv::Reader::from_path(tp).map_err(|e| HarnessError::io(tp, e.into()))?;
        for (k, rec) in r.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| HarnessError::Parse { path: tp.to_path_buf(), line, message: e.to_string() })?;
            let chain: usize = parse_cell(tp, line, &rec[0], "chain id")?;
            let step: usize = parse_cell(tp, line, &rec[1], "step")?;
            let sec = parse_float(tp, line, &rec[2])?;
            if let Some(slot) = traces.iter_mut().find(|t| t.chain_id == chain).and_then(|t| t.wall_times.get_mut(step.wrapping_sub(1))) {
                *slot = sec;
            }
        }
    }
    Ok(traces)
}
