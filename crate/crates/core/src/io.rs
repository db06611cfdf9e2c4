//! CSV and JSON output. Files are written to a temporary sibling and renamed
//! into place so readers never observe a partial file.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nldp::{DualTrajectory, PrimalDual, Trajectory};
use crate::sqp::IterationRecord;

/// Header of per-run convergence CSVs.
pub const RECORD_HEADER: [&str; 7] = [
    "iter",
    "kkt_residual",
    "merit",
    "stepsize",
    "gamma",
    "dir_err_ratio",
    "wall_ms",
];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// `v` rounded to 6 significant digits.
pub fn round6(v: f64) -> f64 {
    if v.is_finite() {
        format!("{v:.5e}").parse().unwrap_or(v)
    } else {
        v
    }
}

/// Writes `bytes` to `path` via a temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes<F>(fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    fill(&mut w)?;
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

/// Convergence history as CSV. With `timing` off, `wall_ms` is written as 0
/// so that files are byte-for-byte reproducible.
pub fn records_csv(records: &[IterationRecord], timing: bool) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(RECORD_HEADER)?;
        let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
        for r in records {
            w.write_record([
                r.iter.to_string(),
                fmt17(r.kkt_residual),
                fmt17(r.merit),
                opt(r.stepsize),
                fmt17(r.gamma),
                opt(r.dir_err_ratio),
                fmt17(if timing { r.wall_ms } else { 0.0 }),
            ])?;
        }
        Ok(())
    })
}

pub fn write_records(path: &Path, records: &[IterationRecord], timing: bool) -> Result<()> {
    write_atomic(path, &records_csv(records, timing)?)
}

fn trajectory_header(nx: usize, nu: usize) -> Vec<String> {
    let mut h = vec!["stage".to_string()];
    h.extend((0..nx).map(|i| format!("x_{i}")));
    h.extend((0..nu).map(|i| format!("u_{i}")));
    h.extend((0..nx).map(|i| format!("lambda_{i}")));
    h
}

/// Primal-dual trajectory as CSV, one row per stage; the control columns are
/// empty at stage `N`.
pub fn trajectory_csv(pd: &PrimalDual) -> Result<Vec<u8>> {
    let (n, nx, nu) = (pd.horizon(), pd.z.nx(), pd.z.nu());
    csv_bytes(|w| {
        w.write_record(trajectory_header(nx, nu))?;
        for k in 0..=n {
            let mut row = vec![k.to_string()];
            row.extend(pd.z.x(k).iter().map(|v| fmt17(*v)));
            if k < n {
                row.extend(pd.z.u(k).iter().map(|v| fmt17(*v)));
            } else {
                row.extend(std::iter::repeat_n(String::new(), nu));
            }
            row.extend(pd.lambda.stage(k).iter().map(|v| fmt17(*v)));
            w.write_record(row)?;
        }
        Ok(())
    })
}

pub fn write_trajectory(path: &Path, pd: &PrimalDual) -> Result<()> {
    write_atomic(path, &trajectory_csv(pd)?)
}

/// Parses a trajectory CSV written by [`trajectory_csv`].
pub fn read_trajectory(data: &[u8]) -> Result<PrimalDual> {
    let mut r = csv::Reader::from_reader(data);
    let header = r.headers()?.clone();
    let nx = header.iter().filter(|h| h.starts_with("x_")).count();
    let nu = header.iter().filter(|h| h.starts_with("u_")).count();
    if nx == 0 || nu == 0 || header.len() != 1 + 2 * nx + nu {
        return Err(Error::Io("unexpected trajectory header".into()));
    }
    let expected = trajectory_header(nx, nu);
    if header.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(Error::Io("unexpected trajectory header".into()));
    }
    let mut z = Vec::new();
    let mut lambda = Vec::new();
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::Io(format!("bad number {s:?}: {e}")))
    };
    let rows: Vec<csv::StringRecord> = r.records().collect::<std::result::Result<_, _>>()?;
    let n = rows
        .len()
        .checked_sub(1)
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Io("trajectory needs at least two stages".into()))?;
    for (k, row) in rows.iter().enumerate() {
        if row.get(0) != Some(k.to_string().as_str()) {
            return Err(Error::Io(format!("stage column out of order at row {k}")));
        }
        for j in 0..nx {
            z.push(parse(&row[1 + j])?);
        }
        for j in 0..nu {
            let cell = &row[1 + nx + j];
            if k < n {
                z.push(parse(cell)?);
            } else if !cell.is_empty() {
                return Err(Error::Io("controls must be empty at the final stage".into()));
            }
        }
        for j in 0..nx {
            lambda.push(parse(&row[1 + nx + nu + j])?);
        }
    }
    PrimalDual::new(
        Trajectory::from_vec(n, nx, nu, z)?,
        DualTrajectory::from_vec(n, nx, lambda)?,
    )
}
