//! Plain-text and binary artifacts.
//!
//! CSV files are comma-separated with a header row and 17 significant
//! digits, which round-trips every `f64`. Missing values are empty fields.
//!
//! Binary dumps are little-endian:
//!
//! ```text
//! particles  "MFRS" u32 version, u64 N, u64 n_snapshots,
//!            then per snapshot: f64 t, f64 x[N], f64 z[N]
//! density    "MFPK" u32 version, u64 n_x, u64 n_z,
//!            f64 x_min, f64 x_max, f64 z_max, f64 t,
//!            then f64 μ(x_i, z_j) with i outer
//! ```

use std::io::{BufRead, Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fpk::{GridDensity2D, XGrid};
use crate::riccati::RiccatiSolution;
use crate::sim::{SummaryRow, Trajectory};

pub const FORMAT_VERSION: u32 = 1;
const PARTICLE_MAGIC: &[u8; 4] = b"MFRS";
const DENSITY_MAGIC: &[u8; 4] = b"MFPK";

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn field(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

/// Writes a header and rows of optional numbers.
pub fn write_table<W: Write>(w: &mut W, header: &[String], rows: &[Vec<Option<f64>>]) -> Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::InvalidInput("row width does not match the header".into()));
        }
        let line: Vec<String> = row.iter().map(|v| field(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Parses a file written by [`write_table`].
pub fn read_table<R: BufRead>(r: R) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    let mut lines = r.lines();
    let header: Vec<String> = match lines.next() {
        Some(h) => h?.split(',').map(str::to_owned).collect(),
        None => return Err(Error::Io("empty CSV".into())),
    };
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        let row = line
            .split(',')
            .map(|f| {
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f64>().map(Some).map_err(|e| Error::Io(format!("bad number '{f}': {e}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Columns `t, pi` (or `pi_ij` row-major for matrices), `rho`, `omega`,
/// `y`, `blow_up_t`. `omega`, `y` and `blow_up_t` are empty when absent.
pub fn write_riccati_csv<W: Write>(w: &mut W, sol: &RiccatiSolution, y: Option<&[f64]>) -> Result<()> {
    let d = sol.dim;
    let mut header = vec!["t".to_string()];
    if d == 1 {
        header.push("pi".into());
    } else {
        for i in 0..d {
            for j in 0..d {
                header.push(format!("pi_{i}{j}"));
            }
        }
    }
    header.extend(["rho", "omega", "y", "blow_up_t"].map(String::from));
    let blow = sol.blow_up.map(|b| b.t_estimate);
    let rows: Vec<Vec<Option<f64>>> = (0..sol.grid.n_nodes())
        .map(|k| {
            let mut row = vec![Some(sol.grid.node(k))];
            row.extend(sol.pi[k * d * d..(k + 1) * d * d].iter().map(|v| Some(*v)));
            row.push(Some(sol.rho[k]));
            row.push(sol.omega.as_ref().map(|o| o[k]));
            row.push(y.map(|y| y[k]));
            row.push(blow);
            row
        })
        .collect();
    write_table(w, &header, &rows)
}

pub fn write_summary_csv<W: Write>(w: &mut W, rows: &[SummaryRow]) -> Result<()> {
    let header = ["t", "mean_x", "var_x", "mean_z"].map(String::from);
    let rows: Vec<Vec<Option<f64>>> =
        rows.iter().map(|r| vec![Some(r.t), Some(r.mean_x), Some(r.var_x), Some(r.mean_z)]).collect();
    write_table(w, &header, &rows)
}

/// One compact JSON object followed by a newline.
pub fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    let s = serde_json::to_string(value).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w, "{s}")?;
    Ok(())
}

fn put_f64s<W: Write>(w: &mut W, vals: &[f64]) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn check_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Io(format!("bad magic {m:?}")));
    }
    let v = get_u32(r)?;
    if v != FORMAT_VERSION {
        return Err(Error::Io(format!("unsupported format version {v}")));
    }
    Ok(())
}

pub fn write_particle_dump<W: Write>(w: &mut W, traj: &Trajectory) -> Result<()> {
    let n = traj.terminal()?.n_particles();
    w.write_all(PARTICLE_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&(traj.snapshots.len() as u64).to_le_bytes())?;
    for s in &traj.snapshots {
        put_f64s(w, &[s.t])?;
        put_f64s(w, &s.x)?;
        put_f64s(w, &s.z)?;
    }
    Ok(())
}

/// A snapshot read back from a particle dump.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSnapshot {
    pub t: f64,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn read_particle_dump<R: Read>(r: &mut R) -> Result<Vec<ParticleSnapshot>> {
    check_header(r, PARTICLE_MAGIC)?;
    let n = get_u64(r)? as usize;
    let count = get_u64(r)? as usize;
    (0..count)
        .map(|_| {
            let t = get_f64s(r, 1)?[0];
            Ok(ParticleSnapshot { t, x: get_f64s(r, n)?, z: get_f64s(r, n)? })
        })
        .collect()
}

pub fn write_density_dump<W: Write>(w: &mut W, d: &GridDensity2D) -> Result<()> {
    let g = d.x_grid;
    w.write_all(DENSITY_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(g.n_x as u64).to_le_bytes())?;
    w.write_all(&(d.n_z as u64).to_le_bytes())?;
    put_f64s(w, &[g.x_min, g.x_max, d.z_max(), d.t])?;
    for i in 0..g.n_x {
        for j in 0..d.n_z {
            w.write_all(&d.mu(i, j).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_density_dump<R: Read>(r: &mut R) -> Result<GridDensity2D> {
    check_header(r, DENSITY_MAGIC)?;
    let n_x = get_u64(r)? as usize;
    let n_z = get_u64(r)? as usize;
    let head = get_f64s(r, 4)?;
    let x_grid = XGrid::new(head[0], head[1], n_x)?;
    if n_z < 2 {
        return Err(Error::Io("density dump needs at least 2 z levels".into()));
    }
    let dz = head[2] / (n_z - 1) as f64;
    let mu = get_f64s(r, n_x * n_z)?;
    let cell = x_grid.dx() * dz;
    let mut probabilities = vec![0.0; n_x * n_z];
    for i in 0..n_x {
        for j in 0..n_z {
            probabilities[j * n_x + i] = mu[i * n_z + j] * cell;
        }
    }
    Ok(GridDensity2D { x_grid, n_z, dz, t: head[3], probabilities })
}
