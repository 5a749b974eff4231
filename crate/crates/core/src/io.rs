//! CSV interchange: one row per grid point, coordinates first, value last.
//!
//! Values are written with the shortest representation that parses back to
//! the same `f64`, so a write/read cycle is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::energy::TabulatedEnergy;
use crate::error::{Error, Result};
use crate::grid::{DiscreteMeasure, Grid, MASS_TOLERANCE};

fn coordinate_headers(dim: usize) -> &'static [&'static str] {
    if dim == 1 {
        &["x"]
    } else {
        &["x", "y"]
    }
}

/// Writes grid values under the header `x[,y],<name>`.
pub fn write_values<W: Write>(out: W, grid: &Grid, name: &str, values: &[f64]) -> Result<()> {
    crate::error::check_len(grid.len(), values.len())?;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = coordinate_headers(grid.dim()).to_vec();
    header.push(name);
    w.write_record(&header)?;
    for (i, v) in values.iter().enumerate() {
        let x = grid.point(i);
        let mut row: Vec<String> = (0..grid.dim()).map(|a| x[a].to_string()).collect();
        row.push(v.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_measure<W: Write>(out: W, rho: &DiscreteMeasure) -> Result<()> {
    write_values(out, rho.grid(), "weight", rho.weights())
}

pub fn save_measure(path: &Path, rho: &DiscreteMeasure) -> Result<()> {
    write_measure(std::fs::File::create(path)?, rho)
}

/// Snaps an inferred bound to a multiple of `1e-12`, so that `0` and `1`
/// come back exactly after `lower + (i + 1/2) h` round trips.
fn snap(x: f64) -> f64 {
    let s = (x * 1e12).round() / 1e12;
    if (s - x).abs() <= 1e-9 * x.abs().max(1.0) {
        s
    } else {
        x
    }
}

/// Axis `(lower, upper, points)` from sorted distinct centers; a single center
/// gets a unit cell.
fn infer_axis(mut centers: Vec<f64>) -> Result<(f64, f64, usize)> {
    centers.sort_by(f64::total_cmp);
    centers.dedup();
    let p = centers.len();
    if p == 1 {
        return Ok((snap(centers[0] - 0.5), snap(centers[0] + 0.5), 1));
    }
    let h = (centers[p - 1] - centers[0]) / (p - 1) as f64;
    for (k, c) in centers.iter().enumerate() {
        if (c - (centers[0] + k as f64 * h)).abs() > 1e-6 * h {
            return Err(Error::Parse("coordinates are not equally spaced".into()));
        }
    }
    Ok((
        snap(centers[0] - 0.5 * h),
        snap(centers[p - 1] + 0.5 * h),
        p,
    ))
}

/// Reads a grid and its values from CSV with `dim + 1` columns.
pub fn read_values<R: Read>(input: R) -> Result<(Grid, Vec<f64>)> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let width = r.headers()?.len();
    if !(2..=3).contains(&width) {
        return Err(Error::Parse(format!(
            "expected 2 or 3 columns, found {width}"
        )));
    }
    let dim = width - 1;
    let mut rows: Vec<([f64; 2], f64)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut nums = [0.0; 3];
        for (k, field) in rec.iter().enumerate() {
            nums[k] = field
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("not a number: {field:?}")))?;
        }
        rows.push(([nums[0], if dim == 2 { nums[1] } else { 0.0 }], nums[dim]));
    }
    if rows.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    let axes: Vec<(f64, f64, usize)> = (0..dim)
        .map(|a| infer_axis(rows.iter().map(|(x, _)| x[a]).collect()))
        .collect::<Result<_>>()?;
    let grid = Grid::from_axes(&axes)?;
    if rows.len() != grid.len() {
        return Err(Error::Parse(format!(
            "{} rows for a grid of {} points",
            rows.len(),
            grid.len()
        )));
    }
    let mut values = vec![f64::NAN; grid.len()];
    for (x, v) in rows {
        let mut idx = [0usize; 2];
        for (a, axis) in grid.axes().iter().enumerate() {
            let k = ((x[a] - axis.lower) / axis.spacing() - 0.5).round();
            idx[a] = k.clamp(0.0, (axis.points - 1) as f64) as usize;
        }
        let i = grid.flat_index(idx);
        if !values[i].is_nan() {
            return Err(Error::Parse("duplicate grid point".into()));
        }
        values[i] = v;
    }
    Ok((grid, values))
}

/// Reads a measure; weights within the mass tolerance are kept bit-exact,
/// others are renormalized.
pub fn read_measure<R: Read>(input: R) -> Result<DiscreteMeasure> {
    let (grid, w) = read_values(input)?;
    let mass: f64 = w.iter().sum();
    if (mass - 1.0).abs() <= MASS_TOLERANCE {
        DiscreteMeasure::new(grid, w)
    } else {
        DiscreteMeasure::normalized(grid, w)
    }
}

pub fn load_measure(path: &Path) -> Result<DiscreteMeasure> {
    read_measure(std::fs::File::open(path)?)
}

pub fn load_values(path: &Path) -> Result<(Grid, Vec<f64>)> {
    read_values(std::fs::File::open(path)?)
}

/// Tabulated internal energy from a two-column `s,u` CSV.
pub fn load_energy_table(path: &Path) -> Result<TabulatedEnergy> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(std::fs::File::open(path)?);
    let (mut s, mut u) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Parse("energy table needs two columns s,u".into()));
        }
        let parse = |f: &str| {
            f.parse::<f64>()
                .map_err(|_| Error::Parse(format!("not a number: {f:?}")))
        };
        s.push(parse(&rec[0])?);
        u.push(parse(&rec[1])?);
    }
    TabulatedEnergy::new(s, u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        for (dim, p) in [(1, 7), (2, 5)] {
            let g = Grid::unit(dim, p).unwrap();
            let rho =
                DiscreteMeasure::from_density(g, |x| 1.0 + x[0].sin() * 0.3 + x[1] / 7.0).unwrap();
            let mut buf = Vec::new();
            write_measure(&mut buf, &rho).unwrap();
            let back = read_measure(buf.as_slice()).unwrap();
            assert_eq!(back, rho);
        }
    }

    #[test]
    fn header_names_coordinates() {
        let g = Grid::unit(2, 2).unwrap();
        let mut buf = Vec::new();
        write_measure(&mut buf, &DiscreteMeasure::uniform(g)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,y,weight\n0.25,0.25,0.25\n0.25,0.75,0.25\n"));
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(matches!(
            read_measure("x,weight\n0.1,0.5\n0.2,abc\n".as_bytes()),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            read_measure("x,weight\n0.1,0.5\n0.2,0.2\n0.9,0.3\n".as_bytes()),
            Err(Error::Parse(_))
        ));
        assert!(read_measure("x,weight\n".as_bytes()).is_err());
        assert!(read_measure("a,b,c,d\n1,2,3,4\n".as_bytes()).is_err());
    }

    #[test]
    fn unnormalized_weights_are_rescaled() {
        let m = read_measure("x,weight\n0.25,1\n0.75,3\n".as_bytes()).unwrap();
        assert_eq!(m.weights(), &[0.25, 0.75]);
        assert_eq!(m.grid(), &Grid::unit(1, 2).unwrap());
    }
}
