//! On-disk formats.
//!
//! A trajectory file is a short text header followed by raw little-endian
//! f64 data, frame-major then field-major:
//!
//! ```text
//! kdvlab-trajectory 1
//! fields n u phi
//! n_points 512
//! length 50
//! frames 3
//! times 0 0.02 0.04
//! end
//! <frames × fields × n_points f64>
//! ```
//!
//! Tables are RFC-4180 CSV with a header row.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::grid::{Grid, GridField};

const MAGIC: &str = "kdvlab-trajectory 1";

/// Frames of one or more named fields on a common grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub fields: Vec<String>,
    pub times: Vec<f64>,
    /// `frames[i][j]` is field `j` at `times[i]`.
    pub frames: Vec<Vec<GridField>>,
}

/// Bitwise equality of names, times, grids and values.
impl PartialEq for Trajectory {
    fn eq(&self, other: &Self) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.fields == other.fields
            && bits(&self.times) == bits(&other.times)
            && self.frames.len() == other.frames.len()
            && self.frames.iter().zip(&other.frames).all(|(a, b)| {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(x, y)| x.grid().as_ref() == y.grid().as_ref() && bits(x.values()) == bits(y.values()))
            })
    }
}

impl Trajectory {
    pub fn new(fields: &[&str], times: Vec<f64>, frames: Vec<Vec<GridField>>) -> Result<Self> {
        if times.len() != frames.len() || times.is_empty() {
            return Err(LabError::Shape(format!("{} times for {} frames", times.len(), frames.len())));
        }
        let grid = frames[0].first().ok_or_else(|| LabError::Shape("frame without fields".into()))?.grid().clone();
        for f in &frames {
            if f.len() != fields.len() || f.iter().any(|g| g.grid().as_ref() != grid.as_ref()) {
                return Err(LabError::Shape("frames disagree in field count or grid".into()));
            }
        }
        Ok(Trajectory { fields: fields.iter().map(|s| s.to_string()).collect(), times, frames })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.frames[0][0].grid()
    }

    /// Series of one field over all frames.
    pub fn field(&self, name: &str) -> Option<Vec<GridField>> {
        let j = self.fields.iter().position(|f| f == name)?;
        Some(self.frames.iter().map(|fr| fr[j].clone()).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let grid = self.grid();
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "fields {}", self.fields.join(" "))?;
        writeln!(w, "n_points {}", grid.n_points())?;
        writeln!(w, "length {:?}", grid.length())?;
        writeln!(w, "frames {}", self.times.len())?;
        let times: Vec<String> = self.times.iter().map(|t| format!("{t:?}")).collect();
        writeln!(w, "times {}", times.join(" "))?;
        writeln!(w, "end")?;
        for frame in &self.frames {
            for f in frame {
                for v in f.values() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let bad = |m: &str| LabError::Config(format!("{}: {m}", path.display()));
        let mut line = String::new();
        let mut next = |r: &mut BufReader<File>| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("truncated header"));
            }
            Ok(line.trim_end().to_string())
        };
        if next(&mut r)? != MAGIC {
            return Err(bad("not a trajectory file"));
        }
        let mut fields = None;
        let mut n_points = None;
        let mut length = None;
        let mut frames = None;
        let mut times = None;
        loop {
            let l = next(&mut r)?;
            if l == "end" {
                break;
            }
            let (key, rest) = l.split_once(' ').unwrap_or((l.as_str(), ""));
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number '{s}'")));
            match key {
                "fields" => fields = Some(rest.split_whitespace().map(String::from).collect::<Vec<_>>()),
                "n_points" => n_points = Some(rest.parse::<usize>().map_err(|_| bad("bad n_points"))?),
                "length" => length = Some(num(rest)?),
                "frames" => frames = Some(rest.parse::<usize>().map_err(|_| bad("bad frame count"))?),
                "times" => times = Some(rest.split_whitespace().map(num).collect::<Result<Vec<_>>>()?),
                other => return Err(bad(&format!("unknown header key '{other}'"))),
            }
        }
        let (fields, n, length, count, times) = match (fields, n_points, length, frames, times) {
            (Some(a), Some(b), Some(c), Some(d), Some(e)) => (a, b, c, d, e),
            _ => return Err(bad("incomplete header")),
        };
        if times.len() != count || fields.is_empty() {
            return Err(bad("header is inconsistent"));
        }
        let grid = Grid::new(n, length)?;
        let mut buf = vec![0u8; n * 8];
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut frame = Vec::with_capacity(fields.len());
            for _ in &fields {
                r.read_exact(&mut buf).map_err(|_| bad("truncated data"))?;
                let vals = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                frame.push(GridField::new(&grid, vals)?);
            }
            out.push(frame);
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(bad("trailing data"));
        }
        Ok(Trajectory { fields, times, frames: out })
    }
}

/// Writes `rows` under `header` as CSV. Floats use Rust's shortest
/// round-trip formatting so output is deterministic.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(LabError::Shape(format!("row has {} cells, header {}", row.len(), header.len())));
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Header and rows of a CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.map(|r| r.iter().map(String::from).collect())).collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

pub fn fmt(x: f64) -> String {
    format!("{x:e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(16, 3.5).unwrap();
        let a = GridField::from_fn(&g, |x| x.sin() / 3.0);
        let b = GridField::from_fn(&g, |x| (2.0 * x).cos() * 1e-300);
        let t = Trajectory::new(&["n", "u"], vec![0.0, 0.1], vec![vec![a.clone(), b.clone()], vec![b, a]]).unwrap();
        let p = dir.path().join("t.traj");
        t.write(&p).unwrap();
        let back = Trajectory::read(&p).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.grid().length(), 3.5);
    }

    #[test]
    fn truncated_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(8, 1.0).unwrap();
        let t = Trajectory::new(&["n"], vec![0.0], vec![vec![GridField::zeros(&g)]]).unwrap();
        let p = dir.path().join("t.traj");
        t.write(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(Trajectory::read(&p).is_err());
        std::fs::write(&p, b"hello\n").unwrap();
        assert!(Trajectory::read(&p).is_err());
    }

    #[test]
    fn csv_quotes_per_rfc4180() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_csv(&p, &["a", "b"], &[vec!["1".into(), "say \"hi\", twice".into()]]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "a,b\n1,\"say \"\"hi\"\", twice\"\n");
        let (h, rows) = read_csv(&p).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows[0][1], "say \"hi\", twice");
    }
}
