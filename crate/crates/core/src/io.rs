//! CSV and metadata output.
//!
//! Numbers are written with 17 significant digits so that a round trip
//! through text reproduces every `f64` bit for bit.

use std::io::Write;

use crate::numerics::grid::{Field2, Grid2};

/// Formats a float with 17 significant digits.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `x1,x2,<names...>` rows for fields sampled on `grid`, x₁ outermost.
pub fn write_grid_csv<W: Write>(mut w: W, grid: &Grid2, names: &[&str], fields: &[&Field2]) -> std::io::Result<()> {
    assert_eq!(names.len(), fields.len());
    write!(w, "x1,x2")?;
    for n in names {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    for i in 0..grid.nx1 {
        for j in 0..grid.nx2 {
            write!(w, "{},{}", fmt(grid.x1(i)), fmt(grid.x2(j)))?;
            for f in fields {
                write!(w, ",{}", fmt(f.at(i, j)))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Writes a header line followed by one row per entry of equal-length columns.
pub fn write_columns_csv<W: Write>(mut w: W, names: &[&str], cols: &[&[f64]]) -> std::io::Result<()> {
    assert_eq!(names.len(), cols.len());
    writeln!(w, "{}", names.join(","))?;
    let n = cols.first().map_or(0, |c| c.len());
    for k in 0..n {
        let row: Vec<String> = cols.iter().map(|c| fmt(c[k])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Ordered key/value metadata written as `key = value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata {
    entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn set_f64(&mut self, key: &str, value: f64) -> &mut Self {
        self.set(key, fmt(value))
    }

    /// Sets every entry of `other`, keeping the order of first insertion.
    pub fn merge(&mut self, other: &Metadata) -> &mut Self {
        for (k, v) in &other.entries {
            self.set(k, v);
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(w, "{k} = {v}")?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once(" = ").map(|(k, v)| (k.trim().to_string(), v.trim().to_string())))
            .collect();
        Self { entries }
    }
}
