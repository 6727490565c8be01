//! Output formatting shared by the command-line front end and the tests:
//! every floating value prints with 17 significant digits so that reruns
//! with identical configuration are byte-identical.

use crate::error::Result;
use std::io::Write;
use std::path::Path;

/// 17 significant digits (1 leading + 16 fractional in scientific form).
pub fn fmt17(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Write CSV rows with a fixed header; cells are preformatted strings.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Write a gnuplot-ready whitespace table with a comment header.
pub fn write_dat(path: &Path, comment: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# {comment}")?;
    for row in rows {
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Serialize any report as pretty JSON (serde preserves field order, and
/// float encoding is shortest-roundtrip, hence reproducible).
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        let s = fmt17(std::f64::consts::PI);
        assert_eq!(s, "3.1415926535897931e0");
        // Round trip.
        let back: f64 = s.parse().unwrap();
        assert_eq!(back.to_bits(), std::f64::consts::PI.to_bits());
    }
}
