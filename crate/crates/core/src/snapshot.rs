//! `.dgt` field snapshots: an ASCII header line `DGT1 nx ny lx ly t`
//! followed by `nx * ny` little-endian f64 values, `j` outer and `i` inner.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};

const MAGIC: &str = "DGT1";

/// Writes `field` at time `t` in snapshot format.
pub fn write_snapshot<W: Write>(mut w: W, field: &ScalarField, t: f64) -> Result<()> {
    let g = field.grid();
    writeln!(
        w,
        "{MAGIC} {} {} {} {} {}",
        g.nx,
        g.ny,
        crate::fmt_f64(g.lx),
        crate::fmt_f64(g.ly),
        crate::fmt_f64(t)
    )?;
    let mut buf = Vec::with_capacity(8 * g.len());
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a snapshot; returns the field and its time stamp.
pub fn read_snapshot<R: Read>(mut r: R) -> Result<(ScalarField, f64)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != MAGIC {
        return Err(Error::Format(format!("bad header `{header}`")));
    }
    let int = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad integer `{s}` in header")))
    };
    let real = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::Format(format!("bad real `{s}` in header")))
    };
    let grid = GridSpec::new(
        int(parts[1])?,
        int(parts[2])?,
        real(parts[3])?,
        real(parts[4])?,
    )?;
    let t = real(parts[5])?;
    let body = &bytes[nl + 1..];
    if body.len() != 8 * grid.len() {
        return Err(Error::Format(format!(
            "expected {} payload bytes, found {}",
            8 * grid.len(),
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((ScalarField::from_vec_unchecked(grid, values)?, t))
}

pub fn save(path: &Path, field: &ScalarField, t: f64) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_snapshot(&mut w, field, t)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ScalarField, f64)> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_snapshot(std::io::BufReader::new(f))
}

/// Human-readable rendering used by `snapshot-dump`.
pub fn pretty(field: &ScalarField, t: f64) -> String {
    let g = field.grid();
    let mut s = format!(
        "# DGT1 nx={} ny={} lx={} ly={} t={}\n# min={} max={} integral={}\n",
        g.nx,
        g.ny,
        crate::fmt_f64(g.lx),
        crate::fmt_f64(g.ly),
        crate::fmt_f64(t),
        crate::fmt_f64(field.min()),
        crate::fmt_f64(field.max()),
        crate::fmt_f64(field.sum_integral()),
    );
    for j in (0..g.ny).rev() {
        let row: Vec<String> = (0..g.nx).map(|i| crate::fmt_f64(field.get(i, j))).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            vals in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 20),
            lx in 1e-3f64..1e3, t in 0.0f64..1e4,
        ) {
            let g = GridSpec::new(5, 4, lx, lx / 3.0).unwrap();
            let f = ScalarField::new(g, vals).unwrap();
            let mut buf = Vec::new();
            write_snapshot(&mut buf, &f, t).unwrap();
            let (back, tb) = read_snapshot(&buf[..]).unwrap();
            prop_assert_eq!(tb.to_bits(), t.to_bits());
            prop_assert!(back.grid().same_as(f.grid()));
            for (a, b) in back.values().iter().zip(f.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_truncated_payload() {
        let g = GridSpec::unit_square(4).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &ScalarField::constant(g, 1.0), 0.5).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_snapshot(&buf[..]), Err(Error::Format(_))));
        assert!(read_snapshot(&b"DGT2 4 4 1 1 0\n"[..]).is_err());
    }

    #[test]
    fn header_layout() {
        let g = GridSpec::new(4, 5, 1.0, 2.0).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &ScalarField::constant(g, 0.0), 0.25).unwrap();
        let nl = buf.iter().position(|b| *b == b'\n').unwrap();
        let header = std::str::from_utf8(&buf[..nl]).unwrap();
        assert!(header.starts_with("DGT1 4 5 "));
        assert_eq!(buf.len() - nl - 1, 8 * 20);
    }
}
