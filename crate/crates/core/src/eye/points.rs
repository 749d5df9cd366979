//! Plain-text point sets: three whitespace-separated mm coordinates per line,
//! `#` starts a comment.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::se3::Vec3;

#[derive(Debug, Error)]
pub enum PointIoError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn read_points<R: BufRead>(reader: R) -> Result<Vec<Vec3>, PointIoError> {
    let mut points = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(PointIoError::Parse {
                line: i + 1,
                message: format!("expected 3 columns, found {}", fields.len()),
            });
        }
        let mut xyz = [0.0; 3];
        for (slot, field) in xyz.iter_mut().zip(&fields) {
            *slot = field.parse::<f64>().map_err(|e| PointIoError::Parse {
                line: i + 1,
                message: format!("{field:?}: {e}"),
            })?;
            if !slot.is_finite() {
                return Err(PointIoError::Parse {
                    line: i + 1,
                    message: format!("{field:?} is not finite"),
                });
            }
        }
        points.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
    }
    Ok(points)
}

pub fn write_points<W: Write>(mut writer: W, points: &[Vec3]) -> Result<(), PointIoError> {
    writeln!(writer, "# x y z (mm)")?;
    for p in points {
        writeln!(writer, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn skips_comments_and_blank_lines() {
        let text = "# header\n\n1 2 3\n  4.5 -6 7e-1  # trailing\n";
        let pts = read_points(text.as_bytes()).unwrap();
        assert_eq!(pts, vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.5, -6.0, 0.7)]);
    }

    #[test]
    fn reports_bad_lines() {
        let err = read_points("1 2 3\n1 2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, PointIoError::Parse { line: 2, .. }));
        let err = read_points("1 x 3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, PointIoError::Parse { line: 1, .. }));
        assert!(read_points("1 NaN 3\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn write_then_read_is_lossless(coords in proptest::collection::vec(-1e3f64..1e3, 0..60)) {
            let pts: Vec<Vec3> = coords.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
            let mut buf = Vec::new();
            write_points(&mut buf, &pts).unwrap();
            prop_assert_eq!(read_points(buf.as_slice()).unwrap(), pts);
        }
    }
}
