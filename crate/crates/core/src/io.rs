//! File formats: trajectory CSV (`t,x1..xn[,v1..vn]`) and newline-delimited
//! JSON obstacle frames (`{"t": .., "points": [[..], ..]}`).

use std::io::{BufRead, Read, Write};
use std::path::Path;

use nalgebra::DVector;
use thiserror::Error;

use crate::dynsys::{ObstacleFrame, SimTrajectory};
use crate::learner::Demonstration;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Open {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

fn format_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Format {
        line,
        message: message.into(),
    }
}

/// Reads one demonstration. The header decides the layout: a `t` column,
/// then `n` position columns, optionally followed by `n` velocity columns
/// whose names start with `v` or `dx`. Without a header line of names the
/// columns are taken as `t, x1..xn`.
pub fn read_demonstration<R: Read>(id: &str, reader: R) -> Result<Demonstration, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut records = rdr.records().enumerate().peekable();
    let mut velocity_columns = 0;
    let mut width = None;
    if let Some((_, Ok(first))) = records.peek() {
        if first.iter().any(|f| f.parse::<f64>().is_err()) {
            let names: Vec<String> = first.iter().map(|f| f.to_ascii_lowercase()).collect();
            velocity_columns = names
                .iter()
                .skip(1)
                .filter(|n| n.starts_with('v') || n.starts_with("dx"))
                .count();
            width = Some(names.len());
            records.next();
        }
    }
    let mut times = Vec::new();
    let mut positions = Vec::new();
    let mut velocities = Vec::new();
    for (k, rec) in records {
        let line = k + 1;
        let rec = rec?;
        let values = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| format_err(line, format!("not a number: {f:?}")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let w = *width.get_or_insert(values.len());
        if values.len() != w {
            return Err(format_err(
                line,
                format!("expected {w} columns, found {}", values.len()),
            ));
        }
        let n = w - 1 - velocity_columns;
        if w < 2 || (velocity_columns > 0 && velocity_columns != n) {
            return Err(format_err(line, "columns must be t, x1..xn[, v1..vn]"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(format_err(line, "non-finite value"));
        }
        if let Some(prev) = times.last() {
            if values[0] <= *prev {
                return Err(format_err(line, "time stamps must increase"));
            }
        }
        times.push(values[0]);
        positions.push(DVector::from_column_slice(&values[1..=n]));
        if velocity_columns > 0 {
            velocities.push(DVector::from_column_slice(&values[1 + n..]));
        }
    }
    if times.len() < 2 {
        return Err(format_err(0, "a demonstration needs at least two samples"));
    }
    let mut demo = Demonstration::new(id, times, positions);
    if velocity_columns > 0 {
        demo.velocities = Some(velocities);
    }
    Ok(demo)
}

pub fn read_demonstration_file(path: &Path) -> Result<Demonstration, IoError> {
    let file = std::fs::File::open(path).map_err(|source| IoError::Open {
        path: path.display().to_string(),
        source,
    })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_demonstration(&id, std::io::BufReader::new(file)).map_err(|e| match e {
        IoError::Format { line, message } => IoError::Format {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn write_rows<W: Write>(
    writer: W,
    dim: usize,
    with_velocity: bool,
    rows: impl Iterator<Item = (f64, Vec<f64>)>,
) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    if with_velocity {
        header.extend((1..=dim).map(|i| format!("v{i}")));
    }
    w.write_record(&header)?;
    for (t, values) in rows {
        let mut rec = vec![t.to_string()];
        rec.extend(values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_demonstration<W: Write>(writer: W, demo: &Demonstration) -> Result<(), IoError> {
    let rows = demo.times.iter().enumerate().map(|(k, t)| {
        let mut v: Vec<f64> = demo.positions[k].iter().copied().collect();
        if let Some(vel) = &demo.velocities {
            v.extend(vel[k].iter());
        }
        (*t, v)
    });
    write_rows(writer, demo.dim(), demo.velocities.is_some(), rows)
}

pub fn write_trajectory<W: Write>(writer: W, traj: &SimTrajectory) -> Result<(), IoError> {
    let rows = traj.times.iter().enumerate().map(|(k, t)| {
        let mut v: Vec<f64> = traj.states[k].iter().copied().collect();
        if let Some(vel) = &traj.velocities {
            v.extend(vel[k].iter());
        }
        (*t, v)
    });
    write_rows(writer, traj.dim(), traj.velocities.is_some(), rows)
}

/// Reads obstacle frames, one JSON object per non-blank line.
pub fn read_obstacle_frames<R: BufRead>(reader: R) -> Result<Vec<ObstacleFrame>, IoError> {
    let mut frames = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        frames.push(serde_json::from_str(&line).map_err(|e| format_err(k + 1, e.to_string()))?);
    }
    Ok(frames)
}

pub fn read_obstacle_file(path: &Path) -> Result<Vec<ObstacleFrame>, IoError> {
    let file = std::fs::File::open(path).map_err(|source| IoError::Open {
        path: path.display().to_string(),
        source,
    })?;
    read_obstacle_frames(std::io::BufReader::new(file))
}

pub fn write_obstacle_frames<W: Write>(
    mut writer: W,
    frames: &[ObstacleFrame],
) -> Result<(), IoError> {
    for f in frames {
        serde_json::to_writer(&mut writer, f).map_err(|e| format_err(0, e.to_string()))?;
        writeln!(writer)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_positions_with_and_without_header() {
        let with = "t,x1,x2\n0,1,2\n0.5,3,4\n";
        let without = "0,1,2\n0.5,3,4\n";
        let a = read_demonstration("a", with.as_bytes()).unwrap();
        let b = read_demonstration("a", without.as_bytes()).unwrap();
        assert_eq!(a.times, b.times);
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.dim(), 2);
        assert!(a.velocities.is_none());
    }

    #[test]
    fn reads_velocity_columns() {
        let text = "t,x,y,vx,vy\n0,1,2,-1,-2\n1,0.5,1,-0.5,-1\n";
        let d = read_demonstration("v", text.as_bytes()).unwrap();
        assert_eq!(d.dim(), 2);
        assert_eq!(d.velocities.unwrap()[1].as_slice(), &[-0.5, -1.0]);
    }

    #[test]
    fn demonstration_round_trip() {
        let text = "t,x1,x2,v1,v2\n0,1.25,2,-1,-2\n0.1,0.5,1e-3,-0.5,-1\n";
        let d = read_demonstration("r", text.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_demonstration(&mut out, &d).unwrap();
        let back = read_demonstration("r", out.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn rejects_malformed_rows() {
        assert!(read_demonstration("x", "t,x\n0,1\n0,2\n".as_bytes()).is_err());
        assert!(read_demonstration("x", "t,x\n0,1\n1,abc\n".as_bytes()).is_err());
        assert!(read_demonstration("x", "t,x\n0,1\n1,2,3\n".as_bytes()).is_err());
        assert!(read_demonstration("x", "t,x\n0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = read_demonstration_file(Path::new("/nonexistent/demo.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/demo.csv"));
    }

    #[test]
    fn obstacle_frames_round_trip() {
        let text = "{\"t\": 0.0, \"points\": [[1.0, 2.0]]}\n\n{\"t\": 0.5, \"points\": []}\n";
        let frames = read_obstacle_frames(text.as_bytes()).unwrap();
        assert_eq!(frames.len(), 2);
        let mut out = Vec::new();
        write_obstacle_frames(&mut out, &frames).unwrap();
        assert_eq!(read_obstacle_frames(out.as_slice()).unwrap(), frames);
        assert!(read_obstacle_frames("{\"t\": 0}\n".as_bytes()).is_err());
    }
}
