use std::path::Path;

use super::{PredictionPoint, PredictionSeries};
use crate::error::{Error, Result};

/// Column order; `speed_pred` is present only when speed was predicted.
pub const PLOT_HEADER: [&str; 4] = ["timestamp", "target", "prediction", "speed_pred"];

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(format!("accessing {}", path.display()), io),
        other => Error::Csv {
            path: path.to_owned(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Writes the series with shortest round-trip float formatting.
pub fn write_plot_data(series: &PredictionSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let speed = series.has_speed();
    let cols = if speed { 4 } else { 3 };
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(&PLOT_HEADER[..cols])
        .map_err(|e| csv_error(path, e))?;
    for p in &series.points {
        let mut row = vec![
            p.timestamp.to_string(),
            p.target.to_string(),
            p.predicted.to_string(),
        ];
        if speed {
            row.push(p.speed.map(|s| s.to_string()).unwrap_or_default());
        }
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_plot_data(path: impl AsRef<Path>) -> Result<PredictionSeries> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let speed = match header.len() {
        3 | 4 if header.iter().zip(PLOT_HEADER).all(|(a, b)| a == b) => header.len() == 4,
        _ => {
            return Err(Error::Csv {
                path: path.to_owned(),
                line: 1,
                message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
            })
        }
    };
    let mut points = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::Csv {
            path: path.to_owned(),
            line,
            message: format!("cannot parse {what}"),
        };
        let num = |i: usize, what: &str| rec[i].parse::<f64>().map_err(|_| bad(what));
        points.push(PredictionPoint {
            timestamp: rec[0].parse().map_err(|_| bad("timestamp"))?,
            target: num(1, "target")?,
            predicted: num(2, "prediction")?,
            speed: if speed {
                Some(num(3, "speed_pred")?)
            } else {
                None
            },
        });
    }
    Ok(PredictionSeries { points })
}
