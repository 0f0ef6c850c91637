use super::index::DriveIndex;
use crate::error::{Error, Result};

/// Number of leading rows that go to the training side.
pub fn split_point(n: usize, train_frac: f64) -> Result<usize> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::contract(format!(
            "train_frac {train_frac} must lie in (0, 1)"
        )));
    }
    Ok((n as f64 * train_frac).round() as usize)
}

/// Contiguous split: the first `round(n·train_frac)` rows train, the rest
/// validate. Sequences built from each side separately never cross the cut.
pub fn split(index: &DriveIndex, train_frac: f64) -> Result<(DriveIndex, DriveIndex)> {
    let cut = split_point(index.len(), train_frac)?;
    Ok((
        DriveIndex {
            rows: index.rows[..cut].to_vec(),
        },
        DriveIndex {
            rows: index.rows[cut..].to_vec(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Camera, IndexRow};

    fn index(n: usize) -> DriveIndex {
        DriveIndex {
            rows: (0..n)
                .map(|i| IndexRow {
                    timestamp: i as i64,
                    camera: Camera::Center,
                    path: format!("{i}.ppm").into(),
                    angle: 0.0,
                    torque: 0.0,
                    speed: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn eighty_twenty() {
        let idx = index(100);
        let (a, b) = split(&idx, 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        let mut joined = a.rows.clone();
        joined.extend(b.rows.clone());
        assert_eq!(joined, idx.rows);
        assert!(a.rows.last().unwrap().timestamp < b.rows[0].timestamp);
        assert!(split(&idx, 1.0).is_err());
        assert!(split(&idx, 0.0).is_err());
    }
}
