use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Camera {
    Center,
    Left,
    Right,
}

impl Camera {
    pub fn as_str(self) -> &'static str {
        match self {
            Camera::Center => "center",
            Camera::Left => "left",
            Camera::Right => "right",
        }
    }
}

impl fmt::Display for Camera {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Camera {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "center" => Ok(Camera::Center),
            "left" => Ok(Camera::Left),
            "right" => Ok(Camera::Right),
            other => Err(Error::Config(format!("unknown camera {other:?}"))),
        }
    }
}

/// One frame record. `path` is resolved against the index file's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexRow {
    pub timestamp: i64,
    pub camera: Camera,
    pub path: PathBuf,
    pub angle: f64,
    pub torque: f64,
    pub speed: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DriveIndex {
    pub rows: Vec<IndexRow>,
}

impl DriveIndex {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub const INDEX_HEADER: [&str; 6] = [
    "timestamp",
    "camera",
    "filename",
    "angle",
    "torque",
    "speed",
];

/// Header name used for each logical column, in [`INDEX_HEADER`] order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnMap {
    names: [String; 6],
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            names: INDEX_HEADER.map(String::from),
        }
    }
}

impl ColumnMap {
    /// Parses overrides like `angle=steering_angle,filename=frame_id`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut map = ColumnMap::default();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (logical, header) = part.split_once('=').ok_or_else(|| {
                Error::Config(format!("column remap entry {part:?} is not logical=header"))
            })?;
            let slot = INDEX_HEADER
                .iter()
                .position(|c| *c == logical.trim())
                .ok_or_else(|| Error::Config(format!("unknown index column {logical:?}")))?;
            map.names[slot] = header.trim().to_owned();
        }
        Ok(map)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexOptions {
    /// `None` keeps every camera.
    pub camera: Option<Camera>,
    pub columns: ColumnMap,
    /// Fail on rows whose frame file does not exist.
    pub check_paths: bool,
}

impl Default for IndexOptions {
    fn default() -> Self {
        IndexOptions {
            camera: Some(Camera::Center),
            columns: ColumnMap::default(),
            check_paths: true,
        }
    }
}

/// Reads a drive index CSV with default options (center camera only).
pub fn load_index(path: impl AsRef<Path>) -> Result<DriveIndex> {
    load_index_with(path, &IndexOptions::default())
}

pub fn load_index_with(path: impl AsRef<Path>, opts: &IndexOptions) -> Result<DriveIndex> {
    let path = path.as_ref();
    let csv_err = |line: u64, message: String| Error::Csv {
        path: path.to_owned(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(format!("opening {}", path.display()), io),
            other => csv_err(1, format!("{other:?}")),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .clone();
    let mut slots = [0usize; 6];
    for (slot, name) in slots.iter_mut().zip(&opts.columns.names) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| csv_err(1, format!("missing column {name:?}")))?;
    }
    let root = path.parent().unwrap_or(Path::new("."));

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |slot: usize| record.get(slots[slot]).unwrap_or("");
        let number = |slot: usize| -> Result<f64> {
            let raw = field(slot);
            let v: f64 = raw.parse().map_err(|_| {
                csv_err(
                    line,
                    format!("{}: cannot parse {raw:?} as a number", INDEX_HEADER[slot]),
                )
            })?;
            if !v.is_finite() {
                return Err(csv_err(
                    line,
                    format!("{} is not finite", INDEX_HEADER[slot]),
                ));
            }
            Ok(v)
        };
        let timestamp: i64 = field(0).parse().map_err(|_| {
            csv_err(
                line,
                format!("timestamp: cannot parse {:?} as integer ns", field(0)),
            )
        })?;
        let camera: Camera = field(1)
            .parse()
            .map_err(|e| csv_err(line, format!("{e}")))?;
        if opts.camera.is_some_and(|c| c != camera) {
            continue;
        }
        let file = root.join(field(2));
        if opts.check_paths && !file.is_file() {
            return Err(csv_err(
                line,
                format!("frame file {} not found", file.display()),
            ));
        }
        rows.push(IndexRow {
            timestamp,
            camera,
            path: file,
            angle: number(3)?,
            torque: number(4)?,
            speed: number(5)?,
        });
    }
    rows.sort_by_key(|r| r.timestamp);
    Ok(DriveIndex { rows })
}

/// Writes `index` with the canonical header; paths are written relative to
/// the CSV's directory when possible.
pub fn write_index(index: &DriveIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let root = path.parent().unwrap_or(Path::new("."));
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(format!("writing {}", path.display()), io),
        other => Error::Config(format!("writing {}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(INDEX_HEADER).map_err(io)?;
    for r in &index.rows {
        let rel = r.path.strip_prefix(root).unwrap_or(&r.path);
        w.write_record([
            r.timestamp.to_string(),
            r.camera.to_string(),
            rel.to_string_lossy().into_owned(),
            r.angle.to_string(),
            r.torque.to_string(),
            r.speed.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("index.csv");
        fs::write(&p, body).unwrap();
        p
    }

    fn no_paths() -> IndexOptions {
        IndexOptions {
            check_paths: false,
            ..IndexOptions::default()
        }
    }

    #[test]
    fn empty_data_section_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "timestamp,camera,filename,angle,torque,speed\n");
        assert!(load_index_with(&p, &no_paths()).unwrap().is_empty());
    }

    #[test]
    fn filters_camera_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "timestamp,camera,filename,angle,torque,speed\n\
             30,center,c.ppm,0.1,0,5\n\
             10,left,l.ppm,0.2,0,5\n\
             20,right,r.ppm,0.3,0,5\n\
             5,center,d.ppm,-0.1,0,5\n",
        );
        let idx = load_index_with(&p, &no_paths()).unwrap();
        assert_eq!(
            idx.rows.iter().map(|r| r.timestamp).collect::<Vec<_>>(),
            vec![5, 30]
        );
        let all = load_index_with(
            &p,
            &IndexOptions {
                camera: None,
                ..no_paths()
            },
        )
        .unwrap();
        assert_eq!(all.len(), 4);
        assert!(all
            .rows
            .windows(2)
            .all(|w| w[0].timestamp <= w[1].timestamp));
    }

    #[test]
    fn bad_number_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "timestamp,camera,filename,angle,torque,speed\n1,center,a.ppm,0.1,0,5\n2,center,b.ppm,abc,0,5\n",
        );
        match load_index_with(&p, &no_paths()) {
            Err(Error::Csv { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("angle"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_column_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "timestamp,camera,filename,angle,speed\n");
        assert!(matches!(
            load_index_with(&p, &no_paths()),
            Err(Error::Csv { line: 1, .. })
        ));
        let p = write(
            dir.path(),
            "timestamp,camera,filename,angle,torque,speed\n1,center,nope.ppm,0,0,1\n",
        );
        assert!(matches!(load_index(&p), Err(Error::Csv { line: 2, .. })));
    }

    #[test]
    fn column_remap() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "frame_id,timestamp,camera,steering_angle,torque,speed\nx.ppm,7,center,0.25,0,3\n",
        );
        let opts = IndexOptions {
            columns: ColumnMap::parse("angle=steering_angle, filename=frame_id").unwrap(),
            ..no_paths()
        };
        let idx = load_index_with(&p, &opts).unwrap();
        assert_eq!(idx.rows[0].angle, 0.25);
        assert_eq!(idx.rows[0].path, dir.path().join("x.ppm"));
        assert!(ColumnMap::parse("wheel=x").is_err());
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let idx = DriveIndex {
            rows: vec![IndexRow {
                timestamp: 100,
                camera: Camera::Center,
                path: dir.path().join("frames/f.ppm"),
                angle: 0.056939,
                torque: 0.0,
                speed: 8.5,
            }],
        };
        let p = dir.path().join("index.csv");
        write_index(&idx, &p).unwrap();
        assert_eq!(load_index_with(&p, &no_paths()).unwrap(), idx);
    }
}
