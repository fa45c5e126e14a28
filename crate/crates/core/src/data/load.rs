//! WS-DREAM style file loaders and writers.
//!
//! Layout under the dataset root:
//!
//! - WS-DREAM-1: `rtMatrix.txt` / `tpMatrix.txt` (one user per line,
//!   whitespace separated), `userlist.txt` and `wslist.txt` (delimited with a
//!   header naming `Latitude` / `Longitude` columns).
//! - WS-DREAM-2: `rtdata.txt` / `tpdata.txt`, one `user service slice value`
//!   record per line.
//!
//! Raw values `<= 0` (the distributions use `-1` for failed invocations) are
//! stored as 0, i.e. unobserved.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Dataset, DatasetKind, Entity, GeoContext, QosKind, QosMatrix};
use crate::error::{Error, Result};

pub fn load_dataset(root: &Path, which: DatasetKind, qos: QosKind) -> Result<Dataset> {
    match which {
        DatasetKind::Ws1 => load_ws1(root, qos),
        DatasetKind::Ws2 => load_ws2(root, qos),
    }
}

fn load_ws1(root: &Path, qos: QosKind) -> Result<Dataset> {
    let matrix_name = match qos {
        QosKind::Rt => "rtMatrix.txt",
        QosKind::Tp => "tpMatrix.txt",
    };
    let matrix = read_matrix(&find_file(root, matrix_name)?)?;
    let users = read_metadata(&find_file(root, "userlist.txt")?)?;
    let services = read_metadata(&find_file(root, "wslist.txt")?)?;
    if users.len() != matrix.n_users() || services.len() != matrix.n_services() {
        return Err(Error::Dimension(format!(
            "{} is {}x{} but metadata lists {} users and {} services",
            matrix_name,
            matrix.n_users(),
            matrix.n_services(),
            users.len(),
            services.len()
        )));
    }
    Dataset::new(DatasetKind::Ws1, qos, users, services, vec![matrix])
}

fn load_ws2(root: &Path, qos: QosKind) -> Result<Dataset> {
    let name = match qos {
        QosKind::Rt => "rtdata.txt",
        QosKind::Tp => "tpdata.txt",
    };
    let path = find_file(root, name)?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut records = Vec::new();
    let (mut n_users, mut n_services, mut n_slices) = (0usize, 0usize, 0usize);
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.clone(),
            line: lineno + 1,
            message,
        };
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let index = |tok: &str| {
            tok.parse::<usize>()
                .map_err(|_| bad(format!("invalid index `{tok}`")))
        };
        let (u, s, t) = (index(fields[0])?, index(fields[1])?, index(fields[2])?);
        let v = parse_value(fields[3]).ok_or_else(|| bad(format!("invalid value `{}`", fields[3])))?;
        n_users = n_users.max(u + 1);
        n_services = n_services.max(s + 1);
        n_slices = n_slices.max(t + 1);
        records.push((u, s, t, v));
    }
    let mut matrices = vec![QosMatrix::zeros(n_users, n_services); n_slices];
    for (u, s, t, v) in records {
        matrices[t].set(u, s, v);
    }
    let anonymous = |n: usize| {
        (0..n)
            .map(|i| Entity {
                id: i.to_string(),
                context: None,
            })
            .collect::<Vec<_>>()
    };
    Dataset::new(DatasetKind::Ws2, qos, anonymous(n_users), anonymous(n_services), matrices)
}

/// Case-insensitive lookup of `name` directly under `root`.
fn find_file(root: &Path, name: &str) -> Result<PathBuf> {
    let direct = root.join(name);
    if direct.is_file() {
        return Ok(direct);
    }
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries.flatten() {
        if entry.file_name().to_string_lossy().eq_ignore_ascii_case(name) {
            return Ok(entry.path());
        }
    }
    Err(Error::io(
        direct,
        std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
    ))
}

fn parse_value(tok: &str) -> Option<f64> {
    let v: f64 = tok.parse().ok()?;
    v.is_finite().then_some(if v > 0.0 { v } else { 0.0 })
}

fn read_matrix(path: &Path) -> Result<QosMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for tok in line.split_whitespace() {
            let v = parse_value(tok).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("invalid number `{tok}`"),
            })?;
            values.push(v);
        }
        let len = values.len() - before;
        match width {
            None => width = Some(len),
            Some(w) if w != len => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("row has {len} values, expected {w}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    QosMatrix::from_row_major(rows, width.unwrap_or(0), values)
}

fn is_separator(line: &str) -> bool {
    let t = line.trim();
    !t.is_empty() && t.chars().all(|c| c == '=' || c == '-')
}

fn split_fields(line: &str, tabbed: bool) -> Vec<&str> {
    if tabbed {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn read_metadata(path: &Path) -> Result<Vec<Entity>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !is_separator(l));
    let Some((_, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let tabbed = header.contains('\t');
    let columns: Vec<String> = split_fields(header, tabbed)
        .iter()
        .map(|c| c.trim_matches(|ch| ch == '[' || ch == ']').trim().to_ascii_lowercase())
        .collect();
    let lat_col = columns.iter().position(|c| c == "latitude" || c == "lat");
    let lon_col = columns
        .iter()
        .position(|c| c == "longitude" || c == "lon" || c == "lng");

    let mut entities = Vec::new();
    for (lineno, line) in lines {
        let fields = split_fields(line, tabbed);
        let id = fields.first().copied().unwrap_or_default();
        if id.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: "missing id".into(),
            });
        }
        let coord = |col: Option<usize>| {
            col.and_then(|c| fields.get(c))
                .and_then(|tok| tok.parse::<f64>().ok())
        };
        let context = match (coord(lat_col), coord(lon_col)) {
            (Some(lat), Some(lon)) => GeoContext::new(lat, lon).ok(),
            _ => None,
        };
        entities.push(Entity {
            id: id.to_string(),
            context,
        });
    }
    Ok(entities)
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_metadata(path: &Path, entities: &[Entity], id_label: &str) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "[{id_label}]\t[Latitude]\t[Longitude]").map_err(io)?;
    writeln!(w, "==========================================").map_err(io)?;
    for e in entities {
        match e.context {
            Some(g) => writeln!(w, "{}\t{}\t{}", e.id, g.latitude(), g.longitude()),
            None => writeln!(w, "{}\tnull\tnull", e.id),
        }
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes a dataset in the WS-DREAM-1 layout (first matrix only). Unobserved
/// cells are written as `-1`.
pub fn write_ws1(root: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let name = match dataset.qos {
        QosKind::Rt => "rtMatrix.txt",
        QosKind::Tp => "tpMatrix.txt",
    };
    let path = root.join(name);
    let mut w = create(&path)?;
    for row in dataset.matrices[0].rows() {
        let line: Vec<String> = row
            .iter()
            .map(|&v| if v > 0.0 { v.to_string() } else { "-1".to_string() })
            .collect();
        writeln!(w, "{}", line.join("\t")).map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_metadata(&root.join("userlist.txt"), &dataset.users, "User ID")?;
    write_metadata(&root.join("wslist.txt"), &dataset.services, "Service ID")
}

/// Writes every slice in the WS-DREAM-2 triplet layout (observed cells only).
pub fn write_ws2(root: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let name = match dataset.qos {
        QosKind::Rt => "rtdata.txt",
        QosKind::Tp => "tpdata.txt",
    };
    let path = root.join(name);
    let mut w = create(&path)?;
    for (t, m) in dataset.matrices.iter().enumerate() {
        for (u, s) in m.observed_cells() {
            writeln!(w, "{u} {s} {t} {}", m.get(u, s)).map_err(|e| Error::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
