use std::io::Write;
use std::path::{Path, PathBuf};

use covrf::CovEstimates;
use serde::Serialize;

use crate::failure::{Failure, Kind};

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(Kind::Io, format!("{}: {e}", path.display()))
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    let name = path.file_name().ok_or_else(|| {
        Failure::new(
            Kind::Usage,
            format!("{} is not a file path", path.display()),
        )
    })?;
    let tmp = dir.join(format!(
        ".{}.{}.tmp",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(io_failure(path, e));
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Pretty JSON to `path`, or to stdout when no path is given.
pub fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), Failure> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value)?;
            println!("{text}");
            Ok(())
        }
    }
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    covrf::simlab::to_csv(rows, &mut buf)?;
    Ok(buf)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One line per row and upper-triangle entry: `row_id,j,k,value,fallback`,
/// with the derived correlation and standard deviations inserted before
/// `fallback` when `derived` is set.
pub fn estimates_csv(
    est: &CovEstimates,
    names: &[String],
    derived: bool,
) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row_id", "j", "k", "value"];
    if derived {
        header.extend(["correlation", "sd_j", "sd_k"]);
    }
    header.push("fallback");
    let csv_err = |e: csv::Error| Failure::new(Kind::Io, e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for (i, s) in est.estimates.iter().enumerate() {
        let q = s.dim();
        let sd: Vec<Option<f64>> = s
            .diag()
            .iter()
            .map(|&v| (v >= 0.0).then(|| v.sqrt()))
            .collect();
        for j in 0..q {
            for k in j..q {
                let v = s.get(j, k);
                let mut rec = vec![
                    i.to_string(),
                    names[j].clone(),
                    names[k].clone(),
                    v.to_string(),
                ];
                if derived {
                    let cor = match (sd[j], sd[k]) {
                        (Some(_), Some(_)) if j == k && v > 0.0 => Some(1.0),
                        (Some(a), Some(b)) if a * b > 0.0 => Some(v / (a * b)),
                        _ => None,
                    };
                    rec.extend([fmt_opt(cor), fmt_opt(sd[j]), fmt_opt(sd[k])]);
                }
                rec.push(est.fallback[i].to_string());
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
    }
    w.into_inner()
        .map_err(|e| Failure::new(Kind::Io, e.to_string()))
}
