//! CSV datasets with an optional JSON sidecar.
//!
//! Columns are `x_1 … x_p, y_1 … y_d, z_1 … z_k` and, when known,
//! `w_true`. The sidecar (`<file>.json`) records generator settings,
//! column kinds and the true q. Without it, X columns holding only a few
//! distinct integer values are treated as categorical.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ColumnKind, Dataset, GenInfo, GenParams, Generator, TrueQ};
use crate::error::{Error, Result};

/// Integer-valued X columns with at most this many levels are inferred
/// categorical.
pub const MAX_INFERRED_LEVELS: usize = 10;
pub const WEIGHT_COLUMN: &str = "w_true";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub generator: Option<Generator>,
    pub params: Option<GenParams>,
    pub ground_truth_null: bool,
    pub x_kinds: Vec<ColumnKind>,
    pub true_q: Option<TrueQ>,
    #[serde(default)]
    pub info: GenInfo,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_dataset(
    path: &Path,
    data: &Dataset,
    generator: Option<Generator>,
    params: Option<&GenParams>,
) -> Result<()> {
    data.validate()?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = Vec::new();
    for (prefix, m) in [("x", &data.x), ("y", &data.y), ("z", &data.z)] {
        header.extend((1..=m.ncols()).map(|j| format!("{prefix}_{j}")));
    }
    if data.true_weights.is_some() {
        header.push(WEIGHT_COLUMN.into());
    }
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data
            .x
            .row(i)
            .iter()
            .chain(data.y.row(i).iter())
            .chain(data.z.row(i).iter())
            .map(|v| v.to_string())
            .collect();
        if let Some(tw) = &data.true_weights {
            rec.push(tw[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    let side = Sidecar {
        generator,
        params: params.cloned(),
        ground_truth_null: data.ground_truth_null,
        x_kinds: data.x_kinds.clone(),
        true_q: data.true_q.clone(),
        info: data.info.clone(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

/// Load a dataset; the sidecar is used when present.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let pick = |prefix: &str| -> Vec<usize> {
        let mut cols: Vec<(usize, usize)> = header
            .iter()
            .enumerate()
            .filter_map(|(i, h)| {
                h.strip_prefix(prefix)
                    .and_then(|rest| rest.parse::<usize>().ok())
                    .map(|k| (k, i))
            })
            .collect();
        cols.sort();
        cols.into_iter().map(|(_, i)| i).collect()
    };
    let (xc, yc, zc) = (pick("x_"), pick("y_"), pick("z_"));
    if xc.is_empty() || yc.is_empty() || zc.is_empty() {
        return Err(Error::Data(
            "CSV needs x_*, y_* and z_* columns".into(),
        ));
    }
    let wc = header.iter().position(|h| h == WEIGHT_COLUMN);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("row {}: cannot parse {s:?}", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let take = |cols: &[usize]| Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| rows[i][cols[j]]);
    let x = take(&xc);
    let side: Option<Sidecar> = match std::fs::read_to_string(sidecar_path(path)) {
        Ok(s) => Some(serde_json::from_str(&s)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    let x_kinds = match &side {
        Some(s) => s.x_kinds.clone(),
        None => (0..x.ncols()).map(|j| infer_kind(&x.column(j).to_vec())).collect(),
    };
    let data = Dataset {
        y: take(&yc),
        z: take(&zc),
        true_weights: wc.map(|c| rows.iter().map(|r| r[c]).collect()),
        ground_truth_null: side.as_ref().is_some_and(|s| s.ground_truth_null),
        x_kinds,
        true_q: side.as_ref().and_then(|s| s.true_q.clone()),
        info: side.map(|s| s.info).unwrap_or_default(),
        x,
    };
    data.validate()?;
    Ok(data)
}

/// Categorical when every value is an integer and there are few levels.
pub fn infer_kind(col: &[f64]) -> ColumnKind {
    let mut levels: Vec<f64> = Vec::new();
    for &v in col {
        if v.fract() != 0.0 {
            return ColumnKind::Continuous;
        }
        if !levels.contains(&v) {
            levels.push(v);
            if levels.len() > MAX_INFERRED_LEVELS {
                return ColumnKind::Continuous;
            }
        }
    }
    ColumnKind::Categorical
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{gen_mixed, generate};

    #[test]
    fn round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let p = GenParams {
            n: 50,
            d_x: 2,
            d_z: 2,
            ..GenParams::default()
        };
        let d = generate(Generator::Mixed, &p).unwrap();
        write_dataset(&path, &d, Some(Generator::Mixed), Some(&p)).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn kinds_inferred_without_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let p = GenParams {
            n: 40,
            d_x: 2,
            ..GenParams::default()
        };
        let d = gen_mixed(&p).unwrap();
        write_dataset(&path, &d, None, None).unwrap();
        std::fs::remove_file(sidecar_path(&path)).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.x_kinds, d.x_kinds);
        assert!(back.true_q.is_none());
        assert_eq!(back.true_weights, d.true_weights);
    }

    #[test]
    fn malformed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x_1,y_1\n1,2\n").unwrap();
        assert!(read_dataset(&path).is_err());
        std::fs::write(&path, "x_1,y_1,z_1\n1,abc,2\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Data(_))));
        std::fs::write(&path, "x_1,y_1,z_1\n1,NaN,2\n").unwrap();
        assert!(read_dataset(&path).is_err());
    }
}
