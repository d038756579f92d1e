//! CSV datasets: a `y` column, covariates `z1..zp` and exposures `x{k}_{t}`
//! (zero-padded lag index, e.g. `x1_01`).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use qdlag::RegressionData;

use crate::error::{CliError, CliResult};

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

enum Column {
    Y,
    Z(usize),
    X(usize, usize),
}

fn parse_index(s: &str) -> Option<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok().filter(|&v| v >= 1)
}

fn classify(name: &str) -> Option<Column> {
    if name == "y" {
        return Some(Column::Y);
    }
    if let Some(rest) = name.strip_prefix('z') {
        return parse_index(rest).map(Column::Z);
    }
    let rest = name.strip_prefix('x')?;
    let (k, t) = rest.split_once('_')?;
    Some(Column::X(parse_index(k)?, parse_index(t)?))
}

/// Zero-padding width of the lag index.
pub fn lag_width(t: usize) -> usize {
    t.to_string().len().max(2)
}

pub fn x_name(k: usize, t: usize, width: usize) -> String {
    format!("x{}_{:0width$}", k, t, width = width)
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Usage(format!("schema violation: {}", msg.into()))
}

/// Reads a dataset. Rows with empty or `NA` cells are rejected with their
/// (1-based) row numbers.
pub fn read_dataset(path: &Path) -> CliResult<RegressionData> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let headers = rdr.headers().map_err(|e| CliError::io(path, e))?.clone();

    let mut y_col = None;
    let mut z_cols: BTreeMap<usize, usize> = BTreeMap::new();
    let mut x_cols: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut unknown = Vec::new();
    for (pos, name) in headers.iter().enumerate() {
        let dup = match classify(name) {
            Some(Column::Y) => y_col.replace(pos).is_some(),
            Some(Column::Z(j)) => z_cols.insert(j, pos).is_some(),
            Some(Column::X(k, t)) => x_cols.insert((k, t), pos).is_some(),
            None => {
                unknown.push(name.to_string());
                false
            }
        };
        if dup {
            return Err(schema(format!("duplicate column \"{name}\"")));
        }
    }
    if !unknown.is_empty() {
        return Err(schema(format!("unrecognized columns {unknown:?}")));
    }
    let y_col = y_col.ok_or_else(|| schema("missing response column \"y\""))?;
    let p = z_cols.len();
    if let Some(j) = (1..=p).find(|j| !z_cols.contains_key(j)) {
        return Err(schema(format!(
            "covariate columns must be z1..z{p}; \"z{j}\" is missing"
        )));
    }
    let k = x_cols.keys().map(|&(k, _)| k).max().unwrap_or(0);
    let t = x_cols.keys().map(|&(_, t)| t).max().unwrap_or(0);
    if k > 0 {
        let width = lag_width(t);
        let missing: Vec<String> = (1..=k)
            .flat_map(|kk| (1..=t).map(move |tt| (kk, tt)))
            .filter(|key| !x_cols.contains_key(key))
            .map(|(kk, tt)| x_name(kk, tt, width))
            .collect();
        if !missing.is_empty() {
            return Err(schema(format!(
                "exposure columns do not form a full K x T grid; missing {missing:?}"
            )));
        }
    }

    let mut ys = Vec::new();
    let mut zs = Vec::new();
    let mut xs = Vec::new();
    let mut incomplete = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let row = row + 1;
        let cell = |pos: usize| -> CliResult<Option<f64>> {
            let s = rec.get(pos).unwrap_or("");
            if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|_| {
                schema(format!(
                    "row {row}, column \"{}\": cannot parse {s:?}",
                    &headers[pos]
                ))
            })
        };
        let mut values = Vec::with_capacity(1 + p + k * t);
        let mut complete = true;
        for pos in std::iter::once(y_col)
            .chain(z_cols.values().copied())
            .chain(x_cols.values().copied())
        {
            match cell(pos)? {
                Some(v) => values.push(v),
                None => complete = false,
            }
        }
        if !complete {
            incomplete.push(row);
            continue;
        }
        ys.push(values[0]);
        zs.extend_from_slice(&values[1..1 + p]);
        xs.extend_from_slice(&values[1 + p..]);
    }
    if !incomplete.is_empty() {
        return Err(schema(format!("rows with missing cells: {incomplete:?}")));
    }
    let n = ys.len();
    if n == 0 {
        return Err(schema("no data rows"));
    }
    // BTreeMap order over (k, t) is exposure-major, matching the flat design
    let x = Array2::from_shape_vec((n, k * t), xs).expect("row lengths checked");
    let z = Array2::from_shape_vec((n, p), zs).expect("row lengths checked");
    let t_dim = if k == 0 { 3 } else { t };
    RegressionData::from_flat(x, k, t_dim, z, Array1::from(ys), None)
        .map_err(|e| schema(e.to_string()))
}

pub fn write_dataset(path: &Path, data: &RegressionData) -> CliResult<()> {
    let (k, t, p) = (data.k(), data.t(), data.p());
    let width = lag_width(t);
    let mut header = vec!["y".to_string()];
    header.extend((1..=p).map(|j| format!("z{j}")));
    for kk in 1..=k {
        header.extend((1..=t).map(|tt| x_name(kk, tt, width)));
    }
    let mut wtr = csv_writer(path)?;
    wtr.write_record(&header)
        .map_err(|e| CliError::io(path, e))?;
    let (x, z, y) = (data.exposures(), data.covariates(), data.response());
    for i in 0..data.n() {
        let (zi, xi) = (z.row(i), x.row(i));
        let row = std::iter::once(y[i])
            .chain(zi.iter().copied())
            .chain(xi.iter().copied())
            .map(fmt_f64);
        wtr.write_record(row).map_err(|e| CliError::io(path, e))?;
    }
    wtr.flush().map_err(|e| CliError::io(path, e))
}

pub fn csv_writer(path: &Path) -> CliResult<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Usage(e.to_string())),
    }
}
