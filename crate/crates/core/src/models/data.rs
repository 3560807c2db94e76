//! Dataset containers, file loaders and writers, and seeded synthetic
//! generators standing in for the a1a, frisk and red-wine datasets.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use crate::error::{Error, Result};

/// Binary classification data; the model prepends a bias so `d = p + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationData {
    pub n: usize,
    pub p: usize,
    /// Row-major `n × p`.
    pub features: Vec<f64>,
    /// Each label is 0 or 1.
    pub labels: Vec<u8>,
}

impl ClassificationData {
    pub fn new(n: usize, p: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Data("no rows".into()));
        }
        if p == 0 {
            return Err(Error::Data("no features".into()));
        }
        if features.len() != n * p || labels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "expected {n}x{p} features and {n} labels, got {} and {}",
                features.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature".into()));
        }
        Ok(Self { n, p, features, labels })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }
}

/// Counts `Y_ep` and exposures `N_ep`, both row-major `n_e × n_p`.
#[derive(Clone, Debug, PartialEq)]
pub struct FriskData {
    pub n_e: usize,
    pub n_p: usize,
    pub counts: Vec<u64>,
    pub offsets: Vec<u64>,
}

impl FriskData {
    pub fn new(n_e: usize, n_p: usize, counts: Vec<u64>, offsets: Vec<u64>) -> Result<Self> {
        if n_e == 0 || n_p == 0 {
            return Err(Error::Data("no rows".into()));
        }
        if counts.len() != n_e * n_p || offsets.len() != n_e * n_p {
            return Err(Error::InvalidArgument(format!(
                "expected {} cells, got {} counts and {} offsets",
                n_e * n_p,
                counts.len(),
                offsets.len()
            )));
        }
        if offsets.iter().any(|&n| n < 1) {
            return Err(Error::InvalidArgument("offsets must be at least 1".into()));
        }
        Ok(Self { n_e, n_p, counts, offsets })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionData {
    pub n: usize,
    pub p: usize,
    /// Row-major `n × p`.
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    /// Feature column names, when loaded from a file with a header.
    pub columns: Vec<String>,
}

impl RegressionData {
    pub fn new(n: usize, p: usize, features: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        let columns = (1..=p).map(|k| format!("x{k}")).collect();
        Self::with_columns(n, p, features, targets, columns)
    }

    pub fn with_columns(
        n: usize,
        p: usize,
        features: Vec<f64>,
        targets: Vec<f64>,
        columns: Vec<String>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Data("no rows".into()));
        }
        if p == 0 {
            return Err(Error::Data("no features".into()));
        }
        if features.len() != n * p || targets.len() != n || columns.len() != p {
            return Err(Error::InvalidArgument(format!(
                "expected {n}x{p} features, {n} targets and {p} column names"
            )));
        }
        if features.iter().chain(&targets).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite value".into()));
        }
        Ok(Self { n, p, features, targets, columns })
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

/// Reads `label idx:val ...` lines with 1-based indices. Labels `+1`/`1` map to
/// 1 and `-1`/`0` to 0. With `num_features = None` the width is the largest
/// index seen.
pub fn load_libsvm(path: impl AsRef<Path>, num_features: Option<usize>) -> Result<ClassificationData> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line");
        let label: f64 =
            label_tok.parse().map_err(|_| parse_err(path, lineno, format!("bad label {label_tok:?}")))?;
        labels.push(match label {
            l if l == 1.0 => 1,
            l if l == -1.0 || l == 0.0 => 0,
            _ => return Err(parse_err(path, lineno, format!("label {label_tok} is not in {{+1,-1,0,1}}"))),
        });
        let mut row = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(path, lineno, format!("expected idx:val, got {tok:?}")))?;
            let idx: usize =
                idx.parse().map_err(|_| parse_err(path, lineno, format!("bad index {idx:?}")))?;
            if idx == 0 {
                return Err(parse_err(path, lineno, "indices are 1-based"));
            }
            if let Some(p) = num_features {
                if idx > p {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("index {idx} exceeds declared feature count {p}"),
                    ));
                }
            }
            let val: f64 =
                val.parse().map_err(|_| parse_err(path, lineno, format!("bad value {val:?}")))?;
            max_index = max_index.max(idx);
            row.push((idx, val));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no rows", path.display())));
    }
    let p = num_features.unwrap_or(max_index);
    let n = rows.len();
    let mut features = vec![0.0; n * p];
    for (i, row) in rows.iter().enumerate() {
        for &(idx, val) in row {
            features[i * p + idx - 1] = val;
        }
    }
    ClassificationData::new(n, p, features, labels)
}

pub fn write_libsvm(path: impl AsRef<Path>, data: &ClassificationData) -> Result<()> {
    let mut out = String::new();
    for i in 0..data.n {
        out.push_str(if data.labels[i] == 1 { "+1" } else { "-1" });
        for (k, x) in data.row(i).iter().enumerate() {
            if *x != 0.0 {
                out.push_str(&format!(" {}:{}", k + 1, x));
            }
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a delimited table with a header row; `target_column` names the response.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str, delimiter: u8) -> Result<RegressionData> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().delimiter(delimiter).has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target = headers.iter().position(|h| h == target_column).ok_or_else(|| {
        Error::Data(format!("{}: no column named {target_column:?}", path.display()))
    })?;
    let columns: Vec<String> =
        headers.iter().enumerate().filter(|(k, _)| *k != target).map(|(_, h)| h.clone()).collect();
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != headers.len() {
            return Err(parse_err(path, line, format!("expected {} fields, got {}", headers.len(), record.len())));
        }
        for (k, field) in record.iter().enumerate() {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad number {field:?}")))?;
            if k == target {
                targets.push(x);
            } else {
                features.push(x);
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::Data(format!("{}: no rows", path.display())));
    }
    RegressionData::with_columns(targets.len(), columns.len(), features, targets, columns)
}

pub fn write_csv(path: impl AsRef<Path>, data: &RegressionData, target_column: &str, delimiter: u8) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().delimiter(delimiter).from_path(path)?;
    let mut header: Vec<&str> = data.columns.iter().map(String::as_str).collect();
    header.push(target_column);
    writer.write_record(&header)?;
    for i in 0..data.n {
        let mut rec: Vec<String> =
            data.features[i * data.p..(i + 1) * data.p].iter().map(|x| x.to_string()).collect();
        rec.push(data.targets[i].to_string());
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}

/// Whitespace-separated `ethnicity_id precinct_id stops arrests` rows with
/// 1-based ids; every (ethnicity, precinct) cell must appear exactly once. An
/// optional non-numeric header line and `#` comments are skipped.
pub fn load_frisk(path: impl AsRef<Path>) -> Result<FriskData> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut cells = Vec::new();
    let mut seen_data = false;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !seen_data && fields[0].parse::<u64>().is_err() {
            seen_data = true;
            continue;
        }
        seen_data = true;
        if fields.len() != 4 {
            return Err(parse_err(path, lineno, format!("expected 4 columns, got {}", fields.len())));
        }
        let mut nums = [0u64; 4];
        for (slot, f) in nums.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| parse_err(path, lineno, format!("bad integer {f:?}")))?;
        }
        if nums[0] == 0 || nums[1] == 0 {
            return Err(parse_err(path, lineno, "ids are 1-based"));
        }
        if nums[3] == 0 {
            return Err(parse_err(path, lineno, "arrests must be at least 1"));
        }
        cells.push((lineno, nums));
    }
    if cells.is_empty() {
        return Err(Error::Data(format!("{}: no rows", path.display())));
    }
    let n_e = cells.iter().map(|(_, c)| c[0]).max().unwrap() as usize;
    let n_p = cells.iter().map(|(_, c)| c[1]).max().unwrap() as usize;
    let mut counts = vec![None; n_e * n_p];
    let mut offsets = vec![0; n_e * n_p];
    for (lineno, [e, p, stops, arrests]) in cells {
        let k = (e as usize - 1) * n_p + (p as usize - 1);
        if counts[k].is_some() {
            return Err(parse_err(path, lineno, format!("duplicate cell ({e}, {p})")));
        }
        counts[k] = Some(stops);
        offsets[k] = arrests;
    }
    let counts = counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| {
            c.ok_or_else(|| {
                Error::Data(format!("{}: missing cell ({}, {})", path.display(), k / n_p + 1, k % n_p + 1))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FriskData::new(n_e, n_p, counts, offsets)
}

pub fn write_frisk(path: impl AsRef<Path>, data: &FriskData) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "ethnicity precinct stops arrests")?;
    for e in 0..data.n_e {
        for p in 0..data.n_p {
            let k = e * data.n_p + p;
            writeln!(f, "{} {} {} {}", e + 1, p + 1, data.counts[k], data.offsets[k])?;
        }
    }
    Ok(())
}

/// Synthetic logistic data together with the coefficients that generated it.
pub fn synth_logistic_with_truth(n: usize, p: usize, seed: u64) -> Result<(ClassificationData, Vec<f64>)> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidArgument(format!("synthetic logistic needs n, p >= 1 (got {n}, {p})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coef = Normal::new(0.0, 1.0 / (p as f64).sqrt()).expect("valid");
    let truth: Vec<f64> = (0..=p).map(|_| coef.sample(&mut rng)).collect();
    let features: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    let labels = features
        .chunks_exact(p)
        .map(|row| {
            let a = truth[0] + row.iter().zip(&truth[1..]).map(|(x, w)| x * w).sum::<f64>();
            let prob_one = super::sigmoid(-a);
            u8::from(rng.random::<f64>() < prob_one)
        })
        .collect();
    Ok((ClassificationData::new(n, p, features, labels)?, truth))
}

pub fn synth_logistic(n: usize, p: usize, seed: u64) -> Result<ClassificationData> {
    Ok(synth_logistic_with_truth(n, p, seed)?.0)
}

/// Synthetic stop/arrest table with `d = 3 + n_e + n_p`.
pub fn synth_frisk(n_e: usize, n_p: usize, seed: u64) -> Result<FriskData> {
    if n_e == 0 || n_p == 0 {
        return Err(Error::InvalidArgument(format!("synthetic frisk needs n_e, n_p >= 1 (got {n_e}, {n_p})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = 0.4;
    let alpha: Vec<f64> =
        (0..n_e).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    let beta: Vec<f64> =
        (0..n_p).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut counts = Vec::with_capacity(n_e * n_p);
    let mut offsets = Vec::with_capacity(n_e * n_p);
    for a in &alpha {
        for b in &beta {
            let arrests: u64 = rng.random_range(10..=200);
            let lambda = (mu + a + b + (arrests as f64).ln()).exp();
            let stops = Poisson::new(lambda).expect("positive rate").sample(&mut rng) as u64;
            counts.push(stops);
            offsets.push(arrests);
        }
    }
    FriskData::new(n_e, n_p, counts, offsets)
}

/// Synthetic integer-valued regression targets in `1..=10`.
pub fn synth_regression(n: usize, p: usize, seed: u64) -> Result<RegressionData> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidArgument(format!("synthetic regression needs n, p >= 1 (got {n}, {p})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coef = Normal::new(0.0, 1.0 / (p as f64).sqrt()).expect("valid");
    let truth: Vec<f64> = (0..p).map(|_| coef.sample(&mut rng)).collect();
    let features: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    let targets = features
        .chunks_exact(p)
        .map(|row| {
            let mean = 5.5 + row.iter().zip(&truth).map(|(x, w)| x * w).sum::<f64>() + (row[0] * 1.5).tanh();
            let noisy = mean + 0.5 * rng.sample::<f64, _>(StandardNormal);
            noisy.round().clamp(1.0, 10.0)
        })
        .collect();
    RegressionData::new(n, p, features, targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn libsvm_single_entry() {
        let f = write_tmp("+1 3:0.5\n");
        let data = load_libsvm(f.path(), Some(4)).unwrap();
        assert_eq!(data.features, vec![0.0, 0.0, 0.5, 0.0]);
        assert_eq!(data.labels, vec![1]);
    }

    #[test]
    fn libsvm_empty_file() {
        let f = write_tmp("");
        let err = load_libsvm(f.path(), None).unwrap_err();
        assert!(err.to_string().contains("no rows"), "{err}");
    }

    #[test]
    fn libsvm_index_out_of_range_reports_line() {
        let f = write_tmp("-1 1:1\n+1 5:2.0\n");
        match load_libsvm(f.path(), Some(4)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn libsvm_bad_token() {
        let f = write_tmp("+1 3-0.5\n");
        assert!(matches!(load_libsvm(f.path(), None), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn csv_with_semicolons() {
        let f = write_tmp("\"a\";\"b\";\"quality\"\n1.5;2;6\n0;-1;5\n");
        let data = load_csv(f.path(), "quality", b';').unwrap();
        assert_eq!(data.targets, vec![6.0, 5.0]);
        assert_eq!(data.features, vec![1.5, 2.0, 0.0, -1.0]);
        assert_eq!(data.columns, vec!["a", "b"]);
    }

    #[test]
    fn csv_missing_target_and_bad_number() {
        let f = write_tmp("a,b\n1,2\n");
        assert!(load_csv(f.path(), "quality", b',').is_err());
        let f = write_tmp("a,quality\n1,2\nx,3\n");
        assert!(matches!(load_csv(f.path(), "quality", b','), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn frisk_table_and_errors() {
        let f = write_tmp("eth pct stops arrests\n1 1 5 3\n1 2 0 1\n2 1 7 2\n2 2 1 4\n");
        let data = load_frisk(f.path()).unwrap();
        assert_eq!((data.n_e, data.n_p), (2, 2));
        assert_eq!(data.counts, vec![5, 0, 7, 1]);
        assert_eq!(data.offsets, vec![3, 1, 2, 4]);

        let f = write_tmp("1 1 5 3\n1 1 2 2\n");
        assert!(load_frisk(f.path()).is_err());
        let f = write_tmp("1 1 5 3\n2 2 2 2\n");
        assert!(load_frisk(f.path()).unwrap_err().to_string().contains("missing cell"));
        let f = write_tmp("# nothing\n");
        assert!(load_frisk(f.path()).unwrap_err().to_string().contains("no rows"));
    }

    #[test]
    fn synth_rejects_empty_and_is_deterministic() {
        assert!(synth_logistic(0, 3, 1).is_err());
        assert!(synth_frisk(0, 3, 1).is_err());
        assert!(synth_regression(3, 0, 1).is_err());
        assert_eq!(synth_logistic(20, 3, 9).unwrap(), synth_logistic(20, 3, 9).unwrap());
        assert_eq!(synth_frisk(2, 3, 9).unwrap(), synth_frisk(2, 3, 9).unwrap());
        assert_eq!(synth_regression(5, 3, 9).unwrap(), synth_regression(5, 3, 9).unwrap());
        assert_ne!(synth_logistic(20, 3, 9).unwrap(), synth_logistic(20, 3, 10).unwrap());
    }
}
