//! Synthetic dataset generators and CSV ingestion.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ad::{Dataset, Mat};
use crate::error::{Error, Result};

/// Gaussian blobs around `k` class centers on the unit circle in the first
/// two features (on the line for `dim == 1`). Every remaining feature is pure
/// noise. Row `i` has label `i mod k`, so classes are balanced and any prefix
/// of the rows is nearly balanced.
pub fn gen_blobs(k: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if k == 0 || per_class == 0 || dim == 0 {
        return Err(Error::Validation("blob sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = k * per_class;
    let centers = blob_centers(k, dim);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        for j in 0..dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(centers.at(class, j) + spread * noise);
        }
        labels.push(class);
    }
    Dataset::classification(
        Mat::from_vec(n, dim, data)?,
        labels,
        k,
        format!("blobs(k={k}, per_class={per_class}, dim={dim}, spread={spread}, seed={seed})"),
    )
}

/// Class centers used by [`gen_blobs`], one row per class.
pub fn blob_centers(k: usize, dim: usize) -> Mat<f64> {
    let mut m = Mat::zeros(k, dim);
    for c in 0..k {
        if dim == 1 {
            m.data[c] = c as f64;
        } else {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
            m.data[c * dim] = angle.cos();
            m.data[c * dim + 1] = angle.sin();
        }
    }
    m
}

/// Linear regression data: `y = X·w_true + noise·ε` with standard normal
/// features, weights and noise.
pub fn gen_regression(n: usize, dim: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || dim == 0 {
        return Err(Error::Validation("regression sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let w_true: Vec<f64> = (0..dim).map(|_| normal()).collect();
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..dim).map(|_| normal()).collect();
        let target = row.iter().zip(&w_true).map(|(a, b)| a * b).sum::<f64>() + noise * normal();
        x.extend(row);
        y.push(target);
    }
    Dataset::regression(
        Mat::from_vec(n, dim, x)?,
        Mat::column(y),
        format!("regression(n={n}, dim={dim}, noise={noise}, seed={seed})"),
    )
}

/// Reassigns `round(fraction·n)` randomly chosen rows to a different class.
pub fn with_label_noise(data: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    let (Some(labels), Some(k)) = (data.labels(), data.classes()) else {
        return Err(Error::Validation("label noise needs a classification dataset".into()));
    };
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Validation(format!("noise fraction {fraction} outside [0, 1]")));
    }
    if k < 2 {
        return Ok(data.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flips = (fraction * labels.len() as f64).round() as usize;
    let mut labels = labels.to_vec();
    for i in rand::seq::index::sample(&mut rng, labels.len(), flips).into_iter() {
        let shift = rng.gen_range(1..k);
        labels[i] = (labels[i] + shift) % k;
    }
    data.relabel(labels)
}

/// Shuffles row indices deterministically.
pub fn shuffled_rows(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Splits the rows into `(first, rest)` with `round(fraction·n)` rows in the
/// second part, after a seeded shuffle.
pub fn split_fraction(data: &Dataset, second_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(second_fraction > 0.0 && second_fraction < 1.0) {
        return Err(Error::Validation(format!("split fraction {second_fraction} outside (0, 1)")));
    }
    let n = data.len();
    let n_second = ((second_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1));
    let idx = shuffled_rows(n, seed);
    let (a, b) = idx.split_at(n - n_second);
    Ok((
        data.select(a, format!("{}[train]", data.provenance())),
        data.select(b, format!("{}[val]", data.provenance())),
    ))
}

/// Which CSV column holds the target, and how to read it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetSpec {
    /// Column name or zero-based index; the last column when `None`.
    pub column: Option<String>,
    /// Read the target as integer class labels.
    pub classification: bool,
}

/// Reads a UTF-8 CSV with a header row. All non-target columns are features.
pub fn load_csv(path: &Path, target: &TargetSpec) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(parse_err(1, "missing header row".into()));
    }
    let width = headers.len();
    let target_idx = match &target.column {
        None => width - 1,
        Some(col) => match headers.iter().position(|h| h.trim() == col) {
            Some(i) => i,
            None => col
                .parse::<usize>()
                .ok()
                .filter(|&i| i < width)
                .ok_or_else(|| parse_err(1, format!("no target column `{col}`")))?,
        },
    };
    if width < 2 {
        return Err(parse_err(1, "need at least one feature column and a target".into()));
    }

    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(rows + 2);
        if record.len() != width {
            return Err(parse_err(line, format!("expected {width} fields, found {}", record.len())));
        }
        for (i, field) in record.iter().enumerate() {
            let value: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("cannot parse `{field}` as a number")))?;
            if i == target_idx {
                targets.push(value);
            } else {
                features.push(value);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(2, "no data rows".into()));
    }
    let inputs = Mat::from_vec(rows, width - 1, features)?;
    let provenance = path.display().to_string();
    if target.classification {
        let mut labels = Vec::with_capacity(rows);
        for (r, &t) in targets.iter().enumerate() {
            if t < 0.0 || t.fract() != 0.0 {
                return Err(parse_err(r + 2, format!("class label {t} is not a non-negative integer")));
            }
            labels.push(t as usize);
        }
        let k = labels.iter().max().copied().unwrap_or(0) + 1;
        Dataset::classification(inputs, labels, k, provenance)
    } else {
        Dataset::regression(inputs, Mat::column(targets), provenance)
    }
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let d = gen_blobs(2, 5, 2, 0.1, 42).unwrap();
        assert_eq!(d.len(), 10);
        let ones = d.labels().unwrap().iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 5);
        assert_eq!(d, gen_blobs(2, 5, 2, 0.1, 42).unwrap());
        assert_ne!(d, gen_blobs(2, 5, 2, 0.1, 43).unwrap());
    }

    #[test]
    fn boston_shaped_regression() {
        let d = gen_regression(506, 13, 0.1, 0).unwrap();
        assert_eq!((d.len(), d.features(), d.targets().cols), (506, 13, 1));
    }

    #[test]
    fn label_noise_flips_exact_count() {
        let d = gen_blobs(3, 20, 2, 0.1, 1).unwrap();
        let noisy = with_label_noise(&d, 0.25, 7).unwrap();
        let changed = d
            .labels()
            .unwrap()
            .iter()
            .zip(noisy.labels().unwrap())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 15);
    }

    #[test]
    fn split_sizes() {
        let d = gen_regression(100, 2, 0.1, 0).unwrap();
        let (a, b) = split_fraction(&d, 0.2, 3).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        assert!(split_fraction(&d, 1.0, 3).is_err());
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_last_column_is_target_by_default() {
        let f = write_tmp("a,b,y\n1,2,3\n4,5,6\n");
        let d = load_csv(f.path(), &TargetSpec::default()).unwrap();
        assert_eq!(d.inputs().data, vec![1.0, 2.0, 4.0, 5.0]);
        assert_eq!(d.targets().data, vec![3.0, 6.0]);
    }

    #[test]
    fn csv_target_column_override_and_labels() {
        let f = write_tmp("label,x\n1,0.5\n0,-0.5\n2,1.5\n");
        let spec = TargetSpec {
            column: Some("label".into()),
            classification: true,
        };
        let d = load_csv(f.path(), &spec).unwrap();
        assert_eq!(d.labels().unwrap(), &[1, 0, 2]);
        assert_eq!(d.classes(), Some(3));
        assert_eq!(d.inputs().data, vec![0.5, -0.5, 1.5]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let f = write_tmp("a,y\n1,2\n3,oops\n");
        match load_csv(f.path(), &TargetSpec::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let empty = write_tmp("a,y\n");
        assert!(matches!(load_csv(empty.path(), &TargetSpec::default()), Err(Error::Parse { .. })));
    }
}
