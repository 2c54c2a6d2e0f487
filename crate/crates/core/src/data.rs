//! Tabular ingestion, imputation, normalization and party partitions.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::seed;

/// Token marking a missing cell.
pub const MISSING_TOKEN: &str = "?";

/// The fifteen risk-factor attributes of the cervical-cancer data, spelled as
/// in the UCI file header.
pub const CERVICAL_FEATURES: [&str; 15] = [
    "Age",
    "Number of sexual partners",
    "First sexual intercourse",
    "Num of pregnancies",
    "Smokes",
    "Smokes (years)",
    "Hormonal Contraceptives",
    "Hormonal Contraceptives (years)",
    "IUD",
    "IUD (years)",
    "STDs",
    "STDs (number)",
    "STDs: Number of diagnosis",
    "STDs: Time since first diagnosis",
    "STDs: Time since last diagnosis",
];

pub const CERVICAL_TARGET: &str = "Biopsy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Integer,
    Boolean,
    Real,
}

impl ColumnKind {
    fn infer<'a>(values: impl Iterator<Item = &'a Option<f64>>) -> Self {
        let mut kind = ColumnKind::Boolean;
        for v in values.flatten() {
            if *v != 0.0 && *v != 1.0 && kind == ColumnKind::Boolean {
                kind = ColumnKind::Integer;
            }
            if v.fract() != 0.0 {
                return ColumnKind::Real;
            }
        }
        kind
    }
}

/// A parsed CSV before imputation. `rows[r][c]` is `None` for a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub column_names: Vec<String>,
    pub column_kinds: Vec<ColumnKind>,
    pub rows: Vec<Vec<Option<f64>>>,
    /// Index of the target column in `column_names`.
    pub target: usize,
}

impl RawTable {
    pub fn feature_columns(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.column_names.len()).filter(move |&c| c != self.target)
    }
}

/// Loads every column of `path`, identifying `target_column`.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<RawTable> {
    load_csv_columns(path, target_column, None)
}

/// Loads `path`, keeping only `features` (in the given order) plus the target.
/// With `features = None` every column is kept.
pub fn load_csv_columns(
    path: impl AsRef<Path>,
    target_column: &str,
    features: Option<&[&str]>,
) -> Result<RawTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| FedError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&text, target_column, features)
}

pub fn parse_csv(text: &str, target_column: &str, features: Option<&[&str]>) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| FedError::Csv(e.to_string()))?,
        None => return Err(FedError::NoHeader),
    };
    let header: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(FedError::NoHeader);
    }
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FedError::MissingColumn(name.to_string()))
    };
    let target_src = find(target_column)?;
    let mut selected: Vec<usize> = match features {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..header.len()).filter(|&c| c != target_src).collect(),
    };
    selected.retain(|&c| c != target_src);
    selected.push(target_src);

    let mut rows = Vec::new();
    for record in records {
        let record = record.map_err(|e| FedError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != header.len() {
            return Err(FedError::MalformedRow {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        let row = selected
            .iter()
            .map(|&c| parse_cell(&record[c], &header[c], line))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }

    let column_names: Vec<String> = selected.iter().map(|&c| header[c].clone()).collect();
    let column_kinds = (0..column_names.len())
        .map(|c| ColumnKind::infer(rows.iter().map(|r: &Vec<Option<f64>>| &r[c])))
        .collect();
    Ok(RawTable {
        target: column_names.len() - 1,
        column_names,
        column_kinds,
        rows,
    })
}

fn parse_cell(raw: &str, column: &str, line: u64) -> Result<Option<f64>> {
    let s = raw.trim();
    if s == MISSING_TOKEN || s.is_empty() {
        return Ok(None);
    }
    match s.to_ascii_lowercase().as_str() {
        "true" => return Ok(Some(1.0)),
        "false" => return Ok(Some(0.0)),
        _ => {}
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(FedError::NonNumeric {
            line,
            column: column.to_string(),
            value: s.to_string(),
        }),
    }
}

/// Per-feature affine map `(x - min) / range`; zero range maps to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub min: f64,
    pub range: f64,
}

impl Affine {
    pub fn apply(&self, v: f64) -> f64 {
        if self.range == 0.0 {
            0.0
        } else {
            (v - self.min) / self.range
        }
    }
}

/// Normalized, fully observed binary-classification data.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    labels: Vec<u8>,
    feature_names: Vec<String>,
    medians: Vec<f64>,
    normalization: Vec<Affine>,
    d: usize,
}

/// JSON snapshot of a dataset's shape and reference values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSnapshot {
    pub feature_names: Vec<String>,
    pub medians: Vec<f64>,
    pub n: usize,
    pub d: usize,
}

impl Dataset {
    /// Builds a dataset from already-scaled rows. Medians are computed with
    /// the lower-middle convention and normalization is the identity.
    pub fn from_rows(rows: &[Vec<f64>], labels: &[u8], feature_names: Vec<String>) -> Result<Self> {
        let d = feature_names.len();
        if rows.len() != labels.len() {
            return Err(FedError::DimensionMismatch {
                expected: rows.len(),
                found: labels.len(),
            });
        }
        let mut values = Vec::with_capacity(rows.len() * d);
        for row in rows {
            if row.len() != d {
                return Err(FedError::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(FedError::Numeric(format!("non-finite feature value {v}")));
            }
            values.extend_from_slice(row);
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 1) {
            return Err(FedError::NonBinaryTarget(l as f64));
        }
        let mut ds = Dataset {
            values,
            labels: labels.to_vec(),
            feature_names,
            medians: Vec::new(),
            normalization: vec![
                Affine {
                    min: 0.0,
                    range: 1.0
                };
                d
            ],
            d,
        };
        ds.medians = (0..d)
            .map(|j| lower_median(ds.column(j).collect()).unwrap_or(0.0))
            .collect();
        Ok(ds)
    }

    /// Convenience constructor with generated feature names `f0..`.
    pub fn from_unnamed(rows: &[Vec<f64>], labels: &[u8]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        Self::from_rows(rows, labels, (0..d).map(|j| format!("f{j}")).collect())
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n()).map(move |i| self.values[i * self.d + j])
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Reference values: per-feature medians in normalized space.
    pub fn medians(&self) -> &[f64] {
        &self.medians
    }

    pub fn normalization(&self) -> &[Affine] {
        &self.normalization
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.n()).collect()
    }

    pub fn snapshot(&self) -> DatasetSnapshot {
        DatasetSnapshot {
            feature_names: self.feature_names.clone(),
            medians: self.medians.clone(),
            n: self.n(),
            d: self.d,
        }
    }

    /// Turns the normalized data back into a table with the target last.
    pub fn to_raw_table(&self, target_name: &str) -> RawTable {
        let mut column_names = self.feature_names.clone();
        column_names.push(target_name.to_string());
        let rows: Vec<Vec<Option<f64>>> = (0..self.n())
            .map(|i| {
                self.row(i)
                    .iter()
                    .map(|&v| Some(v))
                    .chain(std::iter::once(Some(self.labels[i] as f64)))
                    .collect()
            })
            .collect();
        let column_kinds = (0..column_names.len())
            .map(|c| ColumnKind::infer(rows.iter().map(|r| &r[c])))
            .collect();
        RawTable {
            target: column_names.len() - 1,
            column_names,
            column_kinds,
            rows,
        }
    }
}

/// Lower-middle element of the sorted values.
pub fn lower_median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values[(values.len() - 1) / 2])
}

/// Midpoint median, used only to fill missing cells.
fn imputation_median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len().is_multiple_of(2) {
        0.5 * (values[m - 1] + values[m])
    } else {
        values[m]
    })
}

/// Drops rows with a missing target, imputes missing features with the
/// column median, min-max normalizes every feature and computes the
/// reference medians on the result.
pub fn prepare(table: &RawTable) -> Result<Dataset> {
    let rows: Vec<&Vec<Option<f64>>> = table
        .rows
        .iter()
        .filter(|r| r[table.target].is_some())
        .collect();
    let mut labels = Vec::with_capacity(rows.len());
    for r in &rows {
        match r[table.target] {
            Some(0.0) => labels.push(0u8),
            Some(1.0) => labels.push(1u8),
            Some(v) => return Err(FedError::NonBinaryTarget(v)),
            None => unreachable!(),
        }
    }
    if labels
        .iter()
        .all(|&l| l == labels.first().copied().unwrap_or(0))
    {
        return Err(FedError::ConstantTarget);
    }

    let feature_cols: Vec<usize> = table.feature_columns().collect();
    let d = feature_cols.len();
    let n = rows.len();
    let mut values = vec![0.0; n * d];
    let mut normalization = Vec::with_capacity(d);
    for (j, &c) in feature_cols.iter().enumerate() {
        let observed: Vec<f64> = rows.iter().filter_map(|r| r[c]).collect();
        let fill = imputation_median(observed)
            .ok_or_else(|| FedError::EmptyColumn(table.column_names[c].clone()))?;
        let column: Vec<f64> = rows.iter().map(|r| r[c].unwrap_or(fill)).collect();
        let min = column.iter().copied().fold(f64::INFINITY, f64::min);
        let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let affine = Affine {
            min,
            range: max - min,
        };
        for (i, v) in column.into_iter().enumerate() {
            values[i * d + j] = affine.apply(v).clamp(0.0, 1.0);
        }
        normalization.push(affine);
    }

    let mut ds = Dataset {
        values,
        labels,
        feature_names: feature_cols
            .iter()
            .map(|&c| table.column_names[c].clone())
            .collect(),
        medians: Vec::new(),
        normalization,
        d,
    };
    ds.medians = (0..d)
        .map(|j| lower_median(ds.column(j).collect()).unwrap_or(0.0))
        .collect();
    Ok(ds)
}

/// K disjoint instance sets covering the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizontalPartition {
    pub parts: Vec<Vec<usize>>,
}

impl HorizontalPartition {
    /// Checks disjointness and coverage of `0..n`.
    pub fn new(parts: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        check_cover(&parts, n, false)?;
        Ok(Self { parts })
    }

    pub fn party_count(&self) -> usize {
        self.parts.len()
    }
}

/// G disjoint, non-empty feature sets covering all features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerticalPartition {
    pub groups: Vec<Vec<usize>>,
}

impl VerticalPartition {
    pub fn new(groups: Vec<Vec<usize>>, d: usize) -> Result<Self> {
        if groups.is_empty() {
            return Err(FedError::InvalidArgument("empty partition".into()));
        }
        check_cover(&groups, d, true)?;
        Ok(Self { groups })
    }

    pub fn party_count(&self) -> usize {
        self.groups.len()
    }
}

fn check_cover(sets: &[Vec<usize>], size: usize, non_empty: bool) -> Result<()> {
    let mut seen = BTreeSet::new();
    for set in sets {
        if non_empty && set.is_empty() {
            return Err(FedError::InvalidArgument(
                "partition has an empty group".into(),
            ));
        }
        for &i in set {
            if i >= size {
                return Err(FedError::IndexOutOfRange { index: i, size });
            }
            if !seen.insert(i) {
                return Err(FedError::InvalidArgument(format!(
                    "index {i} assigned to more than one party"
                )));
            }
        }
    }
    if seen.len() != size {
        return Err(FedError::InvalidArgument(format!(
            "partition covers {} of {size} indices",
            seen.len()
        )));
    }
    Ok(())
}

/// Seeded shuffle of the instance indices dealt round-robin into `k` parties.
pub fn horizontal_split(dataset: &Dataset, k: usize, seed: u64) -> Result<HorizontalPartition> {
    let n = dataset.n();
    if k == 0 || k > n {
        return Err(FedError::InvalidArgument(format!(
            "party count {k} must be in 1..={n}"
        )));
    }
    let mut order = dataset.all_indices();
    order.shuffle(&mut seed::rng(seed));
    let mut parts = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, idx) in order.into_iter().enumerate() {
        parts[pos % k].push(idx);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(HorizontalPartition { parts })
}

/// Contiguous feature blocks; the first `d % g` groups get one extra feature.
pub fn vertical_split(dataset: &Dataset, g: usize) -> Result<VerticalPartition> {
    contiguous_groups(dataset.d(), g)
}

pub fn contiguous_groups(d: usize, g: usize) -> Result<VerticalPartition> {
    if g == 0 || g > d {
        return Err(FedError::InvalidArgument(format!(
            "group count {g} must be in 1..={d}"
        )));
    }
    let (base, extra) = (d / g, d % g);
    let mut start = 0;
    let groups = (0..g)
        .map(|p| {
            let len = base + usize::from(p < extra);
            let group: Vec<usize> = (start..start + len).collect();
            start += len;
            group
        })
        .collect();
    Ok(VerticalPartition { groups })
}

/// Seeded shuffle, then the first `round(train_fraction * n)` indices train.
pub fn train_test_split(
    n: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(FedError::InvalidArgument(format!(
            "train fraction {train_fraction} outside [0, 1]"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let cut = (train_fraction * n as f64).round() as usize;
    let test = order.split_off(cut);
    Ok((order, test))
}

/// `k` distinct indices from `0..n`, drawn by a seeded shuffle and returned
/// in ascending order.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > n {
        return Err(FedError::InvalidArgument(format!(
            "cannot sample {k} of {n} instances"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(csv: &str) -> RawTable {
        parse_csv(csv, "y", None).unwrap()
    }

    #[test]
    fn impute_then_normalize() {
        let t = table("a,y\n1,0\n?,1\n3,1\n");
        let ds = prepare(&t).unwrap();
        let col: Vec<f64> = ds.column(0).collect();
        assert_eq!(col, vec![0.0, 0.5, 1.0]);
        assert_eq!(ds.medians(), &[0.5]);
    }

    #[test]
    fn constant_feature_normalizes_to_zero() {
        let ds = prepare(&table("a,b,y\n4,1,0\n4,2,1\n4,3,1\n")).unwrap();
        assert!(ds.column(0).all(|v| v == 0.0));
        assert_eq!(ds.medians()[0], 0.0);
    }

    #[test]
    fn even_count_reference_median_is_lower_middle() {
        let ds = prepare(&table("a,y\n0,0\n1,1\n2,0\n3,1\n")).unwrap();
        // normalized column 0, 1/3, 2/3, 1 -> lower middle is 1/3
        assert!((ds.medians()[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn missing_target_rows_are_dropped() {
        let ds = prepare(&table("a,y\n1,0\n2,?\n3,1\n")).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.labels(), &[0, 1]);
    }

    #[test]
    fn error_paths() {
        assert!(matches!(parse_csv("", "y", None), Err(FedError::NoHeader)));
        assert!(matches!(
            parse_csv("a,b\n1,2\n", "y", None),
            Err(FedError::MissingColumn(_))
        ));
        assert!(matches!(
            parse_csv("a,y\n1,0\n1\n", "y", None),
            Err(FedError::MalformedRow { line: 3, .. })
        ));
        assert!(matches!(
            parse_csv("a,y\nabc,0\n", "y", None),
            Err(FedError::NonNumeric { .. })
        ));
        assert!(matches!(
            prepare(&table("a,y\n?,0\n?,1\n")),
            Err(FedError::EmptyColumn(_))
        ));
        assert!(matches!(
            prepare(&table("a,y\n1,1\n2,1\n")),
            Err(FedError::ConstantTarget)
        ));
        assert!(matches!(
            prepare(&table("a,y\n1,2\n2,1\n")),
            Err(FedError::NonBinaryTarget(_))
        ));
        assert!(matches!(
            load_csv("/definitely/not/here.csv", "y"),
            Err(FedError::Io { .. })
        ));
    }

    #[test]
    fn column_selection_and_kinds() {
        let t = parse_csv(
            "x,flag,y,z\n1.5,0,1,7\n2,1,0,8\n",
            "y",
            Some(&["z", "flag"]),
        )
        .unwrap();
        assert_eq!(t.column_names, vec!["z", "flag", "y"]);
        assert_eq!(
            t.column_kinds,
            vec![
                ColumnKind::Integer,
                ColumnKind::Boolean,
                ColumnKind::Boolean
            ]
        );
        let t = table("x,y\n1.5,1\n2,0\n");
        assert_eq!(t.column_kinds[0], ColumnKind::Real);
    }

    fn toy(n: usize, d: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..d)
                    .map(|j| ((i * 7 + j * 3) % 11) as f64 / 10.0)
                    .collect()
            })
            .collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        Dataset::from_unnamed(&rows, &labels).unwrap()
    }

    #[test]
    fn horizontal_split_sizes() {
        let p = horizontal_split(&toy(10, 2), 5, 1).unwrap();
        assert!(p.parts.iter().all(|s| s.len() == 2));
        let mut sizes: Vec<usize> = horizontal_split(&toy(858, 1), 5, 3)
            .unwrap()
            .parts
            .iter()
            .map(Vec::len)
            .collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![171, 171, 172, 172, 172]);
        let ds = toy(20, 2);
        assert_eq!(
            horizontal_split(&ds, 3, 9).unwrap(),
            horizontal_split(&ds, 3, 9).unwrap()
        );
        assert!(horizontal_split(&ds, 0, 1).is_err());
        assert!(horizontal_split(&ds, 21, 1).is_err());
    }

    #[test]
    fn vertical_split_layouts() {
        let p = vertical_split(&toy(3, 15), 5).unwrap();
        assert_eq!(
            p.groups,
            vec![
                vec![0, 1, 2],
                vec![3, 4, 5],
                vec![6, 7, 8],
                vec![9, 10, 11],
                vec![12, 13, 14]
            ]
        );
        assert_eq!(
            vertical_split(&toy(3, 3), 3).unwrap().groups,
            vec![vec![0], vec![1], vec![2]]
        );
        let sizes: Vec<usize> = vertical_split(&toy(3, 15), 4)
            .unwrap()
            .groups
            .iter()
            .map(Vec::len)
            .collect();
        assert_eq!(sizes, vec![4, 4, 4, 3]);
        assert!(vertical_split(&toy(3, 3), 0).is_err());
        assert!(vertical_split(&toy(3, 3), 4).is_err());
    }

    #[test]
    fn partition_validation() {
        assert!(HorizontalPartition::new(vec![vec![0, 1], vec![1]], 2).is_err());
        assert!(HorizontalPartition::new(vec![vec![0]], 2).is_err());
        assert!(HorizontalPartition::new(vec![vec![1], vec![], vec![0]], 2).is_ok());
        assert!(VerticalPartition::new(vec![vec![0], vec![]], 1).is_err());
        assert!(VerticalPartition::new(vec![], 0).is_err());
    }

    #[test]
    fn sampling_is_sorted_distinct_and_seeded() {
        let a = sample_indices(50, 10, 3).unwrap();
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, sample_indices(50, 10, 3).unwrap());
        assert!(sample_indices(5, 6, 0).is_err());
    }
}
