//! Dataset ingestion and preparation: CSV loading, standardization with a
//! JSON sidecar, seeded train/test splits and random `(x, S)` query pairs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature rows with uniform dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    instances: Vec<Vec<f64>>,
    feature_names: Vec<String>,
    standardized: bool,
}

impl Dataset {
    pub fn new(instances: Vec<Vec<f64>>, feature_names: Vec<String>) -> Result<Self> {
        let d = feature_names.len();
        for (r, row) in instances.iter().enumerate() {
            if row.len() != d {
                return Err(Error::validation(format!(
                    "row {r} has {} values, expected {d}",
                    row.len()
                )));
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "row {r}, column {:?} is not finite",
                    feature_names[c]
                )));
            }
        }
        Ok(Self {
            instances,
            feature_names,
            standardized: false,
        })
    }

    /// Unnamed features `f0, f1, ...`.
    pub fn from_rows(instances: Vec<Vec<f64>>) -> Result<Self> {
        let d = instances.first().map_or(0, Vec::len);
        Self::new(instances, (0..d).map(|i| format!("f{i}")).collect())
    }

    pub fn instances(&self) -> &[Vec<f64>] {
        &self.instances
    }

    pub fn instance(&self, i: usize) -> &[f64] {
        &self.instances[i]
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.instances.iter().map(move |r| r[j])
    }

    /// The rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            instances: indices.iter().map(|&i| self.instances[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            standardized: self.standardized,
        }
    }
}

/// A dataset read from CSV together with its optional label column.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub dataset: Dataset,
    pub labels: Option<Vec<f64>>,
}

/// Loads a CSV file with a header row. `label_column` is split off into
/// [`LabeledDataset::labels`]; `exclude` names further non-feature columns.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: Option<&str>,
    exclude: &[String],
) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, &path.display().to_string(), label_column, exclude)
}

pub fn parse_csv(
    text: &str,
    source: &str,
    label_column: Option<&str>,
    exclude: &[String],
) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::parse(source, e))?
        .clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(Error::parse(source, "missing header row"));
    }

    let label_idx = match label_column {
        Some(name) => Some(header.iter().position(|h| h == name).ok_or_else(|| {
            Error::validation(format!("{source}: no label column named {name:?}"))
        })?),
        None => None,
    };
    for name in exclude {
        if !header.iter().any(|h| h == name) {
            return Err(Error::validation(format!(
                "{source}: no column named {name:?} to exclude"
            )));
        }
    }
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&c| Some(c) != label_idx && !exclude.iter().any(|e| e == &header[c]))
        .collect();
    let feature_names = feature_cols
        .iter()
        .map(|&c| header[c].to_string())
        .collect();

    let mut rows = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(format!("{source} row {}", r + 1), e))?;
        let cell = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::parse(
                        format!("{source} row {}, column {:?}", r + 1, &header[c]),
                        format!("{raw:?} is not a finite number"),
                    )
                })
        };
        rows.push(
            feature_cols
                .iter()
                .map(|&c| cell(c))
                .collect::<Result<Vec<f64>>>()?,
        );
        if let (Some(c), Some(labels)) = (label_idx, labels.as_mut()) {
            labels.push(cell(c)?);
        }
    }
    Ok(LabeledDataset {
        dataset: Dataset::new(rows, feature_names)?,
        labels,
    })
}

/// Per-column affine parameters, serialized as `{name: {"mean": m, "std": s}}`.
/// `std` is the population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StandardizationParams(pub BTreeMap<String, ColumnStats>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl StandardizationParams {
    /// Mean and population standard deviation of every column.
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::validation("cannot standardize an empty dataset"));
        }
        let n = dataset.len() as f64;
        let mut stats = BTreeMap::new();
        for (j, name) in dataset.feature_names.iter().enumerate() {
            let mean = dataset.column(j).sum::<f64>() / n;
            let var = dataset.column(j).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std.is_nan() || std <= 0.0 {
                return Err(Error::NumericDomain(format!(
                    "column {name:?} has zero standard deviation"
                )));
            }
            stats.insert(name.clone(), ColumnStats { mean, std });
        }
        Ok(Self(stats))
    }

    fn for_columns(&self, dataset: &Dataset) -> Result<Vec<ColumnStats>> {
        dataset
            .feature_names
            .iter()
            .map(|name| {
                let s = self.0.get(name).copied().ok_or_else(|| {
                    Error::validation(format!("no standardization parameters for {name:?}"))
                })?;
                if !(s.std > 0.0 && s.std.is_finite() && s.mean.is_finite()) {
                    return Err(Error::validation(format!(
                        "invalid parameters for {name:?}: {s:?}"
                    )));
                }
                Ok(s)
            })
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::parse(format!("{}:{}:{}", path.display(), e.line(), e.column()), e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("serializable");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Maps every column to `(x - mean) / std`. Parameters are fitted on
/// `dataset` when `params` is `None`.
pub fn standardize(
    dataset: &Dataset,
    params: Option<&StandardizationParams>,
) -> Result<(Dataset, StandardizationParams)> {
    let params = match params {
        Some(p) => p.clone(),
        None => StandardizationParams::fit(dataset)?,
    };
    let cols = params.for_columns(dataset)?;
    let instances = dataset
        .instances
        .iter()
        .map(|row| {
            row.iter()
                .zip(&cols)
                .map(|(v, s)| (v - s.mean) / s.std)
                .collect()
        })
        .collect();
    Ok((
        Dataset {
            instances,
            feature_names: dataset.feature_names.clone(),
            standardized: true,
        },
        params,
    ))
}

/// Inverse of [`standardize`].
pub fn unstandardize(dataset: &Dataset, params: &StandardizationParams) -> Result<Dataset> {
    let cols = params.for_columns(dataset)?;
    let instances = dataset
        .instances
        .iter()
        .map(|row| {
            row.iter()
                .zip(&cols)
                .map(|(v, s)| v * s.std + s.mean)
                .collect()
        })
        .collect();
    Ok(Dataset {
        instances,
        feature_names: dataset.feature_names.clone(),
        standardized: false,
    })
}

/// Seeded shuffle of `0..n` cut into `round(ratio * n)` training and the
/// remaining test indices.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::validation(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let n_train = (ratio * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::validation(format!(
            "ratio {ratio} on {n} rows leaves an empty train or test set"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split(dataset: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset.len(), ratio, seed)?;
    Ok((dataset.select(&train), dataset.select(&test)))
}

/// One benchmark query: a data point and the set of perturbed features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub instance_index: usize,
    pub feature_set: Vec<usize>,
}

/// Draws `n` query pairs. Pair `j` perturbs `sizes[j % sizes.len()]` features
/// (default sizes `1..=d`), so when `n` is not a multiple of the number of
/// sizes the first sizes receive one extra pair. The instance is uniform over
/// `0..num_instances` and the feature set uniform among subsets of that size.
pub fn sample_pairs(
    num_instances: usize,
    d: usize,
    n: usize,
    seed: u64,
    sizes: Option<&[usize]>,
) -> Result<Vec<PairSample>> {
    if n == 0 {
        return Err(Error::validation("need at least one pair"));
    }
    if num_instances == 0 {
        return Err(Error::validation(
            "cannot sample pairs from an empty dataset",
        ));
    }
    let default_sizes: Vec<usize>;
    let sizes = match sizes {
        Some(s) => s,
        None => {
            if d == 0 {
                return Err(Error::validation(
                    "cannot sample feature sets with zero features",
                ));
            }
            default_sizes = (1..=d).collect();
            &default_sizes
        }
    };
    if sizes.is_empty() {
        return Err(Error::validation("subset size list is empty"));
    }
    if let Some(&k) = sizes.iter().find(|&&k| k > d) {
        return Err(Error::validation(format!(
            "subset size {k} exceeds {d} features"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|j| {
            let k = sizes[j % sizes.len()];
            let instance_index = rng.random_range(0..num_instances);
            let mut feature_set = index::sample(&mut rng, d, k).into_vec();
            feature_set.sort_unstable();
            PairSample {
                instance_index,
                feature_set,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_label_column() {
        let text = "alcohol,acidity,quality\n9.4,0.7,5\n9.8,0.88,6\n";
        let loaded = parse_csv(text, "wine.csv", Some("quality"), &[]).unwrap();
        assert_eq!(loaded.dataset.feature_names(), &["alcohol", "acidity"]);
        assert_eq!(loaded.dataset.len(), 2);
        assert_eq!(loaded.labels, Some(vec![5.0, 6.0]));

        let plain = parse_csv("a,b\n1,2\n3,4\n", "x.csv", None, &[]).unwrap();
        assert_eq!((plain.dataset.num_features(), plain.dataset.len()), (2, 2));
        assert!(plain.labels.is_none());
    }

    #[test]
    fn csv_excluded_and_bad_cells() {
        let loaded = parse_csv("a,type,b\n1,red,2\n", "x.csv", None, &["type".into()]).unwrap();
        assert_eq!(loaded.dataset.instance(0), &[1.0, 2.0]);

        let err = parse_csv("a,b\n1,2\n3,abc\n", "x.csv", None, &[]).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("row 2") && msg.contains("\"b\"") && msg.contains("abc"),
            "{msg}"
        );
        assert!(parse_csv("", "x.csv", None, &[]).is_err());
        assert!(parse_csv("a,b\n1,2\n", "x.csv", Some("y"), &[]).is_err());
    }

    #[test]
    fn standardize_population_convention() {
        let ds = Dataset::from_rows(vec![vec![0.0, 5.0], vec![2.0, 7.0]]).unwrap();
        let (out, params) = standardize(&ds, None).unwrap();
        assert_eq!(
            params.0["f0"],
            ColumnStats {
                mean: 1.0,
                std: 1.0
            }
        );
        assert_eq!(out.column(0).collect::<Vec<_>>(), vec![-1.0, 1.0]);
        assert!(out.is_standardized());

        let identity = StandardizationParams(
            [
                (
                    "f0".to_string(),
                    ColumnStats {
                        mean: 0.0,
                        std: 1.0,
                    },
                ),
                (
                    "f1".to_string(),
                    ColumnStats {
                        mean: 0.0,
                        std: 1.0,
                    },
                ),
            ]
            .into_iter()
            .collect(),
        );
        let (same, _) = standardize(&out, Some(&identity)).unwrap();
        assert_eq!(same.instances(), out.instances());

        let constant = Dataset::from_rows(vec![vec![3.0], vec![3.0]]).unwrap();
        let err = standardize(&constant, None).unwrap_err();
        assert!(err.to_string().contains("f0"));
    }

    #[test]
    fn standardized_columns_have_unit_moments() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![i as f64 * 0.37 - 3.0, ((i * 7) % 11) as f64])
            .collect();
        let ds = Dataset::from_rows(rows).unwrap();
        let (out, params) = standardize(&ds, None).unwrap();
        for j in 0..2 {
            let mean = out.column(j).sum::<f64>() / 50.0;
            let var = out.column(j).map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-6 && (var.sqrt() - 1.0).abs() < 1e-6);
        }
        let back = unstandardize(&out, &params).unwrap();
        for (a, b) in back
            .instances()
            .iter()
            .flatten()
            .zip(ds.instances().iter().flatten())
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sidecar_round_trip() {
        let ds = Dataset::from_rows(vec![vec![0.0], vec![2.0], vec![7.0]]).unwrap();
        let params = StandardizationParams::fit(&ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("std.json");
        params.save(&path).unwrap();
        assert_eq!(StandardizationParams::load(&path).unwrap(), params);
    }

    #[test]
    fn split_examples() {
        let ds = Dataset::from_rows((0..10).map(|i| vec![i as f64]).collect()).unwrap();
        let (train, test) = split(&ds, 0.8, 5).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert_eq!(split(&ds, 0.8, 5).unwrap(), (train.clone(), test.clone()));
        let mut all: Vec<f64> = train.column(0).chain(test.column(0)).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(|i| i as f64).collect::<Vec<_>>());
        assert!(split(&ds, 1.0, 5).is_err());
        assert!(split(&ds, 0.0, 5).is_err());
        assert!(split(&ds, 0.01, 5).is_err());
    }

    #[test]
    fn pair_sizes_cycle() {
        let sizes = |d, n| {
            sample_pairs(10, d, n, 1, None)
                .unwrap()
                .iter()
                .map(|p| p.feature_set.len())
                .collect::<Vec<_>>()
        };
        assert_eq!(sizes(3, 3), vec![1, 2, 3]);
        assert_eq!(sizes(2, 5), vec![1, 2, 1, 2, 1]);
        assert_eq!(
            sample_pairs(10, 4, 20, 9, None).unwrap(),
            sample_pairs(10, 4, 20, 9, None).unwrap()
        );

        let custom = sample_pairs(5, 6, 4, 2, Some(&[0, 6])).unwrap();
        assert!(custom[0].feature_set.is_empty());
        assert_eq!(custom[1].feature_set, (0..6).collect::<Vec<_>>());
        assert!(sample_pairs(5, 3, 4, 2, Some(&[4])).is_err());
        assert!(sample_pairs(5, 3, 0, 2, None).is_err());
    }

    #[test]
    fn pair_sets_are_sorted_distinct_and_in_range() {
        for p in sample_pairs(7, 9, 500, 3, None).unwrap() {
            assert!(p.instance_index < 7);
            assert!(p.feature_set.windows(2).all(|w| w[0] < w[1]));
            assert!(p.feature_set.iter().all(|&q| q < 9));
        }
    }
}
