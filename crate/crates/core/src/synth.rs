//! Synthetic dataset generators with analytically known uncertainty
//! structure, plus CSV ingestion with deterministic grouped splits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rng::RngState;
use ndarray::{Array1, Array2};

const FRACTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Categorical,
    Continuous,
}

/// Declarative description of a tabular dataset: which columns are features,
/// which are targets, and which column keys the grouped split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub feature_columns: Vec<String>,
    pub target_columns: Vec<String>,
    pub target_kind: TargetKind,
    /// For categorical targets: number of classes (single label column).
    pub n_classes: Option<usize>,
    pub group_column: String,
    /// train/val/test fractions, summing to 1.
    pub split_fractions: [f64; 3],
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<()> {
        if self.feature_columns.is_empty() {
            return Err(Error::Config("schema needs at least one feature column".into()));
        }
        if self.target_columns.is_empty() {
            return Err(Error::Config("schema needs at least one target column".into()));
        }
        let sum: f64 = self.split_fractions.iter().sum();
        if (sum - 1.0).abs() > FRACTION_TOL {
            return Err(Error::Config(format!("split fractions must sum to 1, got {sum}")));
        }
        if self.split_fractions.iter().any(|&f| f < 0.0) {
            return Err(Error::Config("split fractions must be non-negative".into()));
        }
        if self.target_kind == TargetKind::Categorical {
            match self.n_classes {
                Some(k) if k >= 2 => {}
                _ => {
                    return Err(Error::Config(
                        "categorical schema needs n_classes >= 2".into(),
                    ))
                }
            }
            if self.target_columns.len() != 1 {
                return Err(Error::Config(
                    "categorical schema uses a single label column".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The generator's exact conditional distribution for every sample.
#[derive(Debug, Clone)]
pub enum SyntheticTruth {
    /// Per-sample true class probabilities, n x K.
    Categorical { probs: Array2<f64> },
    /// Per-sample true conditional mean and variance.
    Continuous { mean: Array1<f64>, variance: Array1<f64> },
}

/// A generated dataset: features, targets (one-hot or continuous), group
/// keys, ground truth, and an optional out-of-distribution flag per sample.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
    pub groups: Vec<u64>,
    pub truth: SyntheticTruth,
    pub ood_flag: Vec<bool>,
}

impl SyntheticDataset {
    pub fn batch(&self) -> Result<Batch> {
        Batch::new(self.features.clone(), self.targets.clone())
    }
}

/// K Gaussian clusters on a circle; labels sampled from the softmax of
/// scaled negative squared distances to the cluster centers. `noise_level`
/// controls overlap: 0 gives (numerically) one-hot conditionals, large
/// values drive them toward uniform.
pub fn gen_categorical(
    n: usize,
    k: usize,
    noise_level: f64,
    rng: &mut RngState,
) -> Result<SyntheticDataset> {
    if k < 2 {
        return Err(Error::InvalidParam(format!("K must be >= 2, got {k}")));
    }
    if n == 0 {
        return Err(Error::InvalidParam("n must be >= 1".into()));
    }
    if noise_level < 0.0 {
        return Err(Error::InvalidParam("noise_level must be >= 0".into()));
    }
    let radius = 3.0;
    let centers: Vec<(f64, f64)> = (0..k)
        .map(|c| {
            let theta = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
            (radius * theta.cos(), radius * theta.sin())
        })
        .collect();
    // softmax temperature: higher noise -> flatter conditionals
    let inv_temp = 1.0 / (0.05 + noise_level * noise_level);
    let spread = 0.6;

    let mut features = Array2::zeros((n, 2));
    let mut targets = Array2::zeros((n, k));
    let mut probs = Array2::zeros((n, k));
    let mut groups = Vec::with_capacity(n);
    for i in 0..n {
        let c = rng.gen_usize_below(k);
        let x = centers[c].0 + spread * rng.normal();
        let y = centers[c].1 + spread * rng.normal();
        features[[i, 0]] = x;
        features[[i, 1]] = y;

        let logits: Vec<f64> = centers
            .iter()
            .map(|&(cx, cy)| {
                let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                -d2 * inv_temp
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for j in 0..k {
            probs[[i, j]] = exps[j] / z;
        }

        let u = rng.uniform();
        let mut acc = 0.0;
        let mut label = k - 1;
        for j in 0..k {
            acc += probs[[i, j]];
            if u < acc {
                label = j;
                break;
            }
        }
        targets[[i, label]] = 1.0;
        // 20-sample "days" as the grouping key for grouped splits
        groups.push((i / 20) as u64);
    }
    Ok(SyntheticDataset {
        features,
        targets,
        groups,
        truth: SyntheticTruth::Categorical { probs },
        ood_flag: vec![false; n],
    })
}

/// True noise standard deviation of the heteroscedastic generator.
pub fn hetero_sigma(x: f64) -> f64 {
    1.0 + 2.0 * x.sin().abs()
}

/// Cubic regression fixture: x ~ U[-4,4], y = x^3 + eps with
/// eps ~ N(0, sigma(x)^2), sigma(x) = 1 + 2|sin x|. An out-of-distribution
/// band x in [4,6] of `n_ood` extra samples is appended with its flag set.
pub fn gen_heteroscedastic(n: usize, n_ood: usize, rng: &mut RngState) -> Result<SyntheticDataset> {
    if n == 0 {
        return Err(Error::InvalidParam("n must be >= 1".into()));
    }
    let total = n + n_ood;
    let mut features = Array2::zeros((total, 1));
    let mut targets = Array2::zeros((total, 1));
    let mut mean = Array1::zeros(total);
    let mut variance = Array1::zeros(total);
    let mut groups = Vec::with_capacity(total);
    let mut ood_flag = Vec::with_capacity(total);
    for i in 0..total {
        let ood = i >= n;
        let x = if ood {
            rng.uniform_range(4.0, 6.0)
        } else {
            rng.uniform_range(-4.0, 4.0)
        };
        let s = hetero_sigma(x);
        features[[i, 0]] = x;
        mean[i] = x * x * x;
        variance[i] = s * s;
        targets[[i, 0]] = mean[i] + s * rng.normal();
        groups.push((i / 20) as u64);
        ood_flag.push(ood);
    }
    Ok(SyntheticDataset {
        features,
        targets,
        groups,
        truth: SyntheticTruth::Continuous { mean, variance },
        ood_flag,
    })
}

/// A loaded dataset split by group key.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Batch,
    pub val: Batch,
    pub test: Batch,
    pub train_groups: Vec<u64>,
    pub val_groups: Vec<u64>,
    pub test_groups: Vec<u64>,
    /// Row indices of each split in the original dataset order.
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Deterministic seeded group-level split: groups are shuffled under the
/// seed and dealt into train/val/test by the schema's fractions. No group
/// ever appears in more than one split.
pub fn grouped_split(
    features: Array2<f64>,
    targets: Array2<f64>,
    groups: &[u64],
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitDataset> {
    if features.nrows() != groups.len() || targets.nrows() != groups.len() {
        return Err(Error::Dimension("rows/groups length mismatch".into()));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > FRACTION_TOL {
        return Err(Error::Config(format!("split fractions must sum to 1, got {sum}")));
    }
    let mut distinct: Vec<u64> = groups.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let g = distinct.len();
    if g < 3 {
        return Err(Error::Data(format!("need at least 3 groups to split, found {g}")));
    }
    let mut rng = RngState::new(seed).child(0x73706c6974); // "split"
    rng.shuffle(&mut distinct);
    let n_train = ((fractions[0] * g as f64).round() as usize).min(g);
    let n_val = ((fractions[1] * g as f64).round() as usize).min(g - n_train);
    let assign = |gid: &u64| -> usize {
        let pos = distinct.iter().position(|x| x == gid).unwrap();
        if pos < n_train {
            0
        } else if pos < n_train + n_val {
            1
        } else {
            2
        }
    };
    let mut idx: [Vec<usize>; 3] = [vec![], vec![], vec![]];
    for (i, gid) in groups.iter().enumerate() {
        idx[assign(gid)].push(i);
    }
    for (name, part) in ["train", "val", "test"].iter().zip(&idx) {
        if part.is_empty() {
            return Err(Error::Data(format!("{name} split is empty")));
        }
    }
    let full = Batch::new(features, targets)?;
    let part_groups =
        |part: &[usize]| -> Vec<u64> { part.iter().map(|&i| groups[i]).collect() };
    Ok(SplitDataset {
        train: full.select(&idx[0]),
        val: full.select(&idx[1]),
        test: full.select(&idx[2]),
        train_groups: part_groups(&idx[0]),
        val_groups: part_groups(&idx[1]),
        test_groups: part_groups(&idx[2]),
        train_idx: idx[0].clone(),
        val_idx: idx[1].clone(),
        test_idx: idx[2].clone(),
    })
}

/// Parse a CSV file against a schema and split it by group. Non-numeric
/// cells are reported with their 1-based data row and column name.
pub fn load_csv(path: &std::path::Path, schema: &DatasetSchema, seed: u64) -> Result<SplitDataset> {
    schema.validate()?;
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("missing column '{name}'")))
    };
    let feat_idx: Vec<usize> = schema
        .feature_columns
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;
    let targ_idx: Vec<usize> = schema
        .target_columns
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;
    let group_idx = col_index(&schema.group_column)?;

    let parse_cell = |record: &csv::StringRecord, col: usize, row: usize| -> Result<f64> {
        let raw = record.get(col).ok_or_else(|| {
            Error::Data(format!("row {row}: missing field '{}'", headers[col]))
        })?;
        raw.trim().parse::<f64>().map_err(|_| {
            Error::Data(format!(
                "row {row}, column '{}': cannot parse '{raw}' as a number",
                headers[col]
            ))
        })
    };

    let mut feats: Vec<f64> = Vec::new();
    let mut targs: Vec<f64> = Vec::new();
    let mut groups: Vec<u64> = Vec::new();
    let mut n = 0usize;
    let t_width = match schema.target_kind {
        TargetKind::Categorical => schema.n_classes.unwrap(),
        TargetKind::Continuous => schema.target_columns.len(),
    };
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = r + 1; // 1-based data row (header excluded)
        for &c in &feat_idx {
            feats.push(parse_cell(&rec, c, row)?);
        }
        match schema.target_kind {
            TargetKind::Categorical => {
                let k = schema.n_classes.unwrap();
                let label = parse_cell(&rec, targ_idx[0], row)?;
                let li = label as usize;
                if label.fract() != 0.0 || label < 0.0 || li >= k {
                    return Err(Error::Data(format!(
                        "row {row}, column '{}': label {label} out of range 0..{k}",
                        headers[targ_idx[0]]
                    )));
                }
                let mut onehot = vec![0.0; k];
                onehot[li] = 1.0;
                targs.extend(onehot);
            }
            TargetKind::Continuous => {
                for &c in &targ_idx {
                    targs.push(parse_cell(&rec, c, row)?);
                }
            }
        }
        let g = parse_cell(&rec, group_idx, row)?;
        if g.fract() != 0.0 || g < 0.0 {
            return Err(Error::Data(format!(
                "row {row}, column '{}': group key must be a non-negative integer, got {g}",
                headers[group_idx]
            )));
        }
        groups.push(g as u64);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data("CSV contains no data rows".into()));
    }
    let features = Array2::from_shape_vec((n, feat_idx.len()), feats)
        .map_err(|e| Error::Data(e.to_string()))?;
    let targets =
        Array2::from_shape_vec((n, t_width), targs).map_err(|e| Error::Data(e.to_string()))?;
    grouped_split(features, targets, &groups, schema.split_fractions, seed)
}
