//! Datasets: synthetic Gaussian blobs, IDX (MNIST) ingestion, the
//! remaining / erased / auxiliary / test partition, and backdoor stamping.

mod idx;

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

pub use idx::{idx_to_dataset, load_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, IdxImages};

/// Features in `[0, 1]` with integer labels in `[0, classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.rank() != 2 {
            return Err(Error::shape(format!("inputs must be a matrix, got {:?}", inputs.shape())));
        }
        let (m, n) = (inputs.rows(), inputs.cols());
        if m == 0 || n == 0 {
            return Err(Error::invalid(format!("dataset must be non-empty, got {m} × {n}")));
        }
        if classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {classes}")));
        }
        if labels.len() != m {
            return Err(Error::shape(format!("{} labels for {m} rows", labels.len())));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!("label {y} out of range for {classes} classes")));
        }
        if let Some(&v) = inputs.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("feature value {v} outside [0, 1]")));
        }
        Ok(Dataset { inputs, labels, classes })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.inputs.cols()
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        let inputs = self.inputs.select_rows(rows)?;
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(inputs, labels, self.classes)
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.classes != other.classes {
            return Err(Error::invalid("cannot concatenate datasets with different class counts"));
        }
        let inputs = self.inputs.vcat(&other.inputs)?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(inputs, labels, self.classes)
    }

    /// CSV with header `f0,...,f{n-1},label`; features carry 10 significant digits.
    pub fn to_csv(&self) -> String {
        let n = self.features();
        let mut out = String::new();
        for j in 0..n {
            let _ = write!(out, "f{j},");
        }
        out.push_str("label\n");
        for (i, &y) in self.labels.iter().enumerate() {
            for &v in self.inputs.row(i) {
                out.push_str(&format_significant(v, 10));
                out.push(',');
            }
            let _ = writeln!(out, "{y}");
        }
        out
    }

    pub fn from_csv(text: &str, classes: usize) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
        let n = headers.len().checked_sub(1).filter(|&n| n > 0).ok_or_else(|| {
            Error::Csv("expected at least one feature column and a label column".into())
        })?;
        for (j, h) in headers.iter().take(n).enumerate() {
            if h != format!("f{j}") {
                return Err(Error::Csv(format!("column {j} is '{h}', expected 'f{j}'")));
            }
        }
        if &headers[n] != "label" {
            return Err(Error::Csv("last column must be 'label'".into()));
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Csv(e.to_string()))?;
            let parse_err = |what: &str| Error::Csv(format!("row {}: bad {what}", line + 1));
            for field in record.iter().take(n) {
                data.push(field.trim().parse::<f64>().map_err(|_| parse_err("feature"))?);
            }
            labels.push(record[n].trim().parse::<usize>().map_err(|_| parse_err("label"))?);
        }
        let m = labels.len();
        Dataset::new(Tensor::new(vec![m, n], data)?, labels, classes)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Decimal rendering with `digits` significant digits.
pub(crate) fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{:.*}", digits - 1, v);
    }
    let magnitude = v.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Gaussian blobs: one random mean per class, rows drawn around it with
/// per-coordinate standard deviation `spread`, clipped to `[0, 1]`.
///
/// Class means are drawn in `[0.15, 0.85]^dim` and redrawn until every pair is
/// at least `4 · spread` apart. Rows are shuffled.
pub fn synth_blobs(rng: &mut Rng, classes: usize, per_class: usize, dim: usize, spread: f64) -> Result<Dataset> {
    if classes < 2 || per_class < 1 || dim < 4 {
        return Err(Error::invalid(format!(
            "synth_blobs needs classes ≥ 2, per_class ≥ 1, dim ≥ 4 (got {classes}, {per_class}, {dim})"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::invalid(format!("spread must be finite and ≥ 0, got {spread}")));
    }
    let min_sep = 4.0 * spread;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(classes);
    let mut attempts = 0;
    while means.len() < classes {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::invalid(format!(
                "could not place {classes} means {min_sep} apart in {dim} dimensions"
            )));
        }
        let candidate: Vec<f64> = (0..dim).map(|_| 0.15 + 0.7 * rng.uniform()).collect();
        let far_enough = means.iter().all(|m| {
            m.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= min_sep
        });
        if far_enough {
            means.push(candidate);
        }
    }

    let m = classes * per_class;
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(m);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let row = mean
                .iter()
                .map(|&mu| (mu + spread * rng.normal()).clamp(0.0, 1.0))
                .collect();
            rows.push((row, c));
        }
    }
    rng.shuffle(&mut rows);
    let labels = rows.iter().map(|(_, y)| *y).collect();
    let data = rows.into_iter().flat_map(|(r, _)| r).collect();
    Dataset::new(Tensor::new(vec![m, dim], data)?, labels, classes)
}

/// Where the server's auxiliary set comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxSource {
    /// Rows the server already holds: drawn from the remaining set, never
    /// from the erased rows.
    HeldOut,
    /// Uniform inputs in `[0, 1]^n`, labels assigned round-robin over classes.
    RandomInputs,
}

impl std::str::FromStr for AuxSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "held-out" => Ok(AuxSource::HeldOut),
            "random-inputs" => Ok(AuxSource::RandomInputs),
            other => Err(Error::invalid(format!("unknown auxiliary source '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionOptions {
    /// Erased-data ratio, in `(0, 0.5)`.
    pub edr: f64,
    pub aux_source: AuxSource,
    /// Fraction of rows set aside as a test split before anything else; 0 for none.
    pub test_fraction: f64,
    /// Keep rows with this label out of the erased set (the backdoor target).
    pub erase_exclude_label: Option<usize>,
}

impl PartitionOptions {
    pub fn new(edr: f64, aux_source: AuxSource) -> Self {
        PartitionOptions {
            edr,
            aux_source,
            test_fraction: 0.0,
            erase_exclude_label: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub remaining: Dataset,
    pub erased: Dataset,
    pub auxiliary: Dataset,
    pub test: Option<Dataset>,
    /// Row indices into the partitioned dataset.
    pub erased_rows: Vec<usize>,
    pub remaining_rows: Vec<usize>,
}

impl Partition {
    /// Remaining and erased rows together: what the original model trains on.
    pub fn train_set(&self) -> Result<Dataset> {
        self.remaining.concat(&self.erased)
    }
}

/// Round-half-up of `x`.
pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

pub fn partition(ds: &Dataset, edr: f64, aux_source: AuxSource, rng: &mut Rng) -> Result<Partition> {
    partition_with(ds, &PartitionOptions::new(edr, aux_source), rng)
}

pub fn partition_with(ds: &Dataset, opts: &PartitionOptions, rng: &mut Rng) -> Result<Partition> {
    if !(opts.edr > 0.0 && opts.edr < 0.5) {
        return Err(Error::invalid(format!("edr must lie in (0, 0.5), got {}", opts.edr)));
    }
    if !(0.0..1.0).contains(&opts.test_fraction) {
        return Err(Error::invalid(format!("test_fraction must lie in [0, 1), got {}", opts.test_fraction)));
    }
    let mut order = rng.permutation(ds.len());
    let n_test = round_half_up(opts.test_fraction * ds.len() as f64);
    let mut test_rows: Vec<usize> = order.drain(..n_test).collect();
    test_rows.sort_unstable();
    let mut train_rows = order;
    train_rows.sort_unstable();

    let n_erase = round_half_up(opts.edr * train_rows.len() as f64);
    if n_erase == 0 {
        return Err(Error::invalid(format!(
            "edr {} of {} training rows rounds to an empty erase set",
            opts.edr,
            train_rows.len()
        )));
    }
    let pool: Vec<usize> = train_rows
        .iter()
        .copied()
        .filter(|&i| opts.erase_exclude_label != Some(ds.labels[i]))
        .collect();
    if pool.len() < n_erase {
        return Err(Error::invalid(format!("{} eligible rows for {n_erase} erased", pool.len())));
    }
    let mut erased_rows: Vec<usize> = rng
        .uniform_indices(pool.len(), n_erase, false)?
        .into_iter()
        .map(|j| pool[j])
        .collect();
    erased_rows.sort_unstable();
    let remaining_rows: Vec<usize> = train_rows
        .iter()
        .copied()
        .filter(|i| erased_rows.binary_search(i).is_err())
        .collect();

    let auxiliary = match opts.aux_source {
        AuxSource::HeldOut => {
            if remaining_rows.len() < n_erase {
                return Err(Error::invalid(format!(
                    "{} remaining rows cannot supply {n_erase} auxiliary rows",
                    remaining_rows.len()
                )));
            }
            let mut picks: Vec<usize> = rng
                .uniform_indices(remaining_rows.len(), n_erase, false)?
                .into_iter()
                .map(|j| remaining_rows[j])
                .collect();
            picks.sort_unstable();
            ds.subset(&picks)?
        }
        AuxSource::RandomInputs => {
            let inputs = rng.uniform_tensor(&[n_erase, ds.features()], 0.0, 1.0);
            let labels = (0..n_erase).map(|i| i % ds.classes).collect();
            Dataset::new(inputs, labels, ds.classes)?
        }
    };
    if remaining_rows.is_empty() {
        return Err(Error::invalid("partition leaves no remaining rows"));
    }

    Ok(Partition {
        remaining: ds.subset(&remaining_rows)?,
        erased: ds.subset(&erased_rows)?,
        auxiliary,
        test: if test_rows.is_empty() { None } else { Some(ds.subset(&test_rows)?) },
        erased_rows,
        remaining_rows,
    })
}

/// A trigger: fixed feature positions set to one value, relabelled to a target.
#[derive(Clone, Debug, PartialEq)]
pub struct BackdoorSpec {
    pub trigger_indices: Vec<usize>,
    pub trigger_value: f64,
    pub target_label: usize,
}

impl BackdoorSpec {
    /// The first `⌈n/16⌉` features set to 1.0, target label 0.
    pub fn default_for(n_features: usize) -> Self {
        BackdoorSpec {
            trigger_indices: (0..n_features.div_ceil(16)).collect(),
            trigger_value: 1.0,
            target_label: 0,
        }
    }

    pub fn validate(&self, n_features: usize, classes: usize) -> Result<()> {
        let mut sorted = self.trigger_indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.trigger_indices.len() {
            return Err(Error::invalid("trigger indices must be distinct"));
        }
        if let Some(&i) = sorted.last().filter(|&&i| i >= n_features) {
            return Err(Error::invalid(format!("trigger index {i} outside {n_features} features")));
        }
        if !(0.0..=1.0).contains(&self.trigger_value) {
            return Err(Error::invalid(format!("trigger value {} outside [0, 1]", self.trigger_value)));
        }
        if self.target_label >= classes {
            return Err(Error::invalid(format!("target label {} out of range", self.target_label)));
        }
        Ok(())
    }

    /// Stamps the trigger on every row of `ds` (labels relabelled to the target).
    pub fn stamp_all(&self, ds: &Dataset) -> Result<Dataset> {
        let rows: Vec<usize> = (0..ds.len()).collect();
        inject_backdoor(ds, self, &rows)
    }
}

/// Copy of `ds` with the trigger stamped on `rows` and their labels set to the target.
pub fn inject_backdoor(ds: &Dataset, spec: &BackdoorSpec, rows: &[usize]) -> Result<Dataset> {
    spec.validate(ds.features(), ds.classes)?;
    if let Some(&r) = rows.iter().find(|&&r| r >= ds.len()) {
        return Err(Error::invalid(format!("row {r} out of range for {} rows", ds.len())));
    }
    let mut out = ds.clone();
    for &r in rows {
        let row = out.inputs.row_mut(r);
        for &j in &spec.trigger_indices {
            row[j] = spec.trigger_value;
        }
        out.labels[r] = spec.target_label;
    }
    Ok(out)
}
