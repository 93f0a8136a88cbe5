//! Labelled observations, file ingestion and seeded train/test splitting.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Index into a [`LabelSpace`].
pub type LabelId = usize;

/// A feature vector together with its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: Vec<f64>,
    pub label: LabelId,
}

impl Observation {
    pub fn new(features: Vec<f64>, label: LabelId) -> Self {
        Self { features, label }
    }
}

/// Ordered, duplicate-free list of label names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    names: Vec<String>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::InvalidArgument("label space must not be empty".into()));
        }
        let mut seen = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if seen.insert(n.as_str(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate label name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    /// Labels "0", "1", ..., "n-1".
    pub fn numbered(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: LabelId) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<LabelId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Immutable collection of observations sharing a dimension and label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dimension: usize,
    label_space: LabelSpace,
    observations: Vec<Observation>,
}

impl Dataset {
    pub fn new(
        dimension: usize,
        label_space: LabelSpace,
        observations: Vec<Observation>,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        for obs in &observations {
            if obs.features.len() != dimension {
                return Err(Error::Dimension {
                    expected: dimension,
                    found: obs.features.len(),
                });
            }
            if obs.label >= label_space.len() {
                return Err(Error::out_of_range(
                    "label index",
                    obs.label,
                    format!("< {}", label_space.len()),
                ));
            }
        }
        Ok(Self {
            dimension,
            label_space,
            observations,
        })
    }

    /// An empty dataset with the same dimension and labels as `self`.
    pub fn empty_like(&self) -> Self {
        Self {
            dimension: self.dimension,
            label_space: self.label_space.clone(),
            observations: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn label_count(&self) -> usize {
        self.label_space.len()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = LabelId> + '_ {
        self.observations.iter().map(|o| o.label)
    }

    pub fn objects(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.observations.iter().map(|o| o.features.as_slice())
    }

    /// Number of observations carrying each label.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.label_count()];
        for y in self.labels() {
            counts[y] += 1;
        }
        counts
    }

    /// Appends the observations of `other`, which must agree on dimension
    /// and label space.
    pub fn concat(mut self, other: Dataset) -> Result<Self> {
        if other.dimension != self.dimension {
            return Err(Error::Dimension {
                expected: self.dimension,
                found: other.dimension,
            });
        }
        if other.label_space != self.label_space {
            return Err(Error::InvalidArgument(
                "cannot concatenate datasets with different label spaces".into(),
            ));
        }
        self.observations.extend(other.observations);
        Ok(self)
    }

    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            dimension: self.dimension,
            label_space: self.label_space.clone(),
            observations: indices.iter().map(|&i| self.observations[i].clone()).collect(),
        }
    }

    /// Writes `label,f1,...,fd` rows. Reals use the shortest representation
    /// that parses back to the same value, so [`load_csv`] round-trips.
    /// Label ids survive only if the names first appear in id order, as they
    /// do for any dataset read by [`load_csv`]; otherwise names are kept and
    /// ids renumbered.
    pub fn write_csv(&self, path: &Path, header: bool) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
        if header {
            let mut line = String::from("label");
            for j in 0..self.dimension {
                line.push_str(&format!(",f{}", j + 1));
            }
            writeln!(out, "{line}").map_err(io_err)?;
        }
        for obs in &self.observations {
            let name = self.label_space.names[obs.label].as_str();
            if name.contains([',', '\n', '\r']) {
                return Err(Error::InvalidArgument(format!(
                    "label {name:?} cannot be written as a CSV field"
                )));
            }
            let mut line = String::from(name);
            for v in &obs.features {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a comma-separated file whose rows are `label,f1,...,fd`.
///
/// Label names are collected in order of first appearance. Blank lines are
/// skipped; line numbers in errors count every physical line from 1.
pub fn load_csv(path: &Path, has_header: bool) -> Result<Dataset> {
    parse_csv(&read_to_string(path)?, has_header)
}

pub fn parse_csv(text: &str, has_header: bool) -> Result<Dataset> {
    let mut names: Vec<String> = Vec::new();
    let mut ids: HashMap<String, LabelId> = HashMap::new();
    let mut observations = Vec::new();
    let mut width: Option<usize> = None;
    let mut header_pending = has_header;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match width {
            None => {
                if fields.len() < 2 {
                    return Err(Error::Format {
                        line: line_no,
                        message: "row needs a label and at least one feature".into(),
                    });
                }
                width = Some(fields.len());
            }
            Some(w) if w != fields.len() => {
                return Err(Error::RaggedRow {
                    line: line_no,
                    expected: w,
                    found: fields.len(),
                });
            }
            Some(_) => {}
        }
        let features = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    field: (*f).to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let label = match ids.get(fields[0]) {
            Some(&id) => id,
            None => {
                let id = names.len();
                names.push(fields[0].to_string());
                ids.insert(fields[0].to_string(), id);
                id
            }
        };
        observations.push(Observation::new(features, label));
    }

    let Some(width) = width else {
        return Err(Error::EmptyInput("CSV file contains no data rows".into()));
    };
    Dataset::new(width - 1, LabelSpace::new(names)?, observations)
}

pub const USPS_DIMENSION: usize = 256;
const USPS_LABEL_TOLERANCE: f64 = 1e-6;

/// Reads the plain-text USPS layout: per line a real-valued digit label
/// followed by 256 whitespace-separated reals.
pub fn load_usps(path: &Path) -> Result<Dataset> {
    parse_usps(&read_to_string(path)?)
}

/// Loads several USPS-format files (for instance the original training and
/// test halves) into one dataset, in the given order.
pub fn load_usps_files<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut out: Option<Dataset> = None;
    for p in paths {
        let d = load_usps(p.as_ref())?;
        out = Some(match out {
            None => d,
            Some(acc) => acc.concat(d)?,
        });
    }
    out.ok_or_else(|| Error::EmptyInput("no USPS files given".into()))
}

pub fn parse_usps(text: &str) -> Result<Dataset> {
    let mut observations = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let nums = raw
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    field: f.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if nums.len() != USPS_DIMENSION + 1 {
            return Err(Error::Format {
                line: line_no,
                message: format!(
                    "expected {} numbers (label + {USPS_DIMENSION} features), found {}",
                    USPS_DIMENSION + 1,
                    nums.len()
                ),
            });
        }
        let digit = nums[0].round();
        if (nums[0] - digit).abs() > USPS_LABEL_TOLERANCE || !(0.0..=9.0).contains(&digit) {
            return Err(Error::Label {
                line: line_no,
                message: format!("{} is not a digit 0-9", nums[0]),
            });
        }
        observations.push(Observation::new(nums[1..].to_vec(), digit as LabelId));
    }
    if observations.is_empty() {
        return Err(Error::EmptyInput("USPS file contains no observations".into()));
    }
    Dataset::new(USPS_DIMENSION, LabelSpace::numbered(10)?, observations)
}

/// Randomly splits `dataset` into a training part of `train_size`
/// observations and a test part holding the rest.
///
/// The order is a Fisher-Yates permutation driven by ChaCha8 seeded with
/// `seed` (see [`crate::rng`]); both parts keep the permuted order.
pub fn split(dataset: &Dataset, train_size: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if train_size > dataset.len() {
        return Err(Error::out_of_range(
            "train_size",
            train_size,
            format!("0..={}", dataset.len()),
        ));
    }
    let perm = rng::permutation(dataset.len(), seed);
    let (train, test) = perm.split_at(train_size);
    Ok((dataset.subset(train), dataset.subset(test)))
}
