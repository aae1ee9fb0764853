use crate::ad::matrix::Mat;
use crate::error::{Error, Result};

/// Inputs and targets, one row per example.
///
/// Classification sets keep their integer labels alongside the one-hot target
/// matrix that loss programs consume.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Mat<f64>,
    targets: Mat<f64>,
    labels: Option<Vec<usize>>,
    provenance: String,
}

impl Dataset {
    pub fn regression(inputs: Mat<f64>, targets: Mat<f64>, provenance: impl Into<String>) -> Result<Self> {
        if inputs.rows != targets.rows {
            return Err(Error::Dimension(format!(
                "{} input rows but {} target rows",
                inputs.rows, targets.rows
            )));
        }
        Ok(Dataset {
            inputs,
            targets,
            labels: None,
            provenance: provenance.into(),
        })
    }

    pub fn classification(
        inputs: Mat<f64>,
        labels: Vec<usize>,
        classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if inputs.rows != labels.len() {
            return Err(Error::Dimension(format!(
                "{} input rows but {} labels",
                inputs.rows,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Validation(format!("label {bad} out of range for {classes} classes")));
        }
        let mut targets = Mat::zeros(labels.len(), classes);
        for (r, &l) in labels.iter().enumerate() {
            targets.data[r * classes + l] = 1.0;
        }
        Ok(Dataset {
            inputs,
            targets,
            labels: Some(labels),
            provenance: provenance.into(),
        })
    }

    /// Zero rows; used by programs that never read the data slot.
    pub fn empty() -> Self {
        Dataset {
            inputs: Mat::zeros(0, 0),
            targets: Mat::zeros(0, 0),
            labels: None,
            provenance: "empty".into(),
        }
    }

    pub fn inputs(&self) -> &Mat<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &Mat<f64> {
        &self.targets
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|_| self.targets.cols)
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.inputs.rows
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows == 0
    }

    pub fn features(&self) -> usize {
        self.inputs.cols
    }

    pub fn select(&self, rows: &[usize], provenance: impl Into<String>) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(rows),
            targets: self.targets.select_rows(rows),
            labels: self.labels.as_ref().map(|l| rows.iter().map(|&r| l[r]).collect()),
            provenance: provenance.into(),
        }
    }

    /// Row-wise concatenation of two datasets of the same kind.
    pub fn concat(&self, other: &Dataset, provenance: impl Into<String>) -> Result<Dataset> {
        if self.features() != other.features() || self.targets.cols != other.targets.cols {
            return Err(Error::Dimension("cannot concatenate datasets of different widths".into()));
        }
        let mut inputs = self.inputs.clone();
        inputs.data.extend_from_slice(&other.inputs.data);
        inputs.rows += other.inputs.rows;
        let mut targets = self.targets.clone();
        targets.data.extend_from_slice(&other.targets.data);
        targets.rows += other.targets.rows;
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            (None, None) => None,
            _ => return Err(Error::Validation("cannot mix labelled and unlabelled datasets".into())),
        };
        Ok(Dataset {
            inputs,
            targets,
            labels,
            provenance: provenance.into(),
        })
    }

    /// Replaces the labels of a classification set.
    pub fn relabel(&self, labels: Vec<usize>) -> Result<Dataset> {
        let classes = self
            .classes()
            .ok_or_else(|| Error::Validation("relabel on a regression dataset".into()))?;
        Dataset::classification(self.inputs.clone(), labels, classes, self.provenance.clone())
    }
}
