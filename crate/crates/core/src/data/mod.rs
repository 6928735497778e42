//! Datasets, loaders, noise synthesis, batching and cross-validation splits.

mod batch;
mod csv;
mod idx;
mod noise;
mod split;

pub use self::batch::BatchStream;
pub use self::csv::load_csv;
pub use self::idx::{load_idx, save_idx, IdxImages};
pub use self::noise::{
    awgn_noise, motion_blur_kernel, synthesize_awgn, synthesize_motion_blur, synthesize_rc_awgn, NoiseSpec,
};
pub use self::split::{kfold_splits, Fold, SplitPlan};

use crate::error::{Error, Result};
use crate::learner::Targets;
use crate::nn::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Matrix,
    targets: Targets,
    class_count: usize,
}

impl Dataset {
    /// A classification dataset; `class_count` is `max(label) + 1`.
    pub fn classification(name: impl Into<String>, features: Matrix, labels: Vec<usize>) -> Result<Self> {
        let class_count = labels.iter().max().map_or(0, |&c| c + 1);
        Self::with_classes(name, features, labels, class_count)
    }

    pub fn with_classes(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Dimension {
                op: "Dataset",
                left: features.shape(),
                right: (labels.len(), 1),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Index {
                what: "class label",
                index: bad,
                len: class_count,
            });
        }
        Self::checked(name.into(), features, Targets::Classes(labels), class_count)
    }

    pub fn regression(name: impl Into<String>, features: Matrix, values: Matrix) -> Result<Self> {
        if values.rows() != features.rows() {
            return Err(Error::Dimension {
                op: "Dataset",
                left: features.shape(),
                right: values.shape(),
            });
        }
        Self::checked(name.into(), features, Targets::Values(values), 0)
    }

    fn checked(name: String, features: Matrix, targets: Targets, class_count: usize) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::contract(format!("dataset `{name}` has no samples")));
        }
        if !features.is_finite() {
            return Err(Error::contract(format!("dataset `{name}` has non-finite features")));
        }
        Ok(Dataset {
            name,
            features,
            targets,
            class_count,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    /// Class labels, if this is a classification dataset.
    pub fn labels(&self) -> Option<&[usize]> {
        self.targets.classes()
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_count(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Self::checked(
            self.name.clone(),
            self.features.select_rows(indices),
            self.targets.select(indices),
            self.class_count,
        )
    }

    pub fn select_features(&self, columns: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features.select_columns(columns),
            targets: self.targets.clone(),
            class_count: self.class_count,
        }
    }

    /// Same targets, new feature values (same shape).
    pub fn with_features(&self, features: Matrix) -> Result<Dataset> {
        self.features.check_same_shape(&features, "with_features")?;
        Self::checked(self.name.clone(), features, self.targets.clone(), self.class_count)
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}
