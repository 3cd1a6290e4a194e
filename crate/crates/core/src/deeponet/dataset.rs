use serde::{Deserialize, Serialize};

use super::{DeepOnetError, Result};
use crate::autodiff::Tensor;
use crate::container::TensorFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetRole {
    SourceTrain,
    SourceTest,
    TargetLabeled,
    TargetUnlabeled,
    TargetTest,
    Ood,
}

impl DatasetRole {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetRole::SourceTrain => "source-train",
            DatasetRole::SourceTest => "source-test",
            DatasetRole::TargetLabeled => "target-labeled",
            DatasetRole::TargetUnlabeled => "target-unlabeled",
            DatasetRole::TargetTest => "target-test",
            DatasetRole::Ood => "ood",
        }
    }
}

/// Input functions sampled at sensors, shared evaluation coordinates and
/// (except for unlabeled pools) reference outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorDataset {
    pub role: DatasetRole,
    /// `(N, ...)`: one sensor array per sample.
    pub branch_inputs: Tensor,
    /// `(d, coord_dim)`.
    pub coords: Tensor,
    /// `(N, d)`.
    pub outputs: Option<Tensor>,
}

impl OperatorDataset {
    pub fn new(role: DatasetRole, branch_inputs: Tensor, coords: Tensor, outputs: Option<Tensor>) -> Result<Self> {
        let bad = |m: String| Err(DeepOnetError::InvalidDataset(m));
        if branch_inputs.rank() < 2 || branch_inputs.shape()[0] == 0 {
            return bad(format!("branch inputs must be (N >= 1, ...), got {:?}", branch_inputs.shape()));
        }
        if coords.rank() != 2 || coords.shape()[0] == 0 {
            return bad(format!("coords must be (d >= 1, dim), got {:?}", coords.shape()));
        }
        let (n, d) = (branch_inputs.shape()[0], coords.shape()[0]);
        match (&outputs, role) {
            (Some(_), DatasetRole::TargetUnlabeled) => return bad("unlabeled pools carry no outputs".into()),
            (None, r) if r != DatasetRole::TargetUnlabeled => return bad(format!("{} data needs outputs", r.as_str())),
            (Some(y), _) if y.shape() != [n, d] => {
                return bad(format!("outputs {:?} do not match ({n}, {d})", y.shape()));
            }
            (Some(y), _) if !y.all_finite() => return bad("outputs must be finite".into()),
            _ => {}
        }
        if !branch_inputs.all_finite() || !coords.all_finite() {
            return bad("inputs must be finite".into());
        }
        Ok(Self { role, branch_inputs, coords, outputs })
    }

    pub fn len(&self) -> usize {
        self.branch_inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_coords(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn outputs(&self) -> Result<&Tensor> {
        self.outputs.as_ref().ok_or_else(|| DeepOnetError::InvalidDataset(format!("{} data has no outputs", self.role.as_str())))
    }

    /// Rows `indices` under a (possibly different) role.
    pub fn subset(&self, indices: &[usize], role: DatasetRole) -> Result<Self> {
        let x = self.branch_inputs.select_rows(indices)?;
        let y = match role {
            DatasetRole::TargetUnlabeled => None,
            _ => Some(self.outputs()?.select_rows(indices)?),
        };
        Self::new(role, x, self.coords.clone(), y)
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = TensorFile::new();
        f.push("branch_inputs", self.branch_inputs.clone());
        f.push("coords", self.coords.clone());
        if let Some(y) = &self.outputs {
            f.push("outputs", y.clone());
        }
        f
    }

    pub fn from_tensor_file(mut file: TensorFile, role: DatasetRole) -> Result<Self> {
        let x = file.take("branch_inputs")?;
        let c = file.take("coords")?;
        let y = file.take("outputs").ok();
        Self::new(role, x, c, y)
    }
}
