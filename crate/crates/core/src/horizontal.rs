//! Deletion diagnostics for horizontal federations.
//!
//! The influence of removing a set `D` of training rows is the mean absolute
//! change of the predicted probability over an evaluation set:
//! `(1/n) * sum_j |f(x_j) - f_{-D}(x_j)|`, where `f_{-D}` is retrained without
//! `D`. A party can be scored by summing single-row deletions or by deleting
//! its whole block at once (one retrain per party).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, HorizontalPartition};
use crate::error::{FedError, Result};
use crate::model::{Learner, Predictor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceMethod {
    /// One retrain per party with its whole block removed.
    BatchDeletion,
    /// Sum of single-instance deletions over the party's block.
    SummedSingle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyInfluence {
    pub id: usize,
    pub size: usize,
    pub influence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub method: InfluenceMethod,
    /// Size of the evaluation set the absolute differences are averaged over.
    pub n: usize,
    pub parties: Vec<PartyInfluence>,
    pub config_fingerprint: String,
    pub seed: u64,
}

/// Full-data model predictions cached once, reused for every deletion.
pub struct DeletionContext<'a, L: Learner> {
    learner: &'a L,
    data: &'a Dataset,
    eval_set: Vec<usize>,
    baseline: Vec<f64>,
}

impl<'a, L: Learner> DeletionContext<'a, L> {
    pub fn new(learner: &'a L, data: &'a Dataset, eval_set: &[usize]) -> Result<Self> {
        if eval_set.is_empty() {
            return Err(FedError::EmptySubset);
        }
        check_indices(eval_set, data.n())?;
        let full = learner.fit(data, &data.all_indices())?;
        let baseline = predictions(&full, data, eval_set);
        Ok(Self {
            learner,
            data,
            eval_set: eval_set.to_vec(),
            baseline,
        })
    }

    pub fn eval_size(&self) -> usize {
        self.eval_set.len()
    }

    /// Influence of retraining without every index in `removed`.
    pub fn influence_without(&self, removed: &[usize]) -> Result<f64> {
        check_indices(removed, self.data.n())?;
        let mut keep = vec![true; self.data.n()];
        for &i in removed {
            keep[i] = false;
        }
        let kept: Vec<usize> = (0..self.data.n()).filter(|&i| keep[i]).collect();
        let model = self.learner.fit(self.data, &kept)?;
        let after = predictions(&model, self.data, &self.eval_set);
        let total: f64 = self
            .baseline
            .iter()
            .zip(&after)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(total / self.eval_set.len() as f64)
    }

    pub fn influence_single(&self, i: usize) -> Result<f64> {
        self.influence_without(&[i])
    }

    pub fn influence_group_sum(&self, group: &[usize]) -> Result<f64> {
        let parts = group
            .par_iter()
            .map(|&i| self.influence_single(i))
            .collect::<Result<Vec<f64>>>()?;
        Ok(parts.iter().sum())
    }
}

fn predictions(model: &impl Predictor, data: &Dataset, idx: &[usize]) -> Vec<f64> {
    idx.iter()
        .map(|&j| model.predict_unchecked(data.row(j)))
        .collect()
}

fn check_indices(idx: &[usize], n: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= n) {
        Some(&index) => Err(FedError::IndexOutOfRange { index, size: n }),
        None => Ok(()),
    }
}

/// Influence of removing instance `i` from the training data.
pub fn influence_single<L: Learner>(
    learner: &L,
    data: &Dataset,
    i: usize,
    eval_set: &[usize],
) -> Result<f64> {
    check_indices(&[i], data.n())?;
    DeletionContext::new(learner, data, eval_set)?.influence_single(i)
}

/// Sum of single-instance influences over `group`.
pub fn influence_group_sum<L: Learner>(
    learner: &L,
    data: &Dataset,
    group: &[usize],
    eval_set: &[usize],
) -> Result<f64> {
    if group.is_empty() {
        return Ok(0.0);
    }
    check_indices(group, data.n())?;
    DeletionContext::new(learner, data, eval_set)?.influence_group_sum(group)
}

/// Scores every party of `partition` with the chosen method. Parties are
/// evaluated in parallel and reported in index order.
pub fn influence_report<L: Learner>(
    learner: &L,
    data: &Dataset,
    partition: &HorizontalPartition,
    eval_set: &[usize],
    method: InfluenceMethod,
    seed: u64,
) -> Result<InfluenceReport> {
    HorizontalPartition::new(partition.parts.clone(), data.n())?;
    for (party, set) in partition.parts.iter().enumerate() {
        let remaining_pos = data.labels().iter().filter(|&&l| l == 1).count()
            - set.iter().filter(|&&i| data.label(i) == 1).count();
        let remaining = data.n() - set.len();
        if remaining_pos == 0 || remaining_pos == remaining {
            return Err(FedError::ClassMonopoly { party });
        }
    }
    let ctx = DeletionContext::new(learner, data, eval_set)?;
    let values = partition
        .parts
        .par_iter()
        .map(|set| match method {
            InfluenceMethod::BatchDeletion => ctx.influence_without(set),
            InfluenceMethod::SummedSingle => ctx.influence_group_sum(set),
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(InfluenceReport {
        method,
        n: ctx.eval_size(),
        parties: partition
            .parts
            .iter()
            .zip(values)
            .enumerate()
            .map(|(id, (set, influence))| PartyInfluence {
                id,
                size: set.len(),
                influence,
            })
            .collect(),
        config_fingerprint: learner.fingerprint(),
        seed,
    })
}

/// One batch deletion per party.
pub fn influence_group_batch<L: Learner>(
    learner: &L,
    data: &Dataset,
    partition: &HorizontalPartition,
    eval_set: &[usize],
    seed: u64,
) -> Result<InfluenceReport> {
    influence_report(
        learner,
        data,
        partition,
        eval_set,
        InfluenceMethod::BatchDeletion,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LeastSquares, ModelConfig};

    /// Rows lie on the plane y = x0, so any three affinely independent rows
    /// pin down the same least-squares fit.
    fn coplanar() -> Dataset {
        let rows = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![0.0, 0.5],
        ];
        Dataset::from_unnamed(&rows, &[0, 1, 0, 1, 0]).unwrap()
    }

    #[test]
    fn redundant_point_has_zero_influence() {
        let ds = coplanar();
        let eval = ds.all_indices();
        let v = influence_single(&LeastSquares, &ds, 4, &eval).unwrap();
        assert!(v < 1e-12, "{v}");
        let g = influence_group_sum(&LeastSquares, &ds, &[3, 4], &eval).unwrap();
        assert!(g < 1e-12, "{g}");
    }

    #[test]
    fn group_sum_edge_cases() {
        let ds = coplanar();
        let eval = ds.all_indices();
        let cfg = ModelConfig::logistic();
        assert_eq!(influence_group_sum(&cfg, &ds, &[], &eval).unwrap(), 0.0);
        let single = influence_single(&cfg, &ds, 2, &eval).unwrap();
        let sum = influence_group_sum(&cfg, &ds, &[2], &eval).unwrap();
        assert_eq!(single.to_bits(), sum.to_bits());
    }

    #[test]
    fn removing_a_duplicate_barely_moves_a_near_interpolating_kernel() {
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        ];
        let ds = Dataset::from_unnamed(&rows, &[0, 1, 1, 0, 0]).unwrap();
        let cfg = ModelConfig {
            l2_strength: 1e-10,
            rbf_gamma: Some(5.0),
            ..ModelConfig::kernel_rbf()
        };
        let v = influence_single(&cfg, &ds, 4, &ds.all_indices()).unwrap();
        assert!(v < 1e-6, "{v}");
    }

    #[test]
    fn errors() {
        let ds = coplanar();
        let eval = ds.all_indices();
        let cfg = ModelConfig::logistic();
        assert!(matches!(
            influence_single(&cfg, &ds, 9, &eval),
            Err(FedError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            influence_single(&cfg, &ds, 0, &[]),
            Err(FedError::EmptySubset)
        ));
        // rows 1 and 3 are the only positives
        let p = HorizontalPartition::new(vec![vec![1, 3], vec![0, 2, 4]], 5).unwrap();
        assert!(matches!(
            influence_group_batch(&cfg, &ds, &p, &eval, 0),
            Err(FedError::ClassMonopoly { party: 0 })
        ));
        let all = HorizontalPartition::new(vec![vec![0, 1, 2, 3, 4]], 5).unwrap();
        assert!(matches!(
            influence_group_batch(&cfg, &ds, &all, &eval, 0),
            Err(FedError::ClassMonopoly { party: 0 })
        ));
    }

    #[test]
    fn empty_party_scores_exactly_zero() {
        let ds = coplanar();
        let p = HorizontalPartition::new(vec![vec![], vec![0, 1, 2, 3, 4]], 5).unwrap();
        let cfg = ModelConfig::kernel_rbf();
        let ctx = DeletionContext::new(&cfg, &ds, &ds.all_indices()).unwrap();
        assert_eq!(ctx.influence_without(&p.parts[0]).unwrap(), 0.0);
    }
}
