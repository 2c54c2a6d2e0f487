//! Shapley attribution for black-box predictors.
//!
//! A coalition `Q` of features is evaluated by keeping `x` on `Q` and filling
//! the remaining features from a background: either a single reference vector
//! (the dataset medians) or an average over sampled background rows.
//! `delta(Q) = E[f | x_Q] - E[f]`, and the Shapley value of feature `i` is the
//! weighted average of `delta(Q + i) - delta(Q)` over `Q` not containing `i`.
//!
//! Exact values enumerate all `2^d` coalitions once (memoized) and combine the
//! table. The Monte-Carlo estimator draws a random permutation (and a random
//! background row) per iteration and averages the marginal contribution of
//! the target feature given its predecessors in the permutation.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{FedError, Result};
use crate::model::Predictor;
use crate::seed;

/// Largest feature count accepted by exact enumeration.
pub const ENUMERATION_CAP: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMode {
    ReferenceVector,
    SampledBackground,
}

/// Where "switched off" features take their values from.
#[derive(Debug, Clone, PartialEq)]
pub enum BackgroundSpec {
    ReferenceVector(Vec<f64>),
    SampledBackground(Vec<Vec<f64>>),
}

impl BackgroundSpec {
    /// The dataset medians as reference vector.
    pub fn medians(data: &Dataset) -> Self {
        BackgroundSpec::ReferenceVector(data.medians().to_vec())
    }

    pub fn sampled(data: &Dataset, samples: &[usize]) -> Result<Self> {
        if samples.is_empty() {
            return Err(FedError::InvalidArgument(
                "sampled background needs at least one instance".into(),
            ));
        }
        let rows = samples
            .iter()
            .map(|&i| {
                if i < data.n() {
                    Ok(data.row(i).to_vec())
                } else {
                    Err(FedError::IndexOutOfRange {
                        index: i,
                        size: data.n(),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BackgroundSpec::SampledBackground(rows))
    }

    pub fn sampled_all(data: &Dataset) -> Result<Self> {
        Self::sampled(data, &data.all_indices())
    }

    pub fn mode(&self) -> BackgroundMode {
        match self {
            BackgroundSpec::ReferenceVector(_) => BackgroundMode::ReferenceVector,
            BackgroundSpec::SampledBackground(_) => BackgroundMode::SampledBackground,
        }
    }

    fn rows(&self) -> &[Vec<f64>] {
        match self {
            BackgroundSpec::ReferenceVector(r) => std::slice::from_ref(r),
            BackgroundSpec::SampledBackground(rows) => rows,
        }
    }

    /// Number of rows an MC iteration draws from; `None` when no draw happens.
    fn draw_count(&self) -> Option<usize> {
        match self {
            BackgroundSpec::ReferenceVector(_) => None,
            BackgroundSpec::SampledBackground(rows) => Some(rows.len()),
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        let rows = self.rows();
        if rows.is_empty() {
            return Err(FedError::InvalidArgument("empty background".into()));
        }
        for r in rows {
            if r.len() != d {
                return Err(FedError::DimensionMismatch {
                    expected: d,
                    found: r.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapleyMethod {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureValue {
    pub feature: usize,
    pub name: String,
    pub phi: f64,
}

/// Per-feature attribution of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyResult {
    pub instance_id: Option<usize>,
    pub prediction: f64,
    /// `E[f]` under the background convention.
    pub baseline: f64,
    pub method: ShapleyMethod,
    pub background: BackgroundMode,
    /// Iterations per feature; 0 for exact.
    #[serde(rename = "M")]
    pub iterations: usize,
    pub seed: Option<u64>,
    pub values: Vec<FeatureValue>,
}

impl ShapleyResult {
    pub fn per_feature(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.phi).collect()
    }

    /// Attaches feature names (defaults are `f0..`).
    pub fn with_names(mut self, names: &[String]) -> Self {
        for v in &mut self.values {
            if let Some(n) = names.get(v.feature) {
                v.name = n.clone();
            }
        }
        self
    }

    pub fn with_instance(mut self, id: usize) -> Self {
        self.instance_id = Some(id);
        self
    }
}

fn check_x(model: &impl Predictor, x: &[f64]) -> Result<()> {
    if x.len() != model.dim() {
        return Err(FedError::DimensionMismatch {
            expected: model.dim(),
            found: x.len(),
        });
    }
    Ok(())
}

/// Writes `x` on `on` features and `z` elsewhere into `buf`.
fn mix_into(buf: &mut [f64], x: &[f64], z: &[f64], on: impl Fn(usize) -> bool) {
    for (j, slot) in buf.iter_mut().enumerate() {
        *slot = if on(j) { x[j] } else { z[j] };
    }
}

/// `E[f | x_Q]` before subtracting the baseline.
fn conditional_mean(
    model: &impl Predictor,
    x: &[f64],
    on: impl Fn(usize) -> bool + Copy,
    bg: &BackgroundSpec,
    buf: &mut [f64],
) -> f64 {
    let rows = bg.rows();
    let total: f64 = rows
        .iter()
        .map(|z| {
            mix_into(buf, x, z, on);
            model.predict_unchecked(buf)
        })
        .sum();
    total / rows.len() as f64
}

fn baseline_of(model: &impl Predictor, bg: &BackgroundSpec) -> f64 {
    let rows = bg.rows();
    rows.iter().map(|z| model.predict_unchecked(z)).sum::<f64>() / rows.len() as f64
}

/// Influence of the feature subset `q`: `E[f | x_q] - E[f]`.
pub fn delta_q(
    model: &impl Predictor,
    x: &[f64],
    q: &[usize],
    background: &BackgroundSpec,
) -> Result<f64> {
    let d = model.dim();
    check_x(model, x)?;
    background.check(d)?;
    let mut in_q = vec![false; d];
    for &j in q {
        if j >= d {
            return Err(FedError::IndexOutOfRange { index: j, size: d });
        }
        in_q[j] = true;
    }
    if q.is_empty() {
        return Ok(0.0);
    }
    let mut buf = vec![0.0; d];
    let cond = conditional_mean(model, x, |j| in_q[j], background, &mut buf);
    Ok(cond - baseline_of(model, background))
}

/// `delta` for every coalition, indexed by bitmask. Entry 0 is exactly 0.
pub fn delta_table(
    model: &impl Predictor,
    x: &[f64],
    background: &BackgroundSpec,
) -> Result<Vec<f64>> {
    let d = model.dim();
    check_x(model, x)?;
    background.check(d)?;
    if d > usize::BITS as usize - 2 {
        return Err(FedError::EnumerationCap {
            d,
            cap: ENUMERATION_CAP,
        });
    }
    let base = baseline_of(model, background);
    let mut table: Vec<f64> = (0..1usize << d)
        .into_par_iter()
        .map_init(
            || vec![0.0; d],
            |buf, mask| conditional_mean(model, x, |j| mask >> j & 1 == 1, background, buf) - base,
        )
        .collect();
    table[0] = 0.0;
    Ok(table)
}

/// `|Q|! (p - |Q| - 1)! / p!` for `|Q| = 0..p-1`.
pub fn coalition_weights(p: usize) -> Vec<f64> {
    // w(q) = 1 / (p * C(p-1, q))
    let mut binom = 1.0f64;
    (0..p)
        .map(|q| {
            if q > 0 {
                binom = binom * (p - q) as f64 / q as f64;
            }
            1.0 / (p as f64 * binom)
        })
        .collect()
}

/// Shapley value of every player from a full coalition table.
pub fn shapley_from_table(table: &[f64], players: usize) -> Vec<f64> {
    debug_assert_eq!(table.len(), 1 << players);
    let w = coalition_weights(players);
    (0..players)
        .map(|i| {
            let bit = 1usize << i;
            (0..table.len())
                .filter(|m| m & bit == 0)
                .map(|m| w[m.count_ones() as usize] * (table[m | bit] - table[m]))
                .sum()
        })
        .collect()
}

fn check_cap(d: usize, cap: usize) -> Result<()> {
    if d > cap {
        Err(FedError::EnumerationCap { d, cap })
    } else {
        Ok(())
    }
}

/// Exact Shapley values by full enumeration, with the default cap.
pub fn shapley_exact(
    model: &impl Predictor,
    x: &[f64],
    background: &BackgroundSpec,
) -> Result<ShapleyResult> {
    shapley_exact_capped(model, x, background, ENUMERATION_CAP)
}

pub fn shapley_exact_capped(
    model: &impl Predictor,
    x: &[f64],
    background: &BackgroundSpec,
    cap: usize,
) -> Result<ShapleyResult> {
    let d = model.dim();
    check_cap(d, cap)?;
    let table = delta_table(model, x, background)?;
    let phi = shapley_from_table(&table, d);
    Ok(ShapleyResult {
        instance_id: None,
        prediction: model.predict(x)?,
        baseline: baseline_of(model, background),
        method: ShapleyMethod::Exact,
        background: background.mode(),
        iterations: 0,
        seed: None,
        values: named(phi),
    })
}

fn named(phi: Vec<f64>) -> Vec<FeatureValue> {
    phi.into_iter()
        .enumerate()
        .map(|(feature, phi)| FeatureValue {
            feature,
            name: format!("f{feature}"),
            phi,
        })
        .collect()
}

/// Permutation-sampling estimate of the Shapley value of `target` among
/// `players`.
///
/// Each iteration optionally draws a background row index in
/// `0..draw_count`, then shuffles the players. Players preceding `target`
/// are switched on; `play(on, row)` is evaluated with and without `target`.
pub fn permutation_estimate(
    players: usize,
    target: usize,
    iterations: usize,
    draw_count: Option<usize>,
    seed: u64,
    mut play: impl FnMut(&[bool], usize) -> Result<f64>,
) -> Result<f64> {
    if iterations == 0 {
        return Err(FedError::InvalidArgument(
            "iteration count must be >= 1".into(),
        ));
    }
    if target >= players {
        return Err(FedError::IndexOutOfRange {
            index: target,
            size: players,
        });
    }
    if draw_count == Some(0) {
        return Err(FedError::InvalidArgument("empty background".into()));
    }
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..players).collect();
    let mut on = vec![false; players];
    let mut total = 0.0;
    for _ in 0..iterations {
        let row = draw_count.map_or(0, |k| rng.gen_range(0..k));
        order.shuffle(&mut rng);
        on.iter_mut().for_each(|o| *o = false);
        for &p in &order {
            if p == target {
                break;
            }
            on[p] = true;
        }
        on[target] = true;
        let with = play(&on, row)?;
        on[target] = false;
        let without = play(&on, row)?;
        total += with - without;
    }
    Ok(total / iterations as f64)
}

/// Monte-Carlo Shapley value of feature `i`, seeded directly by `seed`.
pub fn shapley_mc(
    model: &impl Predictor,
    x: &[f64],
    i: usize,
    iterations: usize,
    background: &BackgroundSpec,
    seed: u64,
) -> Result<f64> {
    let d = model.dim();
    check_x(model, x)?;
    background.check(d)?;
    let rows = background.rows();
    let mut buf = vec![0.0; d];
    permutation_estimate(d, i, iterations, background.draw_count(), seed, |on, r| {
        mix_into(&mut buf, x, &rows[r], |j| on[j]);
        Ok(model.predict_unchecked(&buf))
    })
}

/// MC values for every feature. Feature `j` of instance `instance` uses the
/// stream `derive_seed(root_seed, [instance, j])`.
pub fn shapley_mc_all(
    model: &impl Predictor,
    x: &[f64],
    iterations: usize,
    background: &BackgroundSpec,
    root_seed: u64,
    instance: usize,
) -> Result<ShapleyResult> {
    let d = model.dim();
    check_x(model, x)?;
    background.check(d)?;
    let phi = (0..d)
        .into_par_iter()
        .map(|j| {
            let s = seed::derive_seed(root_seed, &[instance as u64, j as u64]);
            shapley_mc(model, x, j, iterations, background, s)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ShapleyResult {
        instance_id: Some(instance),
        prediction: model.predict(x)?,
        baseline: baseline_of(model, background),
        method: ShapleyMethod::MonteCarlo,
        background: background.mode(),
        iterations,
        seed: Some(root_seed),
        values: named(phi),
    })
}

/// Sum of the member values: the Shapley group value of `group`.
pub fn shapley_group_sum(result: &ShapleyResult, group: &[usize]) -> Result<f64> {
    let d = result.values.len();
    group
        .iter()
        .map(|&j| {
            result
                .values
                .get(j)
                .map(|v| v.phi)
                .ok_or(FedError::IndexOutOfRange { index: j, size: d })
        })
        .sum()
}

/// Shapley group interaction index of `group`: the weighted sum over
/// `Q` disjoint from the group of
/// `delta(Q + P) - sum_{i in P} delta(Q + i) + (|P| - 1) delta(Q)`.
pub fn interaction_index(
    model: &impl Predictor,
    x: &[f64],
    group: &[usize],
    background: &BackgroundSpec,
) -> Result<f64> {
    let d = model.dim();
    check_cap(d, ENUMERATION_CAP)?;
    if group.is_empty() {
        return Err(FedError::InvalidArgument(
            "interaction group must be non-empty".into(),
        ));
    }
    let mut group_mask = 0usize;
    for &j in group {
        if j >= d {
            return Err(FedError::IndexOutOfRange { index: j, size: d });
        }
        group_mask |= 1 << j;
    }
    let table = delta_table(model, x, background)?;
    let size = group_mask.count_ones() as f64;
    let w = coalition_weights(d);
    let members: Vec<usize> = (0..d).filter(|j| group_mask >> j & 1 == 1).collect();
    Ok((0..table.len())
        .filter(|m| m & group_mask == 0)
        .map(|m| {
            let singles: f64 = members.iter().map(|&j| table[m | 1 << j]).sum();
            let delta = table[m | group_mask] - singles + (size - 1.0) * table[m];
            w[m.count_ones() as usize] * delta
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_linear_oracle, train, FnPredictor, ModelConfig};

    fn zero_ref(d: usize) -> BackgroundSpec {
        BackgroundSpec::ReferenceVector(vec![0.0; d])
    }

    #[test]
    fn delta_q_cases() {
        let m = make_linear_oracle(vec![1.0, 2.0], 0.0);
        let bg = zero_ref(2);
        assert_eq!(delta_q(&m, &[1.0, 1.0], &[], &bg).unwrap(), 0.0);
        assert_eq!(delta_q(&m, &[1.0, 1.0], &[0, 1], &bg).unwrap(), 3.0);
        assert_eq!(delta_q(&m, &[1.0, 1.0], &[1], &bg).unwrap(), 2.0);
        assert!(delta_q(&m, &[1.0], &[1], &bg).is_err());
        assert!(delta_q(&m, &[1.0, 1.0], &[2], &bg).is_err());
    }

    #[test]
    fn exact_linear_and_symmetric() {
        let m = make_linear_oracle(vec![1.0, 2.0], 0.0);
        let r = shapley_exact(&m, &[1.0, 1.0], &zero_ref(2)).unwrap();
        assert_eq!(r.per_feature(), vec![1.0, 2.0]);
        let sym = FnPredictor::new(2, |x: &[f64]| x[0] + x[1]);
        let r = shapley_exact(&sym, &[1.0, 1.0], &zero_ref(2)).unwrap();
        assert_eq!(r.values[0].phi, r.values[1].phi);
    }

    fn kernel_toy(d: usize) -> (Dataset, crate::model::TrainedModel) {
        let rows: Vec<Vec<f64>> = (0..16)
            .map(|i| {
                (0..d)
                    .map(|j| ((i * (j + 3) + j) % 7) as f64 / 6.0)
                    .collect()
            })
            .collect();
        let labels: Vec<u8> = rows
            .iter()
            .map(|r| u8::from(r[0] * r.get(1).copied().unwrap_or(1.0) + r[d - 1] > 0.6))
            .collect();
        let ds = Dataset::from_unnamed(&rows, &labels).unwrap();
        let cfg = ModelConfig {
            rbf_gamma: Some(2.0),
            l2_strength: 0.1,
            ..ModelConfig::kernel_rbf()
        };
        let m = train(&ds, &ds.all_indices(), &cfg).unwrap();
        (ds, m)
    }

    /// Average marginal contribution over every ordering, evaluated directly.
    fn permutation_oracle(f: &impl Predictor, x: &[f64], reference: &[f64]) -> Vec<f64> {
        fn perms(items: Vec<usize>) -> Vec<Vec<usize>> {
            if items.len() <= 1 {
                return vec![items];
            }
            let mut out = Vec::new();
            for k in 0..items.len() {
                let mut rest = items.clone();
                let head = rest.remove(k);
                for mut p in perms(rest) {
                    p.insert(0, head);
                    out.push(p);
                }
            }
            out
        }
        let d = x.len();
        let all = perms((0..d).collect());
        let mut phi = vec![0.0; d];
        for order in &all {
            let mut v = reference.to_vec();
            let mut prev = f.predict(&v).unwrap();
            for &j in order {
                v[j] = x[j];
                let cur = f.predict(&v).unwrap();
                phi[j] += cur - prev;
                prev = cur;
            }
        }
        phi.iter().map(|p| p / all.len() as f64).collect()
    }

    #[test]
    fn exact_matches_permutation_enumeration_on_kernel_model() {
        let (ds, m) = kernel_toy(3);
        let bg = BackgroundSpec::medians(&ds);
        for i in [0, 5, 11] {
            let x = ds.row(i);
            let exact = shapley_exact(&m, x, &bg).unwrap().per_feature();
            let oracle = permutation_oracle(&m, x, ds.medians());
            for (a, b) in exact.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn mc_zero_when_background_equals_x() {
        let (ds, m) = kernel_toy(3);
        let x = ds.row(4).to_vec();
        let bg = BackgroundSpec::SampledBackground(vec![x.clone()]);
        assert_eq!(shapley_mc(&m, &x, 1, 50, &bg, 3).unwrap(), 0.0);
    }

    #[test]
    fn mc_linear_close_to_exact_sampled() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i % 5) as f64 / 4.0, (i % 4) as f64 / 3.0])
            .collect();
        let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let ds = Dataset::from_unnamed(&rows, &labels).unwrap();
        let m = make_linear_oracle(vec![1.0, 2.0], 0.0);
        let bg = BackgroundSpec::sampled_all(&ds).unwrap();
        let x = [1.0, 1.0];
        let exact = shapley_exact(&m, &x, &bg).unwrap().per_feature();
        let mc = shapley_mc(&m, &x, 0, 5000, &bg, 17).unwrap();
        assert!((mc - exact[0]).abs() < 0.05, "{mc} vs {}", exact[0]);
        assert_eq!(
            mc.to_bits(),
            shapley_mc(&m, &x, 0, 5000, &bg, 17).unwrap().to_bits()
        );
    }

    #[test]
    fn mc_errors() {
        let m = make_linear_oracle(vec![1.0, 2.0], 0.0);
        let bg = zero_ref(2);
        assert!(shapley_mc(&m, &[1.0, 1.0], 0, 0, &bg, 1).is_err());
        assert!(shapley_mc(&m, &[1.0, 1.0], 2, 10, &bg, 1).is_err());
        let empty = BackgroundSpec::SampledBackground(vec![]);
        assert!(shapley_mc(&m, &[1.0, 1.0], 0, 10, &empty, 1).is_err());
    }

    #[test]
    fn group_sums() {
        let m = make_linear_oracle(vec![1.0, 2.0, 3.0], 0.0);
        let r = shapley_exact(&m, &[1.0, 1.0, 1.0], &zero_ref(3)).unwrap();
        assert_eq!(shapley_group_sum(&r, &[]).unwrap(), 0.0);
        assert_eq!(shapley_group_sum(&r, &[0, 1]).unwrap(), 3.0);
        let all = shapley_group_sum(&r, &[0, 1, 2]).unwrap();
        assert!((all - (r.prediction - r.baseline)).abs() < 1e-12);
        assert!(shapley_group_sum(&r, &[3]).is_err());
    }

    #[test]
    fn interaction_index_cases() {
        let lin = make_linear_oracle(vec![1.0, -2.0, 0.5, 3.0], 0.2);
        let x = [0.3, 0.9, 0.1, 0.7];
        let bg = BackgroundSpec::ReferenceVector(vec![0.5; 4]);
        for p in [vec![0, 1], vec![1, 2, 3], vec![0, 1, 2, 3]] {
            assert!(interaction_index(&lin, &x, &p, &bg).unwrap().abs() < 1e-9);
        }
        let (ds, m) = kernel_toy(3);
        let v = interaction_index(&m, ds.row(2), &[1], &BackgroundSpec::medians(&ds)).unwrap();
        assert!(v.abs() < 1e-15);
        // f = x0 * x1 at (1, 1), reference 0: only Q = {} with weight 1/2,
        // delta = 1 - 0 - 0 + 0.
        let prod = FnPredictor::new(2, |x: &[f64]| x[0] * x[1]);
        let v = interaction_index(&prod, &[1.0, 1.0], &[0, 1], &zero_ref(2)).unwrap();
        assert_eq!(v, 0.5);
        assert!(interaction_index(&prod, &[1.0, 1.0], &[], &zero_ref(2)).is_err());
    }

    #[test]
    fn cap_is_enforced() {
        let m = make_linear_oracle(vec![1.0; 16], 0.0);
        assert!(matches!(
            shapley_exact(&m, &[0.0; 16], &zero_ref(16)),
            Err(FedError::EnumerationCap { d: 16, cap: 15 })
        ));
    }

    #[test]
    fn weights_sum_per_size() {
        // sum over all Q of size q of w(q) is 1/p; total is 1
        for p in 1..10usize {
            let w = coalition_weights(p);
            let mut c = 1.0;
            let mut total = 0.0;
            for (q, wq) in w.iter().enumerate() {
                if q > 0 {
                    c = c * (p - q) as f64 / q as f64;
                }
                total += c * wq;
            }
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
