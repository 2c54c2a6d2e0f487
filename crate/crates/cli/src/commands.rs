//! Subcommand implementations. Each command loads its inputs, calls into the
//! library, writes canonical reports plus SVG views, and finishes with a run
//! manifest listing everything it wrote.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use fedcontrib::data::{
    self, contiguous_groups, horizontal_split, prepare, sample_indices, train_test_split, Dataset,
    DatasetSnapshot, CERVICAL_FEATURES,
};
use fedcontrib::federation::{
    assemble_federation, federated_group_shapley, privacy_audit, read_transcript, write_transcript,
    AuditVerdict, GroupMode, GroupOptions, GroupShapleyReport, TranscriptEntry,
};
use fedcontrib::horizontal::{influence_report, InfluenceMethod, InfluenceReport};
use fedcontrib::model::{accuracy, train, ModelConfig, ModelKind, Predictor, TrainedModel};
use fedcontrib::seed::derive_seed;
use fedcontrib::shapley::{
    shapley_exact, shapley_mc_all, BackgroundMode, BackgroundSpec, ShapleyMethod, ShapleyResult,
};
use fedcontrib::FedError;

use crate::plot::{bar_chart, strip_scatter, StripPoint};
use crate::report::{unix_ms, Cell, ManifestInputs, Outputs};
use crate::{
    BackgroundChoice, Cli, Command, Common, DataFailure, Format, HorizontalMethod, ModelArgs,
    ModelChoice, ShapleyChoice, UsageError, VerticalMode,
};

/// Seed stream for the instance tokens of a simulated federation.
const TOKEN_STREAM: u64 = 0x746f_6b65_6e73;
/// Seed stream for instance subsampling.
const SAMPLE_STREAM: u64 = 0x7361_6d70_6c65;

pub fn run(cli: &Cli) -> Result<()> {
    let started = unix_ms();
    let c = &cli.common;
    match &cli.command {
        Command::Train {
            model_args,
            train_fraction,
        } => cmd_train(c, model_args, *train_fraction, started),
        Command::Horizontal {
            model_args,
            parties,
            method,
        } => cmd_horizontal(c, model_args, *parties, *method, started),
        Command::Shapley {
            model_file,
            instance,
            method,
            iterations,
            background,
            sample,
        } => cmd_shapley(
            c,
            &ShapleyArgs {
                model_file: model_file.clone(),
                instance: instance.clone(),
                method: *method,
                iterations: *iterations,
                background: *background,
                sample: *sample,
            },
            started,
        ),
        Command::Vertical {
            model_file,
            groups,
            iterations,
            instances,
            mode,
            with_others,
            transcript,
        } => cmd_vertical(
            c,
            &VerticalArgs {
                model_file: model_file.clone(),
                groups: *groups,
                iterations: *iterations,
                instances: instances.clone(),
                mode: *mode,
                with_others: *with_others,
                transcript: transcript.clone(),
            },
            started,
        ),
        Command::Audit { transcript } => cmd_audit(c, transcript, started),
    }
}

fn data_path(c: &Common) -> Result<&Path> {
    c.data
        .as_deref()
        .ok_or_else(|| UsageError("--data is required for this command".into()).into())
}

/// Loads and prepares the dataset named by the common flags.
pub fn load_dataset(c: &Common) -> Result<Dataset> {
    let path = data_path(c)?;
    let table = match &c.features {
        Some(cols) => {
            let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
            data::load_csv_columns(path, &c.target, Some(&cols))?
        }
        None => match data::load_csv_columns(path, &c.target, Some(&CERVICAL_FEATURES)) {
            Err(FedError::MissingColumn(col)) if col != c.target => {
                data::load_csv(path, &c.target)?
            }
            other => other?,
        },
    };
    Ok(prepare(&table)?)
}

fn model_config(c: &Common, m: &ModelArgs) -> ModelConfig {
    let base = match c.model {
        ModelChoice::Logistic => ModelConfig::logistic(),
        ModelChoice::KernelRbf => ModelConfig::kernel_rbf(),
    };
    ModelConfig {
        l2_strength: m.l2,
        rbf_gamma: m.gamma,
        max_iterations: m.max_iterations,
        seed: c.seed,
        ..base
    }
}

fn common_json(c: &Common) -> serde_json::Value {
    json!({
        "data": c.data.as_ref().map(|p| p.display().to_string()),
        "target": c.target,
        "features": c.features,
        "seed": c.seed,
        "model": format!("{:?}", c.model),
        "format": format!("{:?}", c.format),
    })
}

fn manifest(
    c: &Common,
    command: &'static str,
    extra: serde_json::Value,
    started: u128,
) -> ManifestInputs {
    let mut arguments = common_json(c);
    if let (Some(obj), serde_json::Value::Object(more)) = (arguments.as_object_mut(), extra) {
        obj.extend(more);
    }
    ManifestInputs {
        command,
        dataset: c.data.as_ref().map(|p| p.display().to_string()),
        seed: c.seed,
        arguments,
        started_unix_ms: started,
    }
}

fn load_model(c: &Common, file: &Option<PathBuf>, ds: &Dataset) -> Result<(TrainedModel, PathBuf)> {
    let path = file.clone().unwrap_or_else(|| c.out_dir.join("model.json"));
    let text = fs::read_to_string(&path).map_err(|source| FedError::Io {
        path: path.clone(),
        source,
    })?;
    let model =
        TrainedModel::from_json(&text).with_context(|| format!("loading {}", path.display()))?;
    if model.dim() != ds.d() {
        return Err(FedError::DimensionMismatch {
            expected: ds.d(),
            found: model.dim(),
        })
        .with_context(|| {
            format!(
                "model {} does not fit the selected features",
                path.display()
            )
        });
    }
    Ok((model, path))
}

// ---------------------------------------------------------------- train

#[derive(Serialize)]
struct TrainMetrics {
    model: ModelKind,
    config: ModelConfig,
    fingerprint: String,
    seed: u64,
    train_fraction: f64,
    n: usize,
    d: usize,
    n_train: usize,
    n_test: usize,
    train_accuracy: f64,
    test_accuracy: Option<f64>,
    /// Accuracy of always predicting the majority class of the test set.
    test_majority_rate: Option<f64>,
    dataset: DatasetSnapshot,
}

fn cmd_train(c: &Common, m: &ModelArgs, train_fraction: f64, started: u128) -> Result<()> {
    let ds = load_dataset(c)?;
    let cfg = model_config(c, m);
    let (train_idx, test_idx) = train_test_split(ds.n(), train_fraction, c.seed)?;
    let model = train(&ds, &train_idx, &cfg)?;
    let train_accuracy = accuracy(&model, &ds, &train_idx)?;
    let (test_accuracy, test_majority_rate) = if test_idx.is_empty() {
        (None, None)
    } else {
        let pos = test_idx.iter().filter(|&&i| ds.label(i) == 1).count();
        let majority = pos.max(test_idx.len() - pos) as f64 / test_idx.len() as f64;
        (Some(accuracy(&model, &ds, &test_idx)?), Some(majority))
    };
    let metrics = TrainMetrics {
        model: model.kind(),
        config: model.config().clone(),
        fingerprint: model.fingerprint().to_string(),
        seed: c.seed,
        train_fraction,
        n: ds.n(),
        d: ds.d(),
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        train_accuracy,
        test_accuracy,
        test_majority_rate,
        dataset: ds.snapshot(),
    };

    let mut out = Outputs::new(&c.out_dir)?;
    out.text("model.json", &model.to_json()?)?;
    out.json("metrics.json", &metrics)?;
    if c.format == Format::Csv {
        let mut rows = vec![
            vec![
                Cell::Text("train_accuracy".into()),
                Cell::Float(train_accuracy),
            ],
            vec![Cell::Text("n_train".into()), Cell::Int(train_idx.len())],
            vec![Cell::Text("n_test".into()), Cell::Int(test_idx.len())],
        ];
        if let Some(a) = test_accuracy {
            rows.push(vec![Cell::Text("test_accuracy".into()), Cell::Float(a)]);
        }
        out.csv("metrics.csv", &["metric", "value"], &rows)?;
    }
    out.finish(manifest(
        c,
        "train",
        json!({ "l2": m.l2, "gamma": m.gamma, "max_iterations": m.max_iterations, "train_fraction": train_fraction }),
        started,
    ))?;
    match test_accuracy {
        Some(a) => println!(
            "trained {:?} on {} rows; train accuracy {:.4}, test accuracy {:.4} on {} rows",
            model.kind(),
            train_idx.len(),
            train_accuracy,
            a,
            test_idx.len()
        ),
        None => println!(
            "trained {:?} on {} rows; train accuracy {:.4}",
            model.kind(),
            train_idx.len(),
            train_accuracy
        ),
    }
    Ok(())
}

// ---------------------------------------------------------------- horizontal

#[derive(Serialize)]
struct HorizontalReport {
    #[serde(flatten)]
    influence: InfluenceReport,
    model: ModelConfig,
    /// Row indices held by each party.
    partition: Vec<Vec<usize>>,
}

fn cmd_horizontal(
    c: &Common,
    m: &ModelArgs,
    k: usize,
    method: HorizontalMethod,
    started: u128,
) -> Result<()> {
    let ds = load_dataset(c)?;
    let cfg = model_config(c, m);
    let partition = horizontal_split(&ds, k, c.seed)?;
    let method = match method {
        HorizontalMethod::Batch => InfluenceMethod::BatchDeletion,
        HorizontalMethod::Summed => InfluenceMethod::SummedSingle,
    };
    let influence = influence_report(&cfg, &ds, &partition, &ds.all_indices(), method, c.seed)?;
    let report = HorizontalReport {
        influence,
        model: cfg,
        partition: partition.parts,
    };

    let mut out = Outputs::new(&c.out_dir)?;
    out.json("influence.json", &report)?;
    let bars: Vec<(String, f64)> = report
        .influence
        .parties
        .iter()
        .map(|p| (format!("party {} (n={})", p.id, p.size), p.influence))
        .collect();
    out.text(
        "influence.svg",
        &bar_chart(
            "Deletion influence per party",
            "mean |prediction change|",
            &bars,
        ),
    )?;
    if c.format == Format::Csv {
        let rows: Vec<Vec<Cell>> = report
            .influence
            .parties
            .iter()
            .map(|p| vec![Cell::Int(p.id), Cell::Int(p.size), Cell::Float(p.influence)])
            .collect();
        out.csv("influence.csv", &["party", "size", "influence"], &rows)?;
    }
    out.finish(manifest(
        c,
        "horizontal",
        json!({ "l2": m.l2, "gamma": m.gamma, "max_iterations": m.max_iterations, "parties": k, "method": method }),
        started,
    ))?;
    for p in &report.influence.parties {
        println!(
            "party {} ({} rows): influence {:.6}",
            p.id, p.size, p.influence
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- shapley

struct ShapleyArgs {
    model_file: Option<PathBuf>,
    instance: String,
    method: ShapleyChoice,
    iterations: usize,
    background: Option<BackgroundChoice>,
    sample: Option<usize>,
}

/// Parses `all`, `7` or `1,4,9`; the flag says whether a single id was given.
fn parse_instances(
    spec: &str,
    n: usize,
    sample: Option<usize>,
    seed: u64,
) -> Result<(Vec<usize>, bool)> {
    if spec.trim() == "all" {
        let ids = match sample {
            Some(k) => sample_indices(n, k, derive_seed(seed, &[SAMPLE_STREAM]))?,
            None => (0..n).collect(),
        };
        return Ok((ids, false));
    }
    let ids = spec
        .split(',')
        .map(|s| {
            s.trim().parse::<usize>().map_err(|_| {
                UsageError(format!("instance must be `all` or row indices, got {s:?}"))
            })
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if ids.is_empty() {
        return Err(UsageError("no instance given".into()).into());
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
        return Err(FedError::UnknownInstance)
            .with_context(|| format!("instance {bad} (dataset has {n} rows)"));
    }
    let single = ids.len() == 1;
    Ok((ids, single))
}

#[derive(Serialize)]
struct ScatterRow {
    instance_id: usize,
    feature: usize,
    name: String,
    /// Normalized feature value of the instance.
    value: f64,
    phi: f64,
}

#[derive(Serialize)]
struct MeanAbs {
    feature: usize,
    name: String,
    mean_abs_phi: f64,
}

#[derive(Serialize)]
struct ShapleyBatch {
    method: ShapleyMethod,
    background: BackgroundMode,
    #[serde(rename = "M")]
    iterations: usize,
    seed: u64,
    instances: usize,
    results: Vec<ShapleyResult>,
    scatter: Vec<ScatterRow>,
    mean_abs: Vec<MeanAbs>,
}

fn cmd_shapley(c: &Common, a: &ShapleyArgs, started: u128) -> Result<()> {
    let ds = load_dataset(c)?;
    let (model, model_path) = load_model(c, &a.model_file, &ds)?;
    let model_fingerprint = model.fingerprint().to_string();
    let (ids, single) = parse_instances(&a.instance, ds.n(), a.sample, c.seed)?;
    if a.method == ShapleyChoice::Mc && a.iterations == 0 {
        return Err(UsageError("--m must be positive".into()).into());
    }
    let background = a.background.unwrap_or(match a.method {
        ShapleyChoice::Exact => BackgroundChoice::Reference,
        ShapleyChoice::Mc => BackgroundChoice::Sampled,
    });
    let bg = match background {
        BackgroundChoice::Reference => BackgroundSpec::medians(&ds),
        BackgroundChoice::Sampled => BackgroundSpec::sampled_all(&ds)?,
    };
    let names = ds.feature_names().to_vec();
    let explain = |i: usize| -> fedcontrib::Result<ShapleyResult> {
        let r = match a.method {
            ShapleyChoice::Exact => shapley_exact(&model, ds.row(i), &bg)?,
            ShapleyChoice::Mc => shapley_mc_all(&model, ds.row(i), a.iterations, &bg, c.seed, i)?,
        };
        Ok(r.with_names(&names).with_instance(i))
    };

    let mut out = Outputs::new(&c.out_dir)?;
    if single {
        let i = ids[0];
        let result = explain(i)?;
        out.json(&format!("shapley-{i}.json"), &result)?;
        let bars: Vec<(String, f64)> = result
            .values
            .iter()
            .map(|v| (v.name.clone(), v.phi))
            .collect();
        out.text(
            &format!("shapley-{i}.svg"),
            &bar_chart(&format!("Shapley values, instance {i}"), "phi", &bars),
        )?;
        if c.format == Format::Csv {
            let rows: Vec<Vec<Cell>> = result
                .values
                .iter()
                .map(|v| {
                    vec![
                        Cell::Int(v.feature),
                        Cell::Text(v.name.clone()),
                        Cell::Float(v.phi),
                    ]
                })
                .collect();
            out.csv(
                &format!("shapley-{i}.csv"),
                &["feature", "name", "phi"],
                &rows,
            )?;
        }
        let sum: f64 = result.per_feature().iter().sum();
        println!(
            "instance {i}: prediction {:.6}, baseline {:.6}, sum of phi {:.6}",
            result.prediction, result.baseline, sum
        );
    } else {
        let results = ids
            .par_iter()
            .map(|&i| explain(i))
            .collect::<fedcontrib::Result<Vec<_>>>()?;
        let ds = &ds;
        let scatter: Vec<ScatterRow> = results
            .iter()
            .flat_map(|r| {
                let i = r.instance_id.unwrap_or(0);
                r.values.iter().map(move |v| ScatterRow {
                    instance_id: i,
                    feature: v.feature,
                    name: v.name.clone(),
                    value: ds.row(i)[v.feature],
                    phi: v.phi,
                })
            })
            .collect();
        let mean_abs: Vec<MeanAbs> = (0..ds.d())
            .map(|j| MeanAbs {
                feature: j,
                name: names[j].clone(),
                mean_abs_phi: results.iter().map(|r| r.values[j].phi.abs()).sum::<f64>()
                    / results.len() as f64,
            })
            .collect();
        let batch = ShapleyBatch {
            method: results[0].method,
            background: bg.mode(),
            iterations: results[0].iterations,
            seed: c.seed,
            instances: results.len(),
            results,
            scatter,
            mean_abs,
        };
        out.json("shapley-batch.json", &batch)?;
        let points: Vec<StripPoint> = batch
            .scatter
            .iter()
            .map(|s| StripPoint {
                row: s.feature,
                x: s.phi,
                shade: s.value,
                jitter_key: s.instance_id,
            })
            .collect();
        out.text(
            "shapley-scatter.svg",
            &strip_scatter(
                "Shapley values per prediction",
                "phi (colour: feature value)",
                &names,
                &points,
            ),
        )?;
        let bars: Vec<(String, f64)> = batch
            .mean_abs
            .iter()
            .map(|m| (m.name.clone(), m.mean_abs_phi))
            .collect();
        out.text(
            "shapley-mean-abs.svg",
            &bar_chart("Mean |Shapley value|", "mean |phi|", &bars),
        )?;
        if c.format == Format::Csv {
            let rows: Vec<Vec<Cell>> = batch
                .scatter
                .iter()
                .map(|s| {
                    vec![
                        Cell::Int(s.instance_id),
                        Cell::Int(s.feature),
                        Cell::Text(s.name.clone()),
                        Cell::Float(s.value),
                        Cell::Float(s.phi),
                    ]
                })
                .collect();
            out.csv(
                "shapley-scatter.csv",
                &["instance_id", "feature", "name", "value", "phi"],
                &rows,
            )?;
        }
        println!(
            "explained {} instances ({} scatter rows)",
            batch.instances,
            batch.scatter.len()
        );
    }
    out.finish(manifest(
        c,
        "shapley",
        json!({
            "model_file": model_path.display().to_string(),
            "model_fingerprint": model_fingerprint,
            "instance": a.instance,
            "method": format!("{:?}", a.method),
            "M": a.iterations,
            "background": format!("{background:?}"),
            "sample": a.sample,
        }),
        started,
    ))?;
    Ok(())
}

// ---------------------------------------------------------------- vertical

struct VerticalArgs {
    model_file: Option<PathBuf>,
    groups: usize,
    iterations: usize,
    instances: String,
    mode: VerticalMode,
    with_others: bool,
    transcript: Option<PathBuf>,
}

#[derive(Serialize)]
struct PartyGroup {
    party: usize,
    features: Vec<usize>,
    names: Vec<String>,
}

#[derive(Serialize)]
struct PartySummary {
    party: usize,
    mean_phi: f64,
    mean_abs_phi: f64,
}

#[derive(Serialize)]
struct VerticalReport {
    mode: GroupMode,
    #[serde(rename = "M")]
    iterations: usize,
    seed: u64,
    groups: Vec<PartyGroup>,
    instances: Vec<usize>,
    summary: Vec<PartySummary>,
    reports: Vec<GroupShapleyReport>,
    /// Audit of the captured transcript, when one was requested.
    audit: Option<AuditVerdict>,
}

#[derive(Serialize)]
struct InstanceValue {
    instance_id: usize,
    phi: f64,
    prediction: f64,
    baseline: f64,
}

#[derive(Serialize)]
struct PartyFile {
    party: usize,
    features: Vec<usize>,
    names: Vec<String>,
    mode: GroupMode,
    #[serde(rename = "M")]
    iterations: usize,
    seed: u64,
    mean_phi: f64,
    mean_abs_phi: f64,
    values: Vec<InstanceValue>,
    /// Mean |phi| of the other individual features, when estimated.
    others_mean_abs: Vec<MeanAbs>,
}

fn cmd_vertical(c: &Common, a: &VerticalArgs, started: u128) -> Result<()> {
    let ds = load_dataset(c)?;
    let (model, model_path) = load_model(c, &a.model_file, &ds)?;
    let model_fingerprint = model.fingerprint().to_string();
    if a.iterations == 0 {
        return Err(UsageError("--m must be positive".into()).into());
    }
    let partition = contiguous_groups(ds.d(), a.groups)?;
    let mut fed = assemble_federation(&ds, &partition, derive_seed(c.seed, &[TOKEN_STREAM]))?;
    fed.register_model(model)?;
    let ids = if a.instances.trim() == "all" {
        ds.all_indices()
    } else {
        let k: usize = a.instances.trim().parse().map_err(|_| {
            UsageError(format!(
                "--instances must be `all` or a count, got {:?}",
                a.instances
            ))
        })?;
        sample_indices(ds.n(), k, derive_seed(c.seed, &[SAMPLE_STREAM]))?
    };
    if ids.is_empty() {
        return Err(UsageError("no instances selected".into()).into());
    }
    let mode = match a.mode {
        VerticalMode::PerParty => GroupMode::PerParty,
        VerticalMode::AllAtOnce => GroupMode::AllAtOnce,
    };
    let opts = GroupOptions {
        iterations: a.iterations,
        root_seed: c.seed,
        mode,
        include_others: a.with_others,
    };
    let names = ds.feature_names().to_vec();
    let want_transcript = a.transcript.is_some();
    let runs = ids
        .par_iter()
        .enumerate()
        .map(|(k, &i)| {
            let capture = want_transcript && k == 0;
            let (mut r, t) = federated_group_shapley(&fed, i, opts, capture)?;
            for p in &mut r.parties {
                for o in &mut p.others {
                    o.name = names[o.feature].clone();
                }
            }
            Ok((r, capture.then_some(t)))
        })
        .collect::<fedcontrib::Result<Vec<(GroupShapleyReport, Option<Vec<TranscriptEntry>>)>>>()?;
    let mut transcript: Option<Vec<TranscriptEntry>> = None;
    let mut reports = Vec::with_capacity(runs.len());
    for (r, t) in runs {
        if t.is_some() {
            transcript = t;
        }
        reports.push(r);
    }

    let mut out = Outputs::new(&c.out_dir)?;
    let audit = match (&a.transcript, &transcript) {
        (Some(path), Some(t)) => {
            write_transcript_file(path, t)?;
            out.record(&path.display().to_string());
            Some(privacy_audit(t))
        }
        _ => None,
    };

    let count = reports.len() as f64;
    let groups: Vec<PartyGroup> = partition
        .groups
        .iter()
        .enumerate()
        .map(|(p, g)| PartyGroup {
            party: p,
            features: g.clone(),
            names: g.iter().map(|&j| names[j].clone()).collect(),
        })
        .collect();
    let phi_of = |p: usize| reports.iter().map(move |r| r.parties[p].phi);
    let summary: Vec<PartySummary> = (0..groups.len())
        .map(|p| PartySummary {
            party: p,
            mean_phi: phi_of(p).sum::<f64>() / count,
            mean_abs_phi: phi_of(p).map(f64::abs).sum::<f64>() / count,
        })
        .collect();

    for (g, s) in groups.iter().zip(&summary) {
        let mut others_mean_abs: Vec<MeanAbs> = Vec::new();
        if let Some(first) = reports.first() {
            for (u, o) in first.parties[g.party].others.iter().enumerate() {
                others_mean_abs.push(MeanAbs {
                    feature: o.feature,
                    name: o.name.clone(),
                    mean_abs_phi: reports
                        .iter()
                        .map(|r| r.parties[g.party].others[u].phi.abs())
                        .sum::<f64>()
                        / count,
                });
            }
        }
        let file = PartyFile {
            party: g.party,
            features: g.features.clone(),
            names: g.names.clone(),
            mode,
            iterations: a.iterations,
            seed: c.seed,
            mean_phi: s.mean_phi,
            mean_abs_phi: s.mean_abs_phi,
            values: reports
                .iter()
                .map(|r| InstanceValue {
                    instance_id: r.instance_id,
                    phi: r.parties[g.party].phi,
                    prediction: r.prediction,
                    baseline: r.baseline,
                })
                .collect(),
            others_mean_abs,
        };
        out.json(&format!("vertical-party-{}.json", g.party), &file)?;

        // federated feature first, then the individual features
        let fed_label = format!("party {} [{}]", g.party, g.names.join(", "));
        let mut rows = vec![fed_label];
        let mut points: Vec<StripPoint> = file
            .values
            .iter()
            .map(|v| StripPoint {
                row: 0,
                x: v.phi,
                shade: v.prediction,
                jitter_key: v.instance_id,
            })
            .collect();
        for (u, o) in file.others_mean_abs.iter().enumerate() {
            rows.push(o.name.clone());
            points.extend(reports.iter().map(|r| StripPoint {
                row: u + 1,
                x: r.parties[g.party].others[u].phi,
                shade: ds.row(r.instance_id)[o.feature],
                jitter_key: r.instance_id,
            }));
        }
        out.text(
            &format!("vertical-party-{}.svg", g.party),
            &strip_scatter(
                &format!("Federated feature of party {}", g.party),
                "phi",
                &rows,
                &points,
            ),
        )?;
    }

    let report = VerticalReport {
        mode,
        iterations: a.iterations,
        seed: c.seed,
        groups,
        instances: ids,
        summary,
        reports,
        audit,
    };
    out.json("vertical.json", &report)?;
    let bars: Vec<(String, f64)> = report
        .summary
        .iter()
        .map(|s| (format!("party {}", s.party), s.mean_abs_phi))
        .collect();
    out.text(
        "vertical.svg",
        &bar_chart(
            "Mean |federated Shapley value| per party",
            "mean |phi|",
            &bars,
        ),
    )?;
    if c.format == Format::Csv {
        let rows: Vec<Vec<Cell>> = report
            .reports
            .iter()
            .flat_map(|r| {
                r.parties.iter().map(move |p| {
                    vec![
                        Cell::Int(r.instance_id),
                        Cell::Int(p.party),
                        Cell::Float(p.phi),
                    ]
                })
            })
            .collect();
        out.csv("vertical.csv", &["instance_id", "party", "phi"], &rows)?;
    }
    out.finish(manifest(
        c,
        "vertical",
        json!({
            "model_file": model_path.display().to_string(),
            "model_fingerprint": model_fingerprint,
            "groups": a.groups,
            "M": a.iterations,
            "instances": a.instances,
            "mode": mode,
            "with_others": a.with_others,
            "transcript": a.transcript.as_ref().map(|p| p.display().to_string()),
        }),
        started,
    ))?;
    for s in &report.summary {
        println!(
            "party {}: mean phi {:.6}, mean |phi| {:.6} over {} instances",
            s.party,
            s.mean_phi,
            s.mean_abs_phi,
            report.instances.len()
        );
    }
    if let Some(v) = &report.audit {
        println!(
            "privacy audit of the captured transcript: {} ({} messages)",
            if v.pass { "pass" } else { "FAIL" },
            v.inspected
        );
    }
    Ok(())
}

fn write_transcript_file(path: &Path, t: &[TranscriptEntry]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    write_transcript(t, &mut w)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- audit

fn cmd_audit(c: &Common, transcript: &Path, started: u128) -> Result<()> {
    let file = fs::File::open(transcript).map_err(|source| FedError::Io {
        path: transcript.to_path_buf(),
        source,
    })?;
    let entries = read_transcript(BufReader::new(file))?;
    let verdict = privacy_audit(&entries);
    let mut out = Outputs::new(&c.out_dir)?;
    out.json("audit.json", &verdict)?;
    out.finish(manifest(
        c,
        "audit",
        json!({ "transcript": transcript.display().to_string() }),
        started,
    ))?;
    if verdict.pass {
        println!("audit passed: {} messages inspected", verdict.inspected);
        Ok(())
    } else {
        Err(DataFailure(format!(
            "audit failed: {} of {} messages leak data to or from the evaluator (first at index {})",
            verdict.offending.len(),
            verdict.inspected,
            verdict.offending[0]
        ))
        .into())
    }
}
