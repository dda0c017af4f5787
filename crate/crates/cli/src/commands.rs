use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use prediction_gap::data::{self, Dataset, StandardizationParams};
use prediction_gap::exact::pg2_exact;
use prediction_gap::metrics::{mean_pgi2, nmae, randomization_rmse, RmseReference};
use prediction_gap::model::xgboost::{parse_dump, XgboostImportOptions};
use prediction_gap::ranking::{
    format_ranking, greedy_pg2_ranking, load_attributions, load_rankings, ranking_from_attribution,
    topk_agreement, PrefixMatch,
};
use prediction_gap::sampling::{pg2_sampled, pg_abs_sampled};
use prediction_gap::{
    Error as CoreError, EstimatorConfig, ModelFormat, PerturbationSpec, Ranking, TreeEnsemble,
};
use rayon::prelude::*;

use crate::args::*;
use crate::error::{CliError, Result};
use crate::format::{round9, sig9};
use crate::report::{BenchmarkEntry, BenchmarkReport, REPORT_VERSION};

struct LoadedData {
    dataset: Dataset,
    labels: Option<Vec<f64>>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(out: &mut String, text: &str) -> Result<()> {
    out.push_str(text);
    Ok(())
}

fn load_model(path: &Path, format: ModelFormatArg) -> Result<TreeEnsemble> {
    let format = match format {
        ModelFormatArg::Canonical => ModelFormat::Canonical,
        ModelFormatArg::Xgboost => ModelFormat::XgboostDump,
    };
    Ok(TreeEnsemble::load(path, format)?)
}

/// Widens the model to the data dimensionality; a model reading features the
/// data does not have is an error.
fn fit_model_to(ensemble: TreeEnsemble, d: usize) -> Result<TreeEnsemble> {
    if d < ensemble.num_features() {
        return Err(CoreError::DimensionMismatch {
            expected: ensemble.num_features(),
            actual: d,
        }
        .into());
    }
    Ok(ensemble.with_num_features(d)?)
}

fn load_data(args: &DataArgs) -> Result<Option<LoadedData>> {
    let Some(path) = &args.data else {
        if args.standardization.is_some()
            || args.fit_standardization.is_some()
            || args.train_ratio.is_some()
        {
            return Err(CliError::usage("data options given without --data"));
        }
        return Ok(None);
    };
    let loaded = data::load_csv(path, args.label_column.as_deref(), &args.exclude_columns)?;
    let (train, mut dataset, labels) = match args.train_ratio {
        Some(ratio) => {
            let (train_idx, test_idx) =
                data::split_indices(loaded.dataset.len(), ratio, args.split_seed)?;
            let labels = loaded
                .labels
                .map(|l| test_idx.iter().map(|&i| l[i]).collect());
            (
                loaded.dataset.select(&train_idx),
                loaded.dataset.select(&test_idx),
                labels,
            )
        }
        None => (loaded.dataset.clone(), loaded.dataset, loaded.labels),
    };
    if let Some(sidecar) = &args.standardization {
        let params = StandardizationParams::load(sidecar)?;
        dataset = data::standardize(&dataset, Some(&params))?.0;
    } else if let Some(sidecar) = &args.fit_standardization {
        let params = StandardizationParams::fit(&train)?;
        params.save(sidecar)?;
        dataset = data::standardize(&dataset, Some(&params))?.0;
    }
    if dataset.is_empty() {
        return Err(CoreError::validation("the data set has no rows").into());
    }
    Ok(Some(LoadedData { dataset, labels }))
}

fn require_data(args: &DataArgs) -> Result<LoadedData> {
    load_data(args)?.ok_or_else(|| CliError::usage("--data is required"))
}

fn perturbation(sigma: Option<f64>, file: Option<&Path>) -> Result<Option<PerturbationSpec>> {
    match (sigma, file) {
        (Some(s), _) => Ok(Some(PerturbationSpec::gaussian(s)?)),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| CoreError::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            Ok(Some(PerturbationSpec::from_json(&text).map_err(
                |e| match e {
                    CoreError::Parse { message, .. } => CoreError::Parse {
                        location: path.display().to_string(),
                        message,
                    },
                    other => other,
                },
            )?))
        }
        (None, None) => Ok(None),
    }
}

fn require_perturbation(args: &PerturbationArgs) -> Result<PerturbationSpec> {
    perturbation(args.sigma, args.perturbation.as_deref())?
        .ok_or_else(|| CliError::usage("one of --sigma or --perturbation is required"))
}

/// Feature indices, or column names when the data provides them.
fn parse_features(raw: &[String], names: Option<&[String]>) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for token in raw.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        let q = match token.parse::<usize>() {
            Ok(q) => q,
            Err(_) => names
                .and_then(|n| n.iter().position(|name| name == token))
                .ok_or_else(|| CliError::usage(format!("unknown feature {token:?}")))?,
        };
        out.push(q);
    }
    Ok(out)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0) as usize)
        .build()?;
    let mut text = String::new();
    pool.install(|| match &cli.command {
        Command::Pg2(a) => cmd_pg2(a, &mut text),
        Command::Rank(a) => cmd_rank(a, &mut text),
        Command::Benchmark(a) => cmd_benchmark(a, &mut text),
        Command::Eval(a) => cmd_eval(a, &mut text),
        Command::ConvertModel(a) => cmd_convert(a, &mut text),
    })?;
    out.write_all(text.as_bytes())
        .map_err(|source| CliError::Output {
            path: "<stdout>".into(),
            source,
        })
}

fn cmd_pg2(args: &Pg2Args, out: &mut String) -> Result<()> {
    let mut ensemble = load_model(&args.model.model, args.model.model_format)?;
    let data = load_data(&args.data)?;
    let x: Vec<f64> = match (&args.point, args.point_index, &data) {
        (Some(p), _, _) => p.clone(),
        (None, Some(i), Some(d)) => {
            if i >= d.dataset.len() {
                return Err(CoreError::validation(format!(
                    "point index {i} out of range for {} rows",
                    d.dataset.len()
                ))
                .into());
            }
            d.dataset.instance(i).to_vec()
        }
        (None, Some(_), None) => return Err(CliError::usage("--point-index needs --data")),
        (None, None, _) => {
            return Err(CliError::usage(
                "one of --point or --point-index is required",
            ))
        }
    };
    if let Some(d) = &data {
        ensemble = fit_model_to(ensemble, d.dataset.num_features())?;
    } else if x.len() > ensemble.num_features() {
        ensemble = fit_model_to(ensemble, x.len())?;
    }
    let names = data.as_ref().map(|d| d.dataset.feature_names());
    let features = parse_features(&args.features, names)?;
    let spec = require_perturbation(&args.perturbation)?;

    let value = match args.method {
        Method::Exact if args.absolute => {
            return Err(CliError::usage(
                "--absolute is only available with --method mc or qmc",
            ))
        }
        Method::Exact => pg2_exact(&ensemble, &x, &features, &spec)?,
        Method::Mc | Method::Qmc => {
            let config = if args.method == Method::Mc {
                EstimatorConfig::mc(args.iterations, args.seed)
            } else {
                EstimatorConfig::qmc(args.iterations)
            };
            if args.absolute {
                pg_abs_sampled(&ensemble, &x, &features, &spec, &config)?
            } else {
                pg2_sampled(&ensemble, &x, &features, &spec, &config)?
            }
        }
    };
    emit(out, &format!("{}\n", sig9(value)))
}

fn greedy_rankings(
    ensemble: &TreeEnsemble,
    dataset: &Dataset,
    spec: &PerturbationSpec,
) -> Result<Vec<Ranking>> {
    Ok(dataset
        .instances()
        .par_iter()
        .map(|x| greedy_pg2_ranking(ensemble, x, spec))
        .collect::<prediction_gap::Result<Vec<_>>>()?)
}

fn attribution_rankings(path: &Path) -> Result<Vec<Ranking>> {
    Ok(load_attributions(path)?
        .iter()
        .map(ranking_from_attribution)
        .collect())
}

fn cmd_rank(args: &RankArgs, out: &mut String) -> Result<()> {
    let rankings = match args.method {
        RankMethod::FromAttribution => {
            let path = args
                .attributions
                .as_deref()
                .ok_or_else(|| CliError::usage("--method from-attribution needs --attributions"))?;
            let rankings = attribution_rankings(path)?;
            if let Some(data) = load_data(&args.data)? {
                check_aligned(rankings.len(), data.dataset.len())?;
            }
            rankings
        }
        RankMethod::GreedyPg2 => {
            let model = args
                .model
                .as_deref()
                .ok_or_else(|| CliError::usage("--method greedy-pg2 needs --model"))?;
            let data = require_data(&args.data)?;
            let ensemble = fit_model_to(
                load_model(model, args.model_format)?,
                data.dataset.num_features(),
            )?;
            let spec = require_perturbation(&args.perturbation)?;
            greedy_rankings(&ensemble, &data.dataset, &spec)?
        }
    };
    let mut text = String::new();
    for r in &rankings {
        text.push_str(&format_ranking(r));
        text.push('\n');
    }
    match &args.out {
        Some(path) => write_file(path, &text),
        None => emit(out, &text),
    }
}

fn check_aligned(rankings: usize, rows: usize) -> Result<()> {
    if rankings != rows {
        return Err(
            CoreError::validation(format!("{rankings} rankings for {rows} data rows")).into(),
        );
    }
    Ok(())
}

/// MC draws for pair `p`, repetition `r` use stream `1 + p * repetitions + r`
/// under the benchmark seed; stream 0 belongs to the pair sampler.
fn mc_stream(pair: usize, repetitions: u64, rep: u64) -> u64 {
    1 + pair as u64 * repetitions + rep
}

fn cmd_benchmark(args: &BenchmarkArgs, out: &mut String) -> Result<()> {
    if args.iterations.is_empty() {
        return Err(CliError::usage("--iterations must list at least one value"));
    }
    if args.iterations.contains(&0) {
        return Err(CliError::usage("iteration counts must be positive"));
    }
    if args.sigmas.is_empty() {
        return Err(CliError::usage("--sigmas must list at least one value"));
    }
    if args.repetitions == 0 {
        return Err(CliError::usage("--repetitions must be positive"));
    }
    let data = require_data(&args.data)?;
    let ensemble = load_model(&args.model.model, args.model.model_format)?;
    let ensemble = fit_model_to(ensemble, data.dataset.num_features())?;
    let ds = &data.dataset;
    let pairs = data::sample_pairs(
        ds.len(),
        ds.num_features(),
        args.pairs,
        args.seed,
        args.sizes.as_deref(),
    )?;

    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for &sigma in &args.sigmas {
        let spec = PerturbationSpec::gaussian(sigma)?;
        let exact = pairs
            .par_iter()
            .map(|p| {
                let start = Instant::now();
                let v = pg2_exact(
                    &ensemble,
                    ds.instance(p.instance_index),
                    &p.feature_set,
                    &spec,
                )?;
                Ok((v, start.elapsed()))
            })
            .collect::<prediction_gap::Result<Vec<(f64, Duration)>>>()?;
        let truth: Vec<f64> = exact.iter().map(|e| e.0).collect();
        let exact_time: Duration = exact.iter().map(|e| e.1).sum();
        if truth.iter().all(|&v| v == 0.0) {
            let msg =
                format!("sigma {sigma}: every exact PG² is zero, NMAE undefined; entries skipped");
            eprintln!("warning: {msg}");
            warnings.push(msg);
            continue;
        }

        for method in [
            prediction_gap::SamplingMethod::Mc,
            prediction_gap::SamplingMethod::Qmc,
        ] {
            // QMC is deterministic, repeating it would only repeat the numbers
            let reps = match method {
                prediction_gap::SamplingMethod::Mc => args.repetitions,
                prediction_gap::SamplingMethod::Qmc => 1,
            };
            for &iterations in &args.iterations {
                let runs = pairs.len() * reps as usize;
                let estimates = (0..runs)
                    .into_par_iter()
                    .map(|j| {
                        let (p, r) = (j / reps as usize, j as u64 % reps);
                        let pair = &pairs[p];
                        let config = match method {
                            prediction_gap::SamplingMethod::Mc => {
                                EstimatorConfig::mc(iterations, args.seed)
                                    .with_stream(mc_stream(p, reps, r))
                            }
                            prediction_gap::SamplingMethod::Qmc => EstimatorConfig::qmc(iterations),
                        };
                        let start = Instant::now();
                        let v = pg2_sampled(
                            &ensemble,
                            ds.instance(pair.instance_index),
                            &pair.feature_set,
                            &spec,
                            &config,
                        )?;
                        Ok((v, start.elapsed()))
                    })
                    .collect::<prediction_gap::Result<Vec<(f64, Duration)>>>()?;
                let repeated_truth: Vec<f64> =
                    (0..runs).map(|j| truth[j / reps as usize]).collect();
                let est: Vec<f64> = estimates.iter().map(|e| e.0).collect();
                let sampler_time: Duration = estimates.iter().map(|e| e.1).sum();
                entries.push(BenchmarkEntry {
                    method: method.as_str().to_string(),
                    iterations,
                    sigma,
                    nmae: round9(nmae(&repeated_truth, &est)?),
                    pairs: pairs.len(),
                    wall_time_exact: args.with_timings.then_some(exact_time.as_secs_f64()),
                    wall_time_sampler: args.with_timings.then_some(sampler_time.as_secs_f64()),
                });
            }
        }
    }

    let report = BenchmarkReport {
        version: REPORT_VERSION,
        seed: args.seed,
        pairs: pairs.len(),
        repetitions: args.repetitions,
        sigmas: args.sigmas.clone(),
        iterations: args.iterations.clone(),
        entries,
        warnings,
    };
    if let Some(path) = &args.csv {
        write_file(path, &report.to_csv())?;
    }
    match &args.out {
        Some(path) => write_file(path, &report.to_json()),
        None => emit(out, &report.to_json()),
    }
}

fn cmd_eval(args: &EvalArgs, out: &mut String) -> Result<()> {
    let data = require_data(&args.data)?;
    let ensemble = load_model(&args.model.model, args.model.model_format)?;
    let ensemble = fit_model_to(ensemble, data.dataset.num_features())?;
    let ds = &data.dataset;
    let rank_spec = perturbation(args.sigma_rank, args.perturbation_rank.as_deref())?;
    let metric_spec = perturbation(args.sigma_metric, args.perturbation_metric.as_deref())?;

    let rankings = if let Some(path) = &args.rankings {
        load_rankings(path)?
    } else if let Some(path) = &args.attributions {
        attribution_rankings(path)?
    } else {
        let spec = rank_spec.as_ref().ok_or_else(|| {
            CliError::usage("greedy rankings need --sigma-rank or --perturbation-rank")
        })?;
        greedy_rankings(&ensemble, ds, spec)?
    };
    check_aligned(rankings.len(), ds.len())?;

    let value = match args.metric {
        Metric::Pgi2 => {
            let spec = metric_spec.or(rank_spec).ok_or_else(|| {
                CliError::usage("pgi2 needs --sigma-metric or --perturbation-metric")
            })?;
            mean_pgi2(&ensemble, ds, &rankings, &spec)?
        }
        Metric::RandomizeRmse => {
            let k = args
                .k
                .ok_or_else(|| CliError::usage("randomize-rmse needs -k"))?;
            let reference = match args.rmse_reference {
                RmseReferenceArg::Prediction => RmseReference::Prediction,
                RmseReferenceArg::Labels => {
                    RmseReference::Labels(data.labels.as_deref().ok_or_else(|| {
                        CliError::usage("--rmse-reference labels needs --label-column")
                    })?)
                }
            };
            randomization_rmse(
                &ensemble,
                ds,
                &rankings,
                k,
                args.samples,
                args.seed,
                reference,
            )?
        }
        Metric::TopkAgreement => {
            let k = args
                .k
                .ok_or_else(|| CliError::usage("topk-agreement needs -k"))?;
            let path = args
                .reference_rankings
                .as_deref()
                .ok_or_else(|| CliError::usage("topk-agreement needs --reference-rankings"))?;
            let mode = match args.prefix_match {
                PrefixMatchArg::Set => PrefixMatch::Set,
                PrefixMatchArg::Sequence => PrefixMatch::Sequence,
            };
            topk_agreement(&rankings, &load_rankings(path)?, k, mode)?
        }
    };
    emit(out, &format!("{}\n", sig9(value)))
}

fn cmd_convert(args: &ConvertArgs, out: &mut String) -> Result<()> {
    let text = fs::read_to_string(&args.input).map_err(|e| CoreError::Io {
        path: args.input.clone(),
        source: e,
    })?;
    let options = XgboostImportOptions {
        feature_names: args.feature_names.clone(),
        num_features: args.num_features,
        base_score: args.base_score,
    };
    let ensemble = parse_dump(&text, &options).map_err(|e| match e {
        CoreError::Parse { location, message } => CoreError::Parse {
            location: format!("{} {location}", args.input.display()),
            message,
        },
        other => other,
    })?;
    let json = ensemble.to_canonical_json();
    match &args.output {
        Some(path) => write_file(path, &json),
        None => emit(out, &json),
    }
}
