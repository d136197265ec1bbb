use std::path::{Path, PathBuf};

use oscmix_core::mixture::ModelDocument;
use oscmix_core::sim::{frequency_grid, interpolate, replicate_seed};
use oscmix_core::summary::{loaded_weight, mean_noise_var, ClusterReport, StackedSamples};
use oscmix_core::{
    band_table, band_table_csv, cluster_components, coherence, dft, filter_top, iae, mean_spectral_matrix,
    model_from_clusters, pdc_latent_to_signal, pdc_signal_to_signal, periodogram_baseline, run_chains, standardize,
    ChainTrace, ClusterConfig, MixtureModel, MultiChannelSeries, Scenario, TrialReport,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use std::fmt::Write as _;

use crate::config::{to_toml, EvaluateConfig, FitConfig, MeasuresConfig, Method, SimulateConfig, SummarizeConfig};
use crate::error::CliError;
use crate::output::{spectral_csv, Manifest, Outputs};

fn finish(command: &str, mut outputs: Outputs, dir: &Path, details: serde_json::Value) -> Result<(), CliError> {
    let manifest = Manifest::new(command, &outputs, details);
    outputs.add_json("manifest.json", &manifest);
    for path in outputs.commit(dir)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn load_scenario(name: &str) -> Result<Scenario, CliError> {
    match name {
        "ar2mix" | "misspec" => Ok(Scenario::builtin(name)?),
        path if Path::new(path).is_file() => Ok(Scenario::from_path(Path::new(path))?),
        other => Err(CliError::Usage(format!(
            "unknown scenario {other:?}: expected ar2mix, misspec or a scenario file"
        ))),
    }
}

fn check_positive(what: &str, value: usize) -> Result<(), CliError> {
    if value == 0 {
        return Err(CliError::Usage(format!("{what} must be positive")));
    }
    Ok(())
}

pub fn simulate(config: &SimulateConfig) -> Result<(), CliError> {
    let scenario = load_scenario(&config.scenario)?;
    if config.grid_points < 2 {
        return Err(CliError::Usage("grid_points must be at least 2".into()));
    }
    let series = scenario.simulate(config.len, config.seed)?;
    let truth = scenario.true_spectrum()?;
    let mut outputs = Outputs::default();
    let mut csv = Vec::new();
    series.write_csv(&mut csv)?;
    outputs.add("series.csv", csv);
    outputs.add(
        "true_spectrum.csv",
        spectral_csv(&truth.on_grid(&frequency_grid(config.grid_points))),
    );
    outputs.add("scenario.toml", scenario.to_toml_string()?);
    outputs.add("config.toml", to_toml(config));
    let details = json!({
        "scenario": scenario.name,
        "channels": series.n_channels(),
        "T": series.len(),
        "seed": config.seed,
    });
    finish("simulate", outputs, &config.out, details)
}

pub fn fit(config: &FitConfig) -> Result<(), CliError> {
    check_positive("chains", config.chains)?;
    config.sampler.validate()?;
    let series = MultiChannelSeries::from_csv_path(&config.data, None).map_err(|e| match e {
        oscmix_core::Error::Io(source) => CliError::Io {
            path: config.data.clone(),
            source,
        },
        other => other.into(),
    })?;
    let series = if config.standardize {
        standardize(&series)?
    } else {
        series
    };
    let data = dft(&series);
    let traces = run_chains(&data, &config.sampler, config.seed, config.chains)?;
    let mut outputs = Outputs::default();
    let mut stats = Vec::new();
    for trace in &traces {
        if let Some(last) = trace.snapshots.last() {
            if !last.loglik.is_finite() {
                return Err(oscmix_core::Error::NonFinite(format!(
                    "chain {} ended with log-likelihood {}",
                    trace.chain_id, last.loglik
                ))
                .into());
            }
        }
        let mut buf = Vec::new();
        trace.write(&mut buf)?;
        outputs.add(format!("chain_{}.csv", trace.chain_id), buf);
        stats.push(json!({"chain": trace.chain_id, "moves": trace.stats}));
    }
    outputs.add("config.toml", to_toml(config));
    let details = json!({
        "channels": series.n_channels(),
        "T": series.len(),
        "chains": config.chains,
        "iterations": config.sampler.iterations,
        "move_stats": stats,
    });
    finish("fit", outputs, &config.out, details)
}

/// Expands directories into their `chain_<id>.csv` files, ordered by id.
pub fn trace_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for path in paths {
        if path.is_dir() {
            let entries = std::fs::read_dir(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            let mut found: Vec<(u64, PathBuf)> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter_map(|p| {
                    let id = p
                        .file_name()?
                        .to_str()?
                        .strip_prefix("chain_")?
                        .strip_suffix(".csv")?
                        .parse()
                        .ok()?;
                    Some((id, p))
                })
                .collect();
            if found.is_empty() {
                return Err(CliError::Io {
                    path: path.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "no chain_*.csv trace files"),
                });
            }
            found.sort();
            files.extend(found.into_iter().map(|(_, p)| p));
        } else {
            files.push(path.clone());
        }
    }
    if files.is_empty() {
        return Err(CliError::Usage("no trace files given".into()));
    }
    Ok(files)
}

#[derive(Serialize)]
struct ClusterRow<'a> {
    #[serde(flatten)]
    report: &'a ClusterReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    psi_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    psi_sd_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    band: Option<&'static str>,
    max_weight: f64,
    loaded_weight: f64,
}

fn clusters_csv(reports: &[ClusterReport], rate: Option<f64>, n: usize) -> String {
    let mut out = String::from("cluster,count,psi,psi_sd");
    if rate.is_some() {
        out.push_str(",psi_hz,psi_sd_hz,band");
    }
    out.push_str(",log_mod,log_mod_sd");
    for i in 0..n {
        let _ = write!(out, ",weight_{i}");
    }
    for i in 0..n {
        let _ = write!(out, ",weight_sd_{i}");
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{},{},{},{}", r.cluster, r.count, r.psi_mean, r.psi_sd);
        if let Some(rate) = rate {
            let _ = write!(
                out,
                ",{},{},{}",
                r.psi_hz(rate),
                r.psi_sd_hz(rate),
                r.band(rate).label()
            );
        }
        let _ = write!(out, ",{},{}", r.log_mod_mean, r.log_mod_sd);
        for v in r.weight_mean.iter().chain(&r.weight_sd) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn circular_nodes_csv(reports: &[ClusterReport]) -> String {
    let mut out = String::from("channel,cluster,weight\n");
    for r in reports {
        for (i, w) in r.weight_mean.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{w}", r.cluster);
        }
    }
    out
}

pub fn summarize(config: &SummarizeConfig) -> Result<(), CliError> {
    if !(config.quantile >= 0.0 && config.quantile < 1.0) {
        return Err(CliError::Usage(format!(
            "quantile {} must lie in [0, 1)",
            config.quantile
        )));
    }
    if config.grid_points < 2 {
        return Err(CliError::Usage("grid_points must be at least 2".into()));
    }
    if let Some(rate) = config.sampling_rate {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(CliError::Usage(format!("sampling rate {rate} must be positive")));
        }
    }
    let traces = trace_files(&config.traces)?
        .iter()
        .map(|p| ChainTrace::read_path(p))
        .collect::<Result<Vec<_>, _>>()?;
    let samples: StackedSamples = filter_top(&traces, config.burnin, config.quantile)?;
    let cluster_config = ClusterConfig {
        criterion: config.criterion,
        restarts: config.restarts,
        seed: config.seed,
        ..ClusterConfig::default()
    };
    let reports = cluster_components(&samples, &cluster_config)?;
    let grid = frequency_grid(config.grid_points);
    let spectrum = mean_spectral_matrix(&traces, &samples.retained, &grid)?;
    let noise_var = mean_noise_var(&traces, &samples.retained);
    let model = model_from_clusters(&reports, noise_var, config.min_weight)?;
    let rate = config.sampling_rate;
    let n = samples.n_channels();

    let mut outputs = Outputs::default();
    outputs.add("clusters.csv", clusters_csv(&reports, rate, n));
    let rows: Vec<ClusterRow> = reports
        .iter()
        .map(|r| ClusterRow {
            report: r,
            psi_hz: rate.map(|f| r.psi_hz(f)),
            psi_sd_hz: rate.map(|f| r.psi_sd_hz(f)),
            band: rate.map(|f| r.band(f).label()),
            max_weight: r.max_weight(),
            loaded_weight: loaded_weight(r, config.min_weight),
        })
        .collect();
    outputs.add_json(
        "clusters.json",
        &json!({
            "threshold": samples.threshold,
            "retained_sweeps": samples.retained.len(),
            "rows": samples.len(),
            "k_range": [samples.k_range.0, samples.k_range.1],
            "sampling_rate": rate,
            "min_weight": config.min_weight,
            "clusters": rows,
        }),
    );
    if let Some(rate) = rate {
        let trial = TrialReport {
            task: config.task.clone(),
            clusters: reports.clone(),
        };
        let table = band_table(&[trial], rate, config.min_weight)?;
        outputs.add("band_table.csv", band_table_csv(&table));
    }
    outputs.add("spectral_matrix.csv", spectral_csv(&spectrum));
    outputs.add("circular_nodes.csv", circular_nodes_csv(&reports));
    outputs.add_json("model.json", &ModelDocument::from(&model));
    outputs.add("config.toml", to_toml(config));
    let details = json!({
        "chains": traces.len(),
        "clusters": reports.len(),
        "model_kernels": model.n_kernels(),
    });
    finish("summarize", outputs, &config.out, details)
}

/// IAE of every requested method on one simulated replicate.
fn evaluate_replicate(config: &EvaluateConfig, scenario: &Scenario, r: usize) -> Result<Vec<f64>, CliError> {
    let seed = replicate_seed(config.seed, r as u64);
    let series = standardize(&scenario.simulate(config.len, seed)?)?;
    let truth = scenario.true_spectrum()?.standardized();
    let data = dft(&series);
    let grid = frequency_grid(config.grid_points);
    config
        .methods
        .iter()
        .map(|method| {
            let estimate = match method {
                Method::Mbmard => {
                    let traces = run_chains(&data, &config.sampler, seed, config.chains)?;
                    let samples = filter_top(&traces, config.burnin, config.quantile)?;
                    mean_spectral_matrix(&traces, &samples.retained, &grid)?
                }
                Method::Periodogram => interpolate(&periodogram_baseline(&data, config.baseline_halfwidth), &grid)?,
                Method::Truth => truth.on_grid(&grid),
            };
            Ok(iae(&estimate, &truth)?)
        })
        .collect()
}

pub fn evaluate(config: &EvaluateConfig) -> Result<(), CliError> {
    let scenario = load_scenario(&config.scenario)?;
    check_positive("replicates", config.replicates)?;
    check_positive("chains", config.chains)?;
    if config.methods.is_empty() {
        return Err(CliError::Usage("at least one method is required".into()));
    }
    if config.grid_points < 2 {
        return Err(CliError::Usage("grid_points must be at least 2".into()));
    }
    config.sampler.validate()?;
    let results = (0..config.replicates)
        .into_par_iter()
        .map(|r| evaluate_replicate(config, &scenario, r))
        .collect::<Result<Vec<_>, _>>()?;
    let mut csv = String::from("replicate,method,iae\n");
    for (r, values) in results.iter().enumerate() {
        for (method, value) in config.methods.iter().zip(values) {
            let _ = writeln!(csv, "{r},{},{value}", method.label());
        }
    }
    let medians: serde_json::Map<String, serde_json::Value> = config
        .methods
        .iter()
        .enumerate()
        .map(|(m, method)| {
            let column: Vec<f64> = results.iter().map(|v| v[m]).collect();
            (
                method.label().to_string(),
                json!(oscmix_core::summary::quantile(&column, 0.5)),
            )
        })
        .collect();
    let mut outputs = Outputs::default();
    outputs.add("iae.csv", csv);
    outputs.add("config.toml", to_toml(config));
    let details = json!({"scenario": scenario.name, "replicates": config.replicates, "median_iae": medians});
    finish("evaluate", outputs, &config.out, details)
}

fn load_model(path: &Path) -> Result<MixtureModel, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(MixtureModel::from_json(&text)?)
}

pub fn measures(config: &MeasuresConfig) -> Result<(), CliError> {
    if config.grid_points < 2 {
        return Err(CliError::Usage("grid_points must be at least 2".into()));
    }
    let model = load_model(&config.model)?;
    let n = model.n_channels();
    let pairs: Vec<[usize; 2]> = if config.pairs.is_empty() {
        (0..n).flat_map(|m| (m..n).map(move |l| [m, l])).collect()
    } else {
        config.pairs.clone()
    };
    if let Some(bad) = pairs.iter().find(|p| p[0] >= n || p[1] >= n) {
        return Err(CliError::Usage(format!(
            "pair ({}, {}) is out of range for {n} channels",
            bad[0], bad[1]
        )));
    }
    let grid = frequency_grid(config.grid_points);
    let hz_header = if config.sampling_rate.is_some() { ",hz" } else { "" };
    let hz = |w: f64| config.sampling_rate.map_or(String::new(), |r| format!(",{}", w * r));

    let mut coh = format!("m,l,freq{hz_header},coherence\n");
    let mut pdc_signal = format!("from,to,freq{hz_header},pdc\n");
    for &[m, l] in &pairs {
        for &w in &grid {
            let _ = writeln!(coh, "{m},{l},{w}{},{}", hz(w), coherence(&model, m, l, w)?);
            let _ = writeln!(
                pdc_signal,
                "{m},{l},{w}{},{}",
                hz(w),
                pdc_signal_to_signal(&model, m, l, w)?
            );
        }
    }
    let mut pdc_latent = format!("kernel,channel,freq{hz_header},pdc\n");
    for j in 0..model.n_kernels() {
        for i in 0..n {
            for &w in &grid {
                let _ = writeln!(
                    pdc_latent,
                    "{j},{i},{w}{},{}",
                    hz(w),
                    pdc_latent_to_signal(&model, i, j, w)?
                );
            }
        }
    }
    let mut outputs = Outputs::default();
    outputs.add("coherence.csv", coh);
    outputs.add("pdc_latent_to_signal.csv", pdc_latent);
    outputs.add("pdc_signal_to_signal.csv", pdc_signal);
    outputs.add("config.toml", to_toml(config));
    let details = json!({"channels": n, "kernels": model.n_kernels(), "pairs": pairs.len()});
    finish("measures", outputs, &config.out, details)
}
