//! Executes a resolved experiment configuration: fans seeds out over the
//! current thread pool, writes one long-format CSV per seed and algorithm,
//! and a `summary.json` with final metrics and the built-in checks.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fedcluster_core::algorithms::{
    run_clustered_fl, run_fedavg, run_federated_clustering, run_ground_truth, run_hypcluster, run_ifca, run_local,
    run_momentum_clustering, run_myopic, IfcaOption, RunRecord, TrainerConfig, CSV_HEADER,
};
use fedcluster_core::analysis::{clustering_accuracy, elbow_index, trace_assumptions, DEFAULT_ELBOW_FRACTION};
use fedcluster_core::attacks::ByzantineSchedule;
use fedcluster_core::problems::{
    make_example1, make_example2, make_example3, make_lower_bound_mixture, make_synthetic_regression,
    ProblemInstance, RegressionSpec,
};
use fedcluster_core::scenarios::{elbow_curve, mixture_trial, ElbowSetup};
use fedcluster_core::threshold::RadiusPolicy;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::registry::Experiment;

/// Result of one experiment invocation.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub summary: Value,
    pub checks: BTreeMap<String, bool>,
    pub diverged: bool,
}

/// Final metrics of one (algorithm, seed) run.
#[derive(Debug, Clone, Serialize)]
pub struct RunEntry {
    pub algo: String,
    pub seed: u64,
    pub csv: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_mean_eval_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_mean_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub messages: u64,
    pub rounds_run: usize,
    pub diverged: bool,
    /// Final parameters for one-dimensional problems.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_x: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<Vec<Vec<usize>>>,
    /// Scalar result for the clustering studies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

/// Everything one seed produced.
#[derive(Debug, Default)]
struct SeedResult {
    entries: Vec<RunEntry>,
    /// Checks that must hold on every seed.
    checks: Vec<(String, bool)>,
    extra: Option<(String, Value)>,
}

pub fn run_trainer(name: &str, problem: &ProblemInstance, cfg: &TrainerConfig) -> fedcluster_core::Result<RunRecord> {
    match name {
        "fc" => run_federated_clustering(problem, cfg),
        "momentum" => run_momentum_clustering(problem, cfg),
        "myopic" => run_myopic(problem, cfg),
        "local" => run_local(problem, cfg),
        "global" => run_fedavg(problem, cfg),
        "gt" => run_ground_truth(problem, cfg),
        "ifca1" => run_ifca(problem, cfg, IfcaOption::GradientAveraging),
        "ifca2" => run_ifca(problem, cfg, IfcaOption::ModelAveraging),
        "hypcluster" => run_hypcluster(problem, cfg),
        "cfl" => run_clustered_fl(problem, cfg),
        other => Err(fedcluster_core::Error::Config(format!("unknown algorithm '{other}'"))),
    }
}

fn create_csv(path: &Path) -> CliResult<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CSV_HEADER}")?;
    Ok(w)
}

fn file_name(label: &str, seed: u64) -> String {
    format!("{label}_seed{seed}.csv")
}

fn honest_mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn make_problem(experiment: Experiment, cfg: &ExperimentConfig, seed: u64) -> CliResult<ProblemInstance> {
    let p = &cfg.problem;
    Ok(match experiment {
        Experiment::Example1 => make_example1(cfg.trainer.eta)?,
        Experiment::Example2 => make_example2()?,
        Experiment::Example3 => make_example3()?,
        _ => {
            let d = RegressionSpec::default();
            make_synthetic_regression(&RegressionSpec {
                k: p.k.unwrap_or(d.k),
                n_i: p.n_i.unwrap_or(d.n_i),
                d: p.d.unwrap_or(d.d),
                n: p.n.unwrap_or(d.n),
                seed,
            })?
        }
    })
}

fn trainer_for(cfg: &ExperimentConfig, algo: &str, problem: &ProblemInstance, seed: u64) -> TrainerConfig {
    let mut t = cfg.trainer_for(algo);
    t.seed = seed;
    if let Some(f) = cfg.eta_l_factor {
        t.eta = f / problem.params.l;
    }
    t
}

fn entry(label: &str, seed: u64, rec: &RunRecord, problem: &ProblemInstance) -> RunEntry {
    let honest = |f: fn(&fedcluster_core::algorithms::ClientRow) -> Option<f64>| {
        honest_mean(rec.final_rows().filter(|r| !r.byzantine).map(f))
    };
    let diverged = rec.diverged.is_some();
    RunEntry {
        algo: label.to_string(),
        seed,
        csv: file_name(label, seed),
        final_mean_eval_loss: if diverged { Some(f64::INFINITY) } else { honest(|r| r.eval_loss) },
        final_mean_loss: honest(|r| r.loss),
        accuracy: rec
            .final_assignment
            .as_ref()
            .and_then(|a| clustering_accuracy(a, &problem.true_labels).ok()),
        messages: rec.total_messages(),
        rounds_run: rec.rounds_run,
        diverged,
        final_x: (problem.dim() == 1).then(|| rec.final_params.iter().map(|x| x[0]).collect()),
        partition: rec.partition.clone(),
        value: None,
    }
}

fn write_record(dir: &Path, label: &str, experiment: Experiment, seed: u64, rec: &RunRecord) -> CliResult<()> {
    let mut w = create_csv(&dir.join(file_name(label, seed)))?;
    let mut rec = rec.clone();
    rec.algorithm = label.to_string();
    rec.write_csv_rows(&mut w, experiment.name(), seed)?;
    w.flush()?;
    Ok(())
}

/// Per-seed checks on the toy examples.
fn toy_checks(experiment: Experiment, algo: &str, rec: &RunRecord) -> Vec<(String, bool)> {
    let x = |i: usize| rec.final_params[i][0];
    match (experiment, algo) {
        (Experiment::Example1, "myopic") => vec![("myopic_stuck_at_saddle".into(), x(1) == 1.0 && x(2) == 2.0)],
        (Experiment::Example1, "fc") => vec![("fc_escapes_saddle".into(), x(1).abs() <= 1e-3)],
        (Experiment::Example2, "ifca1" | "ifca2" | "hypcluster") => {
            let frozen = rec.server_states.iter().all(|m| m.len() > 1 && m[1][0].abs() <= 1e-12)
                && rec
                    .final_assignment
                    .as_ref()
                    .is_some_and(|a| a.iter().all(|c| c.0 == 1));
            vec![(format!("{algo}_frozen"), frozen)]
        }
        (Experiment::Example2, "fc") => {
            vec![("fc_reaches_optima".into(), (x(0) + 0.5).abs() <= 1e-4 && (x(1) - 0.5).abs() <= 1e-4)]
        }
        _ => Vec::new(),
    }
}

fn run_trainer_seed(experiment: Experiment, cfg: &ExperimentConfig, dir: &Path, seed: u64) -> CliResult<SeedResult> {
    let problem = make_problem(experiment, cfg, seed)?;
    let mut out = SeedResult::default();
    for algo in &cfg.algos {
        let base = trainer_for(cfg, algo, &problem, seed);
        let variants: Vec<(String, TrainerConfig)> = if experiment == Experiment::Byzantine {
            let clean = TrainerConfig { byzantine: ByzantineSchedule::default(), ..base.clone() };
            vec![(format!("{algo}_clean"), clean), (format!("{algo}_attacked"), base.clone())]
        } else {
            vec![(algo.clone(), base.clone())]
        };
        for (label, tc) in variants {
            let rec = run_trainer(algo, &problem, &tc)?;
            write_record(dir, &label, experiment, seed, &rec)?;
            out.checks.extend(toy_checks(experiment, algo, &rec));
            if experiment == Experiment::AssumptionTrace {
                let (checks, extra) = trace_outputs(&problem, &rec, dir, seed)?;
                out.checks.extend(checks);
                out.extra = Some(("trace".into(), extra));
            }
            out.entries.push(entry(&label, seed, &rec, &problem));
        }
    }
    Ok(out)
}

fn trace_outputs(problem: &ProblemInstance, rec: &RunRecord, dir: &Path, seed: u64) -> CliResult<(Vec<(String, bool)>, Value)> {
    let trace = trace_assumptions(problem, &rec.server_states)?;
    let mut w = create_csv(&dir.join(file_name("gt_trace", seed)))?;
    for row in &trace.rows {
        if let Some(r) = row.intra_ratio {
            writeln!(w, "assumption_trace,gt,{seed},{},{},intra_ratio,{r:e}", row.round, row.client)?;
        }
        writeln!(w, "assumption_trace,gt,{seed},{},{},inter_sep,{:e}", row.round, row.client, row.inter_sep)?;
    }
    for (t, (m, s)) in trace.mean_intra.iter().zip(&trace.min_inter).enumerate() {
        writeln!(w, "assumption_trace,gt,{seed},{t},,mean_intra_ratio,{m:e}")?;
        writeln!(w, "assumption_trace,gt,{seed},{t},,min_inter_sep,{s:e}")?;
    }
    w.flush()?;
    let last = trace.mean_intra.len() - 1;
    let peak = trace.max_intra(last.min(50)..=last);
    let sep = trace.min_separation();
    let checks = vec![
        ("intra_ratio_bounded".to_string(), peak < 1.1 * trace.mean_intra[last]),
        ("separation_positive".to_string(), sep > 0.0),
    ];
    let extra = json!({
        "seed": seed,
        "peak_intra_ratio_from_round_50": peak,
        "final_intra_ratio": trace.mean_intra[last],
        "min_separation": sep,
    });
    Ok((checks, extra))
}

fn run_blobs_seed(cfg: &ExperimentConfig, dir: &Path, seed: u64) -> CliResult<SeedResult> {
    let d = ElbowSetup::default();
    let p = &cfg.problem;
    let percentile = match cfg.trainer.radius {
        RadiusPolicy::Percentile { p } => p,
        _ => return Err(CliError::Invalid("blobs uses a percentile radius".into())),
    };
    let setup = ElbowSetup {
        k: p.k.unwrap_or(d.k),
        per_cluster: p.per_cluster.unwrap_or(d.per_cluster),
        dim: p.d.unwrap_or(d.dim),
        half_width: p.half_width.unwrap_or(d.half_width),
        percentile,
        rounds: cfg.trainer.rounds,
        repeats: p.repeats.unwrap_or(d.repeats),
        center_seed: p.center_seed.unwrap_or(d.center_seed),
    };
    let mut w = create_csv(&dir.join(file_name("threshold", seed)))?;
    let mut elbows = Vec::new();
    for &sigma in &p.sigma {
        let curve = elbow_curve(&setup, sigma, seed)?;
        for (l, v) in curve.iter().enumerate() {
            writeln!(w, "blobs,threshold,{seed},{l},,center_distance_sigma_{sigma},{v:e}")?;
        }
        elbows.push((sigma, elbow_index(&curve, DEFAULT_ELBOW_FRACTION)?));
    }
    w.flush()?;
    let nondecreasing = elbows.windows(2).all(|e| e[0].1 <= e[1].1);
    let table: Vec<Value> = elbows.iter().map(|(s, l)| json!({ "sigma": s, "elbow": l })).collect();
    Ok(SeedResult {
        entries: vec![RunEntry {
            algo: "threshold".into(),
            seed,
            csv: file_name("threshold", seed),
            final_mean_eval_loss: None,
            final_mean_loss: None,
            accuracy: None,
            messages: 0,
            rounds_run: setup.rounds,
            diverged: false,
            final_x: None,
            partition: None,
            value: None,
        }],
        checks: vec![("elbow_nondecreasing_in_sigma".into(), nondecreasing)],
        extra: Some(("elbows".into(), json!({ "seed": seed, "table": table }))),
    })
}

fn run_lower_bound_seed(cfg: &ExperimentConfig, dir: &Path, seed: u64) -> CliResult<SeedResult> {
    let p = &cfg.problem;
    let sigma = p.sigma[0];
    let gap = p.gap.unwrap_or(2.0 * sigma);
    let floor = make_lower_bound_mixture(sigma, gap)?.floor;
    let err = mixture_trial(sigma, gap, p.per_cluster.unwrap_or(50), cfg.trainer.rounds, seed)?;
    let mut w = create_csv(&dir.join(file_name("threshold", seed)))?;
    let t = cfg.trainer.rounds;
    writeln!(w, "lower_bound,threshold,{seed},{t},,squared_error,{err:e}")?;
    writeln!(w, "lower_bound,threshold,{seed},{t},,floor,{floor:e}")?;
    w.flush()?;
    Ok(SeedResult {
        entries: vec![RunEntry {
            algo: "threshold".into(),
            seed,
            csv: file_name("threshold", seed),
            final_mean_eval_loss: None,
            final_mean_loss: None,
            accuracy: None,
            messages: 0,
            rounds_run: t,
            diverged: false,
            final_x: None,
            partition: None,
            value: Some(err),
        }],
        checks: Vec::new(),
        extra: Some(("floor".into(), json!(floor))),
    })
}

fn mean_of(entries: &[RunEntry], label: &str, f: impl Fn(&RunEntry) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = entries.iter().filter(|e| e.algo == label).filter_map(f).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Checks computed over all seeds at once.
fn pooled_checks(experiment: Experiment, entries: &[RunEntry], extras: &[(String, Value)]) -> Vec<(String, bool)> {
    let loss = |label: &str| mean_of(entries, label, |e| e.final_mean_eval_loss);
    let mut out = Vec::new();
    match experiment {
        Experiment::Example3 => {
            let runs: Vec<&RunEntry> = entries.iter().filter(|e| e.algo == "cfl").collect();
            if !runs.is_empty() {
                let hits = runs
                    .iter()
                    .filter(|e| e.partition.as_deref() == Some(&[vec![0, 1], vec![2]][..]))
                    .count();
                let freq = hits as f64 / runs.len() as f64;
                out.push(("cfl_split_frequency_in_band".into(), (0.43..=0.57).contains(&freq)));
            }
        }
        Experiment::SyntheticRegression => {
            if let (Some(gt), Some(fc), Some(local)) = (loss("gt"), loss("fc"), loss("local")) {
                out.push(("gt_le_fc_le_local".into(), gt <= fc && fc <= local));
            }
            if let (Some(fc), Some(global)) = (loss("fc"), loss("global")) {
                out.push(("fc_beats_global".into(), fc < global));
            }
        }
        Experiment::Byzantine => {
            let ratio = |a: &str| Some(loss(&format!("{a}_attacked"))? / loss(&format!("{a}_clean"))?);
            if let Some(r) = ratio("fc") {
                out.push(("fc_within_2x_of_clean".into(), r <= 2.0));
            }
            if let Some(r) = ratio("global") {
                out.push(("global_degraded_10x".into(), r >= 10.0));
            }
        }
        Experiment::LowerBound => {
            let floor = extras.iter().find_map(|(k, v)| (k == "floor").then(|| v.as_f64()).flatten());
            if let (Some(err), Some(floor)) = (mean_of(entries, "threshold", |e| e.value), floor) {
                out.push(("error_above_floor".into(), err >= floor));
            }
        }
        _ => {}
    }
    out
}

fn aggregates(entries: &[RunEntry]) -> Value {
    let mut labels: Vec<&str> = entries.iter().map(|e| e.algo.as_str()).collect();
    labels.dedup();
    let mut seen = std::collections::BTreeSet::new();
    labels.retain(|l| seen.insert(*l));
    let mut map = serde_json::Map::new();
    for label in labels {
        let n = entries.iter().filter(|e| e.algo == label).count();
        map.insert(
            label.to_string(),
            json!({
                "runs": n,
                "mean_final_eval_loss": mean_of(entries, label, |e| e.final_mean_eval_loss),
                "mean_final_loss": mean_of(entries, label, |e| e.final_mean_loss),
                "mean_accuracy": mean_of(entries, label, |e| e.accuracy),
                "mean_value": mean_of(entries, label, |e| e.value),
                "mean_messages": mean_of(entries, label, |e| Some(e.messages as f64)),
                "diverged_runs": entries.iter().filter(|e| e.algo == label && e.diverged).count(),
            }),
        );
    }
    Value::Object(map)
}

/// Runs `experiment` under `cfg` (already validated) on the current rayon pool.
pub fn run_experiment(experiment: Experiment, cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let dir = cfg.out.join(experiment.name());
    std::fs::create_dir_all(&dir)?;
    let per_seed: Vec<SeedResult> = cfg
        .seeds
        .0
        .par_iter()
        .map(|&seed| match experiment {
            Experiment::Blobs => run_blobs_seed(cfg, &dir, seed),
            Experiment::LowerBound => run_lower_bound_seed(cfg, &dir, seed),
            _ => run_trainer_seed(experiment, cfg, &dir, seed),
        })
        .collect::<CliResult<_>>()?;

    let mut checks: BTreeMap<String, bool> = BTreeMap::new();
    let mut entries = Vec::new();
    let mut extras = Vec::new();
    for r in per_seed {
        for (name, ok) in r.checks {
            *checks.entry(name).or_insert(true) &= ok;
        }
        entries.extend(r.entries);
        extras.extend(r.extra);
    }
    checks.extend(pooled_checks(experiment, &entries, &extras));
    let diverged = entries.iter().any(|e| e.diverged);

    let mut extra_map = serde_json::Map::new();
    for (k, v) in &extras {
        match extra_map.entry(k.clone()).or_insert_with(|| Value::Array(Vec::new())) {
            Value::Array(a) => a.push(v.clone()),
            _ => unreachable!(),
        }
    }
    let summary = json!({
        "experiment": experiment.name(),
        "seeds": cfg.seeds.0,
        "algos": cfg.algos,
        "config": cfg,
        "runs": entries,
        "aggregates": aggregates(&entries),
        "details": extra_map,
        "checks": checks,
        "all_checks_passed": checks.values().all(|&v| v),
        "diverged": diverged,
    });
    let mut w = BufWriter::new(File::create(dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut w, &summary).map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(Outcome { dir, summary, checks, diverged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SeedList;

    fn cfg_in(experiment: Experiment, out: &Path) -> ExperimentConfig {
        let mut cfg = experiment.defaults();
        cfg.out = out.to_path_buf();
        cfg
    }

    #[test]
    fn example1_summary_records_final_x() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = cfg_in(Experiment::Example1, tmp.path());
        let out = run_experiment(Experiment::Example1, &cfg).unwrap();
        assert!(out.checks["myopic_stuck_at_saddle"]);
        let runs = out.summary["runs"].as_array().unwrap();
        let myopic = runs.iter().find(|r| r["algo"] == "myopic").unwrap();
        assert_eq!(myopic["final_x"][1], 1.0);
        assert!(out.dir.join("myopic_seed0.csv").exists());
        assert!(out.dir.join("fc_seed0.csv").exists());
    }

    #[test]
    fn unknown_trainer_is_a_config_error() {
        let p = make_example2().unwrap();
        assert!(matches!(
            run_trainer("nope", &p, &TrainerConfig::default()),
            Err(fedcluster_core::Error::Config(_))
        ));
    }

    #[test]
    fn lower_bound_reports_floor() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = cfg_in(Experiment::LowerBound, tmp.path());
        cfg.seeds = SeedList(vec![0, 1, 2]);
        let out = run_experiment(Experiment::LowerBound, &cfg).unwrap();
        assert_eq!(out.checks.get("error_above_floor"), Some(&true));
        assert_eq!(out.summary["details"]["floor"][0], 1.0 / 16.0);
    }
}
