//! The named experiment catalog and each entry's default configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use fedcluster_core::algorithms::TrainerConfig;
use fedcluster_core::attacks::{AttackKind, ByzantineSchedule};
use fedcluster_core::threshold::RadiusPolicy;
use serde::Serialize;

use crate::config::{ExperimentConfig, ProblemSpec, SeedList};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Example1,
    Example2,
    Example3,
    Blobs,
    LowerBound,
    SyntheticRegression,
    AssumptionTrace,
    Byzantine,
}

/// Trainers selectable by name on problem-based experiments.
pub const TRAINERS: [&str; 10] = [
    "fc", "momentum", "myopic", "local", "global", "gt", "ifca1", "ifca2", "hypcluster", "cfl",
];

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Example1,
        Experiment::Example2,
        Experiment::Example3,
        Experiment::Blobs,
        Experiment::LowerBound,
        Experiment::SyntheticRegression,
        Experiment::AssumptionTrace,
        Experiment::Byzantine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Example1 => "example1",
            Experiment::Example2 => "example2",
            Experiment::Example3 => "example3",
            Experiment::Blobs => "blobs",
            Experiment::LowerBound => "lower_bound",
            Experiment::SyntheticRegression => "synthetic_regression",
            Experiment::AssumptionTrace => "assumption_trace",
            Experiment::Byzantine => "byzantine",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Experiment::Example1 => "knot-loss toy: Myopic-Clustering stalls at the saddle, per-step clustering should not",
            Experiment::Example2 => "two shifted quadratics: IFCA from models (-1.5, 0) never moves",
            Experiment::Example3 => "Clustered-FL splits {1,2}|{3} or {1,3}|{2} on a coin flip",
            Experiment::Blobs => "Threshold-Clustering center distance vs. clipping rounds, elbow per sigma",
            Experiment::LowerBound => "two-point mixture: clustering error against the sigma^4/(4 gap^2) floor",
            Experiment::SyntheticRegression => "clustered linear regression: GT, FC, Local and Global losses",
            Experiment::AssumptionTrace => "intra-cluster ratio and inter-cluster separation along the GT trajectory",
            Experiment::Byzantine => "sign-flip / large-gradient attackers on clustered linear regression",
        }
    }

    /// Algorithm names this experiment accepts.
    pub fn algorithms(self) -> Vec<&'static str> {
        match self {
            Experiment::Blobs | Experiment::LowerBound => vec!["threshold"],
            Experiment::AssumptionTrace => vec!["gt"],
            _ => TRAINERS.to_vec(),
        }
    }

    pub fn defaults(self) -> ExperimentConfig {
        let base = ExperimentConfig {
            experiment: Some(self.name().to_string()),
            algos: Vec::new(),
            seeds: SeedList(vec![0]),
            out: "results".into(),
            eta_l_factor: None,
            problem: ProblemSpec::default(),
            trainer: TrainerConfig::default(),
            algo_radius: BTreeMap::new(),
        };
        let regression = |n_i: usize, rounds: usize| ExperimentConfig {
            eta_l_factor: Some(1.0),
            problem: ProblemSpec { k: Some(4), n_i: Some(n_i), d: Some(10), n: Some(9), ..Default::default() },
            trainer: TrainerConfig {
                rounds,
                cluster_rounds: 10,
                radius: RadiusPolicy::percentile(8.0),
                record_every: 10,
                ..Default::default()
            },
            ..base.clone()
        };
        match self {
            Experiment::Example1 => ExperimentConfig {
                algos: vec!["myopic".into(), "fc".into()],
                trainer: TrainerConfig {
                    eta: 0.5,
                    rounds: 200,
                    cluster_rounds: 10,
                    radius: RadiusPolicy::fixed(0.6),
                    ..Default::default()
                },
                algo_radius: BTreeMap::from([("myopic".to_string(), RadiusPolicy::percentile(20.0))]),
                ..base
            },
            Experiment::Example2 => ExperimentConfig {
                algos: vec!["ifca1".into(), "ifca2".into(), "fc".into()],
                trainer: TrainerConfig {
                    eta: 0.1,
                    rounds: 500,
                    local_steps: 5,
                    radius: RadiusPolicy::fixed(1.0),
                    ..Default::default()
                },
                ..base
            },
            Experiment::Example3 => ExperimentConfig {
                algos: vec!["cfl".into()],
                seeds: SeedList((0..400).collect()),
                trainer: TrainerConfig {
                    eta: 0.1,
                    batch_size: Some(64),
                    fedavg_tol: 0.05,
                    ..Default::default()
                },
                ..base
            },
            Experiment::Blobs => ExperimentConfig {
                algos: vec!["threshold".into()],
                problem: ProblemSpec {
                    k: Some(10),
                    per_cluster: Some(9),
                    d: Some(10),
                    sigma: vec![0.5, 1.0, 2.0, 4.0],
                    half_width: Some(10.0),
                    repeats: Some(10),
                    center_seed: Some(0),
                    ..Default::default()
                },
                trainer: TrainerConfig {
                    rounds: 25,
                    radius: RadiusPolicy::percentile(10.0),
                    ..Default::default()
                },
                ..base
            },
            Experiment::LowerBound => ExperimentConfig {
                algos: vec!["threshold".into()],
                seeds: SeedList((0..500).collect()),
                problem: ProblemSpec {
                    sigma: vec![1.0],
                    gap: Some(2.0),
                    per_cluster: Some(50),
                    ..Default::default()
                },
                trainer: TrainerConfig { rounds: 20, ..Default::default() },
                ..base
            },
            Experiment::SyntheticRegression => ExperimentConfig {
                algos: vec!["gt".into(), "fc".into(), "local".into(), "global".into()],
                seeds: SeedList((0..20).collect()),
                ..regression(4, 600)
            },
            Experiment::AssumptionTrace => ExperimentConfig {
                algos: vec!["gt".into()],
                trainer: TrainerConfig { record_every: 500, ..regression(75, 500).trainer },
                ..regression(75, 500)
            },
            Experiment::Byzantine => {
                let mut cfg = ExperimentConfig {
                    algos: vec!["fc".into(), "global".into()],
                    seeds: SeedList((0..10).collect()),
                    ..regression(16, 600)
                };
                cfg.trainer.byzantine = ByzantineSchedule::new(0.25, AttackKind::SignFlip);
                cfg
            }
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| CliError::UnknownExperiment(s.to_string()))
    }
}
