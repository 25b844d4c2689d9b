//! Experiment configuration: registry defaults, overlaid by a TOML file,
//! overlaid by command-line flags.
//!
//! Tables in the file merge key by key into the defaults. A table whose
//! `kind` key is a string (a radius policy or an attack) replaces the
//! default table wholesale.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use fedcluster_core::algorithms::TrainerConfig;
use fedcluster_core::attacks::AttackKind;
use fedcluster_core::threshold::RadiusPolicy;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CliError, CliResult};
use crate::registry::Experiment;

/// Problem-construction parameters; each experiment reads the subset it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSpec {
    /// Number of clusters.
    pub k: Option<usize>,
    /// Clients per cluster (regression).
    pub n_i: Option<usize>,
    /// Dimension.
    pub d: Option<usize>,
    /// Samples per client (regression).
    pub n: Option<usize>,
    /// Standard deviations to sweep (blobs) or the mixture's σ (first entry).
    pub sigma: Vec<f64>,
    /// Distance between the mixture means.
    pub gap: Option<f64>,
    /// Points per cluster (blobs) or per mixture component.
    pub per_cluster: Option<usize>,
    pub repeats: Option<usize>,
    /// Blob centers are drawn from `[-half_width, half_width]^d`.
    pub half_width: Option<f64>,
    pub center_seed: Option<u64>,
}

/// Seeds to sweep. Written as an array or as a range string `"A..B"`
/// (exclusive) or `"A..=B"` (inclusive).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

impl SeedList {
    pub fn parse(s: &str) -> CliResult<Self> {
        let bad = || CliError::Invalid(format!("cannot parse seed range '{s}' (expected A..B or A..=B)"));
        let s = s.trim();
        if let Some((a, b)) = s.split_once("..=") {
            let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            return Ok(SeedList(if a <= b { (a..=b).collect() } else { Vec::new() }));
        }
        if let Some((a, b)) = s.split_once("..") {
            let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            return Ok(SeedList((a..b).collect()));
        }
        s.parse().map(|v| SeedList(vec![v])).map_err(|_| bad())
    }
}

impl Serialize for SeedList {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SeedList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            List(Vec<u64>),
            Range(String),
        }
        match Raw::deserialize(d)? {
            Raw::List(v) => Ok(SeedList(v)),
            Raw::Range(s) => SeedList::parse(&s).map_err(serde::de::Error::custom),
        }
    }
}

impl fmt::Display for SeedList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.0.first(), self.0.last()) {
            (Some(a), Some(b)) if self.0.len() > 1 && self.0.windows(2).all(|w| w[1] == w[0] + 1) => {
                write!(f, "{a}..={b}")
            }
            _ => write!(f, "{:?}", self.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must name the experiment being run when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    pub algos: Vec<String>,
    pub seeds: SeedList,
    /// Output root; files go to `<out>/<experiment>/`.
    pub out: PathBuf,
    /// When set, the learning rate is `eta_l_factor / L` for each generated instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_l_factor: Option<f64>,
    #[serde(default)]
    pub problem: ProblemSpec,
    #[serde(default)]
    pub trainer: TrainerConfig,
    /// Per-algorithm radius policies that replace `trainer.radius`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub algo_radius: BTreeMap<String, RadiusPolicy>,
}

/// Command-line values that override configuration keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<SeedList>,
    pub algos: Option<Vec<String>>,
    pub out: Option<PathBuf>,
    pub eta: Option<f64>,
    pub rounds: Option<usize>,
    pub cluster_rounds: Option<usize>,
    pub batch_size: Option<usize>,
    pub percentile: Option<f64>,
    pub tau: Option<f64>,
    pub beta: Option<f64>,
    pub attack: Option<AttackKind>,
    pub sigma: Option<Vec<f64>>,
    pub n_i: Option<usize>,
}

/// Parses `none`, `sign_flip`, `large_gradient[:scale]` or `edge_of_ball[:margin]`.
pub fn parse_attack(s: &str) -> CliResult<AttackKind> {
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (s, None),
    };
    let num = |default: f64| -> CliResult<f64> {
        arg.map(|a| a.parse::<f64>().map_err(|_| CliError::Invalid(format!("bad attack parameter in '{s}'"))))
            .unwrap_or(Ok(default))
    };
    let kind = match name {
        "none" => AttackKind::None,
        "sign_flip" => AttackKind::SignFlip,
        "large_gradient" => AttackKind::LargeGradient { scale: num(1e4)? },
        "edge_of_ball" => AttackKind::EdgeOfBall { margin: num(0.05)? },
        _ => return Err(CliError::Invalid(format!("unknown attack '{name}'"))),
    };
    kind.validate()?;
    Ok(kind)
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let replace = v.as_table().is_some_and(|t| t.get("kind").is_some_and(|k| k.is_str()));
                match b.get_mut(&k) {
                    Some(slot) if !replace => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl ExperimentConfig {
    /// Registry defaults for `experiment` overlaid with the TOML text `text`.
    pub fn from_toml(experiment: Experiment, text: &str, origin: &Path) -> CliResult<Self> {
        let parse_err = |message: String| CliError::ParseConfig { path: origin.to_path_buf(), message };
        let over: toml::Table = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let mut merged = toml::Value::try_from(experiment.defaults()).map_err(|e| parse_err(e.to_string()))?;
        merge(&mut merged, toml::Value::Table(over));
        let cfg: ExperimentConfig = merged.try_into().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        if let Some(name) = &cfg.experiment {
            if name != experiment.name() {
                return Err(CliError::Invalid(format!(
                    "config is for experiment '{name}' but '{experiment}' was requested"
                )));
            }
        }
        Ok(cfg)
    }

    pub fn load(experiment: Experiment, path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(experiment, &text, path)
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(s) = o.seeds {
            self.seeds = s;
        }
        if let Some(a) = o.algos {
            self.algos = a;
        }
        if let Some(p) = o.out {
            self.out = p;
        }
        if let Some(eta) = o.eta {
            self.trainer.eta = eta;
            self.eta_l_factor = None;
        }
        if let Some(r) = o.rounds {
            self.trainer.rounds = r;
        }
        if let Some(l) = o.cluster_rounds {
            self.trainer.cluster_rounds = l;
        }
        if let Some(b) = o.batch_size {
            self.trainer.batch_size = Some(b);
        }
        if let Some(p) = o.percentile {
            self.trainer.radius = RadiusPolicy::percentile(p);
        }
        if let Some(t) = o.tau {
            self.trainer.radius = RadiusPolicy::fixed(t);
        }
        if let Some(b) = o.beta {
            self.trainer.byzantine.beta = b;
        }
        if let Some(k) = o.attack {
            self.trainer.byzantine.kind = k;
        }
        if let Some(s) = o.sigma {
            self.problem.sigma = s;
        }
        if let Some(n) = o.n_i {
            self.problem.n_i = Some(n);
        }
    }

    pub fn validate(&self, experiment: Experiment) -> CliResult<()> {
        if self.seeds.0.is_empty() {
            return Err(CliError::Invalid("the seed list is empty".into()));
        }
        if self.algos.is_empty() {
            return Err(CliError::Invalid("no algorithms selected".into()));
        }
        let known = experiment.algorithms();
        for a in &self.algos {
            if !known.contains(&a.as_str()) {
                return Err(CliError::Invalid(format!(
                    "algorithm '{a}' is not available for {experiment} (choose from {})",
                    known.join(", ")
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.algos.iter().find(|a| !seen.insert(a.as_str())) {
            return Err(CliError::Invalid(format!("algorithm '{dup}' listed twice")));
        }
        if let Some(f) = self.eta_l_factor {
            if !(f > 0.0 && f.is_finite()) {
                return Err(CliError::Invalid(format!("eta_l_factor must be positive, got {f}")));
            }
        }
        if self.problem.sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(CliError::Invalid("sigma values must be finite and non-negative".into()));
        }
        if matches!(experiment, Experiment::Blobs | Experiment::LowerBound) && self.problem.sigma.is_empty() {
            return Err(CliError::Invalid(format!("{experiment} needs at least one sigma")));
        }
        if experiment == Experiment::Blobs && !matches!(self.trainer.radius, RadiusPolicy::Percentile { .. }) {
            return Err(CliError::Invalid("blobs uses a percentile radius".into()));
        }
        self.trainer.validate()?;
        for (algo, radius) in &self.algo_radius {
            if !known.contains(&algo.as_str()) {
                return Err(CliError::Invalid(format!("algo_radius names unknown algorithm '{algo}'")));
            }
            self.trainer_for(algo).validate()?;
            if experiment == Experiment::Blobs && !matches!(radius, RadiusPolicy::Percentile { .. }) {
                return Err(CliError::Invalid("blobs uses a percentile radius".into()));
            }
        }
        Ok(())
    }

    /// The trainer configuration for `algo`, with its radius override applied.
    pub fn trainer_for(&self, algo: &str) -> TrainerConfig {
        let mut t = self.trainer.clone();
        if let Some(r) = self.algo_radius.get(algo) {
            t.radius = *r;
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(SeedList::parse("2..5").unwrap().0, vec![2, 3, 4]);
        assert_eq!(SeedList::parse("2..=4").unwrap().0, vec![2, 3, 4]);
        assert_eq!(SeedList::parse("7").unwrap().0, vec![7]);
        assert!(SeedList::parse("3..3").unwrap().0.is_empty());
        assert!(SeedList::parse("a..b").is_err());
        assert_eq!(SeedList(vec![0, 1, 2]).to_string(), "0..=2");
    }

    #[test]
    fn file_merges_over_defaults() {
        let text = r#"
            seeds = "0..3"
            [trainer]
            rounds = 7
            radius = { kind = "fixed", tau = 0.25 }
            [trainer.byzantine]
            beta = 0.1
        "#;
        let swap = "[trainer.byzantine]\nkind = { kind = \"large_gradient\", scale = 50.0 }\n";
        let cfg = ExperimentConfig::from_toml(Experiment::Byzantine, swap, Path::new("t.toml")).unwrap();
        assert_eq!(cfg.trainer.byzantine.beta, 0.25);
        assert_eq!(cfg.trainer.byzantine.kind, AttackKind::LargeGradient { scale: 50.0 });
        let cfg = ExperimentConfig::from_toml(Experiment::Byzantine, text, Path::new("t.toml")).unwrap();
        assert_eq!(cfg.seeds.0, vec![0, 1, 2]);
        assert_eq!(cfg.trainer.rounds, 7);
        assert_eq!(cfg.trainer.radius, RadiusPolicy::fixed(0.25));
        assert_eq!(cfg.trainer.byzantine.beta, 0.1);
        assert_eq!(cfg.trainer.byzantine.kind, AttackKind::SignFlip);
        assert_eq!(cfg.trainer.cluster_rounds, 10);
        assert_eq!(cfg.algos, vec!["fc", "global"]);
    }

    #[test]
    fn algo_radius_overrides_one_trainer() {
        let cfg = Experiment::Example1.defaults();
        assert_eq!(cfg.trainer_for("myopic").radius, RadiusPolicy::percentile(20.0));
        assert_eq!(cfg.trainer_for("fc").radius, RadiusPolicy::fixed(0.6));
        let text = "[algo_radius.myopic]\nkind = \"fixed\"\ntau = 2.0\n";
        let cfg = ExperimentConfig::from_toml(Experiment::Example1, text, Path::new("t.toml")).unwrap();
        assert_eq!(cfg.trainer_for("myopic").radius, RadiusPolicy::fixed(2.0));
        let bad = "[algo_radius.sgd]\nkind = \"fixed\"\ntau = 2.0\n";
        let cfg = ExperimentConfig::from_toml(Experiment::Example1, bad, Path::new("t.toml")).unwrap();
        assert!(matches!(cfg.validate(Experiment::Example1), Err(CliError::Invalid(_))));
    }

    #[test]
    fn unknown_keys_and_mismatched_experiment_are_rejected() {
        let p = Path::new("t.toml");
        assert!(matches!(
            ExperimentConfig::from_toml(Experiment::Example1, "colour = 1", p),
            Err(CliError::ParseConfig { .. })
        ));
        assert!(matches!(
            ExperimentConfig::from_toml(Experiment::Example1, "experiment = \"blobs\"", p),
            Err(CliError::Invalid(_))
        ));
    }

    #[test]
    fn flags_override_config() {
        let mut cfg = Experiment::SyntheticRegression.defaults();
        cfg.apply(Overrides { eta: Some(0.01), percentile: Some(15.0), ..Default::default() });
        assert_eq!(cfg.trainer.eta, 0.01);
        assert_eq!(cfg.eta_l_factor, None);
        assert_eq!(cfg.trainer.radius, RadiusPolicy::percentile(15.0));
    }

    #[test]
    fn validation_errors() {
        let mut cfg = Experiment::Example1.defaults();
        cfg.seeds = SeedList(vec![]);
        assert!(matches!(cfg.validate(Experiment::Example1), Err(CliError::Invalid(_))));
        let mut cfg = Experiment::Blobs.defaults();
        cfg.algos = vec!["fc".into()];
        assert!(cfg.validate(Experiment::Blobs).is_err());
    }

    #[test]
    fn attack_syntax() {
        assert_eq!(parse_attack("large_gradient:100").unwrap(), AttackKind::LargeGradient { scale: 100.0 });
        assert_eq!(parse_attack("edge_of_ball").unwrap(), AttackKind::EdgeOfBall { margin: 0.05 });
        assert!(parse_attack("edge_of_ball:2").is_err());
        assert!(parse_attack("flood").is_err());
    }
}
