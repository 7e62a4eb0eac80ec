//! Run configuration: a TOML file resolved against the desk or paper profile.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use pretrain_bench::data::SynthConfig;
use pretrain_bench::eval::SweepConfig;
use pretrain_bench::pretrain::{StrategyConfig, StrategyKind};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const RESOLVED_FILE: &str = "resolved_config.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

/// One entry of the `[[strategies]]` list. Every key other than `name` and
/// `kind` overrides the profile default for that strategy.
#[derive(Clone, Debug, Default, Deserialize)]
struct StrategyEntry {
    name: String,
    kind: Option<String>,
    #[serde(flatten)]
    overrides: toml::Table,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    out: Option<PathBuf>,
    profile: Option<Profile>,
    workers: Option<usize>,
    synth: Option<toml::Table>,
    sweep: Option<toml::Table>,
    #[serde(default)]
    strategies: Vec<StrategyEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedStrategy {
    pub name: String,
    #[serde(flatten)]
    pub config: StrategyConfig,
}

/// Fully resolved settings. Written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into the cohort, every strategy and the sweep.
    pub seed: u64,
    pub out: PathBuf,
    pub profile: Profile,
    pub workers: Option<usize>,
    pub synth: SynthConfig,
    pub sweep: SweepConfig,
    pub strategies: Vec<NamedStrategy>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub paper_scale: bool,
    pub workers: Option<usize>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn merge<T: Serialize + for<'de> Deserialize<'de>>(
    base: &T,
    table: Option<toml::Table>,
    section: &str,
) -> Result<T, CliError> {
    let mut value = toml::Value::try_from(base).map_err(|e| usage(e.to_string()))?;
    if let Some(table) = table {
        if table.contains_key("seed") {
            return Err(usage(format!("[{section}]: seed is set by the top-level `seed` key")));
        }
        merge_value(&mut value, toml::Value::Table(table));
    }
    value.try_into().map_err(|e| usage(format!("[{section}]: {e}")))
}

fn merge_value(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_value(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn profile_config(profile: Profile, kind: StrategyKind) -> StrategyConfig {
    match profile {
        Profile::Desk => StrategyConfig::desk(kind),
        Profile::Paper => StrategyConfig::paper(kind),
    }
}

fn paper_sweep() -> SweepConfig {
    SweepConfig { sizes: vec![200, 500, 1000, 2000, 5000, 10000], trials: 15, ..SweepConfig::default() }
}

impl RunConfig {
    /// Parses `text` and applies `cli` on top.
    pub fn parse(text: &str, cli: &Overrides) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| usage(format!("config: {}", e.message())))?;
        let profile = if cli.paper_scale { Profile::Paper } else { raw.profile.unwrap_or_default() };
        let seed = cli.seed.or(raw.seed).unwrap_or(0);
        let out = cli.out.clone().or(raw.out).unwrap_or_else(|| PathBuf::from("runs"));
        let workers = cli.workers.or(raw.workers);
        if workers == Some(0) {
            return Err(usage("workers must be positive"));
        }

        let synth_base = match profile {
            Profile::Desk => SynthConfig::default(),
            Profile::Paper => SynthConfig { image_height: 256, image_width: 240, ..SynthConfig::default() },
        };
        let mut synth: SynthConfig = merge(&synth_base, raw.synth, "synth")?;
        synth.seed = seed;
        let sweep_base = match profile {
            Profile::Desk => SweepConfig::default(),
            Profile::Paper => paper_sweep(),
        };
        let mut sweep: SweepConfig = merge(&sweep_base, raw.sweep, "sweep")?;
        sweep.seed = seed;

        let entries = if raw.strategies.is_empty() {
            StrategyKind::ALL.iter().map(|k| StrategyEntry { name: k.name().into(), ..Default::default() }).collect()
        } else {
            raw.strategies
        };
        let mut strategies = Vec::with_capacity(entries.len());
        let mut seen = BTreeSet::new();
        for e in entries {
            if !seen.insert(e.name.clone()) {
                return Err(usage(format!("strategy `{}` listed twice", e.name)));
            }
            let kind: StrategyKind =
                e.kind.as_deref().unwrap_or(&e.name).parse().map_err(|err| usage(format!("{err}")))?;
            let section = format!("strategies.{}", e.name);
            let overrides = (!e.overrides.is_empty()).then_some(e.overrides);
            let mut config: StrategyConfig = merge(&profile_config(profile, kind), overrides, &section)?;
            config.kind = kind;
            config.seed = seed;
            strategies.push(NamedStrategy { name: e.name, config });
        }

        let cfg = Self { seed, out, profile, workers, synth, sweep, strategies };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, cli: &Overrides) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::parse(&text, cli)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.synth.validate().map_err(|e| usage(format!("[synth]: {e}")))?;
        self.sweep.validate().map_err(|e| usage(format!("[sweep]: {e}")))?;
        for s in &self.strategies {
            if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) {
                return Err(usage(format!("strategy name `{}` must be non-empty and use [A-Za-z0-9_.-]", s.name)));
            }
            s.config.validate().map_err(|e| usage(format!("strategy {}: {e}", s.name)))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("resolved config serializes")
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_copy(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(RESOLVED_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))
    }

    /// Strategies matching `names`, or all of them when `names` is empty.
    pub fn select(&self, names: &[String]) -> Result<Vec<&NamedStrategy>, CliError> {
        if names.is_empty() {
            return Ok(self.strategies.iter().collect());
        }
        names
            .iter()
            .map(|n| {
                self.strategies.iter().find(|s| &s.name == n).ok_or_else(|| {
                    let known: Vec<&str> = self.strategies.iter().map(|s| s.name.as_str()).collect();
                    usage(format!("unknown strategy `{n}`; candidates: {}", known.join(", ")))
                })
            })
            .collect()
    }

    pub fn cohort_dir(&self) -> PathBuf {
        self.out.join("cohort")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out.join("checkpoints")
    }

    pub fn encoding_dir(&self, strategy: &str) -> PathBuf {
        self.out.join("encodings").join(strategy)
    }

    pub fn sweep_dir(&self) -> PathBuf {
        self.out.join("sweep")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out.join("eval")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, CliError> {
        RunConfig::parse(text, &Overrides::default())
    }

    #[test]
    fn empty_file_gives_desk_defaults_for_all_strategies() {
        let c = parse("").unwrap();
        assert_eq!(c.profile, Profile::Desk);
        assert_eq!(c.strategies.len(), 8);
        assert_eq!(c.strategies[0].config, StrategyConfig::desk(StrategyKind::SemiAe));
        assert_eq!(c.sweep, SweepConfig::default());
    }

    #[test]
    fn master_seed_reaches_every_section() {
        let c = RunConfig::parse("seed = 3", &Overrides { seed: Some(9), ..Default::default() }).unwrap();
        assert_eq!((c.seed, c.synth.seed, c.sweep.seed), (9, 9, 9));
        assert!(c.strategies.iter().all(|s| s.config.seed == 9));
    }

    #[test]
    fn overrides_merge_into_nested_fields() {
        let c = parse(
            r#"
            [synth]
            n_patients = 500
            [[strategies]]
            name = "semi_ae_reg10"
            kind = "semi_ae"
            epochs = 2
            lambdas = { lambda_reg = 10.0 }
            "#,
        )
        .unwrap();
        assert_eq!(c.synth.n_patients, 500);
        let s = &c.strategies[0];
        assert_eq!((s.name.as_str(), s.config.epochs, s.config.lambdas.lambda_reg), ("semi_ae_reg10", 2, 10.0));
        assert_eq!(s.config.lambdas.lambda_recon, 20.0);
    }

    #[test]
    fn unknown_keys_are_named() {
        for (text, key) in [
            ("colour = 1", "colour"),
            ("[synth]\nn_patinets = 5", "n_patinets"),
            ("[sweep]\ntrails = 5", "trails"),
            ("[[strategies]]\nname = \"self_ae\"\nepohcs = 1", "epohcs"),
        ] {
            let Err(CliError::Usage(msg)) = parse(text) else { panic!("{text} accepted") };
            assert!(msg.contains(key), "{msg}");
        }
    }

    #[test]
    fn nested_seed_and_duplicates_rejected() {
        assert!(matches!(parse("[synth]\nseed = 4"), Err(CliError::Usage(_))));
        let dup = "[[strategies]]\nname = \"self_ae\"\n[[strategies]]\nname = \"self_ae\"";
        assert!(matches!(parse(dup), Err(CliError::Usage(_))));
    }

    #[test]
    fn paper_scale_switches_profile() {
        let c = RunConfig::parse("", &Overrides { paper_scale: true, ..Default::default() }).unwrap();
        assert_eq!(c.strategies[0].config, StrategyConfig::paper(StrategyKind::SemiAe));
        assert_eq!(c.sweep.trials, 15);
    }

    #[test]
    fn resolved_copy_round_trips() {
        let c = parse("seed = 5\n[[strategies]]\nname = \"moco\"\nkind = \"self_moco\"\nqueue_size = 64").unwrap();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn select_lists_candidates() {
        let c = parse("").unwrap();
        assert_eq!(c.select(&["self_ae".into()]).unwrap()[0].name, "self_ae");
        let Err(CliError::Usage(msg)) = c.select(&["nope".into()]) else { panic!() };
        assert!(msg.contains("semi_moco") && msg.contains("scratch"), "{msg}");
    }
}
