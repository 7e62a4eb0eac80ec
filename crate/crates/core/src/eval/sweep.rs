use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lasso::{cv_select_lambda, lambda_grid, lasso_path};
use super::metrics::{auc, eo_ratio};
use super::mlp::{MlpConfig, MlpProbe};
use super::standardize::Standardizer;
use super::{EncodingMatrix, ProbeKind};
use crate::data::{subsample_training_sets, CohortRecord, Horizon, TrainingSample};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub const TRIALS_FILE: &str = "trials.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestCohort {
    Internal,
    External,
}

impl TestCohort {
    pub const ALL: [TestCohort; 2] = [TestCohort::Internal, TestCohort::External];

    pub fn name(self) -> &'static str {
        match self {
            TestCohort::Internal => "internal",
            TestCohort::External => "external",
        }
    }
}

impl fmt::Display for TestCohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    /// Not available: too few events or an unstratifiable sample.
    Na,
}

/// Sizes, trials and probe settings of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub horizons: Vec<Horizon>,
    pub seed: u64,
    pub cv_folds: usize,
    pub grid_len: usize,
    /// Smallest over largest penalty on the grid.
    pub grid_ratio: f64,
    pub probe: ProbeKind,
    pub mlp: MlpConfig,
    /// A sample needs at least this many events to be fitted.
    pub min_events: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sizes: vec![200, 500, 1000, 2000],
            trials: 5,
            horizons: vec![Horizon::Y12],
            seed: 0,
            cv_folds: 5,
            grid_len: 30,
            grid_ratio: 1e-4,
            probe: ProbeKind::LassoLogistic,
            mlp: MlpConfig::default(),
            min_events: 2,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.trials == 0 || self.horizons.is_empty() {
            return Err(Error::invalid("sweep needs at least one size, trial and horizon"));
        }
        if self.cv_folds < 2 || self.grid_len == 0 || !(self.grid_ratio > 0.0 && self.grid_ratio <= 1.0) {
            return Err(Error::invalid("sweep needs cv_folds >= 2, a non-empty grid and grid_ratio in (0, 1]"));
        }
        let unique: BTreeSet<_> = self.sizes.iter().collect();
        if unique.len() != self.sizes.len() || self.sizes.contains(&0) {
            return Err(Error::invalid("sweep sizes must be positive and distinct"));
        }
        Ok(())
    }
}

/// Identity of one sweep cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub strategy: String,
    pub horizon: Horizon,
    pub size: usize,
    pub trial: usize,
}

/// Scores the two test cohorts after training on the given pool rows;
/// returns event probabilities for the internal and external test records.
pub type EndToEndScorer = Box<dyn Fn(&CellKey, &[usize]) -> Result<[Vec<f64>; 2]> + Send + Sync>;

pub enum StrategySource {
    /// Frozen encodings of the pool and both test cohorts.
    Encodings {
        pool: EncodingMatrix,
        internal: EncodingMatrix,
        external: EncodingMatrix,
    },
    EndToEnd(EndToEndScorer),
}

pub struct SweepStrategy {
    pub name: String,
    pub source: StrategySource,
}

/// Records shared by every strategy of a sweep.
#[derive(Clone, Copy)]
pub struct SweepData<'a> {
    /// Training pool the samples are drawn from.
    pub pool: &'a [CohortRecord],
    pub internal: &'a [CohortRecord],
    pub external: &'a [CohortRecord],
}

impl SweepData<'_> {
    fn cohort(&self, c: TestCohort) -> &[CohortRecord] {
        match c {
            TestCohort::Internal => self.internal,
            TestCohort::External => self.external,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub strategy: String,
    pub horizon: Horizon,
    pub size: usize,
    pub trial: usize,
    pub cohort: TestCohort,
    pub status: TrialStatus,
    pub auc: Option<f64>,
    pub eo_ratio: Option<f64>,
    pub lambda: Option<f64>,
    pub train_events: usize,
    pub note: String,
}

impl TrialRow {
    pub fn key(&self) -> CellKey {
        CellKey { strategy: self.strategy.clone(), horizon: self.horizon, size: self.size, trial: self.trial }
    }
}

/// Mean and sample standard deviation over the available trials of a cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub strategy: String,
    pub horizon: Horizon,
    pub size: usize,
    pub cohort: TestCohort,
    pub n_ok: usize,
    pub n_na: usize,
    pub mean_auc: Option<f64>,
    pub sd_auc: Option<f64>,
    pub mean_eo_ratio: Option<f64>,
    pub sd_eo_ratio: Option<f64>,
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub strategies: Vec<String>,
    pub trials: Vec<TrialRow>,
    pub aggregates: Vec<AggregateRow>,
}

/// One line of `report.csv`; aggregate rows leave the per-trial columns empty.
#[derive(Serialize)]
struct ReportLine<'a> {
    row_type: &'static str,
    strategy: &'a str,
    horizon: Horizon,
    size: usize,
    trial: Option<usize>,
    cohort: TestCohort,
    status: Option<TrialStatus>,
    auc: Option<f64>,
    eo_ratio: Option<f64>,
    sd_auc: Option<f64>,
    sd_eo_ratio: Option<f64>,
    n_ok: Option<usize>,
    n_na: Option<usize>,
    lambda: Option<f64>,
    train_events: Option<usize>,
    note: &'a str,
}

#[derive(Serialize)]
struct FigureLine<'a> {
    strategy: &'a str,
    size: usize,
    mean_auc: Option<f64>,
    sd_auc: Option<f64>,
    n_ok: usize,
}

impl SweepReport {
    /// Sorts `trials` into strategy, horizon, size, trial, cohort order and
    /// derives the aggregates. Strategies follow `strategies`, then name.
    pub fn from_trials(strategies: &[String], mut trials: Vec<TrialRow>) -> Self {
        let mut order: Vec<String> = strategies.to_vec();
        let extra: BTreeSet<&String> = trials.iter().map(|t| &t.strategy).filter(|s| !strategies.contains(s)).collect();
        order.extend(extra.into_iter().cloned());
        let rank = |s: &str| order.iter().position(|o| o == s).expect("every strategy ranked");
        trials.sort_by(|a, b| {
            (rank(&a.strategy), a.horizon, a.size, a.trial, a.cohort).cmp(&(
                rank(&b.strategy),
                b.horizon,
                b.size,
                b.trial,
                b.cohort,
            ))
        });
        trials.dedup_by(|a, b| a.key() == b.key() && a.cohort == b.cohort);
        let mut groups: BTreeMap<(usize, Horizon, usize, TestCohort), Vec<&TrialRow>> = BTreeMap::new();
        for t in &trials {
            groups.entry((rank(&t.strategy), t.horizon, t.size, t.cohort)).or_default().push(t);
        }
        let aggregates = groups
            .into_iter()
            .map(|((s, horizon, size, cohort), rows)| {
                let ok: Vec<&&TrialRow> = rows.iter().filter(|r| r.status == TrialStatus::Ok).collect();
                let aucs: Vec<f64> = ok.iter().filter_map(|r| r.auc).collect();
                let eos: Vec<f64> = ok.iter().filter_map(|r| r.eo_ratio).collect();
                let (mean_auc, sd_auc) = mean_sd(&aucs);
                let (mean_eo_ratio, sd_eo_ratio) = mean_sd(&eos);
                AggregateRow {
                    strategy: order[s].clone(),
                    horizon,
                    size,
                    cohort,
                    n_ok: ok.len(),
                    n_na: rows.len() - ok.len(),
                    mean_auc,
                    sd_auc,
                    mean_eo_ratio,
                    sd_eo_ratio,
                }
            })
            .collect();
        Self { strategies: order, trials, aggregates }
    }

    pub fn aggregate(
        &self,
        strategy: &str,
        horizon: Horizon,
        size: usize,
        cohort: TestCohort,
    ) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.strategy == strategy && a.horizon == horizon && a.size == size && a.cohort == cohort)
    }

    /// Trial rows followed by aggregate rows, told apart by `row_type`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for t in &self.trials {
            out.serialize(ReportLine {
                row_type: "trial",
                strategy: &t.strategy,
                horizon: t.horizon,
                size: t.size,
                trial: Some(t.trial),
                cohort: t.cohort,
                status: Some(t.status),
                auc: t.auc,
                eo_ratio: t.eo_ratio,
                sd_auc: None,
                sd_eo_ratio: None,
                n_ok: None,
                n_na: None,
                lambda: t.lambda,
                train_events: Some(t.train_events),
                note: &t.note,
            })?;
        }
        for a in &self.aggregates {
            out.serialize(ReportLine {
                row_type: "aggregate",
                strategy: &a.strategy,
                horizon: a.horizon,
                size: a.size,
                trial: None,
                cohort: a.cohort,
                status: None,
                auc: a.mean_auc,
                eo_ratio: a.mean_eo_ratio,
                sd_auc: a.sd_auc,
                sd_eo_ratio: a.sd_eo_ratio,
                n_ok: Some(a.n_ok),
                n_na: Some(a.n_na),
                lambda: None,
                train_events: None,
                note: "",
            })?;
        }
        out.flush().map_err(|e| Error::io(Path::new("<report>"), e))
    }

    pub fn write_trials_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for t in &self.trials {
            out.serialize(t)?;
        }
        out.flush().map_err(|e| Error::io(Path::new("<trials>"), e))
    }

    /// Size against mean AUC, one row per strategy and size.
    pub fn write_figure_csv<W: Write>(&self, w: W, horizon: Horizon, cohort: TestCohort) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for a in self.aggregates.iter().filter(|a| a.horizon == horizon && a.cohort == cohort) {
            out.serialize(FigureLine {
                strategy: &a.strategy,
                size: a.size,
                mean_auc: a.mean_auc,
                sd_auc: a.sd_auc,
                n_ok: a.n_ok,
            })?;
        }
        out.flush().map_err(|e| Error::io(Path::new("<figure>"), e))
    }

    pub fn summary_json(&self, config: &SweepConfig) -> serde_json::Value {
        serde_json::json!({
            "seed": config.seed,
            "sizes": config.sizes,
            "trials": config.trials,
            "horizons": config.horizons,
            "probe": config.probe,
            "strategies": self.strategies,
            "trial_rows": self.trials.len(),
            "na_rows": self.trials.iter().filter(|t| t.status == TrialStatus::Na).count(),
            "aggregates": self.aggregates,
        })
    }

    /// Writes the report, sorted trial log, JSON summary and one figure-data
    /// file per horizon and test cohort into `dir`; returns the paths.
    pub fn write_dir(&self, dir: &Path, config: &SweepConfig) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| -> Result<(PathBuf, File)> {
            let p = dir.join(name);
            let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
            Ok((p, f))
        };
        let mut written = Vec::new();
        let (p, f) = create(REPORT_FILE)?;
        self.write_csv(f)?;
        written.push(p);
        let (p, f) = create(TRIALS_FILE)?;
        self.write_trials_csv(f)?;
        written.push(p);
        let (p, f) = create(SUMMARY_FILE)?;
        serde_json::to_writer_pretty(f, &self.summary_json(config))?;
        written.push(p);
        let horizons: BTreeSet<Horizon> = self.trials.iter().map(|t| t.horizon).collect();
        for h in horizons {
            for c in TestCohort::ALL {
                let (p, f) = create(&format!("figure_{h}_{c}.csv"))?;
                self.write_figure_csv(f, h, c)?;
                written.push(p);
            }
        }
        Ok(written)
    }
}

/// Parses a trial log, dropping a truncated final record.
pub fn read_trials_csv(path: &Path) -> Result<Vec<TrialRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let parsed: Vec<csv::Result<TrialRow>> = reader.deserialize().collect();
    let n = parsed.len();
    let mut rows = Vec::with_capacity(n);
    for (i, r) in parsed.into_iter().enumerate() {
        match r {
            Ok(row) => rows.push(row),
            Err(_) if i + 1 == n && !text.ends_with('\n') => break,
            Err(e) => return Err(Error::invalid(format!("{}: record {}: {e}", path.display(), i + 1))),
        }
    }
    Ok(rows)
}

/// Append-only trial log, flushed after every cell so an interrupted sweep
/// leaves a valid file.
pub struct TrialSink {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl TrialSink {
    /// Opens `path`, returning the rows already in it. The file is rewritten
    /// first so a truncated last line does not corrupt later appends.
    pub fn open(path: &Path) -> Result<(Self, Vec<TrialRow>)> {
        let existing = if path.exists() { read_trials_csv(path)? } else { Vec::new() };
        let mut w = csv::Writer::from_path(path)?;
        for r in &existing {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        drop(w);
        let file = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        let has_header = !existing.is_empty();
        let writer = csv::WriterBuilder::new().has_headers(!has_header).from_writer(file);
        Ok((Self { path: path.to_path_buf(), writer }, existing))
    }

    pub fn append(&mut self, rows: &[TrialRow]) -> Result<()> {
        for r in rows {
            self.writer.serialize(r)?;
        }
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

enum Probe {
    Lasso(super::LassoModel),
    Mlp(MlpProbe),
}

impl Probe {
    fn predict_proba(&self, x: &EncodingMatrix) -> Result<Vec<f64>> {
        match self {
            Probe::Lasso(m) => m.predict_proba(x),
            Probe::Mlp(m) => m.predict_proba(x),
        }
    }
}

fn is_na(e: &Error) -> bool {
    matches!(e, Error::InsufficientData(_) | Error::SingleClass)
}

struct CellResult {
    rows: Vec<TrialRow>,
}

fn na_rows(key: &CellKey, cohorts: &[TestCohort], events: usize, note: String) -> Vec<TrialRow> {
    cohorts
        .iter()
        .map(|&cohort| TrialRow {
            strategy: key.strategy.clone(),
            horizon: key.horizon,
            size: key.size,
            trial: key.trial,
            cohort,
            status: TrialStatus::Na,
            auc: None,
            eo_ratio: None,
            lambda: None,
            train_events: events,
            note: note.clone(),
        })
        .collect()
}

fn fit_probe(x: &EncodingMatrix, y: &[bool], cfg: &SweepConfig, seed: u64) -> Result<(Probe, Option<f64>)> {
    match cfg.probe {
        ProbeKind::LassoLogistic => {
            let grid = lambda_grid(x, y, cfg.grid_len, cfg.grid_ratio)?;
            let grid = if grid.len() > 1 && grid[grid.len() - 1] == grid[0] { vec![grid[0]] } else { grid };
            let sel = cv_select_lambda(x, y, &grid, cfg.cv_folds, seed)?;
            let upto = grid.iter().position(|&l| l == sel.lambda).expect("selected from grid");
            let model = lasso_path(x, y, &grid[..=upto])?.pop().expect("non-empty path");
            Ok((Probe::Lasso(model), Some(sel.lambda)))
        }
        ProbeKind::OneHiddenLayerNet => Ok((Probe::Mlp(MlpProbe::fit(x, y, &cfg.mlp, seed)?), None)),
    }
}

fn run_cell(
    data: SweepData<'_>,
    strategy: &SweepStrategy,
    sample: &TrainingSample,
    key: &CellKey,
    cfg: &SweepConfig,
    cohorts: &[TestCohort],
) -> Result<CellResult> {
    let h = key.horizon;
    let y: Vec<bool> = sample.indices.iter().map(|&i| data.pool[i].outcome(h)).collect();
    let events = y.iter().filter(|&&v| v).count();
    if events < cfg.min_events || events == y.len() {
        let note = format!("{events} events in {} training records", y.len());
        return Ok(CellResult { rows: na_rows(key, cohorts, events, note) });
    }
    let seed = derive_seed(cfg.seed, &[h.index() as u64, key.size as u64, key.trial as u64]);
    let (probs, lambda): (Vec<Vec<f64>>, Option<f64>) = match &strategy.source {
        StrategySource::Encodings { pool, internal, external } => {
            let fitted = (|| {
                let x = pool.select(&sample.indices);
                let std = Standardizer::fit(&x)?;
                let (probe, lambda) = fit_probe(&std.apply(&x)?, &y, cfg, seed)?;
                let probs = cohorts
                    .iter()
                    .map(|c| {
                        let enc = match c {
                            TestCohort::Internal => internal,
                            TestCohort::External => external,
                        };
                        probe.predict_proba(&std.apply(enc)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((probs, lambda))
            })();
            match fitted {
                Ok(v) => v,
                Err(e) if is_na(&e) => return Ok(CellResult { rows: na_rows(key, cohorts, events, e.to_string()) }),
                Err(e) => return Err(e),
            }
        }
        StrategySource::EndToEnd(score) => match score(key, &sample.indices) {
            Ok([a, b]) => {
                let both = [a, b];
                (cohorts.iter().map(|&c| both[c as usize].clone()).collect(), None)
            }
            Err(e) if is_na(&e) => return Ok(CellResult { rows: na_rows(key, cohorts, events, e.to_string()) }),
            Err(e) => return Err(e),
        },
    };
    let mut rows = Vec::with_capacity(cohorts.len());
    for (&cohort, p) in cohorts.iter().zip(&probs) {
        let labels: Vec<bool> = data.cohort(cohort).iter().map(|r| r.outcome(h)).collect();
        if p.len() != labels.len() {
            return Err(Error::shape("sweep", format!("{} scores for {} {cohort} records", p.len(), labels.len())));
        }
        let metrics = auc(p, &labels).and_then(|a| Ok((a, eo_ratio(p, &labels)?)));
        let mut row = na_rows(key, &[cohort], events, String::new()).pop().expect("one row");
        row.lambda = lambda;
        match metrics {
            Ok((a, eo)) => {
                row.status = TrialStatus::Ok;
                row.auc = Some(a);
                row.eo_ratio = Some(eo);
            }
            Err(e) if is_na(&e) => row.note = format!("{cohort} test set: {e}"),
            Err(e) => return Err(e),
        }
        rows.push(row);
    }
    Ok(CellResult { rows })
}

fn check_source(data: &SweepData<'_>, s: &SweepStrategy) -> Result<()> {
    if let StrategySource::Encodings { pool, internal, external } = &s.source {
        for (name, m, n) in [
            ("pool", pool, data.pool.len()),
            ("internal", internal, data.internal.len()),
            ("external", external, data.external.len()),
        ] {
            if m.rows() != n {
                return Err(Error::shape(
                    "sweep",
                    format!("{}: {} {name} encodings for {n} records", s.name, m.rows()),
                ));
            }
        }
    }
    Ok(())
}

/// Evaluates every (strategy, horizon, size, trial) cell not already in
/// `completed`. Samples depend only on the master seed, size and trial, so
/// all strategies see identical training sets. `on_cell` receives each
/// finished cell's rows on the calling thread, in completion order.
pub fn run_sweep(
    data: SweepData<'_>,
    strategies: &[SweepStrategy],
    cfg: &SweepConfig,
    completed: &[TrialRow],
    mut on_cell: impl FnMut(&[TrialRow]) -> Result<()>,
) -> Result<SweepReport> {
    cfg.validate()?;
    if strategies.is_empty() {
        return Err(Error::invalid("sweep needs at least one strategy"));
    }
    let names: Vec<String> = strategies.iter().map(|s| s.name.clone()).collect();
    if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
        return Err(Error::invalid("strategy names must be unique"));
    }
    for s in strategies {
        check_source(&data, s)?;
    }
    if data.internal.is_empty() {
        return Err(Error::InsufficientData("empty internal test set".into()));
    }
    let cohorts: Vec<TestCohort> = TestCohort::ALL.into_iter().filter(|&c| !data.cohort(c).is_empty()).collect();
    let samples = subsample_training_sets(data.pool.len(), &cfg.sizes, cfg.trials, cfg.seed)?;
    let done: BTreeSet<CellKey> = completed.iter().map(TrialRow::key).collect();

    let mut cells = Vec::new();
    for (si, s) in strategies.iter().enumerate() {
        for &horizon in &cfg.horizons {
            for sample in &samples {
                let key = CellKey { strategy: s.name.clone(), horizon, size: sample.size, trial: sample.trial };
                if !done.contains(&key) {
                    cells.push((si, sample, key));
                }
            }
        }
    }

    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel();
    let mut rows: Vec<TrialRow> = completed.to_vec();
    let mut first_err = None;
    std::thread::scope(|scope| {
        let cells = &cells;
        let stop = &stop;
        let cohorts = &cohorts;
        scope.spawn(move || {
            cells.par_iter().for_each_with(tx, |tx, (si, sample, key)| {
                if stop.load(Ordering::Relaxed) {
                    return;
                }
                let r = run_cell(data, &strategies[*si], sample, key, cfg, cohorts).map_err(|e| {
                    Error::invalid(format!(
                        "{} {} size {} trial {}: {e}",
                        key.strategy, key.horizon, key.size, key.trial
                    ))
                });
                let _ = tx.send(r);
            });
        });
        for r in rx {
            if first_err.is_some() {
                continue;
            }
            match r.and_then(|c| on_cell(&c.rows).map(|_| c)) {
                Ok(c) => rows.extend(c.rows),
                Err(e) => {
                    stop.store(true, Ordering::Relaxed);
                    first_err = Some(e);
                }
            }
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(SweepReport::from_trials(&names, rows))
}

impl FromStr for TestCohort {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestCohort::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown test cohort `{s}`")))
    }
}
