use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pretrain_bench::data::{
    generate_cohort, load_images, read_manifest, split_by_patient, CohortRecord, CohortTag, ImageRef, MANIFEST_FILE,
};
use pretrain_bench::eval::{
    end_to_end_scorer, extract_from_checkpoint, read_trials_csv, run_sweep, EncodingMatrix, StrategySource,
    SweepConfig, SweepData, SweepReport, SweepStrategy, TrialSink, TRIALS_FILE,
};
use pretrain_bench::pretrain::{pretrain_with_progress, untrained, Checkpoint, ScratchMode, StrategyKind};

use crate::config::{NamedStrategy, RunConfig};
use crate::CliError;

pub const CACHE_ENV: &str = "PRETRAIN_BENCH_CACHE";
/// Share of pretraining patients used for fitting; the rest pick the epoch.
const PRETRAIN_TRAIN_FRAC: f64 = 0.9;
const ENCODING_SETS: [&str; 3] = ["pool", "internal", "external"];
const STAMP_FILE: &str = "checkpoint.fnv";

struct Cohort {
    pretrain: Vec<CohortRecord>,
    pool: Vec<CohortRecord>,
    internal: Vec<CohortRecord>,
    external: Vec<CohortRecord>,
}

impl Cohort {
    fn data(&self) -> SweepData<'_> {
        SweepData { pool: &self.pool, internal: &self.internal, external: &self.external }
    }

    fn eval_sets(&self) -> [&[CohortRecord]; 3] {
        [&self.pool, &self.internal, &self.external]
    }
}

fn cache_dir(cfg: &RunConfig) -> PathBuf {
    std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| cfg.out.join("cache"))
}

fn load_cohort(cfg: &RunConfig) -> Result<Cohort, CliError> {
    let manifest = cfg.cohort_dir().join(MANIFEST_FILE);
    if !manifest.exists() {
        return Err(CliError::Runtime(format!("{} not found; run `synth` first", manifest.display())));
    }
    let mut records = read_manifest(&manifest)?;
    let images = load_images(&records, &manifest, Some(&cache_dir(cfg)))?;
    for (r, img) in records.iter_mut().zip(images) {
        r.image = ImageRef::Inline(img);
    }
    let mut c = Cohort { pretrain: Vec::new(), pool: Vec::new(), internal: Vec::new(), external: Vec::new() };
    for r in records {
        match r.cohort_tag {
            CohortTag::Pretrain => c.pretrain.push(r),
            CohortTag::Train => c.pool.push(r),
            CohortTag::InternalTest => c.internal.push(r),
            CohortTag::ExternalTest => c.external.push(r),
        }
    }
    Ok(c)
}

fn checkpoint_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.checkpoint_dir().join(format!("{name}.ckpt"))
}

fn load_checkpoint(cfg: &RunConfig, name: &str) -> Result<Checkpoint, CliError> {
    let path = checkpoint_path(cfg, name);
    if !path.exists() {
        return Err(CliError::Runtime(format!(
            "missing checkpoint {}; run `pretrain --strategy {name}`",
            path.display()
        )));
    }
    Ok(Checkpoint::load(&path)?)
}

fn fnv(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xCBF2_9CE4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01B3))
}

fn end_to_end(s: &NamedStrategy) -> bool {
    s.config.kind == StrategyKind::Scratch && s.config.scratch_mode == ScratchMode::EndToEnd
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.cohort_dir();
    let cohort = generate_cohort(&cfg.synth)?;
    let manifest = pretrain_bench::data::write_manifest(&dir, &cohort.records)?;
    cfg.write_copy(&dir)?;
    for tag in CohortTag::ALL {
        let n = cohort.records.iter().filter(|r| r.cohort_tag == tag).count();
        println!("{:<14} {n:>7} images", tag.name());
    }
    println!("wrote {}", manifest.display());
    Ok(())
}

pub fn pretrain(cfg: &RunConfig, names: &[String]) -> Result<(), CliError> {
    let selected = cfg.select(names)?;
    let cohort = load_cohort(cfg)?;
    let (a, b) = split_by_patient(&cohort.pretrain, PRETRAIN_TRAIN_FRAC, cfg.seed)?;
    let train: Vec<CohortRecord> = a.iter().map(|&i| cohort.pretrain[i].clone()).collect();
    let tune: Vec<CohortRecord> = b.iter().map(|&i| cohort.pretrain[i].clone()).collect();
    let dir = cfg.checkpoint_dir();
    cfg.write_copy(&dir)?;
    for s in selected {
        let ck = if s.config.kind == StrategyKind::Scratch {
            untrained(&s.config)?
        } else {
            eprintln!("pretraining {} on {} images ({} tuning)", s.name, train.len(), tune.len());
            pretrain_with_progress::<f32>(&s.config, &train, &tune, |e| {
                eprintln!(
                    "  {} epoch {:>3}: train {:.5} validation {:.5}",
                    s.name, e.epoch, e.train_loss, e.validation_loss
                );
            })?
        };
        let path = checkpoint_path(cfg, &s.name);
        ck.save(&path)?;
        write_loss_curve(&dir.join(format!("{}_loss.csv", s.name)), &ck)?;
        println!("{}: selected epoch {} -> {}", s.name, ck.selected_epoch, path.display());
    }
    Ok(())
}

fn write_loss_curve(path: &Path, ck: &Checkpoint) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    w.write_record(["epoch", "train_loss", "validation_loss", "selected"]).map_err(io)?;
    for e in &ck.history {
        let selected = if e.epoch == ck.selected_epoch { "1" } else { "0" };
        w.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.validation_loss.to_string(), selected.into()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Encodings of the three evaluation sets, reusing files written by
/// `extract` when they belong to the current checkpoint.
fn encodings(cfg: &RunConfig, cohort: &Cohort, name: &str, save: bool) -> Result<[EncodingMatrix; 3], CliError> {
    let ck_path = checkpoint_path(cfg, name);
    let ck = load_checkpoint(cfg, name)?;
    let stamp = fnv(&fs::read(&ck_path).map_err(|e| CliError::io(&ck_path, e))?).to_string();
    let dir = cfg.encoding_dir(name);
    let stamp_path = dir.join(STAMP_FILE);
    let files = ENCODING_SETS.map(|s| dir.join(format!("{s}.enc")));
    let sets = cohort.eval_sets();
    if !save && fs::read_to_string(&stamp_path).is_ok_and(|s| s == stamp) {
        let loaded: Result<Vec<EncodingMatrix>, _> = files.iter().map(|f| EncodingMatrix::load(f)).collect();
        if let Ok(m) = loaded {
            if m.iter().zip(sets).all(|(m, r)| m.rows() == r.len()) {
                return Ok(m.try_into().expect("three sets"));
            }
        }
    }
    eprintln!("encoding {} images with {name}", sets.iter().map(|s| s.len()).sum::<usize>());
    let mut out = Vec::with_capacity(3);
    for records in sets {
        out.push(extract_from_checkpoint(&ck, records)?);
    }
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    for (m, f) in out.iter().zip(&files) {
        m.save(f)?;
    }
    fs::write(&stamp_path, stamp).map_err(|e| CliError::io(&stamp_path, e))?;
    Ok(out.try_into().expect("three sets"))
}

pub fn extract(cfg: &RunConfig, names: &[String]) -> Result<(), CliError> {
    let selected = cfg.select(names)?;
    let cohort = load_cohort(cfg)?;
    for s in selected {
        encodings(cfg, &cohort, &s.name, true)?;
        cfg.write_copy(&cfg.encoding_dir(&s.name))?;
        println!("{}: {}", s.name, cfg.encoding_dir(&s.name).display());
    }
    Ok(())
}

fn sweep_strategy(cfg: &RunConfig, cohort: &Cohort, s: &NamedStrategy) -> Result<SweepStrategy, CliError> {
    let source = if end_to_end(s) {
        let arc = |r: &[CohortRecord]| -> Arc<[CohortRecord]> { r.to_vec().into() };
        StrategySource::EndToEnd(end_to_end_scorer(
            s.config.clone(),
            arc(&cohort.pool),
            arc(&cohort.internal),
            arc(&cohort.external),
        )?)
    } else {
        let [pool, internal, external] = encodings(cfg, cohort, &s.name, false)?;
        StrategySource::Encodings { pool, internal, external }
    };
    Ok(SweepStrategy { name: s.name.clone(), source })
}

fn print_aggregates(report: &SweepReport) {
    println!(
        "{:<24} {:>4} {:>6} {:>9} {:>4} {:>7} {:>7} {:>7}",
        "strategy", "h", "size", "cohort", "ok", "auc", "sd", "e/o"
    );
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_owned(), |v| format!("{v:.3}"));
    for a in &report.aggregates {
        println!(
            "{:<24} {:>4} {:>6} {:>9} {:>4} {:>7} {:>7} {:>7}",
            a.strategy,
            a.horizon.name(),
            a.size,
            a.cohort.name(),
            a.n_ok,
            fmt(a.mean_auc),
            fmt(a.sd_auc),
            fmt(a.mean_eo_ratio)
        );
    }
}

pub fn eval(cfg: &RunConfig, names: &[String], size: Option<usize>) -> Result<(), CliError> {
    let selected = cfg.select(names)?;
    let cohort = load_cohort(cfg)?;
    let size = size.unwrap_or(cohort.pool.len());
    let sweep = SweepConfig { sizes: vec![size], trials: 1, ..cfg.sweep.clone() };
    let strategies = selected.iter().map(|s| sweep_strategy(cfg, &cohort, s)).collect::<Result<Vec<_>, _>>()?;
    let report = run_sweep(cohort.data(), &strategies, &sweep, &[], |_| Ok(()))?;
    let dir = cfg.eval_dir();
    cfg.write_copy(&dir)?;
    report.write_dir(&dir, &sweep)?;
    print_aggregates(&report);
    Ok(())
}

pub fn sweep(cfg: &RunConfig, names: &[String]) -> Result<(), CliError> {
    let selected = cfg.select(names)?;
    let cohort = load_cohort(cfg)?;
    let dir = cfg.sweep_dir();
    cfg.write_copy(&dir)?;
    let strategies = selected.iter().map(|s| sweep_strategy(cfg, &cohort, s)).collect::<Result<Vec<_>, _>>()?;
    let (mut sink, existing) = TrialSink::open(&dir.join(TRIALS_FILE))?;
    if !existing.is_empty() {
        eprintln!("resuming: {} trial rows already recorded", existing.len());
    }
    let report = run_sweep(cohort.data(), &strategies, &cfg.sweep, &existing, |rows| {
        if let Some(r) = rows.first() {
            eprintln!("  {} {} size {} trial {}", r.strategy, r.horizon, r.size, r.trial);
        }
        sink.append(rows)
    })?;
    for p in report.write_dir(&dir, &cfg.sweep)? {
        println!("wrote {}", p.display());
    }
    print_aggregates(&report);
    Ok(())
}

pub fn report(cfg: &RunConfig, trials: Option<&Path>) -> Result<(), CliError> {
    let path = trials.map(Path::to_path_buf).unwrap_or_else(|| cfg.sweep_dir().join(TRIALS_FILE));
    if !path.exists() {
        return Err(CliError::Runtime(format!("{} not found; run `sweep` first", path.display())));
    }
    let rows = read_trials_csv(&path)?;
    let order: Vec<String> = cfg.strategies.iter().map(|s| s.name.clone()).collect();
    let report = SweepReport::from_trials(&order, rows);
    let dir = cfg.out.join("report");
    cfg.write_copy(&dir)?;
    report.write_dir(&dir, &cfg.sweep)?;
    print_aggregates(&report);
    Ok(())
}
