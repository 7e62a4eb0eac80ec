use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::checkpoint::{Checkpoint, EpochRecord};
use super::config::{StrategyConfig, StrategyKind};
use super::moco::{momentum_update_params, MocoQueue};
use super::optim::{adam_step, one_cycle_lr, AdamConfig, AdamState};
use super::pclr::{sample_pclr_batch, PatientIndex};
use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::data::{augment, batch_tensor, preprocess, AgeScaler, CohortRecord};
use crate::error::{Error, Result};
use crate::losses::{
    autoencoder_loss, moco_loss, ntxent_batch_loss, supervised_loss, AutoencoderTerms, LambdaTriple, SupervisedTargets,
    LOGIT_CLIP,
};
use crate::nn::{Forward, HeadConfig, Mode, Network, NetworkConfig};
use crate::rng::{derive_seed, stream};

const TAG_INIT: u64 = 11;
const TAG_STEPS: u64 = 12;
const TAG_VALID: u64 = 13;
const TAG_QUEUE: u64 = 14;

/// Images of one step. For PCLR, `views` interleaves the two views of each
/// pair; for MoCo, `keys` holds the second view of each query.
struct Batch {
    views: Vec<Vec<f32>>,
    keys: Option<Vec<Vec<f32>>>,
    /// Record index of every row of `views`.
    rows: Vec<usize>,
}

struct MocoState<T: Real> {
    key_net: Network<T>,
    queue: MocoQueue<T>,
}

struct Ctx<'a> {
    cfg: &'a StrategyConfig,
    records: &'a [CohortRecord],
    ages: Option<AgeScaler>,
}

impl Ctx<'_> {
    fn targets<T: Real>(&self, rows: &[usize]) -> SupervisedTargets<T> {
        let scaler = self.ages.expect("supervised strategies fit an age scaler");
        let b = |v: bool| if v { T::one() } else { T::zero() };
        SupervisedTargets {
            findings: rows.iter().flat_map(|&i| self.records[i].findings.map(b)).collect(),
            sex: rows.iter().map(|&i| b(self.records[i].sex)).collect(),
            age: rows.iter().map(|&i| T::from_f64(scaler.apply(self.records[i].age))).collect(),
        }
    }
}

fn key_network_config(cfg: &StrategyConfig) -> NetworkConfig {
    let mut nc = cfg.network_config();
    nc.heads = HeadConfig { projection: nc.heads.projection, ..HeadConfig::default() };
    nc
}

/// Normalized key projections of `views`, from a gradient-free pass.
fn moco_keys<T: Real>(key_net: &mut Network<T>, views: &[Vec<f32>], size: usize, mode: Mode) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let binding = key_net.params.bind(&mut g, false);
    let mut f = Forward::new(&key_net.params, &binding, mode);
    let x = g.constant(batch_tensor(views, size)?);
    let h = key_net.encode(&mut g, &mut f, x)?;
    let z = key_net.project(&mut g, &mut f, h)?;
    let z = g.normalize_rows(z)?;
    let updates = std::mem::take(&mut f.updates);
    let keys = g.value(z).clone();
    key_net.params.apply_updates(updates);
    Ok(keys)
}

/// Builds the strategy objective for `batch` on `g`.
fn batch_loss<T: Real>(
    g: &mut Graph<T>,
    f: &mut Forward<'_, T>,
    net: &Network<T>,
    ctx: &Ctx<'_>,
    batch: &Batch,
    moco: Option<(&Tensor<T>, &Tensor<T>)>,
) -> Result<Var> {
    let cfg = ctx.cfg;
    let x = g.constant(batch_tensor(&batch.views, cfg.input_size)?);
    let h = net.encode(g, f, x)?;
    let kind = cfg.kind;
    let supervised = |g: &mut Graph<T>, f: &mut Forward<'_, T>, loss: Var| -> Result<Var> {
        if !cfg.supervised() {
            return Ok(loss);
        }
        let preds = net.predict_head(g, f, h)?;
        let sup = supervised_loss(g, &preds, &ctx.targets(&batch.rows))?;
        let sup = g.scale(sup, cfg.lambdas.lambda_reg);
        g.add(loss, sup)
    };
    match kind {
        k if k.is_autoencoder() => {
            let lambdas = LambdaTriple {
                lambda_recon: if cfg.reconstructs() { cfg.lambdas.lambda_recon } else { 0.0 },
                ..cfg.lambdas
            };
            let x_hat = if cfg.reconstructs() { net.decode(g, f, h)? } else { x };
            let (preds, targets) = if cfg.supervised() {
                (Some(net.predict_head(g, f, h)?), Some(ctx.targets(&batch.rows)))
            } else {
                (None, None)
            };
            let terms = AutoencoderTerms {
                images: x,
                reconstructions: x_hat,
                encodings: h,
                preds: preds.as_ref(),
                targets: targets.as_ref(),
            };
            autoencoder_loss(g, &terms, &lambdas, cfg.supervised())
        }
        k if k.is_pclr() => {
            let z = net.project(g, f, h)?;
            let loss = ntxent_batch_loss(g, z, cfg.tau)?;
            supervised(g, f, loss)
        }
        k if k.is_moco() => {
            let (keys, queue) = moco.ok_or_else(|| Error::invalid("MoCo step without keys"))?;
            let z = net.project(g, f, h)?;
            let loss = moco_loss(g, z, keys, queue, cfg.tau)?;
            supervised(g, f, loss)
        }
        StrategyKind::Transfer => {
            let preds = net.predict_head(g, f, h)?;
            supervised_loss(g, &preds, &ctx.targets(&batch.rows))
        }
        _ => {
            let logit = net.outcome_logit(g, f, h)?;
            let y: Vec<T> = batch
                .rows
                .iter()
                .map(|&i| if ctx.records[i].outcome(cfg.horizon) { T::one() } else { T::zero() })
                .collect();
            g.bce_with_logits(logit, &y, LOGIT_CLIP)
        }
    }
}

fn image_views(
    records: &[CohortRecord],
    rows: &[usize],
    cfg: &StrategyConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f32>>> {
    rows.iter().map(|&i| augment(&*records[i].image.load()?, &cfg.augment, cfg.input_size, rng)).collect()
}

fn pclr_batch(
    records: &[CohortRecord],
    patients: &PatientIndex,
    b: usize,
    cfg: &StrategyConfig,
    rng: &mut impl Rng,
) -> Result<Batch> {
    let pairs = sample_pclr_batch(records, patients, b, &cfg.augment, cfg.input_size, rng)?;
    let mut views = Vec::with_capacity(2 * b);
    let mut rows = Vec::with_capacity(2 * b);
    for p in pairs {
        let [a, c] = p.views;
        views.push(a);
        views.push(c);
        rows.push(p.first);
        rows.push(p.second);
    }
    Ok(Batch { views, keys: None, rows })
}

fn plain_batch(records: &[CohortRecord], rows: Vec<usize>, cfg: &StrategyConfig, rng: &mut impl Rng) -> Result<Batch> {
    let views = image_views(records, &rows, cfg, rng)?;
    let keys = if cfg.kind.is_moco() { Some(image_views(records, &rows, cfg, rng)?) } else { None };
    Ok(Batch { views, keys, rows })
}

/// Fixed validation batches, built once so epochs are comparable.
fn validation_batches(tune: &[CohortRecord], cfg: &StrategyConfig) -> Result<Vec<Batch>> {
    let mut rng = stream(cfg.seed, &[TAG_VALID]);
    let mut chosen: Vec<usize> = match cfg.validation_size {
        Some(n) if n < tune.len() => index::sample(&mut rng, tune.len(), n).into_vec(),
        _ => (0..tune.len()).collect(),
    };
    chosen.sort_unstable();
    let b = cfg.batch_size;
    if cfg.kind.is_pclr() {
        let subset: Vec<CohortRecord> = chosen.iter().map(|&i| tune[i].clone()).collect();
        let patients = PatientIndex::new(&subset);
        let mut groups: Vec<Vec<usize>> =
            (0..patients.len()).collect::<Vec<_>>().chunks(b).map(<[usize]>::to_vec).collect();
        if groups.len() > 1 && groups.last().is_some_and(|g| g.len() < 2) {
            let last = groups.pop().unwrap();
            groups.last_mut().unwrap().extend(last);
        }
        let mut out = Vec::new();
        for group in groups {
            let mut views = Vec::new();
            let mut rows = Vec::new();
            for p in group {
                let g = patients.group(p);
                let (i, j) = (g[0], *g.get(1).unwrap_or(&g[0]));
                for r in [i, j] {
                    views.push(augment(&*subset[r].image.load()?, &cfg.augment, cfg.input_size, &mut rng)?);
                    rows.push(chosen[r]);
                }
            }
            out.push(Batch { views, keys: None, rows });
        }
        return Ok(out);
    }
    chosen
        .chunks(b)
        .map(|rows| {
            let views = if cfg.kind.is_moco() {
                image_views(tune, rows, cfg, &mut rng)?
            } else {
                rows.iter().map(|&i| preprocess(&*tune[i].image.load()?, cfg.input_size)).collect::<Result<_>>()?
            };
            let keys = if cfg.kind.is_moco() { Some(image_views(tune, rows, cfg, &mut rng)?) } else { None };
            Ok(Batch { views, keys, rows: rows.to_vec() })
        })
        .collect()
}

fn validation_loss<T: Real>(
    net: &Network<T>,
    moco: Option<&mut MocoState<T>>,
    ctx: &Ctx<'_>,
    batches: &[Batch],
) -> Result<f64> {
    let queue = match &moco {
        Some(m) => Some(m.queue.to_tensor()?),
        None => None,
    };
    let mut moco = moco;
    let (mut total, mut weight) = (0.0, 0.0);
    for batch in batches {
        let keys = match (moco.as_deref_mut(), &batch.keys) {
            (Some(m), Some(k)) => Some(moco_keys(&mut m.key_net, k, ctx.cfg.input_size, Mode::Eval)?),
            _ => None,
        };
        let mut g = Graph::new();
        let binding = net.params.bind(&mut g, false);
        let mut f = Forward::new(&net.params, &binding, Mode::Eval);
        let pair = keys.as_ref().zip(queue.as_ref());
        let loss = batch_loss(&mut g, &mut f, net, ctx, batch, pair)?;
        let v = g.value(loss).item().as_f64();
        total += v * batch.rows.len() as f64;
        weight += batch.rows.len() as f64;
    }
    Ok(total / weight)
}

fn check_disjoint(train: &[CohortRecord], tune: &[CohortRecord]) -> Result<()> {
    let ids: BTreeSet<&str> = train.iter().map(|r| r.patient_id.as_str()).collect();
    if let Some(r) = tune.iter().find(|r| ids.contains(r.patient_id.as_str())) {
        return Err(Error::invalid(format!("patient {} appears in both train and tune sets", r.patient_id)));
    }
    Ok(())
}

/// [`pretrain_with_progress`] without a progress callback.
pub fn pretrain<T: Real>(config: &StrategyConfig, train: &[CohortRecord], tune: &[CohortRecord]) -> Result<Checkpoint> {
    pretrain_with_progress::<T>(config, train, tune, |_| {})
}

/// Trains the configured strategy and keeps the parameters of the epoch
/// with the lowest validation loss. `on_epoch` sees each epoch's losses.
pub fn pretrain_with_progress<T: Real>(
    config: &StrategyConfig,
    train: &[CohortRecord],
    tune: &[CohortRecord],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    if train.is_empty() || tune.is_empty() {
        return Err(Error::InsufficientData("pretraining needs non-empty train and tune sets".into()));
    }
    check_disjoint(train, tune)?;
    let cfg = config;
    let kind = cfg.kind;
    let b = cfg.batch_size;
    let mut net = Network::<T>::new(cfg.network_config(), derive_seed(cfg.seed, &[TAG_INIT]))?;
    let needs_ages = cfg.supervised() || kind == StrategyKind::Transfer;
    let ages = if needs_ages { Some(AgeScaler::fit(&train.iter().collect::<Vec<_>>())?) } else { None };

    let patients = PatientIndex::new(train);
    let pool = if kind.is_pclr() { patients.len() } else { train.len() };
    let mut steps = pool / b;
    if let Some(cap) = cfg.steps_per_epoch {
        steps = steps.min(cap);
    }
    if steps == 0 {
        return Err(Error::InsufficientData(format!("{pool} training units cannot fill a batch of {b}")));
    }
    let total = steps * cfg.epochs;

    let mut moco = if kind.is_moco() {
        let mut key_net = Network::<T>::new(key_network_config(cfg), 0)?;
        for i in 0..key_net.params.len() {
            let name = key_net.params.entry(i).name.clone();
            let q = net.params.find(&name).expect("key network is a sub-network of the query network");
            *key_net.params.tensor_mut(i) = net.params.tensor(q).clone();
        }
        let dim = net.projection_kind().expect("moco has a projection head").output_dim();
        let queue = MocoQueue::random(cfg.queue_size, dim, &mut stream(cfg.seed, &[TAG_QUEUE]))?;
        Some(MocoState { key_net, queue })
    } else {
        None
    };

    let valid_ctx = Ctx { cfg, records: tune, ages };
    let valid = validation_batches(tune, cfg)?;
    let ctx = Ctx { cfg, records: train, ages };
    let mut rng = stream(cfg.seed, &[TAG_STEPS]);
    let mut adam = AdamState::new(&net.params);
    let adam_cfg = AdamConfig::default();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, _)> = None;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for s in 0..steps {
            let batch = if kind.is_pclr() {
                pclr_batch(train, &patients, b, cfg, &mut rng)?
            } else {
                plain_batch(train, order[s * b..(s + 1) * b].to_vec(), cfg, &mut rng)?
            };
            let step = (epoch - 1) * steps + s;
            let lr = one_cycle_lr(step, total, cfg.max_lr)?;

            let (keys, queue) = match (&mut moco, &batch.keys) {
                (Some(m), Some(k)) => {
                    (Some(moco_keys(&mut m.key_net, k, cfg.input_size, Mode::Train)?), Some(m.queue.to_tensor()?))
                }
                _ => (None, None),
            };
            let mut g = Graph::new();
            let binding = net.params.bind(&mut g, true);
            let mut f = Forward::new(&net.params, &binding, Mode::Train);
            let loss = batch_loss(&mut g, &mut f, &net, &ctx, &batch, keys.as_ref().zip(queue.as_ref()))?;
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("{kind} loss at epoch {epoch}, step {}", s + 1)));
            }
            let updates = std::mem::take(&mut f.updates);
            let grads = g.backward(loss)?;
            let grad_refs: Vec<Option<&Tensor<T>>> =
                (0..net.params.len()).map(|i| binding.get(i).and_then(|v| grads.get(v))).collect();
            adam_step(&mut net.params, &grad_refs, &mut adam, lr, &adam_cfg).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {epoch}, step {}", s + 1)),
                other => other,
            })?;
            net.params.apply_updates(updates);
            if let (Some(m), Some(k)) = (&mut moco, keys) {
                momentum_update_params(&mut m.key_net.params, &net.params, cfg.momentum_m)?;
                m.queue.push(&k)?;
            }
            epoch_loss += value;
        }

        let validation = validation_loss(&net, moco.as_mut(), &valid_ctx, &valid)?;
        if !validation.is_finite() {
            return Err(Error::NonFinite(format!("{kind} validation loss at epoch {epoch}")));
        }
        let record = EpochRecord { epoch, train_loss: epoch_loss / steps as f64, validation_loss: validation };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(v, _, _)| validation < *v) {
            best = Some((validation, epoch, net.params.clone()));
        }
    }

    let (_, selected_epoch, params) = best.expect("at least one epoch");
    Ok(Checkpoint {
        strategy: cfg.clone(),
        network: cfg.network_config(),
        age_scaler: ages,
        history,
        selected_epoch,
        params: params.cast(),
    })
}

/// The configured network at its seeded initialization, untrained. This is
/// the random-init scratch baseline.
pub fn untrained(config: &StrategyConfig) -> Result<Checkpoint> {
    config.validate()?;
    let net = Network::<f64>::new(config.network_config(), derive_seed(config.seed, &[TAG_INIT]))?;
    Ok(Checkpoint {
        strategy: config.clone(),
        network: config.network_config(),
        age_scaler: None,
        history: Vec::new(),
        selected_epoch: 0,
        params: net.params,
    })
}
