//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use pretrain_bench::autodiff::{grad_check_many, BatchNormConfig, Conv2dSpec, Graph, Padding, Tensor, Var};
use pretrain_bench::data::{
    generate_cohort, split_by_patient, CohortRecord, CohortTag, Horizon, SynthConfig, FINDING_NAMES,
};
use pretrain_bench::eval::{
    auc, eo_ratio, extract_from_checkpoint, lambda_grid, lasso_logistic_fit, lasso_path, run_sweep, EncodingMatrix,
    LassoModel, StrategySource, SweepConfig, SweepData, SweepReport, SweepStrategy, TestCohort,
};
use pretrain_bench::losses::{
    autoencoder_loss, moco_loss, ntxent_batch_loss, ntxent_pair_loss, supervised_loss, AutoencoderTerms, LambdaTriple,
    SupervisedTargets,
};
use pretrain_bench::nn::PredictionHeadOutput;
use pretrain_bench::pretrain::{
    momentum_update, pretrain, untrained, Checkpoint, MocoQueue, StrategyConfig, StrategyKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contracts `y` with fixed random weights so every output element matters.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> pretrain_bench::Result<Var> {
    let w = randn(g.shape(y), seed ^ 0xABCD);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type Case = (&'static str, Vec<Vec<usize>>, Box<dyn Fn(&mut Graph<f64>, &[Var], u64) -> pretrain_bench::Result<Var>>);

fn gradient_cases() -> Vec<Case> {
    fn unary(
        name: &'static str,
        shape: Vec<usize>,
        f: fn(&mut Graph<f64>, Var) -> pretrain_bench::Result<Var>,
    ) -> Case {
        (
            name,
            vec![shape],
            Box::new(move |g, v, s| {
                let y = f(g, v[0])?;
                weighted_sum(g, y, s)
            }),
        )
    }
    fn binary(
        name: &'static str,
        a: Vec<usize>,
        b: Vec<usize>,
        f: fn(&mut Graph<f64>, Var, Var) -> pretrain_bench::Result<Var>,
    ) -> Case {
        (
            name,
            vec![a, b],
            Box::new(move |g, v, s| {
                let y = f(g, v[0], v[1])?;
                weighted_sum(g, y, s)
            }),
        )
    }
    let head = |v: &[Var]| PredictionHeadOutput { finding_logits: v[0], sex_logit: v[1], age_estimate: v[2] };
    let targets = |b: usize, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bit = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { 1.0 } else { 0.0 };
        SupervisedTargets {
            findings: (0..b * FINDING_NAMES.len()).map(|_| bit(&mut rng)).collect(),
            sex: (0..b).map(|_| bit(&mut rng)).collect(),
            age: (0..b).map(|_| StandardNormal.sample(&mut rng)).collect(),
        }
    };
    vec![
        binary("add", vec![3, 4], vec![3, 4], |g, a, b| g.add(a, b)),
        binary("sub", vec![5], vec![5], |g, a, b| g.sub(a, b)),
        binary("mul", vec![3, 4], vec![3, 4], |g, a, b| g.mul(a, b)),
        binary("matmul", vec![3, 4], vec![4, 2], |g, a, b| g.matmul(a, b)),
        binary("add_bias", vec![2, 3, 2, 2], vec![3], |g, a, b| g.add_bias(a, b)),
        binary("conv2d", vec![2, 2, 5, 5], vec![3, 2, 3, 3], |g, a, b| g.conv2d(a, b, Conv2dSpec::default())),
        binary("conv2d_strided", vec![1, 2, 7, 6], vec![2, 2, 3, 3], |g, a, b| {
            g.conv2d(a, b, Conv2dSpec { stride: 2, padding: Padding::Explicit(1) })
        }),
        binary("cosine_similarity", vec![3, 5], vec![3, 5], |g, a, b| g.cosine_similarity(a, b)),
        binary("concat", vec![2, 3], vec![2, 2], |g, a, b| g.concat(&[a, b], 1)),
        unary("transpose", vec![3, 4], |g, x| g.transpose(x)),
        unary("reshape", vec![2, 6], |g, x| g.reshape(x, &[3, 2, 2])),
        unary("relu", vec![10], |g, x| Ok(g.relu(x))),
        unary("sigmoid", vec![10], |g, x| Ok(g.sigmoid(x))),
        unary("maxpool2d", vec![2, 2, 7, 7], |g, x| g.maxpool2d(x, 3, 2)),
        unary("upsample_nearest2d", vec![1, 2, 3, 3], |g, x| g.upsample_nearest2d(x, 2)),
        unary("global_avg_pool", vec![2, 3, 3, 3], |g, x| g.global_avg_pool(x)),
        unary("mean", vec![4, 3], |g, x| {
            let s = g.square(x);
            Ok(g.mean(s))
        }),
        unary("sum", vec![4, 3], |g, x| {
            let s = g.sum(x);
            Ok(g.exp(s))
        }),
        unary("abs", vec![10], |g, x| Ok(g.abs(x))),
        unary("square", vec![10], |g, x| Ok(g.square(x))),
        unary("exp", vec![10], |g, x| Ok(g.exp(x))),
        unary("log", vec![10], |g, x| {
            let e = g.exp(x);
            let p = g.add_scalar(e, 0.5);
            g.log(p)
        }),
        unary("scale", vec![4], |g, x| Ok(g.scale(x, -2.5))),
        unary("normalize_rows", vec![3, 4], |g, x| g.normalize_rows(x)),
        (
            "batchnorm2d_train",
            vec![vec![2, 3, 4, 4], vec![3], vec![3]],
            Box::new(|g, v, s| {
                let (mut m, mut var) = (vec![0.0; 3], vec![1.0; 3]);
                let y = g.batchnorm2d(v[0], v[1], v[2], &mut m, &mut var, BatchNormConfig::default(), true)?;
                weighted_sum(g, y, s)
            }),
        ),
        (
            "batchnorm2d_eval",
            vec![vec![2, 3, 2, 2], vec![3], vec![3]],
            Box::new(|g, v, s| {
                let (mut m, mut var) = (vec![0.2, -0.1, 0.0], vec![1.5, 0.5, 2.0]);
                let y = g.batchnorm2d(v[0], v[1], v[2], &mut m, &mut var, BatchNormConfig::default(), false)?;
                weighted_sum(g, y, s)
            }),
        ),
        ("softmax_cross_entropy", vec![vec![4, 5]], Box::new(|g, v, _| g.softmax_cross_entropy(v[0], &[0, 3, 4, 1]))),
        (
            "bce_with_logits",
            vec![vec![6]],
            Box::new(|g, v, _| g.bce_with_logits(v[0], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0], 30.0)),
        ),
        ("loss:ntxent", vec![vec![6, 5]], Box::new(|g, v, _| ntxent_batch_loss(g, v[0], 0.5))),
        (
            "loss:moco",
            vec![vec![3, 4]],
            Box::new(|g, v, s| {
                let unit = |t: Tensor<f64>| {
                    let d = t.shape()[1];
                    let data = t.data().chunks(d).flat_map(|r| {
                        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                        r.iter().map(move |x| x / n).collect::<Vec<_>>()
                    });
                    Tensor::new(t.shape().to_vec(), data.collect()).unwrap()
                };
                let keys = unit(randn(&[3, 4], s + 100));
                let queue = unit(randn(&[7, 4], s + 200));
                moco_loss(g, v[0], &keys, &queue, 0.2)
            }),
        ),
        (
            "loss:supervised",
            vec![vec![3, 14], vec![3, 1], vec![3, 1]],
            Box::new(move |g, v, s| supervised_loss(g, &head(v), &targets(3, s))),
        ),
        (
            "loss:autoencoder",
            vec![vec![2, 1, 4, 4], vec![2, 6], vec![2, 14], vec![2, 1], vec![2, 1]],
            Box::new(move |g, v, s| {
                let images = g.constant(randn(&[2, 1, 4, 4], s + 300));
                let preds = head(&v[2..]);
                let t = targets(2, s);
                let terms = AutoencoderTerms {
                    images,
                    reconstructions: v[0],
                    encodings: v[1],
                    preds: Some(&preds),
                    targets: Some(&t),
                };
                autoencoder_loss(g, &terms, &LambdaTriple::new(1.0, 20.0, 0.1), true)
            }),
        ),
    ]
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let cases = gradient_cases();
    let mut worst = (0.0, "");
    for (name, shapes, f) in &cases {
        for seed in 0..5u64 {
            let inputs: Vec<Tensor<f64>> =
                shapes.iter().enumerate().map(|(i, s)| randn(s, seed * 31 + i as u64)).collect();
            let err = grad_check_many(|g, v| f(g, v, seed), &inputs, 1e-6).map_err(|e| format!("{name}: {e}"))?;
            check(err < 1e-4, format!("{name} seed {seed}: relative error {err:.2e}"))?;
            if err > worst.0 {
                worst = (err, name);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("{} checks over seeds 0-4, worst {:.2e} ({}), {secs:.1}s", cases.len(), worst.0, worst.1))
}

fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn oracle_ntxent(z: &Tensor<f64>, tau: f64) -> f64 {
    let d = z.shape()[1];
    let rows: Vec<&[f64]> = z.data().chunks(d).collect();
    let n = rows.len();
    let mut total = 0.0;
    for i in 0..n {
        let j = i ^ 1;
        let denom: f64 = (0..n).filter(|&k| k != i).map(|k| (oracle_cos(rows[i], rows[k]) / tau).exp()).sum();
        total += -((oracle_cos(rows[i], rows[j]) / tau).exp() / denom).ln();
    }
    total / n as f64
}

fn oracle_moco(q: &Tensor<f64>, k: &Tensor<f64>, queue: &Tensor<f64>, tau: f64) -> f64 {
    let d = q.shape()[1];
    let qs: Vec<&[f64]> = q.data().chunks(d).collect();
    let ks: Vec<&[f64]> = k.data().chunks(d).collect();
    let negs: Vec<&[f64]> = queue.data().chunks(d).collect();
    let mut total = 0.0;
    for (qi, ki) in qs.iter().zip(&ks) {
        let pos = (oracle_cos(qi, ki) / tau).exp();
        let neg: f64 = negs.iter().map(|n| (oracle_cos(qi, n) / tau).exp()).sum();
        total += -(pos / (pos + neg)).ln();
    }
    total / qs.len() as f64
}

fn unit_rows(t: Tensor<f64>) -> Tensor<f64> {
    let d = t.shape()[1];
    let mut data = Vec::with_capacity(t.numel());
    for r in t.data().chunks(d) {
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(r.iter().map(|x| x / n));
    }
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

fn scalar_loss(f: impl FnOnce(&mut Graph<f64>, Var) -> pretrain_bench::Result<Var>, z: &Tensor<f64>) -> f64 {
    let mut g = Graph::new();
    let v = g.constant(z.clone());
    let loss = f(&mut g, v).unwrap();
    g.value(loss).item()
}

fn contrastive_fixtures() -> Outcome {
    let same = Tensor::new(vec![4, 3], [0.3, -1.2, 0.7].repeat(4)).unwrap();
    let ln3 = 3f64.ln();
    let pair = ntxent_pair_loss(0, 1, &same, 0.1).map_err(|e| e.to_string())?;
    let batch = scalar_loss(|g, z| ntxent_batch_loss(g, z, 0.1), &same);
    check((pair - ln3).abs() < 1e-9 && (batch - ln3).abs() < 1e-9, format!("identical rows: {pair}, {batch} vs ln 3"))?;

    let k = 16;
    let key = unit_rows(randn(&[1, 8], 5));
    let queue = Tensor::new(vec![k, 8], key.data().repeat(k)).unwrap();
    let uniform = scalar_loss(|g, q| moco_loss(g, q, &key, &queue, 0.07), &randn(&[1, 8], 6));
    check((uniform - ((k + 1) as f64).ln()).abs() < 1e-9, format!("uniform MoCo {uniform} vs ln(K+1)"))?;

    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let z = randn(&[8, 6], 40 + seed);
        let got = scalar_loss(|g, v| ntxent_batch_loss(g, v, 0.1), &z);
        worst = worst.max((got - oracle_ntxent(&z, 0.1)).abs());
        let p = ntxent_pair_loss(2, 3, &z, 0.1).map_err(|e| e.to_string())?;
        let d = 6;
        let rows: Vec<&[f64]> = z.data().chunks(d).collect();
        let denom: f64 = (0..8).filter(|&k| k != 2).map(|k| (oracle_cos(rows[2], rows[k]) / 0.1).exp()).sum();
        worst = worst.max((p + ((oracle_cos(rows[2], rows[3]) / 0.1).exp() / denom).ln()).abs());

        let q = randn(&[4, 6], 60 + seed);
        let keys = unit_rows(randn(&[4, 6], 70 + seed));
        let queue = unit_rows(randn(&[16, 6], 80 + seed));
        let got = scalar_loss(|g, v| moco_loss(g, v, &keys, &queue, 0.07), &q);
        worst = worst.max((got - oracle_moco(&q, &keys, &queue, 0.07)).abs());
    }
    check(worst < 1e-10, format!("brute-force mismatch {worst:.2e}"))?;
    Ok(format!("ln 3 and ln(K+1) fixtures exact to 1e-9; seeded batches within {worst:.1e} of brute force"))
}

fn moco_mechanics() -> Outcome {
    let (m, q) = (0.9, [0.5, -2.0, 3.0]);
    let mut k = vec![1.0, 1.0, -1.0];
    let k0 = k.clone();
    for _ in 0..10 {
        momentum_update(&mut k, &q, m).map_err(|e| e.to_string())?;
    }
    let mut blend: f64 = 0.0;
    for i in 0..3 {
        let expect = m.powi(10) * k0[i] + (1.0 - m.powi(10)) * q[i];
        blend = blend.max((k[i] - expect).abs());
    }
    check(blend < 1e-12, format!("blend error {blend:.2e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (cap, d) = (8, 3);
    let mut queue = MocoQueue::<f64>::new(cap, d).map_err(|e| e.to_string())?;
    let mut reference: VecDeque<Vec<f64>> = VecDeque::new();
    for op in 0..100 {
        let b = rng.random_range(1..=cap);
        let keys = unit_rows(randn(&[b, d], 1000 + op));
        queue.push(&keys).map_err(|e| e.to_string())?;
        for r in keys.data().chunks(d) {
            if reference.len() == cap {
                reference.pop_front();
            }
            reference.push_back(r.to_vec());
        }
        let flat: Vec<f64> = reference.iter().flatten().copied().collect();
        let got = queue.to_tensor().map_err(|e| e.to_string())?;
        check(got.data() == &flat[..], format!("queue diverged from the reference deque at op {op}"))?;
    }
    Ok(format!("10-step blend within {blend:.1e}; FIFO matches a reference deque over 100 pushes"))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logistic_problem(n: usize, beta: &[f64], b0: f64, seed: u64) -> (EncodingMatrix, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = beta.len();
    let data: Vec<f64> = (0..n * p).map(|_| StandardNormal.sample(&mut rng)).collect();
    let y = (0..n)
        .map(|r| {
            let z = b0 + (0..p).map(|j| data[r * p + j] * beta[j]).sum::<f64>();
            rng.random::<f64>() < sigmoid(z)
        })
        .collect();
    (EncodingMatrix::new(n, p, data).unwrap(), y)
}

fn gd_logistic(x: &EncodingMatrix, y: &[bool]) -> Vec<f64> {
    let (n, p) = (x.rows(), x.cols());
    let mut w = vec![0.0; p + 1];
    for _ in 0..200_000 {
        let mut g = vec![0.0; p + 1];
        for r in 0..n {
            let z = w[p] + x.row(r).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let res = (sigmoid(z) - if y[r] { 1.0 } else { 0.0 }) / n as f64;
            for j in 0..p {
                g[j] += res * x.row(r)[j];
            }
            g[p] += res;
        }
        for (wj, gj) in w.iter_mut().zip(&g) {
            *wj -= 0.5 * gj;
        }
        if g.iter().all(|v| v.abs() < 1e-12) {
            break;
        }
    }
    w
}

fn probe_correctness() -> Outcome {
    let (x, y) = logistic_problem(20, &[0.8, -0.6, 0.4], 0.2, 1);
    let m = lasso_logistic_fit(&x, &y, 0.0).map_err(|e| e.to_string())?;
    let oracle = gd_logistic(&x, &y);
    let fitted: Vec<f64> = m.weights.iter().copied().chain([m.intercept]).collect();
    let gap = fitted.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(gap < 1e-4, format!("lambda=0 differs from the gradient-descent oracle by {gap:.2e}"))?;

    let (x, y) = logistic_problem(200, &[1.0, -0.5, 0.3], -0.7, 3);
    let big = lasso_logistic_fit(&x, &y, 1e6).map_err(|e| e.to_string())?;
    let rate = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
    check(big.weights.iter().all(|w| *w == 0.0), "lambda=1e6 left nonzero weights")?;
    check(
        (big.intercept - (rate / (1.0 - rate)).ln()).abs() < 1e-9,
        "lambda=1e6 intercept is not the base-rate log-odds",
    )?;

    let (x, y) = logistic_problem(120, &[1.0, 0.6, -0.8, 0.2, 0.3, -0.1, 0.0, 0.5, 0.05, 0.0], 0.0, 6);
    let grid = lambda_grid(&x, &y, 10, 1e-3).map_err(|e| e.to_string())?;
    let counts: Vec<usize> =
        lasso_path(&x, &y, &grid).map_err(|e| e.to_string())?.iter().map(LassoModel::nonzero).collect();
    check(counts.windows(2).all(|w| w[0] <= w[1]), format!("nonzero counts not monotone: {counts:?}"))?;
    Ok(format!("lambda=0 within {gap:.1e} of oracle; full shrinkage exact; nonzero path {counts:?}"))
}

fn metric_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut cases = 0;
    while cases < 1000 {
        let n = rng.random_range(2..=8);
        let s: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0u8..5))).collect();
        let y: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        if !(y.iter().any(|&v| v) && y.iter().any(|&v| !v)) {
            continue;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if y[i] && !y[j] {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        let got = auc(&s, &y).map_err(|e| e.to_string())?;
        check((got - num / den).abs() < 1e-12, format!("AUC {got} vs pair count {} on {s:?} {y:?}", num / den))?;
        let p: Vec<f64> = s.iter().map(|v| v / 4.0).collect();
        let eo = eo_ratio(&p, &y).map_err(|e| e.to_string())?;
        let naive = p.iter().sum::<f64>() / y.iter().filter(|&&v| v).count() as f64;
        check(eo == naive, format!("E/O {eo} vs {naive}"))?;
        cases += 1;
    }
    Ok("1000 random label/score sets: AUC equals exhaustive pair counting, E/O equals sum(p)/sum(y)".into())
}

fn records(c: &pretrain_bench::data::Cohort, tag: CohortTag) -> Vec<CohortRecord> {
    c.indices(tag).into_iter().map(|i| c.records[i].clone()).collect()
}

fn split_pretrain(pre: &[CohortRecord], seed: u64) -> (Vec<CohortRecord>, Vec<CohortRecord>) {
    let (a, b) = split_by_patient(pre, 0.9, seed).unwrap();
    (a.iter().map(|&i| pre[i].clone()).collect(), b.iter().map(|&i| pre[i].clone()).collect())
}

struct TestSets {
    pool: Vec<CohortRecord>,
    internal: Vec<CohortRecord>,
    external: Vec<CohortRecord>,
}

impl TestSets {
    fn new(c: &pretrain_bench::data::Cohort) -> Self {
        Self {
            pool: records(c, CohortTag::Train),
            internal: records(c, CohortTag::InternalTest),
            external: records(c, CohortTag::ExternalTest),
        }
    }

    fn data(&self) -> SweepData<'_> {
        SweepData { pool: &self.pool, internal: &self.internal, external: &self.external }
    }

    fn strategy(&self, name: &str, ck: &Checkpoint) -> SweepStrategy {
        let enc = |r: &[CohortRecord]| extract_from_checkpoint(ck, r).unwrap();
        SweepStrategy {
            name: name.into(),
            source: StrategySource::Encodings {
                pool: enc(&self.pool),
                internal: enc(&self.internal),
                external: enc(&self.external),
            },
        }
    }
}

fn mean_auc(r: &SweepReport, s: &str, size: usize) -> f64 {
    r.aggregate(s, Horizon::Y12, size, TestCohort::Internal).and_then(|a| a.mean_auc).unwrap_or(f64::NAN)
}

/// Full desk-profile experiment; returns the report for the determinism check.
fn synthetic_experiment(store: &mut Option<(TestSets, Vec<SweepStrategy>, SweepConfig, Vec<u8>)>) -> Outcome {
    let t0 = Instant::now();
    let cohort = generate_cohort(&SynthConfig { n_patients: 20_000, seed: 0, ..SynthConfig::default() })
        .map_err(|e| e.to_string())?;
    let (train, tune) = split_pretrain(&records(&cohort, CohortTag::Pretrain), 0);
    let semi =
        pretrain::<f32>(&StrategyConfig::desk(StrategyKind::SemiAe), &train, &tune).map_err(|e| e.to_string())?;
    let scratch = untrained(&StrategyConfig::desk(StrategyKind::Scratch)).map_err(|e| e.to_string())?;
    let sets = TestSets::new(&cohort);
    let strategies = vec![sets.strategy("semi_ae", &semi), sets.strategy("scratch", &scratch)];
    let t_pre = t0.elapsed().as_secs_f64();
    let cfg = SweepConfig {
        sizes: vec![200, 500, 1000, 2000],
        trials: 5,
        horizons: vec![Horizon::Y12],
        ..SweepConfig::default()
    };
    let report = run_sweep(sets.data(), &strategies, &cfg, &[], |_| Ok(())).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    report.write_csv(&mut bytes).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();

    let curve = |s: &str| cfg.sizes.iter().map(|&n| mean_auc(&report, s, n)).collect::<Vec<_>>();
    let (semi_curve, scratch_curve) = (curve("semi_ae"), curve("scratch"));
    let fmt = |c: &[f64]| c.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join("/");
    let eo = |s: &str| {
        report.aggregate(s, Horizon::Y12, 2000, TestCohort::Internal).and_then(|a| a.mean_eo_ratio).unwrap_or(f64::NAN)
    };
    let detail = format!(
        "semi_ae AUC {} | scratch AUC {} | E/O@2000 {:.3}/{:.3} | pretrain+extract {t_pre:.0}s, total {secs:.0}s",
        fmt(&semi_curve),
        fmt(&scratch_curve),
        eo("semi_ae"),
        eo("scratch")
    );

    let gap = semi_curve[0] - scratch_curve[0];
    let mut failures = Vec::new();
    if !(gap >= 0.03) {
        failures.push(format!("(a) semi_ae - scratch at 200 = {gap:.3} < 0.03"));
    }
    for (name, c) in [("semi_ae", &semi_curve), ("scratch", &scratch_curve)] {
        if let Some(w) = c.windows(2).position(|w| !(w[1] >= w[0] - 0.02)) {
            failures.push(format!("(b) {name} AUC drops after size {}", cfg.sizes[w]));
        }
    }
    for s in ["semi_ae", "scratch"] {
        if !(0.8..=1.25).contains(&eo(s)) {
            failures.push(format!("(c) {s} E/O {:.3} outside [0.8, 1.25]", eo(s)));
        }
    }
    *store = Some((sets, strategies, cfg, bytes));
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", failures.join("; ")))
    }
}

fn event_rate_calibration() -> Outcome {
    let cfg =
        SynthConfig { n_patients: 60_000, seed: 7, pretrain_frac: 0.0, external_frac: 0.0, ..SynthConfig::default() };
    let c = generate_cohort(&cfg).map_err(|e| e.to_string())?;
    let n = c.records.len() as f64;
    let rate = |h: Horizon| c.records.iter().filter(|r| r.outcome(h)).count() as f64 / n;
    let mut out = Vec::new();
    for (h, target) in [(Horizon::Y1, 0.00456), (Horizon::Y12, 0.14205)] {
        let r = rate(h);
        let rel = (r - target).abs() / target;
        check(rel <= 0.2, format!("{h}: realized {r:.5} vs target {target} ({:.1}% off)", 100.0 * rel))?;
        out.push(format!("{h} {r:.5} ({:+.1}%)", 100.0 * (r - target) / target));
    }
    Ok(format!("{} trial-population patients: {}", c.records.len(), out.join(", ")))
}

fn small_pipeline(seed: u64) -> Vec<u8> {
    let cohort =
        generate_cohort(&SynthConfig { n_patients: 1500, seed, calibration_samples: 20_000, ..SynthConfig::default() })
            .unwrap();
    let (train, tune) = split_pretrain(&records(&cohort, CohortTag::Pretrain), seed);
    let cfg = StrategyConfig {
        epochs: 2,
        steps_per_epoch: Some(4),
        input_size: 32,
        seed,
        ..StrategyConfig::desk(StrategyKind::SemiAe)
    };
    let ck = pretrain::<f32>(&cfg, &train, &tune).unwrap();
    let sets = TestSets::new(&cohort);
    let strategies = [sets.strategy("semi_ae", &ck)];
    let sweep = SweepConfig { sizes: vec![100, 200], trials: 2, seed, ..SweepConfig::default() };
    let report = run_sweep(sets.data(), &strategies, &sweep, &[], |_| Ok(())).unwrap();
    let mut bytes = Vec::new();
    report.write_csv(&mut bytes).unwrap();
    bytes
}

fn determinism(store: &Option<(TestSets, Vec<SweepStrategy>, SweepConfig, Vec<u8>)>) -> Outcome {
    let a = small_pipeline(3);
    let b = small_pipeline(3);
    check(a == b, "small synth -> pretrain -> sweep pipeline produced different report bytes")?;
    check(a != small_pipeline(4), "a different seed produced the same report")?;
    let mut detail = format!("small pipeline report {} bytes identical across runs", a.len());
    if let Some((sets, strategies, cfg, bytes)) = store {
        let again = run_sweep(sets.data(), strategies, cfg, &[], |_| Ok(())).map_err(|e| e.to_string())?;
        let mut out = Vec::new();
        again.write_csv(&mut out).map_err(|e| e.to_string())?;
        check(&out == bytes, "desk sweep rerun produced different report bytes")?;
        detail.push_str(&format!("; desk sweep rerun {} bytes identical", out.len()));
    }
    Ok(detail)
}

fn sensitivity_parity() -> Outcome {
    let cohort = generate_cohort(&SynthConfig {
        n_patients: 1500,
        seed: 5,
        calibration_samples: 20_000,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let (train, tune) = split_pretrain(&records(&cohort, CohortTag::Pretrain), 5);
    let base = StrategyConfig {
        epochs: 1,
        steps_per_epoch: Some(3),
        input_size: 32,
        ..StrategyConfig::desk(StrategyKind::SemiAe)
    };
    let variants = [
        ("semi_ae", base.clone()),
        ("semi_ae_reg10", StrategyConfig { lambdas: LambdaTriple::new(10.0, 20.0, 1e-4), ..base.clone() }),
        ("semi_ae_recon200", StrategyConfig { lambdas: LambdaTriple::new(1.0, 200.0, 1e-4), ..base.clone() }),
        ("semi_ae_norm1e-3", StrategyConfig { lambdas: LambdaTriple::new(1.0, 20.0, 1e-3), ..base.clone() }),
        ("semi_ae_no_recon", StrategyConfig { disable_recon: true, ..base.clone() }),
        ("semi_ae_no_supervision", StrategyConfig { disable_supervision: true, ..base.clone() }),
    ];
    let sets = TestSets::new(&cohort);
    let mut strategies = Vec::new();
    for (name, cfg) in &variants {
        let ck = pretrain::<f32>(cfg, &train, &tune).map_err(|e| format!("{name}: {e}"))?;
        strategies.push(sets.strategy(name, &ck));
    }
    let sweep = SweepConfig { sizes: vec![100, 200], trials: 2, ..SweepConfig::default() };
    let report = run_sweep(sets.data(), &strategies, &sweep, &[], |_| Ok(())).map_err(|e| e.to_string())?;
    let per = report.trials.len() / variants.len();
    for (name, _) in &variants {
        let rows: Vec<_> = report.trials.iter().filter(|t| t.strategy == *name).collect();
        check(rows.len() == per && per == 2 * 2 * 2, format!("{name}: {} rows", rows.len()))?;
        for r in &rows {
            let twin = report
                .trials
                .iter()
                .find(|t| t.strategy == "semi_ae" && t.size == r.size && t.trial == r.trial)
                .unwrap();
            check(r.train_events == twin.train_events, format!("{name}: different training sample"))?;
        }
        check(report.aggregates.iter().filter(|a| a.strategy == *name).count() == 4, format!("{name}: aggregates"))?;
    }
    Ok(format!("{} variants x {per} trial rows each, shared samples", variants.len()))
}

fn main() -> ExitCode {
    let mut all_pass = true;
    let mut run = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("PASS {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                all_pass = false;
                println!("FAIL {name}: {d} [{secs:.1}s]");
            }
        }
    };
    let mut store = None;
    run("gradient-correctness", &mut gradient_correctness);
    run("contrastive-loss-fixtures", &mut contrastive_fixtures);
    run("moco-mechanics", &mut moco_mechanics);
    run("probe-correctness", &mut probe_correctness);
    run("metric-correctness", &mut metric_correctness);
    run("event-rate-calibration", &mut event_rate_calibration);
    run("end-to-end-synthetic-experiment", &mut || synthetic_experiment(&mut store));
    run("determinism", &mut || determinism(&store));
    run("sensitivity-harness-parity", &mut sensitivity_parity);
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
