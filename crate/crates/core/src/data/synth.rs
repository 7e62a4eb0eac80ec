use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use super::split::split_by_patient;
use super::{CohortRecord, CohortTag, Horizon, ImageRef};
use crate::error::{Error, Result};
use crate::nn::N_FINDINGS;
use crate::rng::{derive_seed, stream};

const TAG_LATENT: u64 = 1;
const TAG_LABEL: u64 = 2;
const TAG_NOISE: u64 = 3;
const TAG_CALIBRATE: u64 = 4;
const TAG_SPLIT: u64 = 5;

/// Age moments used to standardize age inside the generative model.
const AGE_CENTER: f64 = 59.0;
const AGE_SCALE: f64 = 23.7;
/// Trial-cohort age moments (uniform on [55, 77]).
const TRIAL_AGE_CENTER: f64 = 66.0;
const TRIAL_AGE_SCALE: f64 = 6.35;

/// Per-finding logistic loadings: intercept, frailty, cardio, opacity,
/// habitus, standardized age.
const FINDING_LOADINGS: [[f64; 6]; N_FINDINGS] = [
    [-1.5, 0.0, 2.0, 0.0, 0.0, 0.0],
    [-1.8, 0.0, 1.2, 0.0, 0.0, 0.4],
    [-1.0, 0.0, 0.0, 2.0, 0.0, 0.0],
    [-2.0, 0.0, 0.0, 1.5, 0.0, 0.0],
    [-2.2, 0.0, 1.0, 1.0, 0.0, 0.0],
    [-2.0, 0.5, 0.0, 1.2, 0.0, 0.0],
    [-2.0, 0.8, 0.8, 0.0, 0.0, 0.0],
    [-2.2, 1.8, 0.0, 0.0, 0.0, 0.0],
    [-2.5, 0.0, 0.0, 1.0, 0.0, 0.0],
    [-2.4, 0.8, 0.0, 0.0, 0.0, 0.6],
    [-2.3, 0.5, 0.0, 0.0, 0.0, 0.6],
    [-2.8, 0.0, 0.0, 0.0, -0.5, 0.5],
    [-3.0, 0.0, 0.0, 0.0, 0.7, 0.4],
    [0.3, -0.8, -1.2, -1.2, 0.0, 0.0],
];

/// Column names of the finding flags in manifests.
pub const FINDING_NAMES: [&str; N_FINDINGS] =
    ["f01", "f02", "f03", "f04", "f05", "f06", "f07", "f08", "f09", "f10", "f11", "f12", "f13", "f14"];

/// Linear predictor of one outcome horizon (before the calibrated intercept).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeCoefficients {
    pub frailty: f64,
    pub cardio: f64,
    pub opacity: f64,
    pub age: f64,
    /// Weight on a latent that never reaches the image.
    pub unobserved: f64,
}

impl OutcomeCoefficients {
    fn linear(&self, l: &Latents) -> f64 {
        let age = (l.age - TRIAL_AGE_CENTER) / TRIAL_AGE_SCALE;
        self.frailty * l.frailty
            + self.cardio * l.cardio
            + self.opacity * l.opacity
            + self.age * age
            + self.unobserved * l.unobserved
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub seed: u64,
    /// Stored image size; the longer side is cropped to square at load time.
    pub image_height: usize,
    pub image_width: usize,
    /// Share of patients in the pretraining cohort.
    pub pretrain_frac: f64,
    /// Share of patients in the shifted external cohort; the rest form the trial cohort.
    pub external_frac: f64,
    /// Share of trial patients held out as the internal test set.
    pub test_frac: f64,
    /// Pretraining patients get up to this many images.
    pub max_images_per_patient: usize,
    /// Chance of each additional pretraining image.
    pub extra_image_prob: f64,
    pub noise_sd: f64,
    /// Target event rates for the short and long horizons.
    pub event_rates: [f64; 2],
    /// Upward shift of frailty and opacity in the external cohort.
    pub external_shift: f64,
    pub outcome_y1: OutcomeCoefficients,
    pub outcome_y12: OutcomeCoefficients,
    /// Latent draws used to calibrate the outcome intercepts.
    pub calibration_samples: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 20_000,
            seed: 0,
            image_height: 80,
            image_width: 72,
            pretrain_frac: 0.6,
            external_frac: 0.1,
            test_frac: 0.2,
            max_images_per_patient: 3,
            extra_image_prob: 0.3,
            noise_sd: 0.03,
            event_rates: [0.00456, 0.14205],
            external_shift: 0.5,
            outcome_y1: OutcomeCoefficients { frailty: 1.2, cardio: 0.8, opacity: 0.9, age: 0.5, unobserved: 0.6 },
            outcome_y12: OutcomeCoefficients { frailty: 0.9, cardio: 0.6, opacity: 0.5, age: 0.8, unobserved: 0.6 },
            calibration_samples: 200_000,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::invalid("n_patients must be positive"));
        }
        if self.image_height < 8 || self.image_width < 8 {
            return Err(Error::invalid("image sides must be at least 8 pixels"));
        }
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        unit("pretrain_frac", self.pretrain_frac)?;
        unit("external_frac", self.external_frac)?;
        unit("test_frac", self.test_frac)?;
        unit("extra_image_prob", self.extra_image_prob)?;
        if self.pretrain_frac + self.external_frac > 1.0 {
            return Err(Error::invalid("pretrain_frac + external_frac exceeds 1"));
        }
        if self.max_images_per_patient == 0 {
            return Err(Error::invalid("max_images_per_patient must be positive"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::invalid("noise_sd must be finite and >= 0"));
        }
        for r in self.event_rates {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::invalid(format!("event rate {r} outside (0, 1)")));
            }
        }
        if self.calibration_samples == 0 {
            return Err(Error::invalid("calibration_samples must be positive"));
        }
        Ok(())
    }

    fn coefficients(&self, h: Horizon) -> &OutcomeCoefficients {
        match h {
            Horizon::Y1 => &self.outcome_y1,
            Horizon::Y12 => &self.outcome_y12,
        }
    }
}

/// Which distribution a patient's latents come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Population {
    Pretrain,
    Trial,
    External,
}

/// Hidden per-image state the renderer and label model read.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents {
    pub age: f64,
    pub male: bool,
    pub frailty: f64,
    pub cardio: f64,
    pub opacity: f64,
    pub habitus: f64,
    pub unobserved: f64,
    /// Seeds the placement of opacity blobs.
    pub layout: u64,
}

impl Latents {
    pub fn draw(pop: Population, shift: f64, rng: &mut impl Rng) -> Self {
        let (a, b) = match pop {
            Population::Pretrain => (18.0, 100.0),
            Population::Trial | Population::External => (55.0, 77.0),
        };
        let shift = if pop == Population::External { shift } else { 0.0 };
        let u: f64 = rng.random();
        let age = a + (b - a) * u;
        let male = rng.random_bool(0.5);
        let mut z = || -> f64 { StandardNormal.sample(rng) };
        let frailty = 0.9 * z() + 0.015 * (age - 60.0) + shift;
        let cardio = 0.85 * z() + 0.3 * frailty;
        let opacity = z() + shift;
        let habitus = z();
        let unobserved = z();
        let layout = rng.random();
        Self { age, male, frailty, cardio, opacity, habitus, unobserved, layout }
    }

    /// A later visit of the same patient: older, with drifted acute findings.
    fn revisit(&self, rng: &mut impl Rng) -> Self {
        let dt: f64 = rng.random_range(0.5..3.0);
        let dz: f64 = StandardNormal.sample(rng);
        Self { age: (self.age + dt).min(100.0), opacity: self.opacity + 0.5 * dz, layout: rng.random(), ..self.clone() }
    }

    fn age_std(&self) -> f64 {
        (self.age - AGE_CENTER) / AGE_SCALE
    }

    /// Probability of each finding flag.
    pub fn finding_probabilities(&self) -> [f64; N_FINDINGS] {
        let x = [1.0, self.frailty, self.cardio, self.opacity, self.habitus, self.age_std()];
        FINDING_LOADINGS.map(|w| sigmoid(w.iter().zip(&x).map(|(a, b)| a * b).sum()))
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Calibrated intercepts of the outcome model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub intercept_y1: f64,
    pub intercept_y12: f64,
    /// Mean model probability on the calibration draws, per horizon.
    pub expected_rates: [f64; 2],
}

/// True outcome probabilities given latents. The long horizon includes
/// every short-horizon event.
pub fn outcome_probabilities(config: &SynthConfig, cal: &Calibration, l: &Latents) -> [f64; 2] {
    let p1 = sigmoid(cal.intercept_y1 + config.outcome_y1.linear(l));
    let q12 = sigmoid(cal.intercept_y12 + config.outcome_y12.linear(l));
    [p1, p1 + (1.0 - p1) * q12]
}

fn bisect(target: f64, rate: impl Fn(f64) -> f64) -> Result<f64> {
    let (mut lo, mut hi) = (-40.0, 40.0);
    let (rlo, rhi) = (rate(lo), rate(hi));
    if target <= rlo || target >= rhi {
        let achieved = if target <= rlo { rlo } else { rhi };
        return Err(Error::Calibration { target, achieved });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fits both intercepts so the mean probability over trial-distribution
/// latents equals the configured event rates.
pub fn calibrate(config: &SynthConfig) -> Result<Calibration> {
    config.validate()?;
    let mut rng = stream(config.seed, &[TAG_CALIBRATE]);
    let draws: Vec<Latents> =
        (0..config.calibration_samples).map(|_| Latents::draw(Population::Trial, 0.0, &mut rng)).collect();
    let n = draws.len() as f64;
    let lin1: Vec<f64> = draws.iter().map(|l| config.coefficients(Horizon::Y1).linear(l)).collect();
    let lin12: Vec<f64> = draws.iter().map(|l| config.coefficients(Horizon::Y12).linear(l)).collect();

    let [t1, t12] = config.event_rates;
    let intercept_y1 = bisect(t1, |a| lin1.iter().map(|z| sigmoid(a + z)).sum::<f64>() / n)?;
    let p1: Vec<f64> = lin1.iter().map(|z| sigmoid(intercept_y1 + z)).collect();
    let rate12 = |b: f64| p1.iter().zip(&lin12).map(|(p, z)| p + (1.0 - p) * sigmoid(b + z)).sum::<f64>() / n;
    let intercept_y12 = bisect(t12, rate12)?;
    let expected_rates = [p1.iter().sum::<f64>() / n, rate12(intercept_y12)];
    Ok(Calibration { intercept_y1, intercept_y12, expected_rates })
}

#[inline]
fn soft(r: f64, edge: f64) -> f64 {
    ((1.0 - r) * edge).clamp(0.0, 1.0)
}

#[inline]
fn ellipse_r(x: f64, y: f64, cx: f64, cy: f64, ax: f64, ay: f64) -> f64 {
    (((x - cx) / ax).powi(2) + ((y - cy) / ay).powi(2)).sqrt()
}

/// Renders a frontal chest-film-like image from latents. With `noise_sd`
/// of zero the output depends on the latents alone.
pub fn render(l: &Latents, height: usize, width: usize, noise_sd: f64, rng: &mut impl Rng) -> Result<GrayImage> {
    let mut blob_rng = stream(l.layout, &[]);
    let n_blobs = ((l.opacity + 1.0) * 1.2).round().clamp(0.0, 4.0) as usize;
    let sex = if l.male { 1.0 } else { 0.0 };
    let lung_ax = (0.27 + 0.03 * l.frailty + 0.02 * sex).clamp(0.15, 0.4);
    let lung_ay = (0.56 + 0.05 * l.frailty).clamp(0.35, 0.75);
    let blobs: Vec<(f64, f64, f64)> = (0..n_blobs)
        .map(|_| {
            let side = if blob_rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let bx = side * 0.4 + blob_rng.random_range(-0.6..0.6) * lung_ax;
            let by = -0.08 + blob_rng.random_range(-0.6..0.6) * lung_ay;
            let br = 0.08 + 0.04 * blob_rng.random::<f64>();
            (bx, by, br)
        })
        .collect();
    let blob_level = 0.12 + 0.06 * l.opacity.clamp(-1.0, 3.0);
    let bone = (0.22 - 0.07 * l.age_std()).clamp(0.04, 0.4);
    let body_ax = 0.80 + 0.06 * l.habitus.clamp(-2.5, 2.5) + 0.05 * sex;
    let tissue = 0.38 * (1.0 + 0.08 * l.habitus.clamp(-2.5, 2.5));
    let lung_dark = (0.55 + 0.06 * l.frailty).clamp(0.3, 0.8);
    let heart_ax = (0.2 + 0.05 * l.cardio).max(0.1);
    let heart_ay = (0.2 + 0.025 * l.cardio).max(0.1);
    let haze = 0.03 * sigmoid(l.opacity);
    let edge = 0.5 * height.min(width) as f64 / 2.0;

    let mut values = Vec::with_capacity(height * width);
    for i in 0..height {
        let y = (i as f64 + 0.5) / height as f64 * 2.0 - 1.0;
        for j in 0..width {
            let x = (j as f64 + 0.5) / width as f64 * 2.0 - 1.0;
            let body = soft(ellipse_r(x, y, 0.0, 0.08, body_ax, 1.0), edge);
            let mut v = 0.04 + tissue * body;
            v += bone * soft(x.abs() / 0.08, edge * 0.1) * body;
            let lung = soft(ellipse_r(x, y, -0.4, -0.08, lung_ax, lung_ay), edge)
                .max(soft(ellipse_r(x, y, 0.4, -0.08, lung_ax, lung_ay), edge));
            if lung > 0.0 {
                let ribs = (0.5 + 0.5 * (2.0 * PI * (y * 4.5 - 0.6 * x * x)).cos()).powi(4);
                v = v * (1.0 - lung * lung_dark) + lung * (0.5 * bone * ribs + haze);
                for &(bx, by, br) in &blobs {
                    let d2 = (x - bx).powi(2) + (y - by).powi(2);
                    v += lung * blob_level * (-d2 / (2.0 * br * br)).exp();
                }
            }
            let heart = soft(ellipse_r(x, y, 0.1, 0.28, heart_ax, heart_ay), edge);
            v = v * (1.0 - heart) + 0.52 * heart;
            if noise_sd > 0.0 {
                let n: f64 = StandardNormal.sample(rng);
                v += noise_sd * n;
            }
            values.push(v as f32);
        }
    }
    GrayImage::from_unit(height, width, &values)
}

/// A generated cohort: records in patient order, their latents, and the
/// calibrated outcome model.
#[derive(Clone, Debug)]
pub struct Cohort {
    pub config: SynthConfig,
    pub calibration: Calibration,
    pub records: Vec<CohortRecord>,
    pub latents: Vec<Latents>,
}

impl Cohort {
    pub fn indices(&self, tag: CohortTag) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].cohort_tag == tag).collect()
    }

    /// True outcome probability of record `i`.
    pub fn true_probability(&self, i: usize, h: Horizon) -> f64 {
        outcome_probabilities(&self.config, &self.calibration, &self.latents[i])[h.index()]
    }
}

struct PatientDraw {
    pop: Population,
    records: Vec<(CohortRecord, Latents)>,
}

fn patient_id(i: usize) -> String {
    format!("P{i:06}")
}

/// Draws latents, renders images, and assigns labels and cohorts.
pub fn generate_cohort(config: &SynthConfig) -> Result<Cohort> {
    config.validate()?;
    let calibration = calibrate(config)?;
    let n = config.n_patients;
    let n_pre = (n as f64 * config.pretrain_frac).round() as usize;
    let n_ext = ((n as f64 * config.external_frac).round() as usize).min(n - n_pre);

    let patients: Vec<PatientDraw> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<PatientDraw> {
            let pop = if i < n_pre {
                Population::Pretrain
            } else if i < n - n_ext {
                Population::Trial
            } else {
                Population::External
            };
            let mut rng = stream(config.seed, &[TAG_LATENT, i as u64]);
            let base = Latents::draw(pop, config.external_shift, &mut rng);
            let mut visits = 1;
            if pop == Population::Pretrain {
                while visits < config.max_images_per_patient && rng.random_bool(config.extra_image_prob) {
                    visits += 1;
                }
            }
            let probs = outcome_probabilities(config, &calibration, &base);
            let mut label_rng = stream(config.seed, &[TAG_LABEL, i as u64]);
            let y1 = label_rng.random_bool(probs[0]);
            let y12 = y1 || label_rng.random_bool(((probs[1] - probs[0]) / (1.0 - probs[0])).clamp(0.0, 1.0));

            let mut records = Vec::with_capacity(visits);
            let mut lat = base;
            for v in 0..visits {
                if v > 0 {
                    lat = lat.revisit(&mut rng);
                }
                let fp = lat.finding_probabilities();
                let findings = fp.map(|p| label_rng.random_bool(p));
                let mut noise = stream(config.seed, &[TAG_NOISE, i as u64, v as u64]);
                let img = render(&lat, config.image_height, config.image_width, config.noise_sd, &mut noise)?;
                let rec = CohortRecord {
                    patient_id: patient_id(i),
                    image: ImageRef::Inline(Arc::new(img)),
                    findings,
                    sex: lat.male,
                    age: lat.age,
                    y1,
                    y12,
                    cohort_tag: match pop {
                        Population::Pretrain => CohortTag::Pretrain,
                        Population::Trial => CohortTag::Train,
                        Population::External => CohortTag::ExternalTest,
                    },
                };
                records.push((rec, lat.clone()));
            }
            Ok(PatientDraw { pop, records })
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut latents = Vec::new();
    let mut trial = Vec::new();
    for p in patients {
        for (r, l) in p.records {
            if p.pop == Population::Trial {
                trial.push(records.len());
            }
            records.push(r);
            latents.push(l);
        }
    }
    if !trial.is_empty() && config.test_frac > 0.0 {
        let trial_records: Vec<CohortRecord> = trial.iter().map(|&i| records[i].clone()).collect();
        let split_seed = derive_seed(config.seed, &[TAG_SPLIT]);
        let (_, test) = split_by_patient(&trial_records, 1.0 - config.test_frac, split_seed)?;
        for t in test {
            records[trial[t]].cohort_tag = CohortTag::InternalTest;
        }
    }
    Ok(Cohort { config: config.clone(), calibration, records, latents })
}
