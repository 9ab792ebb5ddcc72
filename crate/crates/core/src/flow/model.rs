use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{fit_flow, FitOptions, Flow, FlowArchitecture, TrainingHistory};
use crate::error::{Error, Result};
use crate::market_data::{assemble_conditioning, consecutive_pairs, fit_scaling, MarketDay, Profile, ScalingState, CONDITIONING_DIM, HOURS};
use crate::metrics::ScenarioSet;
use crate::numerics::{AdamConfig, Matrix, Rng};
use crate::pca::{PcaCodec, DEFAULT_COMPONENTS};

pub const MODEL_FORMAT: &str = "dapflow-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub n_coupling: usize,
    pub hidden_depth: usize,
    pub hidden_width: usize,
    pub n_components: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 64,
            learning_rate: 1e-4,
            seed: 0,
            n_coupling: 5,
            hidden_depth: 2,
            hidden_width: 21,
            n_components: DEFAULT_COMPONENTS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("n_coupling", self.n_coupling),
            ("hidden_width", self.hidden_width),
            ("n_components", self.n_components),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_components > HOURS {
            return Err(Error::Config(format!("n_components must not exceed {HOURS}")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.n_coupling < 3 {
            log::warn!("{} coupling layers: shallow flows tend to underfit", self.n_coupling);
        }
        Ok(())
    }

    pub fn architecture(&self) -> FlowArchitecture {
        FlowArchitecture {
            latent_dim: self.n_components,
            cond_dim: CONDITIONING_DIM,
            n_coupling: self.n_coupling,
            hidden_depth: self.hidden_depth,
            hidden_width: self.hidden_width,
        }
    }

    /// Smallest number of (day, previous-day) pairs `train` accepts.
    pub fn min_pairs(&self) -> usize {
        self.batch_size.max(self.n_components + 1)
    }
}

/// Trained pipeline: scaling, PCA codec and flow, together with the record
/// of how it was fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    pub config: TrainConfig,
    pub scaling: ScalingState,
    pub codec: PcaCodec,
    pub flow: Flow,
    pub history: TrainingHistory,
    /// Earliest and latest target dates seen in training.
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub n_train_pairs: usize,
}

/// Encoded targets and conditioning rows for every usable pair.
struct TrainingSet {
    codes: Matrix,
    conds: Matrix,
    dates: Vec<NaiveDate>,
}

fn training_set(days: &[MarketDay], scaling: &ScalingState, n_components: usize) -> Result<(PcaCodec, TrainingSet)> {
    let pairs: Vec<(&MarketDay, &MarketDay)> = consecutive_pairs(days).collect();
    let scaled: Vec<Profile> = pairs.iter().map(|(d, _)| scaling.scale_price_profile(&d.price)).collect();
    let codec = PcaCodec::fit(&Matrix::from_rows(&scaled)?, n_components)?;
    let codes: Vec<Vec<f64>> = scaled.iter().map(|x| codec.encode(x)).collect();
    let conds = pairs
        .iter()
        .map(|(d, p)| assemble_conditioning(d, p, scaling).map(|c| c.values().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        codec,
        TrainingSet {
            codes: Matrix::from_rows(&codes)?,
            conds: Matrix::from_rows(&conds)?,
            dates: pairs.iter().map(|(d, _)| d.date).collect(),
        },
    ))
}

/// Fits scaling, PCA and the flow on `days` (sorted by date).
pub fn train(days: &[MarketDay], config: &TrainConfig) -> Result<FlowModel> {
    config.validate()?;
    if days.windows(2).any(|w| w[0].date >= w[1].date) {
        return Err(Error::Config("training days must be strictly increasing in date".into()));
    }
    let n_pairs = consecutive_pairs(days).count();
    if n_pairs < config.min_pairs() {
        return Err(Error::EmptyInput(format!(
            "{n_pairs} usable day pairs, training needs at least {}",
            config.min_pairs()
        )));
    }
    let scaling = fit_scaling(days)?;
    let (codec, set) = training_set(days, &scaling, config.n_components)?;
    let mut flow = Flow::new(config.architecture(), &mut Rng::derived(config.seed, "init", 0))?;
    let history = fit_flow(
        &mut flow,
        &set.codes,
        &set.conds,
        &FitOptions {
            epochs: config.epochs,
            batch_size: config.batch_size,
            adam: AdamConfig {
                learning_rate: config.learning_rate,
                ..AdamConfig::default()
            },
            seed: config.seed,
        },
    )?;
    Ok(FlowModel {
        config: *config,
        scaling,
        codec,
        flow,
        history,
        train_start: set.dates[0],
        train_end: *set.dates.last().unwrap(),
        n_train_pairs: set.dates.len(),
    })
}

impl FlowModel {
    /// Conditioning vector for `day` under this model's scaling.
    pub fn conditioning(&self, day: &MarketDay, previous: &MarketDay) -> Result<Vec<f64>> {
        Ok(assemble_conditioning(day, previous, &self.scaling)?.values().to_vec())
    }

    pub fn encode_price(&self, price: &Profile) -> Vec<f64> {
        self.codec.encode(&self.scaling.scale_price_profile(price))
    }

    /// Log-density (nats) of a raw price profile on the encoded space.
    pub fn log_prob(&self, price: &Profile, y: &[f64]) -> Result<f64> {
        self.flow.log_prob(&self.encode_price(price), y)
    }

    /// Mean NLL over every usable pair in `days`.
    pub fn mean_nll(&self, days: &[MarketDay]) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0;
        for (d, p) in consecutive_pairs(days) {
            total -= self.log_prob(&d.price, &self.conditioning(d, p)?)?;
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyInput("no usable day pairs".into()));
        }
        Ok(total / n as f64)
    }

    /// `n` price scenarios in EUR/MWh for conditioning `y`.
    pub fn sample(&self, y: &[f64], n: usize, rng: &mut Rng, date: NaiveDate) -> Result<ScenarioSet> {
        let k = self.codec.n_components();
        let z = Matrix::from_vec(n, k, rng.sample_standard_normal(n * k))?;
        let mut ys = Matrix::zeros(n, y.len());
        for r in 0..n {
            ys.row_mut(r).copy_from_slice(y);
        }
        let codes = self.flow.inverse_batch(&z, &ys)?;
        let mut out = Matrix::zeros(n, HOURS);
        for (r, code) in codes.row_iter().enumerate() {
            let x = self.codec.decode(code);
            for (o, v) in out.row_mut(r).iter_mut().zip(x) {
                *o = self.scaling.unscale_price(v);
            }
        }
        ScenarioSet::new(date, out)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: FlowModel,
}

pub fn save_model(model: &FlowModel, path: &Path) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer(
        file,
        &ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: model.clone(),
        },
    )?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FlowModel> {
    let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported model format {} v{}",
            path.display(),
            file.format,
            file.version
        )));
    }
    Ok(file.model)
}
