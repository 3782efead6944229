//! Stochastic-gradient training of the control networks.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphon::GraphonKernel;
use crate::market::{
    label_grid, sample_batch_with, sample_batch_with_labels, seeded_rng, Batch, LabelSampling,
    MarketModel,
};
use crate::model::{ControlNets, NetworkConfig};
use crate::nn::{adam_step, AdamConfig, AdamState};
use crate::oracle::ClosedFormParams;
use crate::sim::{
    rollout_backward_with, rollout_with, shooting_loss, FrozenMeanField, Interaction,
    RolloutOptions,
};

pub const HISTORY_SCHEMA: &str = "gfbsde.train_history.v1";

/// Multiply the learning rate by `factor` every `every` iterations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub every: usize,
    pub factor: f64,
}

fn default_iterations() -> usize {
    10_000
}
fn default_batch() -> usize {
    512
}
fn default_val_size() -> usize {
    4096
}
fn default_eval_period() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub lr_decay: Option<LrDecay>,
    #[serde(default = "default_val_size")]
    pub validation_size: usize,
    #[serde(default)]
    pub validation_seed: u64,
    #[serde(default = "default_eval_period")]
    pub eval_period: usize,
    #[serde(default)]
    pub label_sampling: LabelSampling,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            batch_size: default_batch(),
            adam: AdamConfig::default(),
            lr_decay: None,
            validation_size: default_val_size(),
            validation_seed: 0,
            eval_period: default_eval_period(),
            label_sampling: LabelSampling::Uniform,
            seed: 0,
            network: NetworkConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iteration count K must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch size M must be at least 2 for the interaction term".into(),
            ));
        }
        if self.validation_size == 0 || self.eval_period == 0 {
            return Err(Error::Config(
                "validation size and evaluation period must be positive".into(),
            ));
        }
        if let Some(d) = self.lr_decay {
            if d.every == 0 || !(d.factor > 0.0) {
                return Err(Error::Config("learning-rate decay needs every > 0 and factor > 0".into()));
            }
        }
        self.adam.validate()?;
        self.network.y0_spec().validate()?;
        Ok(())
    }

    /// Number of evaluation points, `ceil(K / period)`.
    pub fn history_len(&self) -> usize {
        self.iterations.div_ceil(self.eval_period)
    }

    fn is_eval_point(&self, k: usize) -> bool {
        k % self.eval_period == self.eval_period - 1 || k + 1 == self.iterations
    }

    fn learning_rate(&self, k: usize) -> f64 {
        match self.lr_decay {
            Some(d) => self.adam.learning_rate * d.factor.powi((k / d.every) as i32),
            None => self.adam.learning_rate,
        }
    }
}

/// Seeded network initialization; the stream is independent of the batch stream.
pub fn init_nets(cfg: &TrainConfig, model: &MarketModel) -> Result<ControlNets> {
    let mut rng = seeded_rng(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    ControlNets::init(&cfg.network, model.n_star, &mut rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Percent; absent when no closed form exists.
    pub val_rel_error: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub history: Vec<HistoryEntry>,
    pub nets: ControlNets,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn final_entry(&self) -> &HistoryEntry {
        self.history.last().expect("K >= 1 gives a non-empty history")
    }

    /// `iteration,train_loss,val_loss,val_rel_error`, blank error when absent.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# schema: {HISTORY_SCHEMA}")?;
        writeln!(w, "iteration,train_loss,val_loss,val_rel_error")?;
        for h in &self.history {
            write!(w, "{},{:e},{:e},", h.iteration, h.train_loss, h.val_loss)?;
            match h.val_rel_error {
                Some(e) => writeln!(w, "{e:e}")?,
                None => writeln!(w)?,
            }
        }
        Ok(())
    }
}

/// Mean over labels of `|y0(u, x0) - Y_0(u)| / |Y_0(u)|` in percent, skipping
/// labels where the reference vanishes.
pub fn validation_relative_error(
    nets: &ControlNets,
    oracle: impl Fn(f64) -> Result<f64>,
    labels: &[f64],
    x0: f64,
) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for &u in labels {
        let reference = oracle(u)?;
        if reference.abs() < 1e-12 {
            continue;
        }
        total += (nets.y0_value(u, x0)? - reference).abs() / reference.abs();
        count += 1;
    }
    if count == 0 {
        return Err(Error::Domain("reference Y_0 vanishes at every label".into()));
    }
    Ok(100.0 * total / count as f64)
}

/// Source of the interaction term during training.
#[derive(Clone, Copy, Debug)]
pub enum TrainTarget<'a> {
    /// Full game, labels resampled every iteration.
    Equilibrium,
    /// Single-player problems on the frozen field's labels.
    BestResponse(&'a FrozenMeanField),
}

/// Runs `K` Adam iterations on the shooting loss of the live game.
pub fn train(
    cfg: &TrainConfig,
    g: &GraphonKernel,
    model: &MarketModel,
    init: ControlNets,
) -> Result<TrainReport> {
    train_with(cfg, g, model, init, TrainTarget::Equilibrium)
}

pub fn train_with(
    cfg: &TrainConfig,
    g: &GraphonKernel,
    model: &MarketModel,
    init: ControlNets,
    target: TrainTarget<'_>,
) -> Result<TrainReport> {
    cfg.validate()?;
    model.validate()?;
    g.validate()?;
    let grid = model.grid()?;
    init.check_compatible(grid.n_steps())?;
    let start = Instant::now();

    let (interaction, fixed_labels) = match target {
        TrainTarget::Equilibrium => (Interaction::Live, None),
        TrainTarget::BestResponse(f) => (Interaction::Frozen(f), Some(f.labels.clone())),
    };
    let val_labels = fixed_labels
        .clone()
        .unwrap_or_else(|| label_grid(cfg.validation_size));
    let validation = sample_batch_with_labels(
        model,
        &grid,
        val_labels,
        &mut seeded_rng(cfg.validation_seed),
    )?;
    let oracle = ClosedFormParams::from_model(model, *g).ok();
    let x0_ref = model.xi.mean();

    let mut nets = init;
    let mut adam = AdamState::new(&nets, cfg.adam)?;
    let mut rng = seeded_rng(cfg.seed);
    let opts = RolloutOptions::default();
    let mut history = Vec::with_capacity(cfg.history_len());
    let wrap = |iteration: usize| move |e: Error| Error::Training {
        iteration,
        source: Box::new(e),
    };

    for k in 0..cfg.iterations {
        let batch: Batch = match &fixed_labels {
            Some(labels) => sample_batch_with_labels(model, &grid, labels.clone(), &mut rng)?,
            None => sample_batch_with(model, &grid, cfg.batch_size, cfg.label_sampling, &mut rng)?,
        };
        let lg = rollout_backward_with(&nets, g, model, &grid, &batch, interaction, opts)
            .map_err(wrap(k))?;
        if !lg.loss.is_finite() {
            return Err(wrap(k)(Error::NonFiniteLoss { iteration: k }));
        }
        adam.set_learning_rate(cfg.learning_rate(k));
        adam_step(&mut nets, &lg.grads, &mut adam).map_err(wrap(k))?;

        if cfg.is_eval_point(k) {
            let val = rollout_with(&nets, g, model, &grid, &validation, interaction, opts)
                .map_err(wrap(k))?;
            let val_loss = shooting_loss(&val);
            if !val_loss.is_finite() {
                return Err(wrap(k)(Error::NonFiniteLoss { iteration: k }));
            }
            let val_rel_error = match (&oracle, target) {
                (Some(p), TrainTarget::Equilibrium) => Some(validation_relative_error(
                    &nets,
                    |u| p.y0(u),
                    &validation.labels,
                    x0_ref,
                )?),
                _ => None,
            };
            history.push(HistoryEntry {
                iteration: k + 1,
                train_loss: lg.loss,
                val_loss,
                val_rel_error,
            });
        }
    }

    Ok(TrainReport {
        history,
        nets,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}
