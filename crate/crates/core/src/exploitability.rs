//! Exploitability of a trained control: freeze the population's interaction
//! term, train a best response against it, and compare utilities.
//!
//! Utilities of a policy against the frozen population are estimated by Monte
//! Carlo after a change of measure. Writing `sigma pi = eta theta + delta`,
//! the exponential utility of terminal wealth against a deterministic
//! benchmark `B` is
//!
//! ```text
//! V = -E_Q[ exp( -(xi - B) / eta + int (delta^2 / (2 eta^2) - theta^2 / 2) dt ) ]
//! ```
//!
//! where under `Q` the player's Brownian motion has drift `-(theta + delta / eta)`.
//! Every path contributes a term that only grows with `|delta|`, so the
//! comparison of two policies on common paths carries no first-order noise.

use std::io::Write;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphon::GraphonKernel;
use crate::market::{label_grid, sample_batch_with_labels, seeded_rng, Batch, MarketModel, TimeGrid};
use crate::metrics::equilibrium_utility;
use crate::model::ControlNets;
use crate::sim::{rollout, FrozenMeanField, Population};
use crate::train::{init_nets, train_with, TrainConfig, TrainReport, TrainTarget};

pub const EXPLOITABILITY_SCHEMA: &str = "gfbsde.exploitability.v1";

/// Runs the trained networks once on `batch` and records the interaction
/// term of every particle at every step.
pub fn freeze_mean_field(
    nets: &ControlNets,
    g: &GraphonKernel,
    model: &MarketModel,
    grid: &TimeGrid,
    batch: &Batch,
) -> Result<FrozenMeanField> {
    let traj = rollout(nets, g, model, grid, batch)?;
    if traj.mean_field.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("frozen mean field has non-finite entries".into()));
    }
    Ok(FrozenMeanField {
        labels: batch.labels.clone(),
        values: traj.mean_field,
    })
}

/// Fresh networks trained with the interaction term read from `frozen`.
pub fn best_response_train(
    frozen: &FrozenMeanField,
    cfg: &TrainConfig,
    g: &GraphonKernel,
    model: &MarketModel,
    init: ControlNets,
) -> Result<TrainReport> {
    train_with(cfg, g, model, init, TrainTarget::BestResponse(frozen))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExploitabilitySummary {
    /// `(1/N) sum_i (V_br - V_eq)`.
    pub average: f64,
    /// Same with every negative term replaced by 0.
    pub clamped_average: f64,
    /// Labels where the best response did worse than the equilibrium.
    pub negative_terms: usize,
    pub min_gap: f64,
}

pub fn average_exploitability(v_eq: &[f64], v_br: &[f64]) -> Result<ExploitabilitySummary> {
    if v_eq.len() != v_br.len() {
        return Err(Error::shape("best-response utilities", v_eq.len(), v_br.len()));
    }
    if v_eq.is_empty() {
        return Err(Error::Config("exploitability needs at least one label".into()));
    }
    let n = v_eq.len() as f64;
    let gaps: Vec<f64> = v_br.iter().zip(v_eq).map(|(b, e)| b - e).collect();
    Ok(ExploitabilitySummary {
        average: gaps.iter().sum::<f64>() / n,
        clamped_average: gaps.iter().map(|g| g.max(0.0)).sum::<f64>() / n,
        negative_terms: gaps.iter().filter(|&&g| g < 0.0).count(),
        min_gap: gaps.iter().cloned().fold(f64::INFINITY, f64::min),
    })
}

/// `B_i = rho xi_mean (1/M) sum_j G(u_i, u_j) + sum_n m_i(t_n) dt_n`, the
/// expected weighted population wealth implied by the frozen field.
pub fn frozen_benchmark(
    frozen: &FrozenMeanField,
    g: &GraphonKernel,
    model: &MarketModel,
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    let m = frozen.labels.len();
    if frozen.values.dim() != (m, grid.n_steps()) {
        return Err(Error::shape("frozen mean field", m * grid.n_steps(), frozen.values.len()));
    }
    let pop = Population::new(*g, &frozen.labels)?;
    let mut deg = vec![0.0; m];
    pop.apply(&vec![1.0 / m as f64; m], &mut deg);
    let xi = model.xi.mean();
    Ok((0..m)
        .map(|i| {
            let drift: f64 = (0..grid.n_steps()).map(|n| frozen.values[[i, n]] * grid.dt(n)).sum();
            model.rho * xi * deg[i] + drift
        })
        .collect())
}

/// Monte Carlo utility of playing `nets` against the benchmarks `benchmark[i]`
/// for every label, `paths` common paths per label drawn from `seed`.
pub fn policy_utilities(
    nets: &ControlNets,
    model: &MarketModel,
    grid: &TimeGrid,
    labels: &[f64],
    benchmark: &[f64],
    paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    nets.check_compatible(grid.n_steps())?;
    if labels.len() != benchmark.len() {
        return Err(Error::shape("benchmarks", labels.len(), benchmark.len()));
    }
    if paths == 0 {
        return Err(Error::Config("policy evaluation needs at least one path".into()));
    }
    let n_steps = grid.n_steps();
    let horizon = grid.horizon();
    let mut out = Vec::with_capacity(labels.len());
    let mut input = Array2::zeros((paths, nets.z_input_dim()));
    let mut x = vec![0.0; paths];
    let mut w = vec![0.0; paths];
    let mut phi = vec![0.0; paths];

    for (i, &u) in labels.iter().enumerate() {
        let eta = model.eta_positive(u)?;
        // same paths for every label and every policy
        let mut rng = seeded_rng(seed);
        let x0: Vec<f64> = {
            let probe = sample_batch_with_labels(model, &TimeGrid::uniform(horizon, 1)?, vec![u; paths], &mut rng)?;
            probe.x0
        };
        x.copy_from_slice(&x0);
        w.fill(0.0);
        phi.fill(0.0);
        for n in 0..n_steps {
            let dt = grid.dt(n);
            for p in 0..paths {
                let row = input.row_mut(p).into_slice().expect("standard layout");
                nets.write_z_input(row, grid.node(n) / horizon, u, x[p], model.theta_at(w[p]));
            }
            let cache = nets.z_net(n).forward_batch(input.view())?;
            let z = cache.output();
            for p in 0..paths {
                let theta = model.theta_at(w[p]);
                let delta = z[[p, 0]];
                let a = delta + eta * theta;
                let xi: f64 = StandardNormal.sample(&mut rng);
                let dq = xi * dt.sqrt();
                phi[p] += (0.5 * delta * delta / (eta * eta) - 0.5 * theta * theta) * dt;
                x[p] += a * (-delta / eta * dt + dq);
                w[p] += -(theta + delta / eta) * dt + dq;
            }
        }
        let mean: f64 = (0..paths)
            .map(|p| (-(x0[p] - benchmark[i]) / eta + phi[p]).exp())
            .sum::<f64>()
            / paths as f64;
        if !mean.is_finite() {
            return Err(Error::Domain(format!("policy utility overflow at label {u}")));
        }
        out.push(-mean);
    }
    Ok(out)
}

fn default_eval_size() -> usize {
    64
}
fn default_paths() -> usize {
    2048
}
fn default_eval_seed() -> u64 {
    1
}
fn default_mc_seed() -> u64 {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploitabilityConfig {
    /// Number of labels (equispaced) in the evaluation batch.
    #[serde(default = "default_eval_size")]
    pub eval_size: usize,
    #[serde(default = "default_eval_seed")]
    pub eval_seed: u64,
    /// Monte Carlo paths per label for utility estimates.
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_mc_seed")]
    pub mc_seed: u64,
    #[serde(default)]
    pub best_response: TrainConfig,
}

impl Default for ExploitabilityConfig {
    fn default() -> Self {
        Self {
            eval_size: default_eval_size(),
            eval_seed: default_eval_seed(),
            paths: default_paths(),
            mc_seed: default_mc_seed(),
            best_response: TrainConfig {
                iterations: 5000,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExploitabilityReport {
    pub labels: Vec<f64>,
    pub v_eq: Vec<f64>,
    pub v_br: Vec<f64>,
    /// Utilities from the networks' own `Y_0`.
    pub v_eq_y0: Vec<f64>,
    pub v_br_y0: Vec<f64>,
    pub summary: ExploitabilitySummary,
    pub best_response: TrainReport,
}

impl ExploitabilityReport {
    /// `label,V_eq,V_br,gap,V_eq_y0,V_br_y0` followed by summary comment lines.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# schema: {EXPLOITABILITY_SCHEMA}")?;
        writeln!(w, "label,V_eq,V_br,gap,V_eq_y0,V_br_y0")?;
        for i in 0..self.labels.len() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                self.labels[i],
                self.v_eq[i],
                self.v_br[i],
                self.v_br[i] - self.v_eq[i],
                self.v_eq_y0[i],
                self.v_br_y0[i]
            )?;
        }
        let s = &self.summary;
        writeln!(w, "# average_exploitability: {:e}", s.average)?;
        writeln!(w, "# clamped_average: {:e}", s.clamped_average)?;
        writeln!(w, "# negative_terms: {}", s.negative_terms)?;
        writeln!(
            w,
            "# best_response_final_val_loss: {:e}",
            self.best_response.final_entry().val_loss
        )?;
        Ok(())
    }
}

/// The four-step procedure: evaluation batch, frozen field, best response,
/// utilities of both policies on common paths.
pub fn exploitability(
    eq: &ControlNets,
    g: &GraphonKernel,
    model: &MarketModel,
    cfg: &ExploitabilityConfig,
) -> Result<ExploitabilityReport> {
    let grid = model.grid()?;
    let batch = sample_batch_with_labels(
        model,
        &grid,
        label_grid(cfg.eval_size),
        &mut seeded_rng(cfg.eval_seed),
    )?;
    let frozen = freeze_mean_field(eq, g, model, &grid, &batch)?;
    let init = init_nets(&cfg.best_response, model)?;
    let br = best_response_train(&frozen, &cfg.best_response, g, model, init)?;
    let bench = frozen_benchmark(&frozen, g, model, &grid)?;
    let v_eq = policy_utilities(eq, model, &grid, &batch.labels, &bench, cfg.paths, cfg.mc_seed)?;
    let v_br = policy_utilities(&br.nets, model, &grid, &batch.labels, &bench, cfg.paths, cfg.mc_seed)?;
    let summary = average_exploitability(&v_eq, &v_br)?;
    let xi = model.xi.mean();
    let y0_utils = |nets: &ControlNets| -> Result<Vec<f64>> {
        batch
            .labels
            .iter()
            .map(|&u| equilibrium_utility(model, g, u, nets.y0_value(u, xi)?, xi))
            .collect()
    };
    Ok(ExploitabilityReport {
        labels: batch.labels.clone(),
        v_eq_y0: y0_utils(eq)?,
        v_br_y0: y0_utils(&br.nets)?,
        v_eq,
        v_br,
        summary,
        best_response: br,
    })
}
