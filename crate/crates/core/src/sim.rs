//! Euler-Maruyama rollout of the controlled `(X, Y)` system with an in-batch
//! graphon interaction term, the shooting loss, and its exact gradient.
//!
//! At node `t_n`, particle `i` with label `u_i` uses
//!
//! ```text
//! a_i   = z_i + eta_i * theta_i                      (= sigma * pi_i)
//! m_i   = (1/M) sum_j rho * a_j * theta_j * G(u_i, u_j)
//! X_i  += a_i * (theta_i * dt + dW_i)
//! Y_i  += (z_i * theta_i + eta_i / 2 * theta_i^2 - m_i) * dt + z_i * dW_i
//! ```
//!
//! with `X_0 = xi` and `Y_0 = y0(u_i, X_0)`. The loss is `(1/M) sum_i Y_T,i^2`.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::graphon::GraphonKernel;
use crate::market::{Batch, MarketModel, TimeGrid};
use crate::model::{centered, ControlNets};
use crate::nn::BatchCache;

pub const TRAJECTORY_SCHEMA: &str = "gfbsde.trajectory.v1";

/// Interaction values held fixed while a single player optimizes.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenMeanField {
    pub labels: Vec<f64>,
    /// `(M, n*)`, entry `(i, n)` is the interaction term of particle `i` at `t_n`.
    pub values: Array2<f64>,
}

/// Where the interaction term of the `Y` recursion comes from.
#[derive(Clone, Copy, Debug)]
pub enum Interaction<'a> {
    /// Recomputed from the current controls of the whole batch.
    Live,
    /// Read from a previously computed field.
    Frozen(&'a FrozenMeanField),
}

#[derive(Clone, Copy, Debug)]
pub struct RolloutOptions {
    /// When false, `X` stays at its initial value (decoupling checks).
    pub update_wealth: bool,
    /// Abort when `|X|`, `|Y|` or `|Z|` exceeds this.
    pub blowup_threshold: f64,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            update_wealth: true,
            blowup_threshold: 1e6,
        }
    }
}

/// `out_i = sum_j G(u_i, u_j) s_j` for a fixed label set.
///
/// Every kernel in [`GraphonKernel`] has block, rank-one or min/max structure,
/// so the product is evaluated in `O(M log M)` instead of `O(M^2)`.
#[derive(Clone, Debug)]
pub struct Population {
    kernel: GraphonKernel,
    labels: Vec<f64>,
    /// For min-max: labels sorted ascending, and for each particle the number
    /// of labels `<= u_i`.
    sorted: Vec<usize>,
    rank: Vec<usize>,
    /// For power-law: `u_i^(-gamma)`.
    factor: Vec<f64>,
}

impl Population {
    pub fn new(kernel: GraphonKernel, labels: &[f64]) -> Result<Self> {
        kernel.validate()?;
        for &u in labels {
            crate::error::check_label(u)?;
        }
        let labels = labels.to_vec();
        let (mut sorted, mut rank, mut factor) = (Vec::new(), Vec::new(), Vec::new());
        match kernel {
            GraphonKernel::MinMax => {
                sorted = (0..labels.len()).collect();
                sorted.sort_by(|&a, &b| labels[a].total_cmp(&labels[b]).then(a.cmp(&b)));
                let sorted_labels: Vec<f64> = sorted.iter().map(|&k| labels[k]).collect();
                rank = labels
                    .iter()
                    .map(|&u| sorted_labels.partition_point(|&v| v <= u))
                    .collect();
            }
            GraphonKernel::PowerLaw { .. } => {
                factor = labels.iter().map(|&u| kernel.weight(u, 1.0)).collect();
            }
            _ => {}
        }
        Ok(Self {
            kernel,
            labels,
            sorted,
            rank,
            factor,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn kernel(&self) -> &GraphonKernel {
        &self.kernel
    }

    pub fn apply(&self, s: &[f64], out: &mut [f64]) {
        let labels = &self.labels;
        debug_assert_eq!(s.len(), labels.len());
        debug_assert_eq!(out.len(), labels.len());
        match self.kernel {
            GraphonKernel::Constant => {
                let total: f64 = s.iter().sum();
                out.fill(total);
            }
            GraphonKernel::TwoBlock { a, b } => {
                let (lo, hi) = split_sums(labels, s, 0.5);
                for (o, &u) in out.iter_mut().zip(labels) {
                    *o = if u < 0.5 { a * lo } else { b * hi };
                }
            }
            GraphonKernel::Star { c, alpha } => {
                let (lo, hi) = split_sums(labels, s, alpha);
                for (o, &u) in out.iter_mut().zip(labels) {
                    *o = if u < alpha { c * hi } else { c * lo };
                }
            }
            GraphonKernel::MinMax => {
                // G(u, v) = v (1 - u) for v <= u and u (1 - v) for v > u
                let m = labels.len();
                let mut below = vec![0.0; m + 1];
                let mut above = vec![0.0; m + 1];
                for (k, &j) in self.sorted.iter().enumerate() {
                    below[k + 1] = below[k] + labels[j] * s[j];
                }
                for k in (0..m).rev() {
                    let j = self.sorted[k];
                    above[k] = above[k + 1] + (1.0 - labels[j]) * s[j];
                }
                for i in 0..m {
                    let u = labels[i];
                    let r = self.rank[i];
                    out[i] = (1.0 - u) * below[r] + u * above[r];
                }
            }
            GraphonKernel::PowerLaw { .. } => {
                let total: f64 = self.factor.iter().zip(s).map(|(f, v)| f * v).sum();
                for (o, f) in out.iter_mut().zip(&self.factor) {
                    *o = f * total;
                }
            }
        }
    }

    /// Reference `O(M^2)` evaluation of [`Population::apply`].
    pub fn apply_dense(&self, s: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self
                .labels
                .iter()
                .zip(s)
                .map(|(&v, &sj)| self.kernel.weight(self.labels[i], v) * sj)
                .sum();
        }
    }
}

fn split_sums(labels: &[f64], s: &[f64], cut: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0, 0.0);
    for (&u, &v) in labels.iter().zip(s) {
        if u < cut {
            lo += v;
        } else {
            hi += v;
        }
    }
    (lo, hi)
}

/// Interaction term for a single label `u` at node `n`:
/// `(1/M) sum_j rho (z_j + eta(v_j) theta_j) theta_j G(u, v_j)`.
pub fn mean_field_term(
    g: &GraphonKernel,
    model: &MarketModel,
    n: usize,
    batch: &Batch,
    z_values: &[f64],
    u: f64,
) -> Result<f64> {
    if z_values.len() != batch.len() {
        return Err(Error::shape("mean-field controls", batch.len(), z_values.len()));
    }
    if n > batch.n_steps() {
        return Err(Error::shape("time index", batch.n_steps(), n));
    }
    let weights = g.mean_field_weights(u, &batch.labels)?;
    let m = batch.len() as f64;
    let mut total = 0.0;
    for (j, (&zj, &gj)) in z_values.iter().zip(&weights).enumerate() {
        let v = batch.labels[j];
        let theta = model.theta_at(batch.w[[j, n]]);
        total += model.rho * (zj + model.eta(v) * theta) * theta * gj;
    }
    Ok(total / m)
}

/// Simulated paths. Node-valued arrays have `n* + 1` columns, step-valued
/// arrays (`z`, `pi`, `mean_field`, `theta`) have `n*`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub labels: Vec<f64>,
    pub times: Vec<f64>,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub z: Array2<f64>,
    pub pi: Array2<f64>,
    pub mean_field: Array2<f64>,
    pub theta: Array2<f64>,
}

impl Trajectory {
    pub fn n_particles(&self) -> usize {
        self.labels.len()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn y0(&self) -> ArrayView1<'_, f64> {
        self.y.column(0)
    }

    pub fn terminal_y(&self) -> ArrayView1<'_, f64> {
        self.y.column(self.n_steps())
    }

    /// Rows `idx` of every array, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Trajectory> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n_particles()) {
            return Err(Error::shape("particle index", self.n_particles(), bad));
        }
        let rows = |a: &Array2<f64>| a.select(ndarray::Axis(0), idx);
        Ok(Trajectory {
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            times: self.times.clone(),
            x: rows(&self.x),
            y: rows(&self.y),
            z: rows(&self.z),
            pi: rows(&self.pi),
            mean_field: rows(&self.mean_field),
            theta: rows(&self.theta),
        })
    }

    /// CSV with columns `particle,label,t,X,Y,Z,pi,mean_field`, one row per
    /// particle and node. Step-valued columns are empty at the final node.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# schema: {TRAJECTORY_SCHEMA}")?;
        writeln!(w, "particle,label,t,X,Y,Z,pi,mean_field")?;
        let n_steps = self.n_steps();
        for i in 0..self.n_particles() {
            for n in 0..=n_steps {
                write!(
                    w,
                    "{},{},{},{},{}",
                    i, self.labels[i], self.times[n], self.x[[i, n]], self.y[[i, n]]
                )?;
                if n < n_steps {
                    writeln!(
                        w,
                        ",{},{},{}",
                        self.z[[i, n]],
                        self.pi[[i, n]],
                        self.mean_field[[i, n]]
                    )?;
                } else {
                    writeln!(w, ",,,")?;
                }
            }
        }
        Ok(())
    }
}

/// `(1/M) sum_i Y_T,i^2`.
pub fn shooting_loss(traj: &Trajectory) -> f64 {
    let yt = traj.terminal_y();
    yt.iter().map(|y| y * y).sum::<f64>() / yt.len() as f64
}

struct Context<'a> {
    model: &'a MarketModel,
    grid: &'a TimeGrid,
    batch: &'a Batch,
    population: Option<&'a Population>,
    interaction: Interaction<'a>,
    options: RolloutOptions,
}

struct Tape {
    y0_cache: BatchCache,
    z_caches: Vec<BatchCache>,
}

/// Checks shared by every entry point.
fn validate(
    nets: &ControlNets,
    grid: &TimeGrid,
    batch: &Batch,
    interaction: Interaction<'_>,
) -> Result<()> {
    nets.check_compatible(grid.n_steps())?;
    if batch.n_steps() != grid.n_steps() {
        return Err(Error::shape("batch time steps", grid.n_steps(), batch.n_steps()));
    }
    if batch.is_empty() {
        return Err(Error::Config("batch has no particles".into()));
    }
    if let Interaction::Frozen(f) = interaction {
        if f.values.dim() != (batch.len(), grid.n_steps()) {
            return Err(Error::shape(
                "frozen mean field",
                batch.len() * grid.n_steps(),
                f.values.len(),
            ));
        }
        if f.labels != batch.labels {
            return Err(Error::Config(
                "frozen mean field was computed on different labels".into(),
            ));
        }
    }
    Ok(())
}

fn simulate(nets: &ControlNets, ctx: &Context<'_>, keep_tape: bool) -> Result<(Trajectory, Option<Tape>)> {
    let Context {
        model,
        grid,
        batch,
        population,
        interaction,
        options,
    } = *ctx;
    let m = batch.len();
    let n_steps = grid.n_steps();
    let horizon = grid.horizon();
    let etas: Vec<f64> = batch.labels.iter().map(|&u| model.eta(u)).collect();

    let mut x = Array2::zeros((m, n_steps + 1));
    let mut y = Array2::zeros((m, n_steps + 1));
    let mut z = Array2::zeros((m, n_steps));
    let mut pi = Array2::zeros((m, n_steps));
    let mut mf = Array2::zeros((m, n_steps));
    let mut theta = Array2::zeros((m, n_steps));

    let mut y0_in = Array2::zeros((m, 2));
    for i in 0..m {
        y0_in[[i, 0]] = centered(batch.labels[i]);
        y0_in[[i, 1]] = batch.x0[i];
        x[[i, 0]] = batch.x0[i];
    }
    let y0_cache = nets.y0.forward_batch(y0_in.view())?;
    for i in 0..m {
        y[[i, 0]] = y0_cache.output()[[i, 0]];
    }

    let mut z_in = Array2::zeros((m, nets.z_input_dim()));
    let mut s = vec![0.0; m];
    let mut mf_n = vec![0.0; m];
    let mut z_caches = Vec::with_capacity(if keep_tape { n_steps } else { 0 });
    let threshold = options.blowup_threshold;

    for n in 0..n_steps {
        let dt = grid.dt(n);
        for i in 0..m {
            let th = model.theta_at(batch.w[[i, n]]);
            let row = z_in.row_mut(i).into_slice().expect("standard layout");
            nets.write_z_input(row, grid.node(n) / horizon, batch.labels[i], x[[i, n]], th);
        }
        let cache = nets.z_net(n).forward_batch(z_in.view())?;
        {
            let out = cache.output();
            for i in 0..m {
                let zi = out[[i, 0]];
                let th = model.theta_at(batch.w[[i, n]]);
                let a = zi + etas[i] * th;
                z[[i, n]] = zi;
                theta[[i, n]] = th;
                pi[[i, n]] = a / model.sigma;
                s[i] = model.rho * a * th / m as f64;
            }
        }
        match interaction {
            Interaction::Live => match population {
                Some(p) => p.apply(&s, &mut mf_n),
                None => mf_n.fill(0.0),
            },
            Interaction::Frozen(f) => {
                for i in 0..m {
                    mf_n[i] = f.values[[i, n]];
                }
            }
        }
        for i in 0..m {
            let zi = z[[i, n]];
            let th = theta[[i, n]];
            let dw = batch.dw[[i, n]];
            mf[[i, n]] = mf_n[i];
            let a = zi + etas[i] * th;
            x[[i, n + 1]] = if options.update_wealth {
                x[[i, n]] + a * (th * dt + dw)
            } else {
                x[[i, n]]
            };
            y[[i, n + 1]] =
                y[[i, n]] + (zi * th + 0.5 * etas[i] * th * th - mf_n[i]) * dt + zi * dw;
            let (xi, yi) = (x[[i, n + 1]], y[[i, n + 1]]);
            let finite = xi.is_finite() && yi.is_finite() && zi.is_finite();
            if !finite || xi.abs() > threshold || yi.abs() > threshold || zi.abs() > threshold {
                return Err(Error::BlowUp { particle: i, step: n });
            }
        }
        if keep_tape {
            z_caches.push(cache);
        }
    }

    let traj = Trajectory {
        labels: batch.labels.clone(),
        times: grid.nodes().to_vec(),
        x,
        y,
        z,
        pi,
        mean_field: mf,
        theta,
    };
    let tape = keep_tape.then_some(Tape { y0_cache, z_caches });
    Ok((traj, tape))
}

/// Forward simulation with the live in-batch interaction term.
pub fn rollout(
    nets: &ControlNets,
    g: &GraphonKernel,
    model: &MarketModel,
    grid: &TimeGrid,
    batch: &Batch,
) -> Result<Trajectory> {
    rollout_with(nets, g, model, grid, batch, Interaction::Live, RolloutOptions::default())
}

pub fn rollout_with(
    nets: &ControlNets,
    g: &GraphonKernel,
    model: &MarketModel,
    grid: &TimeGrid,
    batch: &Batch,
    interaction: Interaction<'_>,
    options: RolloutOptions,
) -> Result<Trajectory> {
    validate(nets, grid, batch, interaction)?;
    let population = match interaction {
        Interaction::Live => Some(Population::new(*g, &batch.labels)?),
        Interaction::Frozen(_) => None,
    };
    let ctx = Context {
        model,
        grid,
        batch,
        population: population.as_ref(),
        interaction,
        options,
    };
    simulate(nets, &ctx, false).map(|(t, _)| t)
}

/// Loss and its gradient with respect to both networks.
#[derive(Clone, Debug)]
pub struct LossGradient {
    pub loss: f64,
    pub grads: ControlNets,
    pub trajectory: Trajectory,
}

/// Exact gradient of the shooting loss through the unrolled recursion,
/// including the dependence of every particle's interaction term on the
/// other particles' controls.
pub fn rollout_backward(
    nets: &ControlNets,
    g: &GraphonKernel,
    model: &MarketModel,
    grid: &TimeGrid,
    batch: &Batch,
) -> Result<LossGradient> {
    rollout_backward_with(nets, g, model, grid, batch, Interaction::Live, RolloutOptions::default())
}

pub fn rollout_backward_with(
    nets: &ControlNets,
    g: &GraphonKernel,
    model: &MarketModel,
    grid: &TimeGrid,
    batch: &Batch,
    interaction: Interaction<'_>,
    options: RolloutOptions,
) -> Result<LossGradient> {
    validate(nets, grid, batch, interaction)?;
    let population = match interaction {
        Interaction::Live => Some(Population::new(*g, &batch.labels)?),
        Interaction::Frozen(_) => None,
    };
    let ctx = Context {
        model,
        grid,
        batch,
        population: population.as_ref(),
        interaction,
        options,
    };
    let (traj, tape) = simulate(nets, &ctx, true)?;
    let tape = tape.expect("tape requested");
    let m = batch.len();
    let mf = m as f64;
    let n_steps = grid.n_steps();
    let loss = shooting_loss(&traj);

    // Y_T depends on Y_0 and every step additively, so dL/dY_n is constant.
    let g_y: Vec<f64> = traj.terminal_y().iter().map(|&y| 2.0 * y / mf).collect();
    // Interaction adjoint: c_j = sum_k G(u_k, u_j) g_y[k], with G symmetric.
    let mut coupling = vec![0.0; m];
    if let Some(p) = population.as_ref() {
        if model.rho != 0.0 {
            p.apply(&g_y, &mut coupling);
        }
    }

    let mut grads = nets.zeros_like();
    let mut g_x = vec![0.0; m];
    let state_col = nets.z_state_column();
    for n in (0..n_steps).rev() {
        let dt = grid.dt(n);
        let mut up = Array2::zeros((m, 1));
        for i in 0..m {
            let th = traj.theta[[i, n]];
            let noise = th * dt + batch.dw[[i, n]];
            let mut gz = g_y[i] * noise;
            if options.update_wealth {
                gz += g_x[i] * noise;
            }
            gz -= dt * model.rho * th * coupling[i] / mf;
            up[[i, 0]] = gz;
        }
        let d_in = nets
            .z_net(n)
            .backward_batch(&tape.z_caches[n], up.view(), grads.z_net_mut(n))?;
        for i in 0..m {
            g_x[i] += d_in[[i, state_col]];
        }
    }
    let up0 = Array2::from_shape_vec((m, 1), g_y).expect("m rows");
    nets.y0.backward_batch(&tape.y0_cache, up0.view(), &mut grads.y0)?;

    Ok(LossGradient {
        loss,
        grads,
        trajectory: traj,
    })
}

/// Column means of a node-valued array; convenience for reports.
pub fn column_means(a: &Array2<f64>) -> Array1<f64> {
    a.mean_axis(ndarray::Axis(0)).unwrap_or_else(|| Array1::zeros(a.ncols()))
}
