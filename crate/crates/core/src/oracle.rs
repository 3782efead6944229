//! Closed-form equilibrium in the deterministic-coefficient regime, the
//! finite-population equilibrium, and a quadrature-based cross-check.
//!
//! With constant `sigma, theta, eta` the equilibrium has `Z = 0`,
//! `sigma * pi = eta * theta` and
//!
//! ```text
//! Y_t(u) = (T - t) * theta^2 * (rho * eta * deg(u) - eta / 2),   deg(u) = int_0^1 G(u, v) dv.
//! ```

use ndarray::Array2;

use crate::error::{check_label, Error, Result};
use crate::graphon::GraphonKernel;
use crate::market::{Batch, MarketKind, MarketModel, TimeGrid};
use crate::sim::Trajectory;

/// Constant coefficients of the deterministic regime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosedFormParams {
    pub eta: f64,
    pub theta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub horizon: f64,
    pub graphon: GraphonKernel,
}

impl ClosedFormParams {
    pub fn from_model(model: &MarketModel, graphon: GraphonKernel) -> Result<Self> {
        let theta = match (model.kind, model.theta) {
            (MarketKind::ConstantBs, Some(theta)) => theta,
            _ => {
                return Err(Error::Unsupported(
                    "closed form needs the constant-coefficient market".into(),
                ))
            }
        };
        let eta = model.eta.constant_value().ok_or_else(|| {
            Error::Unsupported("closed form needs a label-independent risk aversion".into())
        })?;
        Ok(Self {
            eta,
            theta,
            sigma: model.sigma,
            rho: model.rho,
            horizon: model.horizon,
            graphon,
        })
    }

    /// `Y_0(u)`.
    pub fn y0(&self, u: f64) -> Result<f64> {
        closed_form_y(self, 0.0, u)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if (0.0..=self.horizon).contains(&t) {
            Ok(())
        } else {
            Err(Error::Domain(format!("time {t} outside [0, {}]", self.horizon)))
        }
    }
}

/// General branch, valid for every kernel.
pub fn closed_form_y(p: &ClosedFormParams, t: f64, u: f64) -> Result<f64> {
    p.check_time(t)?;
    let deg = p.graphon.degree(u)?;
    let th2 = p.theta * p.theta;
    Ok((p.horizon - t) * th2 * (p.rho * p.eta * deg - 0.5 * p.eta))
}

/// Per-kernel formulas for the constant, two-block and star kernels, stated
/// for `theta = 1`.
pub fn closed_form_y_specialized(p: &ClosedFormParams, t: f64, u: f64) -> Result<f64> {
    p.check_time(t)?;
    check_label(u)?;
    let (eta, rho, tau) = (p.eta, p.rho, p.horizon - t);
    if p.theta != 1.0 {
        return Err(Error::Unsupported(
            "specialized closed forms assume theta = 1".into(),
        ));
    }
    match p.graphon {
        GraphonKernel::Constant => Ok((rho - 0.5) * eta * tau),
        GraphonKernel::TwoBlock { a, b } => {
            let w = if u < 0.5 { a } else { b };
            Ok(0.5 * eta * (rho * w - 1.0) * tau)
        }
        GraphonKernel::Star { c, alpha } => {
            // the formulas are stated for c = 1
            if c != 1.0 {
                return Err(Error::Unsupported(
                    "specialized star formula assumes c = 1".into(),
                ));
            }
            let share = if u < alpha { 1.0 - alpha } else { alpha };
            Ok((share * rho * eta - 0.5 * eta) * tau)
        }
        other => Err(Error::Unsupported(format!(
            "no specialized closed form for the {} kernel",
            other.name()
        ))),
    }
}

/// `sigma * pi = eta * theta`, hence `pi = eta * theta / sigma`.
pub fn closed_form_strategy(eta: f64, theta: f64, sigma: f64) -> Result<f64> {
    if sigma == 0.0 || !sigma.is_finite() {
        return Err(Error::Domain(format!("volatility must be non-zero, got {sigma}")));
    }
    Ok(eta * theta / sigma)
}

fn check_population(p: &ClosedFormParams, n: f64, lambda_ii: f64) -> Result<()> {
    if n < 1.0 || n <= p.rho * lambda_ii {
        return Err(Error::Domain(format!(
            "finite population needs N >= 1 and N > rho * lambda_ii, got N = {n}, rho * lambda_ii = {}",
            p.rho * lambda_ii
        )));
    }
    Ok(())
}

/// Equilibrium strategy of player `i` among `N` when the benchmark includes
/// the player's own wealth with weight `lambda_ii`.
pub fn finite_n_strategy(p: &ClosedFormParams, n: f64, lambda_ii: f64) -> Result<f64> {
    check_population(p, n, lambda_ii)?;
    Ok(n / (n - p.rho * lambda_ii) * closed_form_strategy(p.eta, p.theta, p.sigma)?)
}

/// Bound on `|sigma * (pi_N - pi)|`: `rho lambda_ii / (N - rho lambda_ii) * |eta theta|`.
pub fn error_bound(p: &ClosedFormParams, n: f64, lambda_ii: f64) -> Result<f64> {
    check_population(p, n, lambda_ii)?;
    let rl = p.rho * lambda_ii;
    Ok((rl / (n - rl)).abs() * (p.eta * p.theta).abs())
}

/// Closed-form paths on a sampled batch: `X_t = xi + eta theta (theta t + W_t)`,
/// `Z = 0` and the limiting interaction term `rho eta theta^2 deg(u)`.
pub fn oracle_trajectory(p: &ClosedFormParams, grid: &TimeGrid, batch: &Batch) -> Result<Trajectory> {
    if batch.n_steps() != grid.n_steps() {
        return Err(Error::shape("batch time steps", grid.n_steps(), batch.n_steps()));
    }
    let (m, n) = (batch.len(), grid.n_steps());
    let a = p.eta * p.theta;
    let pi = closed_form_strategy(p.eta, p.theta, p.sigma)?;
    let mut x = Array2::zeros((m, n + 1));
    let mut y = Array2::zeros((m, n + 1));
    let mut mf = Array2::zeros((m, n));
    for i in 0..m {
        let u = batch.labels[i];
        let deg = p.graphon.degree(u)?;
        for k in 0..=n {
            let t = grid.node(k);
            x[[i, k]] = batch.x0[i] + a * (p.theta * t + batch.w[[i, k]]);
            y[[i, k]] = closed_form_y(p, t, u)?;
            if k < n {
                mf[[i, k]] = p.rho * p.eta * p.theta * p.theta * deg;
            }
        }
    }
    Ok(Trajectory {
        labels: batch.labels.clone(),
        times: grid.nodes().to_vec(),
        x,
        y,
        z: Array2::zeros((m, n)),
        pi: Array2::from_elem((m, n), pi),
        mean_field: mf,
        theta: Array2::from_elem((m, n), p.theta),
    })
}

/// Backward quadrature of the `Z = 0` driver from `Y_T = 0`, with the
/// interaction integral `int eta(v) G(u, v) dv` evaluated numerically.
pub fn ode_integrate_y(
    g: &GraphonKernel,
    model: &MarketModel,
    grid: &TimeGrid,
    u: f64,
) -> Result<Vec<f64>> {
    check_label(u)?;
    g.validate()?;
    let theta = match (model.kind, model.theta) {
        (MarketKind::ConstantBs, Some(theta)) => theta,
        _ => {
            return Err(Error::Unsupported(
                "backward quadrature needs deterministic coefficients".into(),
            ))
        }
    };
    let coupling = integrate_kernel(g, u, |v| model.eta(v));
    let th2 = theta * theta;
    let driver = 0.5 * model.eta(u) * th2 - model.rho * th2 * coupling;
    let n = grid.n_steps();
    let mut y = vec![0.0; n + 1];
    for k in (0..n).rev() {
        y[k] = y[k + 1] - driver * grid.dt(k);
    }
    Ok(y)
}

/// `int_0^1 G(u, v) dv` by Gauss-Legendre quadrature.
pub fn degree_quadrature(g: &GraphonKernel, u: f64) -> Result<f64> {
    check_label(u)?;
    g.validate()?;
    Ok(integrate_kernel(g, u, |_| 1.0))
}

const GL_ORDER: usize = 20;

/// Nodes and weights on `[-1, 1]` via Newton iteration on `P_n`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn integrate_kernel(g: &GraphonKernel, u: f64, eta: impl Fn(f64) -> f64) -> f64 {
    let (nodes, weights) = gauss_legendre(GL_ORDER);
    let panel = |lo: f64, hi: f64, f: &dyn Fn(f64) -> f64| -> f64 {
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        nodes
            .iter()
            .zip(&weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    };
    match g {
        // v = s^2 removes the root-type singularity of v^(-gamma) at 0
        GraphonKernel::PowerLaw { .. } => {
            let f = |s: f64| 2.0 * s * eta(s * s) * g.weight(u, s * s);
            let cuts = 8;
            (0..cuts)
                .map(|k| panel(k as f64 / cuts as f64, (k + 1) as f64 / cuts as f64, &f))
                .sum()
        }
        _ => {
            let f = |v: f64| eta(v) * g.weight(u, v);
            let mut edges = vec![0.0];
            edges.extend(g.breakpoints(u));
            edges.push(1.0);
            edges.windows(2).map(|e| panel(e[0], e[1], &f)).sum()
        }
    }
}
