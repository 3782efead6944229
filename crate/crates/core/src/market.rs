//! Market coefficients, the time grid and Brownian batch sampling.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_label, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        let nodes = (0..=n_steps)
            .map(|n| {
                if n == n_steps {
                    horizon
                } else {
                    horizon * n as f64 / n_steps as f64
                }
            })
            .collect();
        Ok(Self { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes[0] != 0.0 {
            return Err(Error::Config("time grid must start at 0 and have a step".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || !nodes.iter().all(|t| t.is_finite()) {
            return Err(Error::Config("time grid nodes must be strictly increasing".into()));
        }
        Ok(Self { nodes })
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().expect("grid has nodes")
    }

    /// Number of subintervals `n*`.
    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, n: usize) -> f64 {
        self.nodes[n]
    }

    pub fn dt(&self, n: usize) -> f64 {
        self.nodes[n + 1] - self.nodes[n]
    }

    /// Index of the node equal to `t` (up to rounding).
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let tol = 1e-12 * self.horizon().max(1.0);
        self.nodes
            .iter()
            .position(|&s| (s - t).abs() <= tol)
            .ok_or(Error::OffGrid(t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketKind {
    /// Constant volatility and market price of risk.
    ConstantBs,
    /// Market price of risk equal to the player's own Brownian path.
    MarkovianBs,
}

/// Risk aversion as a function of the label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EtaSpec {
    Constant { value: f64 },
    /// `beta * u * (1 - u)`
    Parabolic { beta: f64 },
    /// `beta * u`
    Linear { beta: f64 },
}

impl EtaSpec {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            EtaSpec::Constant { value } => value,
            EtaSpec::Parabolic { beta } => beta * u * (1.0 - u),
            EtaSpec::Linear { beta } => beta * u,
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            EtaSpec::Constant { value } => Some(value),
            _ => None,
        }
    }
}

/// Law of the initial wealth, identical for every label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum XiSpec {
    Constant { value: f64 },
    Normal { mean: f64, std: f64 },
}

impl Default for XiSpec {
    fn default() -> Self {
        XiSpec::Constant { value: 0.0 }
    }
}

impl XiSpec {
    pub fn mean(&self) -> f64 {
        match *self {
            XiSpec::Constant { value } => value,
            XiSpec::Normal { mean, .. } => mean,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            XiSpec::Constant { value } => value,
            XiSpec::Normal { mean, std } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + std * z
            }
        }
    }
}

fn one() -> usize {
    1
}

/// Market coefficients `(sigma, theta, eta)`, coupling `rho`, initial wealth
/// law and horizon. One traded asset per player.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketModel {
    pub kind: MarketKind,
    pub sigma: f64,
    /// Market price of risk; required for `ConstantBs`, ignored otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    pub eta: EtaSpec,
    pub rho: f64,
    #[serde(default)]
    pub xi: XiSpec,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_star: usize,
    #[serde(default = "one")]
    pub d: usize,
}

impl MarketModel {
    /// The constant-coefficient benchmark `sigma = 0.1, theta = 1, eta = 3,
    /// rho = 1, T = 1` on 40 steps.
    pub fn constant_benchmark() -> Self {
        Self {
            kind: MarketKind::ConstantBs,
            sigma: 0.1,
            theta: Some(1.0),
            eta: EtaSpec::Constant { value: 3.0 },
            rho: 1.0,
            xi: XiSpec::default(),
            horizon: 1.0,
            n_star: 40,
            d: 1,
        }
    }

    pub fn markovian_benchmark() -> Self {
        Self {
            kind: MarketKind::MarkovianBs,
            theta: None,
            ..Self::constant_benchmark()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d != 1 {
            return Err(Error::Unsupported(format!(
                "only one asset per player is supported, got d = {}",
                self.d
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if self.kind == MarketKind::ConstantBs {
            match self.theta {
                Some(t) if t.is_finite() => {}
                _ => {
                    return Err(Error::Config(
                        "constant_bs model needs a finite theta".into(),
                    ))
                }
            }
        }
        match self.eta {
            EtaSpec::Constant { value } if !(value > 0.0 && value.is_finite()) => {
                return Err(Error::Config(format!("eta must be positive, got {value}")))
            }
            EtaSpec::Parabolic { beta } | EtaSpec::Linear { beta }
                if !(beta > 0.0 && beta.is_finite()) =>
            {
                return Err(Error::Config(format!("eta scale must be positive, got {beta}")))
            }
            _ => {}
        }
        if let XiSpec::Normal { std, .. } = self.xi {
            if !(std >= 0.0) {
                return Err(Error::Config("initial wealth std must be non-negative".into()));
            }
        }
        self.grid().map(|_| ())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.horizon, self.n_star)
    }

    /// Whether `theta` is a deterministic constant.
    pub fn has_deterministic_coefficients(&self) -> bool {
        self.kind == MarketKind::ConstantBs
    }

    /// Market price of risk at a node given the player's Brownian value there.
    #[inline]
    pub fn theta_at(&self, w_value: f64) -> f64 {
        match self.kind {
            MarketKind::ConstantBs => self.theta.unwrap_or(0.0),
            MarketKind::MarkovianBs => w_value,
        }
    }

    /// Market price of risk of particle `i` of `batch` at grid time `t`.
    pub fn theta(&self, grid: &TimeGrid, t: f64, batch: &Batch, i: usize) -> Result<f64> {
        let n = grid.node_index(t)?;
        if i >= batch.len() {
            return Err(Error::shape("batch particle", batch.len(), i));
        }
        Ok(self.theta_at(batch.w[[i, n]]))
    }

    pub fn eta(&self, u: f64) -> f64 {
        self.eta.eval(u)
    }

    /// Risk aversion where positivity is required (utility formulas).
    pub fn eta_positive(&self, u: f64) -> Result<f64> {
        check_label(u)?;
        let eta = self.eta(u);
        if eta > 0.0 {
            Ok(eta)
        } else {
            Err(Error::DegenerateLabel { u, eta })
        }
    }
}

/// One training sample: labels, initial wealths and Brownian increments.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub labels: Vec<f64>,
    pub x0: Vec<f64>,
    /// `(M, n*)`, entry `(i, n)` is the increment over `[t_n, t_{n+1}]`.
    pub dw: Array2<f64>,
    /// `(M, n* + 1)` cumulative path with `W_{t_0} = 0`.
    pub w: Array2<f64>,
    pub seed: Option<u64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.dw.ncols()
    }

    /// Particles reordered by `perm` (`perm[k]` is the old index of new particle `k`).
    pub fn permuted(&self, perm: &[usize]) -> Batch {
        let n = self.n_steps();
        Batch {
            labels: perm.iter().map(|&i| self.labels[i]).collect(),
            x0: perm.iter().map(|&i| self.x0[i]).collect(),
            dw: Array2::from_shape_fn((perm.len(), n), |(k, j)| self.dw[[perm[k], j]]),
            w: Array2::from_shape_fn((perm.len(), n + 1), |(k, j)| self.w[[perm[k], j]]),
            seed: self.seed,
        }
    }
}

/// `m` equispaced labels `(k + 1/2) / m`.
pub fn label_grid(m: usize) -> Vec<f64> {
    (0..m).map(|k| (k as f64 + 0.5) / m as f64).collect()
}

/// Uniform labels, initial wealths and Gaussian increments, drawn in that order.
pub fn sample_batch<R: Rng + ?Sized>(
    model: &MarketModel,
    grid: &TimeGrid,
    m: usize,
    rng: &mut R,
) -> Result<Batch> {
    if m == 0 {
        return Err(Error::Config("batch needs at least one particle".into()));
    }
    let labels: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
    sample_batch_with_labels(model, grid, labels, rng)
}

/// How labels are drawn for a training batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSampling {
    /// Independent uniform labels.
    #[default]
    Uniform,
    /// One uniform label in each cell `[k/M, (k+1)/M)`.
    Stratified,
}

/// [`sample_batch`] with a choice of label sampler.
pub fn sample_batch_with<R: Rng + ?Sized>(
    model: &MarketModel,
    grid: &TimeGrid,
    m: usize,
    sampling: LabelSampling,
    rng: &mut R,
) -> Result<Batch> {
    match sampling {
        LabelSampling::Uniform => sample_batch(model, grid, m, rng),
        LabelSampling::Stratified => {
            if m == 0 {
                return Err(Error::Config("batch needs at least one particle".into()));
            }
            let labels = (0..m)
                .map(|k| (k as f64 + rng.gen::<f64>()) / m as f64)
                .collect();
            sample_batch_with_labels(model, grid, labels, rng)
        }
    }
}

/// Like [`sample_batch`] with prescribed labels.
pub fn sample_batch_with_labels<R: Rng + ?Sized>(
    model: &MarketModel,
    grid: &TimeGrid,
    labels: Vec<f64>,
    rng: &mut R,
) -> Result<Batch> {
    if labels.is_empty() {
        return Err(Error::Config("batch needs at least one particle".into()));
    }
    for &u in &labels {
        check_label(u)?;
    }
    let m = labels.len();
    let n = grid.n_steps();
    let x0: Vec<f64> = (0..m).map(|_| model.xi.sample(rng)).collect();
    let mut dw = Array2::zeros((m, n));
    let mut w = Array2::zeros((m, n + 1));
    for i in 0..m {
        for k in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let inc = z * grid.dt(k).sqrt();
            dw[[i, k]] = inc;
            w[[i, k + 1]] = w[[i, k]] + inc;
        }
    }
    Ok(Batch {
        labels,
        x0,
        dw,
        w,
        seed: None,
    })
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// [`sample_batch`] from a fresh generator, recording the seed.
pub fn sample_batch_seeded(
    model: &MarketModel,
    grid: &TimeGrid,
    m: usize,
    seed: u64,
) -> Result<Batch> {
    let mut batch = sample_batch(model, grid, m, &mut seeded_rng(seed))?;
    batch.seed = Some(seed);
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratified_labels_cover_every_cell() {
        let m = MarketModel::constant_benchmark();
        let g = m.grid().unwrap();
        let b = sample_batch_with(&m, &g, 50, LabelSampling::Stratified, &mut seeded_rng(3)).unwrap();
        for (k, &u) in b.labels.iter().enumerate() {
            assert!(u >= k as f64 / 50.0 && u < (k + 1) as f64 / 50.0);
        }
    }

    #[test]
    fn uniform_grid_sums_to_horizon() {
        let g = TimeGrid::uniform(1.0, 40).unwrap();
        let total: f64 = (0..40).map(|n| g.dt(n)).sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert_eq!(g.node(40), 1.0);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        assert!(TimeGrid::uniform(1.0, 0).is_err());
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn seeded_batches_are_identical() {
        let model = MarketModel::constant_benchmark();
        let grid = model.grid().unwrap();
        let a = sample_batch_seeded(&model, &grid, 16, 7).unwrap();
        let b = sample_batch_seeded(&model, &grid, 16, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_batch_seeded(&model, &grid, 16, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_particles_rejected() {
        let model = MarketModel::constant_benchmark();
        let grid = model.grid().unwrap();
        assert!(matches!(
            sample_batch(&model, &grid, 0, &mut seeded_rng(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn constant_initial_wealth_is_degenerate() {
        let model = MarketModel::constant_benchmark();
        let grid = model.grid().unwrap();
        let b = sample_batch_seeded(&model, &grid, 32, 1).unwrap();
        assert!(b.x0.iter().all(|&x| x == 0.0));
        assert!(b.labels.iter().all(|u| (0.0..1.0).contains(u)));
        assert!(b.w.column(0).iter().all(|&w| w == 0.0));
    }

    #[test]
    fn gaussian_increment_moments() {
        let model = MarketModel {
            n_star: 4,
            ..MarketModel::constant_benchmark()
        };
        let grid = model.grid().unwrap();
        let b = sample_batch_seeded(&model, &grid, 250_000, 3).unwrap();
        let dt = grid.dt(0);
        let n = b.dw.len() as f64;
        let mean = b.dw.sum() / n;
        let var = b.dw.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 * (dt / n).sqrt(), "mean {mean}");
        assert!((var / dt - 1.0).abs() < 0.01, "var {var} vs {dt}");
    }

    #[test]
    fn theta_values() {
        let constant = MarketModel::constant_benchmark();
        let markov = MarketModel::markovian_benchmark();
        let grid = constant.grid().unwrap();
        let b = sample_batch_seeded(&markov, &grid, 3, 2).unwrap();
        for i in 0..3 {
            for &t in grid.nodes() {
                assert_eq!(constant.theta(&grid, t, &b, i).unwrap(), 1.0);
            }
            assert_eq!(markov.theta(&grid, 0.0, &b, i).unwrap(), 0.0);
            let t2 = grid.node(2);
            let expected = b.dw[[i, 0]] + b.dw[[i, 1]];
            assert_eq!(markov.theta(&grid, t2, &b, i).unwrap(), expected);
        }
        assert!(matches!(
            constant.theta(&grid, 0.0123, &b, 0),
            Err(Error::OffGrid(_))
        ));
    }

    #[test]
    fn eta_families() {
        let mut m = MarketModel::constant_benchmark();
        assert_eq!(m.eta(0.4), 3.0);
        m.eta = EtaSpec::Parabolic { beta: 4.0 };
        assert_eq!(m.eta(0.5), 1.0);
        m.eta = EtaSpec::Linear { beta: 1.0 };
        assert_eq!(m.eta(0.0), 0.0);
        assert!(matches!(
            m.eta_positive(0.0),
            Err(Error::DegenerateLabel { .. })
        ));
        assert_eq!(m.eta_positive(0.25).unwrap(), 0.25);
    }

    #[test]
    fn validation_catches_bad_coefficients() {
        let ok = MarketModel::constant_benchmark();
        ok.validate().unwrap();
        MarketModel::markovian_benchmark().validate().unwrap();
        assert!(MarketModel { sigma: 0.0, ..ok.clone() }.validate().is_err());
        assert!(MarketModel { rho: 1.5, ..ok.clone() }.validate().is_err());
        assert!(MarketModel { theta: None, ..ok.clone() }.validate().is_err());
        assert!(MarketModel { d: 2, ..ok.clone() }.validate().is_err());
        assert!(MarketModel {
            eta: EtaSpec::Constant { value: -1.0 },
            ..ok
        }
        .validate()
        .is_err());
    }

    #[test]
    fn label_grid_is_equispaced_midpoints() {
        assert_eq!(label_grid(4), vec![0.125, 0.375, 0.625, 0.875]);
    }
}
