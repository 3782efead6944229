//! The pair of control networks: the initial-value network `y0(u, x)` and the
//! volatility network `z(t, u, x)`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_networks, save_networks};
use crate::nn::{Activation, Mlp, MlpSpec, Parameters};

/// Network feature for a quantity in `[0, 1]` (label, normalized time): `2v - 1`.
#[inline]
pub fn centered(v: f64) -> f64 {
    2.0 * v - 1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZMode {
    /// One network taking normalized time `t / T` as an extra input.
    Shared,
    /// One network per time step, inputs `(u, x)`.
    PerStep,
}

fn default_widths() -> Vec<usize> {
    vec![64, 64, 64]
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_z_mode() -> ZMode {
    ZMode::Shared
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_widths")]
    pub hidden_widths: Vec<usize>,
    /// Hidden widths of the `Y_0` network; `hidden_widths` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0_widths: Option<Vec<usize>>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_z_mode")]
    pub z_mode: ZMode,
    /// Append the market factor `θ_t` to the z network's inputs.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub factor_input: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_widths: default_widths(),
            y0_widths: None,
            activation: default_activation(),
            z_mode: default_z_mode(),
            factor_input: false,
        }
    }
}

impl NetworkConfig {
    pub fn with_widths(widths: Vec<usize>) -> Self {
        Self {
            hidden_widths: widths,
            ..Self::default()
        }
    }

    fn spec(&self, input_dim: usize, widths: &[usize]) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden_widths: widths.to_vec(),
            output_dim: 1,
            activation: self.activation,
            output_activation: Activation::Linear,
        }
    }

    pub fn y0_spec(&self) -> MlpSpec {
        self.spec(2, self.y0_widths.as_deref().unwrap_or(&self.hidden_widths))
    }

    pub fn z_spec(&self) -> MlpSpec {
        let extra = usize::from(self.factor_input);
        match self.z_mode {
            ZMode::Shared => self.spec(3 + extra, &self.hidden_widths),
            ZMode::PerStep => self.spec(2 + extra, &self.hidden_widths),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ZNet {
    Shared(Mlp),
    PerStep(Vec<Mlp>),
}

/// Trainable parameters of the shooting method.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlNets {
    pub y0: Mlp,
    pub z: ZNet,
}

impl ControlNets {
    pub fn init<R: Rng + ?Sized>(cfg: &NetworkConfig, n_steps: usize, rng: &mut R) -> Result<Self> {
        let y0 = Mlp::glorot(cfg.y0_spec(), rng)?;
        let z = match cfg.z_mode {
            ZMode::Shared => ZNet::Shared(Mlp::glorot(cfg.z_spec(), rng)?),
            ZMode::PerStep => ZNet::PerStep(
                (0..n_steps)
                    .map(|_| Mlp::glorot(cfg.z_spec(), rng))
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(Self { y0, z })
    }

    /// Networks with `y0 == y0_value` and `z == 0` everywhere.
    pub fn constant(cfg: &NetworkConfig, n_steps: usize, y0_value: f64) -> Result<Self> {
        let mut y0 = Mlp::zeros(cfg.y0_spec())?;
        y0.layers_mut().last_mut().expect("output layer").bias[0] = y0_value;
        let z = match cfg.z_mode {
            ZMode::Shared => ZNet::Shared(Mlp::zeros(cfg.z_spec())?),
            ZMode::PerStep => ZNet::PerStep(
                (0..n_steps)
                    .map(|_| Mlp::zeros(cfg.z_spec()))
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(Self { y0, z })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            y0: self.y0.zeros_like(),
            z: match &self.z {
                ZNet::Shared(n) => ZNet::Shared(n.zeros_like()),
                ZNet::PerStep(v) => ZNet::PerStep(v.iter().map(Mlp::zeros_like).collect()),
            },
        }
    }

    pub fn z_mode(&self) -> ZMode {
        match self.z {
            ZNet::Shared(_) => ZMode::Shared,
            ZNet::PerStep(_) => ZMode::PerStep,
        }
    }

    /// Check the networks against a grid with `n_steps` intervals.
    pub fn check_compatible(&self, n_steps: usize) -> Result<()> {
        if self.y0.input_dim() != 2 || self.y0.output_dim() != 1 {
            return Err(Error::shape("y0 network input", 2, self.y0.input_dim()));
        }
        let base = self.z_state_column() + 1;
        let nets: Vec<&Mlp> = match &self.z {
            ZNet::Shared(n) => vec![n],
            ZNet::PerStep(v) => {
                if v.len() != n_steps {
                    return Err(Error::shape("per-step z networks", n_steps, v.len()));
                }
                v.iter().collect()
            }
        };
        let dim = nets.first().map_or(base, |n| n.input_dim());
        if dim != base && dim != base + 1 {
            return Err(Error::shape("z network input", base, dim));
        }
        if let Some(n) = nets.iter().find(|n| n.input_dim() != dim || n.output_dim() != 1) {
            return Err(Error::shape("z network input", dim, n.input_dim()));
        }
        Ok(())
    }

    /// Network used at step `n`.
    pub fn z_net(&self, n: usize) -> &Mlp {
        match &self.z {
            ZNet::Shared(net) => net,
            ZNet::PerStep(v) => &v[n],
        }
    }

    pub(crate) fn z_net_mut(&mut self, n: usize) -> &mut Mlp {
        match &mut self.z {
            ZNet::Shared(net) => net,
            ZNet::PerStep(v) => &mut v[n],
        }
    }

    /// Column of the wealth input in the z network's input row.
    pub fn z_state_column(&self) -> usize {
        match self.z {
            ZNet::Shared(_) => 2,
            ZNet::PerStep(_) => 1,
        }
    }

    /// Whether the z network reads `θ_t` after the wealth column.
    pub fn z_factor_input(&self) -> bool {
        self.z_net(0).input_dim() == self.z_state_column() + 2
    }

    pub fn z_input_dim(&self) -> usize {
        self.z_state_column() + 1 + usize::from(self.z_factor_input())
    }

    /// Fill one z-network input row.
    pub(crate) fn write_z_input(&self, row: &mut [f64], t_frac: f64, u: f64, x: f64, theta: f64) {
        let col = self.z_state_column();
        if col == 2 {
            row[0] = centered(t_frac);
        }
        row[col - 1] = centered(u);
        row[col] = x;
        if let Some(r) = row.get_mut(col + 1) {
            *r = theta;
        }
    }

    pub fn y0_value(&self, u: f64, x0: f64) -> Result<f64> {
        Ok(self.y0.forward(&[centered(u), x0])?[0])
    }

    /// `z(t_n, u, x)`; `t_frac` is `t_n / T`. `theta` is read only by factor-input nets.
    pub fn z_value(&self, n: usize, t_frac: f64, u: f64, x: f64, theta: f64) -> Result<f64> {
        if let ZNet::PerStep(v) = &self.z {
            if n >= v.len() {
                return Err(Error::shape("per-step z networks", n + 1, v.len()));
            }
        }
        let mut row = vec![0.0; self.z_input_dim()];
        self.write_z_input(&mut row, t_frac, u, x, theta);
        Ok(self.z_net(n).forward(&row)?[0])
    }

    /// Multiply every z-network weight and bias by `factor`.
    pub fn scale_z(&mut self, factor: f64) {
        match &mut self.z {
            ZNet::Shared(n) => n.scale(factor),
            ZNet::PerStep(v) => v.iter_mut().for_each(|n| n.scale(factor)),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut nets: Vec<(String, &Mlp)> = vec![("y0".into(), &self.y0)];
        match &self.z {
            ZNet::Shared(n) => nets.push(("z".into(), n)),
            ZNet::PerStep(v) => {
                for (k, n) in v.iter().enumerate() {
                    nets.push((format!("z.{k}"), n));
                }
            }
        }
        let named: Vec<(&str, &Mlp)> = nets.iter().map(|(s, n)| (s.as_str(), *n)).collect();
        save_networks(path, &named)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut nets = load_networks(path)?.into_iter();
        let (name, y0) = nets
            .next()
            .ok_or_else(|| Error::Checkpoint("empty checkpoint".into()))?;
        if name != "y0" {
            return Err(Error::Checkpoint(format!("expected y0 network, found {name}")));
        }
        let rest: Vec<(String, Mlp)> = nets.collect();
        let z = match rest.as_slice() {
            [(name, net)] if name == "z" => ZNet::Shared(net.clone()),
            [] => return Err(Error::Checkpoint("checkpoint has no z network".into())),
            _ => {
                let mut v = Vec::with_capacity(rest.len());
                for (k, (name, net)) in rest.into_iter().enumerate() {
                    if name != format!("z.{k}") {
                        return Err(Error::Checkpoint(format!(
                            "expected z.{k} network, found {name}"
                        )));
                    }
                    v.push(net);
                }
                ZNet::PerStep(v)
            }
        };
        Ok(Self { y0, z })
    }
}

impl Parameters for ControlNets {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.y0.tensors();
        match &self.z {
            ZNet::Shared(n) => t.extend(n.tensors()),
            ZNet::PerStep(v) => v.iter().for_each(|n| t.extend(n.tensors())),
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.y0.tensors_mut();
        match &mut self.z {
            ZNet::Shared(n) => t.extend(n.tensors_mut()),
            ZNet::PerStep(v) => v.iter_mut().for_each(|n| t.extend(n.tensors_mut())),
        }
        t
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .y0
            .tensor_names()
            .into_iter()
            .map(|s| format!("y0.{s}"))
            .collect();
        match &self.z {
            ZNet::Shared(n) => names.extend(n.tensor_names().into_iter().map(|s| format!("z.{s}"))),
            ZNet::PerStep(v) => {
                for (k, n) in v.iter().enumerate() {
                    names.extend(n.tensor_names().into_iter().map(|s| format!("z{k}.{s}")));
                }
            }
        }
        names
    }

    fn on_update(&mut self) {
        self.y0.on_update();
        match &mut self.z {
            ZNet::Shared(n) => n.on_update(),
            ZNet::PerStep(v) => v.iter_mut().for_each(Parameters::on_update),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::seeded_rng;

    #[test]
    fn constant_nets_output_constants() {
        let cfg = NetworkConfig::with_widths(vec![4, 4]);
        let nets = ControlNets::constant(&cfg, 5, 1.5).unwrap();
        assert_eq!(nets.y0_value(0.3, 0.0).unwrap(), 1.5);
        assert_eq!(nets.z_value(2, 0.4, 0.3, 7.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn checkpoint_round_trip_both_modes() {
        let dir = tempfile::tempdir().unwrap();
        for mode in [ZMode::Shared, ZMode::PerStep] {
            let cfg = NetworkConfig {
                hidden_widths: vec![3, 5],
                z_mode: mode,
                ..NetworkConfig::default()
            };
            let nets = ControlNets::init(&cfg, 4, &mut seeded_rng(9)).unwrap();
            let path = dir.path().join(format!("{mode:?}.bin"));
            nets.save(&path).unwrap();
            let back = ControlNets::load(&path).unwrap();
            assert_eq!(back, nets);
            back.check_compatible(4).unwrap();
        }
    }

    #[test]
    fn factor_input_reads_theta() {
        for mode in [ZMode::Shared, ZMode::PerStep] {
            let cfg = NetworkConfig {
                hidden_widths: vec![4],
                z_mode: mode,
                factor_input: true,
                ..NetworkConfig::default()
            };
            let nets = ControlNets::init(&cfg, 3, &mut seeded_rng(2)).unwrap();
            assert!(nets.z_factor_input());
            assert_eq!(nets.z_input_dim(), nets.z_state_column() + 2);
            nets.check_compatible(3).unwrap();
            let a = nets.z_value(1, 0.5, 0.3, 0.2, -1.0).unwrap();
            let b = nets.z_value(1, 0.5, 0.3, 0.2, 1.0).unwrap();
            assert_ne!(a, b);
        }
        let plain = ControlNets::init(&NetworkConfig::with_widths(vec![4]), 3, &mut seeded_rng(2)).unwrap();
        assert!(!plain.z_factor_input());
        assert_eq!(plain.z_value(0, 0.0, 0.5, 0.1, -1.0).unwrap(), plain.z_value(0, 0.0, 0.5, 0.1, 1.0).unwrap());
    }

    #[test]
    fn per_step_count_checked() {
        let cfg = NetworkConfig {
            hidden_widths: vec![3],
            z_mode: ZMode::PerStep,
            ..NetworkConfig::default()
        };
        let nets = ControlNets::init(&cfg, 4, &mut seeded_rng(0)).unwrap();
        assert!(nets.check_compatible(5).is_err());
    }

    #[test]
    fn tensor_enumeration_is_consistent() {
        let cfg = NetworkConfig::with_widths(vec![3, 2]);
        let mut nets = ControlNets::init(&cfg, 4, &mut seeded_rng(1)).unwrap();
        let lens: Vec<usize> = nets.tensors().iter().map(|t| t.len()).collect();
        let names = nets.tensor_names();
        let lens_mut: Vec<usize> = nets.tensors_mut().iter().map(|t| t.len()).collect();
        assert_eq!(lens, lens_mut);
        assert_eq!(lens.len(), names.len());
        assert_eq!(
            nets.param_count(),
            cfg.y0_spec().param_count() + cfg.z_spec().param_count()
        );
    }
}
