//! Post-processing of equilibrium trajectories: utilities, group-averaged
//! wealth curves and the label-independence test for expected wealth.

use std::io::Write;

use crate::error::{Error, Result};
use crate::graphon::{GraphonKernel, LabelGroup};
use crate::market::MarketModel;
use crate::sim::{Population, Trajectory};

pub const METRICS_SCHEMA: &str = "gfbsde.metrics.v1";
pub const UTILITIES_SCHEMA: &str = "gfbsde.utilities.v1";

/// `V = -exp(-(xi - rho xi deg(u) - Y_0) / eta(u))` for an initial wealth law
/// with mean `xi_mean` shared by all labels.
pub fn equilibrium_utility(
    model: &MarketModel,
    g: &GraphonKernel,
    u: f64,
    y0: f64,
    xi_mean: f64,
) -> Result<f64> {
    let eta = model.eta_positive(u)?;
    let benchmark = model.rho * xi_mean * g.degree(u)?;
    Ok(-(-(xi_mean - benchmark - y0) / eta).exp())
}

/// `label,Y0,utility` rows.
pub fn write_utilities_csv<W: Write>(mut w: W, labels: &[f64], y0: &[f64], utility: &[f64]) -> Result<()> {
    if labels.len() != y0.len() || labels.len() != utility.len() {
        return Err(Error::shape("utility columns", labels.len(), y0.len().min(utility.len())));
    }
    writeln!(w, "# schema: {UTILITIES_SCHEMA}")?;
    writeln!(w, "label,Y0,utility")?;
    for ((u, y), v) in labels.iter().zip(y0).zip(utility) {
        writeln!(w, "{u},{y},{v}")?;
    }
    Ok(())
}

/// Sample mean and standard error of the mean.
fn mean_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-node averages over one label group. Z is defined on steps, so its
/// vectors are one shorter than the node vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupCurves {
    pub name: String,
    pub count: usize,
    pub mean_x: Vec<f64>,
    pub se_x: Vec<f64>,
    pub mean_benchmarked: Vec<f64>,
    pub se_benchmarked: Vec<f64>,
    pub mean_z: Vec<f64>,
    pub se_z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WealthCurves {
    pub times: Vec<f64>,
    pub groups: Vec<GroupCurves>,
    /// Requested groups with no particle.
    pub absent: Vec<String>,
}

impl WealthCurves {
    pub fn group(&self, name: &str) -> Option<&GroupCurves> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// `group,t,mean_X,se_X,mean_benchmarked_X,se,mean_Z,se_Z`; Z columns are
    /// blank at the final node.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# schema: {METRICS_SCHEMA}")?;
        writeln!(w, "group,t,mean_X,se_X,mean_benchmarked_X,se,mean_Z,se_Z")?;
        for g in &self.groups {
            for (n, t) in self.times.iter().enumerate() {
                write!(
                    w,
                    "{},{},{},{},{},{}",
                    g.name, t, g.mean_x[n], g.se_x[n], g.mean_benchmarked[n], g.se_benchmarked[n]
                )?;
                match (g.mean_z.get(n), g.se_z.get(n)) {
                    (Some(m), Some(s)) => writeln!(w, ",{m},{s}")?,
                    _ => writeln!(w, ",,")?,
                }
            }
        }
        Ok(())
    }
}

/// `X_i - (1/M) sum_j G(u_i, u_j) X_j` at every node.
pub fn benchmarked_wealth(traj: &Trajectory, g: &GraphonKernel) -> Result<ndarray::Array2<f64>> {
    let pop = Population::new(*g, &traj.labels)?;
    let m = traj.n_particles();
    let mut out = traj.x.clone();
    let mut col = vec![0.0; m];
    let mut avg = vec![0.0; m];
    for n in 0..=traj.n_steps() {
        for i in 0..m {
            col[i] = traj.x[[i, n]] / m as f64;
        }
        pop.apply(&col, &mut avg);
        for i in 0..m {
            out[[i, n]] -= avg[i];
        }
    }
    Ok(out)
}

pub fn wealth_curves(traj: &Trajectory, g: &GraphonKernel, groups: &[LabelGroup]) -> Result<WealthCurves> {
    let bench = benchmarked_wealth(traj, g)?;
    let n_nodes = traj.n_steps() + 1;
    let mut out = Vec::new();
    let mut absent = Vec::new();
    for grp in groups {
        let members: Vec<usize> = (0..traj.n_particles())
            .filter(|&i| grp.contains(traj.labels[i]))
            .collect();
        if members.is_empty() {
            absent.push(grp.name.clone());
            continue;
        }
        let mut c = GroupCurves {
            name: grp.name.clone(),
            count: members.len(),
            mean_x: Vec::with_capacity(n_nodes),
            se_x: Vec::with_capacity(n_nodes),
            mean_benchmarked: Vec::with_capacity(n_nodes),
            se_benchmarked: Vec::with_capacity(n_nodes),
            mean_z: Vec::with_capacity(n_nodes - 1),
            se_z: Vec::with_capacity(n_nodes - 1),
        };
        for n in 0..n_nodes {
            let (m, s) = mean_se(members.iter().map(|&i| traj.x[[i, n]]));
            c.mean_x.push(m);
            c.se_x.push(s);
            let (m, s) = mean_se(members.iter().map(|&i| bench[[i, n]]));
            c.mean_benchmarked.push(m);
            c.se_benchmarked.push(s);
            if n + 1 < n_nodes {
                let (m, s) = mean_se(members.iter().map(|&i| traj.z[[i, n]]));
                c.mean_z.push(m);
                c.se_z.push(s);
            }
        }
        out.push(c);
    }
    Ok(WealthCurves {
        times: traj.times.clone(),
        groups: out,
        absent,
    })
}

/// Two-sample comparison at one node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeComparison {
    pub t: f64,
    pub diff: f64,
    pub se: f64,
    pub flagged: bool,
}

impl NodeComparison {
    fn new(t: f64, a: (f64, f64), b: (f64, f64), k: f64) -> Self {
        let diff = a.0 - b.0;
        let se = (a.1 * a.1 + b.1 * b.1).sqrt();
        Self {
            t,
            diff,
            se,
            flagged: diff.abs() > k * se,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndependenceReport {
    pub groups: (String, String),
    pub counts: (usize, usize),
    pub threshold_sigmas: f64,
    pub wealth: Vec<NodeComparison>,
    pub volatility: Vec<NodeComparison>,
    pub warnings: Vec<String>,
}

impl IndependenceReport {
    pub fn flagged_nodes(&self) -> usize {
        self.wealth.iter().chain(&self.volatility).filter(|c| c.flagged).count()
    }

    /// Largest `|diff| / se` over both quantities, ignoring zero-variance nodes.
    pub fn max_z_score(&self) -> f64 {
        self.wealth
            .iter()
            .chain(&self.volatility)
            .filter(|c| c.se > 0.0)
            .map(|c| c.diff.abs() / c.se)
            .fold(0.0, f64::max)
    }
}

pub const MIN_GROUP_SIZE: usize = 30;

/// Compares the first two groups node by node at `3` standard errors.
pub fn index_independence_test(traj: &Trajectory, g: &GraphonKernel, groups: &[LabelGroup]) -> Result<IndependenceReport> {
    if groups.len() < 2 {
        return Err(Error::Config("independence test needs two label groups".into()));
    }
    let curves = wealth_curves(traj, g, &groups[..2])?;
    if !curves.absent.is_empty() {
        return Err(Error::Config(format!(
            "label group(s) {:?} contain no particle",
            curves.absent
        )));
    }
    let (a, b) = (&curves.groups[0], &curves.groups[1]);
    let k = 3.0;
    let mut warnings = Vec::new();
    for grp in [a, b] {
        if grp.count < MIN_GROUP_SIZE {
            warnings.push(format!(
                "group {} has {} particles (< {MIN_GROUP_SIZE}); test is underpowered",
                grp.name, grp.count
            ));
        }
    }
    let wealth = (0..curves.times.len())
        .map(|n| NodeComparison::new(curves.times[n], (a.mean_x[n], a.se_x[n]), (b.mean_x[n], b.se_x[n]), k))
        .collect();
    let volatility = (0..a.mean_z.len())
        .map(|n| NodeComparison::new(curves.times[n], (a.mean_z[n], a.se_z[n]), (b.mean_z[n], b.se_z[n]), k))
        .collect();
    Ok(IndependenceReport {
        groups: (a.name.clone(), b.name.clone()),
        counts: (a.count, b.count),
        threshold_sigmas: k,
        wealth,
        volatility,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{sample_batch_seeded, EtaSpec};
    use crate::model::{ControlNets, NetworkConfig};
    use crate::oracle::{oracle_trajectory, ClosedFormParams};
    use crate::sim::rollout;

    #[test]
    fn utility_examples() {
        let m = MarketModel::constant_benchmark();
        let g = GraphonKernel::Constant;
        assert_eq!(equilibrium_utility(&m, &g, 0.3, 0.0, 0.0).unwrap(), -1.0);
        let v = equilibrium_utility(&m, &g, 0.3, 1.5, 0.0).unwrap();
        assert!((v + 0.5f64.exp()).abs() < 1e-15);
        assert!((v + 1.648_721).abs() < 1e-6);
        let v = equilibrium_utility(&m, &g, 0.8, -0.75, 0.0).unwrap();
        assert!((v + 0.778_800_8).abs() < 1e-6);
        let degenerate = MarketModel {
            eta: EtaSpec::Parabolic { beta: 1.0 },
            ..m
        };
        assert!(matches!(
            equilibrium_utility(&degenerate, &g, 0.0, 1.0, 0.0),
            Err(Error::DegenerateLabel { .. })
        ));
    }

    #[test]
    fn utility_is_negative_and_decreasing_in_y0() {
        let m = MarketModel::constant_benchmark();
        let g = GraphonKernel::MinMax;
        let mut prev = 0.0;
        for k in 0..50 {
            let y0 = -5.0 + 0.2 * k as f64;
            let v = equilibrium_utility(&m, &g, 0.4, y0, 0.7).unwrap();
            assert!(v < 0.0);
            if k > 0 {
                assert!(v < prev);
            }
            prev = v;
        }
    }

    #[test]
    fn curves_of_closed_form_wealth() {
        let model = MarketModel::constant_benchmark();
        let grid = model.grid().unwrap();
        let g = GraphonKernel::Constant;
        let batch = sample_batch_seeded(&model, &grid, 4000, 21).unwrap();
        let p = ClosedFormParams::from_model(&model, g).unwrap();
        let traj = oracle_trajectory(&p, &grid, &batch).unwrap();
        let curves = wealth_curves(&traj, &g, &g.natural_groups()).unwrap();
        let all = curves.group("all").unwrap();
        assert_eq!(all.mean_x[0], 0.0);
        assert_eq!(all.mean_benchmarked[0], 0.0);
        assert!((all.mean_x[40] - 3.0).abs() < 3.0 * all.se_x[40]);
        // identical laws: benchmarked wealth averages to zero exactly for G1
        assert!(all.mean_benchmarked.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(all.mean_z.len(), 40);
    }

    #[test]
    fn empty_groups_are_absent() {
        let model = MarketModel { n_star: 3, ..MarketModel::constant_benchmark() };
        let grid = model.grid().unwrap();
        let mut batch = sample_batch_seeded(&model, &grid, 4, 1).unwrap();
        batch.labels = vec![0.1, 0.2, 0.3, 0.4];
        let nets = ControlNets::constant(&NetworkConfig::with_widths(vec![2]), 3, 0.0).unwrap();
        let traj = rollout(&nets, &GraphonKernel::Constant, &model, &grid, &batch).unwrap();
        let groups = GraphonKernel::TwoBlock { a: 1.0, b: 1.0 }.natural_groups();
        let c = wealth_curves(&traj, &GraphonKernel::Constant, &groups).unwrap();
        assert_eq!(c.absent, vec!["upper".to_string()]);
        assert!(c.group("upper").is_none());
        assert!(index_independence_test(&traj, &GraphonKernel::Constant, &groups).is_err());
    }

    #[test]
    fn identical_groups_show_no_difference() {
        let model = MarketModel::markovian_benchmark();
        let grid = model.grid().unwrap();
        let batch = sample_batch_seeded(&model, &grid, 50, 2).unwrap();
        let nets = ControlNets::constant(&NetworkConfig::with_widths(vec![2]), 40, 0.0).unwrap();
        let g = GraphonKernel::Constant;
        let traj = rollout(&nets, &g, &model, &grid, &batch).unwrap();
        let same = vec![LabelGroup::new("a", vec![(0.0, 1.0)]), LabelGroup::new("b", vec![(0.0, 1.0)])];
        let rep = index_independence_test(&traj, &g, &same).unwrap();
        assert_eq!(rep.flagged_nodes(), 0);
        assert!(rep.wealth.iter().all(|c| c.diff == 0.0));
        assert!(rep.warnings.is_empty());
        let tiny = vec![LabelGroup::new("a", vec![(0.0, 0.1)]), LabelGroup::new("b", vec![(0.1, 1.0)])];
        let rep = index_independence_test(&traj, &g, &tiny).unwrap();
        assert_eq!(rep.warnings.len(), 1);
    }

    #[test]
    fn csv_layout() {
        let model = MarketModel { n_star: 2, ..MarketModel::constant_benchmark() };
        let grid = model.grid().unwrap();
        let batch = sample_batch_seeded(&model, &grid, 6, 3).unwrap();
        let g = GraphonKernel::Constant;
        let traj = oracle_trajectory(&ClosedFormParams::from_model(&model, g).unwrap(), &grid, &batch).unwrap();
        let c = wealth_curves(&traj, &g, &g.natural_groups()).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2 + 3);
        assert!(lines[4].ends_with(",,"));
        let mut buf = Vec::new();
        write_utilities_csv(&mut buf, &[0.5], &[1.5], &[-1.6]).unwrap();
        assert!(String::from_utf8(buf).unwrap().ends_with("0.5,1.5,-1.6\n"));
    }
}
