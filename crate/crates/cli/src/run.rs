//! Mode execution. Every data file is a function of the config alone; wall
//! clock only enters the manifest and the sweep runtime columns.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use graphon_fbsde::exploitability::exploitability;
use graphon_fbsde::metrics::{equilibrium_utility, index_independence_test, wealth_curves, write_utilities_csv};
use graphon_fbsde::oracle::{oracle_trajectory, ClosedFormParams};
use graphon_fbsde::train::{init_nets, train, validation_relative_error, TrainReport};
use graphon_fbsde::{
    label_grid, rollout, sample_batch_with_labels, seeded_rng, Batch, ControlNets, Trajectory,
};

use crate::config::{Mode, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{hash_file, timestamp, RunManifest};
use crate::plot::emit_plot;

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
/// Labels at which utilities are tabulated.
pub const UTILITY_LABELS: usize = 64;

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    warnings: Vec<String>,
}

impl Outputs {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> CliResult<()>) -> CliResult<()> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| CliError::io(format!("creating {}", path.display()), e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn plot(&mut self, enabled: bool, inputs: &[&str], name: &str) -> CliResult<()> {
        if !enabled {
            return Ok(());
        }
        let paths: Vec<PathBuf> = inputs.iter().map(|n| self.path(n)).collect();
        let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
        if let Some(w) = emit_plot(&refs, &self.path(name))? {
            self.warnings.push(w);
        }
        self.files.push(name.to_string());
        Ok(())
    }

    fn warn(&mut self, msg: String) {
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }
}

fn io(path: &str) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(format!("writing {path}"), e)
}

/// Executes the configured mode into `out` and writes the manifest.
pub fn run(cfg: &RunConfig, out: &Path) -> CliResult<RunManifest> {
    cfg.validate()?;
    let started_at = timestamp();
    std::fs::create_dir_all(out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    let mut o = Outputs {
        dir: out.to_path_buf(),
        files: Vec::new(),
        warnings: Vec::new(),
    };
    let snapshot = cfg.to_toml()?;
    o.write(CONFIG_FILE, |w| w.write_all(snapshot.as_bytes()).map_err(io(CONFIG_FILE)))?;

    match cfg.mode {
        Mode::Train => run_train(cfg, &mut o)?,
        Mode::Evaluate => run_evaluate(cfg, &mut o)?,
        Mode::Exploitability => run_exploitability(cfg, &mut o)?,
        Mode::OracleCompare => run_oracle_compare(cfg, &mut o)?,
        Mode::SweepM => run_sweep(cfg, &mut o)?,
    }

    let files = o
        .files
        .iter()
        .map(|f| hash_file(out, f))
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = RunManifest {
        artifact_version: crate::manifest::ARTIFACT_VERSION.to_string(),
        mode: cfg.mode.name().to_string(),
        config: cfg.clone(),
        started_at,
        finished_at: timestamp(),
        files,
        warnings: o.warnings,
    };
    manifest.write(out)?;
    Ok(manifest)
}

fn eval_batch(cfg: &RunConfig) -> CliResult<Batch> {
    let grid = cfg.model.grid()?;
    Ok(sample_batch_with_labels(
        &cfg.model,
        &grid,
        label_grid(cfg.evaluate.batch_size),
        &mut seeded_rng(cfg.evaluate.seed),
    )?)
}

/// Evenly spread particle indices, at most `k` of them.
fn spread(m: usize, k: usize) -> Vec<usize> {
    let k = k.min(m);
    (0..k).map(|j| (2 * j + 1) * m / (2 * k)).collect()
}

fn load_checkpoint(cfg: &RunConfig, o: &Outputs) -> CliResult<ControlNets> {
    let path = cfg
        .evaluate
        .checkpoint
        .clone()
        .unwrap_or_else(|| o.path(CHECKPOINT_FILE));
    if !path.exists() {
        return Err(CliError::io(
            format!("loading checkpoint {}", path.display()),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let nets = ControlNets::load(&path)?;
    nets.check_compatible(cfg.model.n_star)?;
    Ok(nets)
}

fn write_history(o: &mut Outputs, name: &str, report: &TrainReport) -> CliResult<()> {
    o.write(name, |w| Ok(report.write_csv(w)?))
}

fn write_utilities(o: &mut Outputs, cfg: &RunConfig, nets: &ControlNets) -> CliResult<()> {
    let labels = label_grid(UTILITY_LABELS);
    let xi = cfg.model.xi.mean();
    let y0 = labels
        .iter()
        .map(|&u| nets.y0_value(u, xi))
        .collect::<Result<Vec<_>, _>>()?;
    let util = labels
        .iter()
        .zip(&y0)
        .map(|(&u, &y)| equilibrium_utility(&cfg.model, &cfg.graphon, u, y, xi))
        .collect::<Result<Vec<_>, _>>()?;
    o.write("utilities.csv", |w| Ok(write_utilities_csv(w, &labels, &y0, &util)?))
}

fn write_trajectory(o: &mut Outputs, name: &str, traj: &Trajectory, k: usize) -> CliResult<()> {
    let subset = traj.select(&spread(traj.n_particles(), k))?;
    o.write(name, |w| Ok(subset.write_csv(w)?))
}

fn train_equilibrium(cfg: &RunConfig, o: &mut Outputs) -> CliResult<ControlNets> {
    let tc = cfg.seeded_train();
    let init = init_nets(&tc, &cfg.model)?;
    let report = train(&tc, &cfg.graphon, &cfg.model, init)?;
    eprintln!(
        "trained {} iterations in {:.1}s, final validation loss {:.3e}",
        tc.iterations,
        report.wall_clock_secs,
        report.final_entry().val_loss
    );
    write_history(o, "history.csv", &report)?;
    let ckpt = o.path(CHECKPOINT_FILE);
    report.nets.save(&ckpt)?;
    o.files.push(CHECKPOINT_FILE.to_string());
    o.plot(cfg.plots, &["history.csv"], "loss.svg")?;
    Ok(report.nets)
}

fn run_train(cfg: &RunConfig, o: &mut Outputs) -> CliResult<()> {
    let nets = train_equilibrium(cfg, o)?;
    write_utilities(o, cfg, &nets)?;
    let batch = eval_batch(cfg)?;
    let traj = rollout(&nets, &cfg.graphon, &cfg.model, &cfg.model.grid()?, &batch)?;
    write_trajectory(o, "trajectory.csv", &traj, cfg.evaluate.trajectory_particles)?;
    o.plot(cfg.plots, &["utilities.csv"], "utilities.svg")?;
    o.plot(cfg.plots, &["trajectory.csv"], "trajectory.svg")
}

fn run_evaluate(cfg: &RunConfig, o: &mut Outputs) -> CliResult<()> {
    let nets = load_checkpoint(cfg, o)?;
    let batch = eval_batch(cfg)?;
    let traj = rollout(&nets, &cfg.graphon, &cfg.model, &cfg.model.grid()?, &batch)?;
    let loss = graphon_fbsde::shooting_loss(&traj);
    write_trajectory(o, "trajectory.csv", &traj, cfg.evaluate.trajectory_particles)?;
    write_utilities(o, cfg, &nets)?;

    let groups = cfg.graphon.natural_groups();
    let curves = wealth_curves(&traj, &cfg.graphon, &groups)?;
    for name in &curves.absent {
        o.warn(format!("group `{name}` has no particles"));
    }
    o.write("metrics.csv", |w| Ok(curves.write_csv(w)?))?;

    if groups.len() >= 2 {
        let report = index_independence_test(&traj, &cfg.graphon, &groups)?;
        for msg in &report.warnings {
            o.warn(msg.clone());
        }
        o.write("independence.csv", |w| {
            let e = io("independence.csv");
            let body = (|| -> std::io::Result<()> {
                writeln!(w, "# schema: gfbsde.independence.v1")?;
                writeln!(
                    w,
                    "# groups: {} ({}) vs {} ({}); threshold {} sigma; flagged nodes {}",
                    report.groups.0,
                    report.counts.0,
                    report.groups.1,
                    report.counts.1,
                    report.threshold_sigmas,
                    report.flagged_nodes()
                )?;
                writeln!(w, "quantity,t,diff,se,flagged")?;
                for (q, rows) in [("X", &report.wealth), ("Z", &report.volatility)] {
                    for r in rows {
                        writeln!(w, "{q},{},{},{},{}", r.t, r.diff, r.se, r.flagged as u8)?;
                    }
                }
                Ok(())
            })();
            body.map_err(e)
        })?;
    }
    o.write("evaluation.csv", |w| {
        writeln!(w, "# schema: gfbsde.evaluation.v1")
            .and_then(|_| writeln!(w, "particles,seed,loss"))
            .and_then(|_| writeln!(w, "{},{},{}", batch.len(), cfg.evaluate.seed, loss))
            .map_err(io("evaluation.csv"))
    })?;
    o.plot(cfg.plots, &["trajectory.csv"], "trajectory.svg")?;
    o.plot(cfg.plots, &["utilities.csv"], "utilities.svg")?;
    o.plot(cfg.plots, &["metrics.csv"], "wealth.svg")
}

fn run_exploitability(cfg: &RunConfig, o: &mut Outputs) -> CliResult<()> {
    let nets = match cfg.evaluate.checkpoint {
        Some(_) => load_checkpoint(cfg, o)?,
        None => train_equilibrium(cfg, o)?,
    };
    let mut ec = cfg.exploitability.clone();
    ec.best_response.seed = cfg.seed.wrapping_add(1);
    let report = exploitability(&nets, &cfg.graphon, &cfg.model, &ec)?;
    eprintln!(
        "average exploitability {:.4e} ({} negative terms)",
        report.summary.average, report.summary.negative_terms
    );
    if report.summary.negative_terms > 0 {
        o.warn(format!(
            "{} labels have a best response worse than the equilibrium (min gap {:.3e})",
            report.summary.negative_terms, report.summary.min_gap
        ));
    }
    o.write("exploitability.csv", |w| Ok(report.write_csv(w)?))?;
    write_history(o, "best_response_history.csv", &report.best_response)?;
    o.plot(cfg.plots, &["exploitability.csv"], "exploitability.svg")
}

fn run_oracle_compare(cfg: &RunConfig, o: &mut Outputs) -> CliResult<()> {
    let nets = load_checkpoint(cfg, o)?;
    let p = ClosedFormParams::from_model(&cfg.model, cfg.graphon)?;
    let labels = label_grid(cfg.evaluate.batch_size);
    let xi = cfg.model.xi.mean();
    let mean_err = validation_relative_error(&nets, |u| p.y0(u), &labels, xi)?;
    eprintln!("mean relative error of Y_0: {mean_err:.4e}%");
    o.write("oracle.csv", |w| {
        let mut rows = Vec::with_capacity(labels.len());
        for &u in &labels {
            let learned = nets.y0_value(u, xi)?;
            let reference = p.y0(u)?;
            let rel = if reference.abs() < 1e-12 {
                String::new()
            } else {
                format!("{}", 100.0 * (learned - reference).abs() / reference.abs())
            };
            rows.push(format!("{u},{learned},{reference},{rel}"));
        }
        (|| -> std::io::Result<()> {
            writeln!(w, "# schema: gfbsde.oracle.v1")?;
            writeln!(w, "label,Y0_learned,Y0_oracle,rel_error_pct")?;
            for r in &rows {
                writeln!(w, "{r}")?;
            }
            writeln!(w, "# mean_rel_error_pct: {mean_err}")
        })()
        .map_err(io("oracle.csv"))
    })?;
    let batch = eval_batch(cfg)?;
    let keep = spread(batch.len(), cfg.evaluate.trajectory_particles);
    let small = sample_batch_with_labels(
        &cfg.model,
        &cfg.model.grid()?,
        keep.iter().map(|&i| batch.labels[i]).collect(),
        &mut seeded_rng(cfg.evaluate.seed),
    )?;
    let traj = oracle_trajectory(&p, &cfg.model.grid()?, &small)?;
    o.write("oracle_trajectory.csv", |w| Ok(traj.write_csv(w)?))?;
    o.plot(cfg.plots, &["oracle.csv"], "oracle.svg")?;
    o.plot(cfg.plots, &["oracle_trajectory.csv"], "oracle_trajectory.svg")
}

fn run_sweep(cfg: &RunConfig, o: &mut Outputs) -> CliResult<()> {
    struct Row {
        m: usize,
        seed: u64,
        val_loss: f64,
        rel: Option<f64>,
        secs: f64,
    }
    let mut rows = Vec::new();
    for &m in &cfg.sweep.batch_sizes {
        for &s in &cfg.sweep.seeds {
            let mut tc = cfg.seeded_train();
            tc.batch_size = m;
            tc.seed = cfg.seed.wrapping_add(s);
            let init = init_nets(&tc, &cfg.model)?;
            let report = train(&tc, &cfg.graphon, &cfg.model, init)?;
            let last = report.final_entry();
            eprintln!("M = {m}, seed {}: {:.1}s, val loss {:.3e}", tc.seed, report.wall_clock_secs, last.val_loss);
            rows.push(Row {
                m,
                seed: tc.seed,
                val_loss: last.val_loss,
                rel: last.val_rel_error,
                secs: report.wall_clock_secs,
            });
        }
    }
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    o.write("sweep.csv", |w| {
        (|| -> std::io::Result<()> {
            writeln!(w, "# schema: gfbsde.sweep.v1")?;
            writeln!(w, "M,seed,val_loss,val_rel_error,runtime_secs")?;
            for r in &rows {
                writeln!(w, "{},{},{},{},{:.3}", r.m, r.seed, r.val_loss, opt(r.rel), r.secs)?;
            }
            Ok(())
        })()
        .map_err(io("sweep.csv"))
    })?;
    o.write("sweep_summary.csv", |w| {
        (|| -> std::io::Result<()> {
            writeln!(w, "# schema: gfbsde.sweep_summary.v1")?;
            writeln!(w, "M,runs,mean_val_loss,mean_val_rel_error,se_val_rel_error,mean_runtime_secs")?;
            for &m in &cfg.sweep.batch_sizes {
                let sel: Vec<&Row> = rows.iter().filter(|r| r.m == m).collect();
                let n = sel.len() as f64;
                let loss = sel.iter().map(|r| r.val_loss).sum::<f64>() / n;
                let secs = sel.iter().map(|r| r.secs).sum::<f64>() / n;
                let rel: Vec<f64> = sel.iter().filter_map(|r| r.rel).collect();
                let (mean, se) = mean_se(&rel);
                writeln!(w, "{m},{},{loss},{},{},{secs:.3}", sel.len(), opt(mean), opt(se))?;
            }
            Ok(())
        })()
        .map_err(io("sweep_summary.csv"))
    })?;
    o.plot(cfg.plots, &["sweep.csv"], "sweep.svg")
}

fn mean_se(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (Some(mean), None);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some((var / n).sqrt()))
}
