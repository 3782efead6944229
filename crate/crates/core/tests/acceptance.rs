//! Acceptance suite. Prints one `PASS` or `FAIL` line per criterion and exits
//! non-zero when any criterion fails.
//!
//! `ACCEPTANCE_ONLY=2,5` restricts the run to the listed criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use graphon_fbsde::exploitability::{exploitability, ExploitabilityConfig};
use graphon_fbsde::metrics::index_independence_test;
use graphon_fbsde::oracle::{
    closed_form_strategy, closed_form_y, degree_quadrature, finite_n_strategy, ode_integrate_y, ClosedFormParams,
};
use graphon_fbsde::train::{init_nets, train, LrDecay, TrainConfig, TrainReport};
use graphon_fbsde::{
    label_grid, rollout, rollout_backward, sample_batch_seeded, sample_batch_with_labels, seeded_rng,
    shooting_loss, Activation, AdamConfig, ControlNets, EtaSpec, GraphonKernel, LabelSampling, MarketKind,
    MarketModel, Mlp, MlpSpec, NetworkConfig, Parameters, XiSpec, ZMode,
};
use rand::Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

const G2: GraphonKernel = GraphonKernel::TwoBlock { a: 2.0, b: 0.5 };
const G3: GraphonKernel = GraphonKernel::Star { c: 1.0, alpha: 0.2 };

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Training settings shared by criteria 1, 2 and 6.
fn benchmark_train_config() -> TrainConfig {
    TrainConfig {
        iterations: 10_000,
        batch_size: 512,
        adam: AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        },
        lr_decay: Some(LrDecay {
            every: 1500,
            factor: 0.5,
        }),
        validation_size: 1024,
        eval_period: 500,
        label_sampling: LabelSampling::Stratified,
        seed: 0,
        network: NetworkConfig {
            y0_widths: Some(vec![64, 64, 64]),
            ..NetworkConfig::with_widths(vec![32, 32])
        },
        ..TrainConfig::default()
    }
}

fn run_training(cfg: &TrainConfig, g: GraphonKernel, model: &MarketModel) -> TrainReport {
    let init = init_nets(cfg, model).expect("init");
    train(cfg, &g, model, init).expect("training")
}

fn g1_equilibrium() -> &'static TrainReport {
    static CELL: OnceLock<TrainReport> = OnceLock::new();
    CELL.get_or_init(|| {
        run_training(
            &benchmark_train_config(),
            GraphonKernel::Constant,
            &MarketModel::constant_benchmark(),
        )
    })
}

/// Closed-form `Y_0` for constant coefficients, written out independently of
/// the library: `T theta^2 (rho eta deg(u) - eta / 2)`.
fn reference_y0(model: &MarketModel, deg: f64) -> f64 {
    let eta = model.eta.constant_value().unwrap();
    let theta = model.theta.unwrap();
    model.horizon * theta * theta * (model.rho * eta * deg - 0.5 * eta)
}

/// Degree functions worked out by hand.
fn reference_degree(g: GraphonKernel, u: f64) -> f64 {
    match g {
        GraphonKernel::Constant => 1.0,
        GraphonKernel::TwoBlock { a, b } => {
            if u < 0.5 {
                a / 2.0
            } else {
                b / 2.0
            }
        }
        GraphonKernel::Star { c, alpha } => {
            if u < alpha {
                c * (1.0 - alpha)
            } else {
                c * alpha
            }
        }
        GraphonKernel::MinMax => u * (1.0 - u) / 2.0,
        GraphonKernel::PowerLaw { gamma } => u.powf(-gamma) / (1.0 - gamma),
    }
}

fn criterion_1() -> Outcome {
    let model = MarketModel::constant_benchmark();
    let started = Instant::now();
    let report = g1_equilibrium();
    let secs = started.elapsed().as_secs_f64().max(report.wall_clock_secs);
    let labels = label_grid(64);
    let target = reference_y0(&model, 1.0);
    let rel = labels
        .iter()
        .map(|&u| (report.nets.y0_value(u, 0.0).unwrap() - target).abs() / target.abs())
        .sum::<f64>()
        / labels.len() as f64;
    let val_loss = report.final_entry().val_loss;
    let grid = model.grid().unwrap();
    let batch = sample_batch_seeded(&model, &grid, 4096, 123).unwrap();
    let traj = rollout(&report.nets, &GraphonKernel::Constant, &model, &grid, &batch).unwrap();
    let mean_z = traj.z.iter().map(|z| z.abs()).sum::<f64>() / traj.z.len() as f64;
    check(
        rel <= 1e-3 && val_loss <= 1e-6 && mean_z <= 1e-2 && secs <= 900.0,
        format!(
            "G1 K=10000 M=512: Y0 rel err {:.4}% (<= 0.1%), val loss {val_loss:.3e} (<= 1e-6), mean|Z| {mean_z:.2e} (<= 1e-2), {secs:.0}s (<= 900s)",
            100.0 * rel
        ),
    )
}

/// Per-block mean relative error of `Y_0` on the 64-label grid. Labels within
/// one grid cell of the block edge are reported but not scored: a smooth network
/// cannot close a jump inside 1/128.
fn criterion_2() -> Outcome {
    let model = MarketModel::constant_benchmark();
    let labels = label_grid(64);
    let mut details = Vec::new();
    let mut ok = true;
    for (name, g, cut) in [("G2", G2, 0.5), ("G3", G3, 0.2)] {
        let report = run_training(&benchmark_train_config(), g, &model);
        for (block, lo, hi) in [("first", 0.0, cut), ("second", cut, 1.0)] {
            let inside: Vec<f64> = labels.iter().copied().filter(|&u| u >= lo && u < hi).collect();
            let target = reference_y0(&model, reference_degree(g, inside[0]));
            let err = |u: f64| (report.nets.y0_value(u, 0.0).unwrap() - target).abs() / target.abs();
            let mean = |us: &[f64]| us.iter().map(|&u| err(u)).sum::<f64>() / us.len() as f64;
            let scored: Vec<f64> = inside.iter().copied().filter(|&u| (u - cut).abs() > 1.0 / 64.0).collect();
            let worst = scored.iter().map(|&u| err(u)).fold(0.0, f64::max);
            let m = mean(&scored);
            ok &= m <= 5e-3;
            details.push(format!(
                "{name} {block} block (Y0 {target:+.2}): mean {:.3}% worst {:.3}% ({} labels; {:.3}% with the edge label)",
                100.0 * m,
                100.0 * worst,
                scored.len(),
                100.0 * mean(&inside)
            ));
        }
    }
    check(ok, format!("{} (<= 0.5% per block)", details.join("; ")))
}

fn random_kernel<R: Rng>(rng: &mut R) -> GraphonKernel {
    match rng.gen_range(0..5) {
        0 => GraphonKernel::Constant,
        1 => GraphonKernel::TwoBlock {
            a: rng.gen_range(0.2..2.0),
            b: rng.gen_range(0.2..2.0),
        },
        2 => GraphonKernel::Star {
            c: rng.gen_range(0.2..1.0),
            alpha: rng.gen_range(0.1..0.9),
        },
        3 => GraphonKernel::MinMax,
        _ => GraphonKernel::PowerLaw {
            gamma: rng.gen_range(-1.0..0.0),
        },
    }
}

fn criterion_3() -> Outcome {
    let mut rng = seeded_rng(2024);
    let mut worst_sim: f64 = 0.0;
    for _ in 0..20 {
        let model = MarketModel {
            kind: if rng.gen_bool(0.5) {
                MarketKind::ConstantBs
            } else {
                MarketKind::MarkovianBs
            },
            sigma: rng.gen_range(0.05..0.5),
            theta: Some(rng.gen_range(0.2..1.5)),
            eta: EtaSpec::Constant {
                value: rng.gen_range(0.5..4.0),
            },
            rho: rng.gen_range(0.0..1.5),
            xi: XiSpec::Normal {
                mean: 0.0,
                std: 0.5,
            },
            horizon: rng.gen_range(0.5..1.5),
            n_star: rng.gen_range(1..=5),
            d: 1,
        };
        let depth = rng.gen_range(1..=2);
        let widths: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=8)).collect();
        let cfg = NetworkConfig {
            z_mode: if rng.gen_bool(0.5) { ZMode::Shared } else { ZMode::PerStep },
            factor_input: rng.gen_bool(0.5),
            ..NetworkConfig::with_widths(widths)
        };
        let g = random_kernel(&mut rng);
        let m = rng.gen_range(1..=4);
        let grid = model.grid().unwrap();
        let batch = sample_batch_seeded(&model, &grid, m, rng.gen()).unwrap();
        let nets = ControlNets::init(&cfg, grid.n_steps(), &mut seeded_rng(rng.gen())).unwrap();
        let analytic: Vec<f64> = rollout_backward(&nets, &g, &model, &grid, &batch)
            .unwrap()
            .grads
            .tensors()
            .iter()
            .flat_map(|t| t.to_vec())
            .collect();
        let loss = |n: &ControlNets| shooting_loss(&rollout(n, &g, &model, &grid, &batch).unwrap());
        let h = 1e-6;
        let mut k = 0;
        for ti in 0..nets.tensors().len() {
            for e in 0..nets.tensors()[ti].len() {
                let mut plus = nets.clone();
                plus.tensors_mut()[ti][e] += h;
                let mut minus = nets.clone();
                minus.tensors_mut()[ti][e] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let rel = (analytic[k] - fd).abs() / analytic[k].abs().max(fd.abs()).max(1e-3);
                worst_sim = worst_sim.max(rel);
                k += 1;
            }
        }
    }

    let mut worst_nn: f64 = 0.0;
    for _ in 0..100 {
        let depth = rng.gen_range(1..=3);
        let mut spec = MlpSpec::new(
            rng.gen_range(1..=4),
            (0..depth).map(|_| rng.gen_range(1..=8)).collect(),
            rng.gen_range(1..=3),
        );
        spec.activation = if rng.gen_bool(0.5) { Activation::Tanh } else { Activation::Sigmoid };
        let mlp = Mlp::glorot(spec.clone(), &mut seeded_rng(rng.gen())).unwrap();
        let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..spec.output_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (grads, _) = mlp.backward(&x, &up).unwrap();
        let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.to_vec()).collect();
        let f = |n: &Mlp| n.forward(&x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        let h = 1e-6;
        let mut k = 0;
        for ti in 0..mlp.tensors().len() {
            for e in 0..mlp.tensors()[ti].len() {
                let mut plus = mlp.clone();
                plus.tensors_mut()[ti][e] += h;
                let mut minus = mlp.clone();
                minus.tensors_mut()[ti][e] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let rel = (analytic[k] - fd).abs() / analytic[k].abs().max(fd.abs()).max(1e-3);
                worst_nn = worst_nn.max(rel);
                k += 1;
            }
        }
    }
    check(
        worst_sim < 1e-4 && worst_nn < 1e-5,
        format!("rollout_backward worst rel err {worst_sim:.2e} over 20 instances (< 1e-4); mlp backward {worst_nn:.2e} over 100 draws (< 1e-5)"),
    )
}

fn criterion_4() -> Outcome {
    let model = MarketModel::constant_benchmark();
    let grid = model.grid().unwrap();
    let mut worst_y: f64 = 0.0;
    let mut worst_deg: f64 = 0.0;
    let kernels = [GraphonKernel::Constant, G2, G3, GraphonKernel::MinMax, GraphonKernel::power_law()];
    for g in kernels {
        let p = ClosedFormParams::from_model(&model, g).unwrap();
        for k in 0..=50 {
            let u = k as f64 / 50.0;
            let deg = reference_degree(g, u);
            worst_deg = worst_deg.max((degree_quadrature(&g, u).unwrap() - deg).abs());
            worst_deg = worst_deg.max((g.degree(u).unwrap() - deg).abs());
            let ode = ode_integrate_y(&g, &model, &grid, u).unwrap();
            for (n, &y) in ode.iter().enumerate() {
                let t = grid.node(n);
                worst_y = worst_y.max((y - closed_form_y(&p, t, u).unwrap()).abs());
            }
            let by_hand = reference_y0(&model, deg);
            worst_y = worst_y.max((ode[0] - by_hand).abs());
        }
    }
    check(
        worst_y <= 1e-12 && worst_deg <= 1e-10,
        format!("G1-G5, 51 labels x 41 nodes: max |ODE - closed form| {worst_y:.1e} (<= 1e-12); max degree error {worst_deg:.1e} (<= 1e-10)"),
    )
}

fn criterion_5() -> Outcome {
    let model = MarketModel {
        n_star: 10,
        ..MarketModel::constant_benchmark()
    };
    let sizes = [128usize, 512, 2048];
    let mut ok = true;
    let mut details = Vec::new();
    for (name, g) in [("G2", G2), ("G4", GraphonKernel::MinMax)] {
        let mut errs = Vec::new();
        let mut secs = Vec::new();
        for &m in &sizes {
            let (mut e, mut s) = (0.0, 0.0);
            for seed in 0..4 {
                let cfg = TrainConfig {
                    iterations: 1000,
                    batch_size: m,
                    adam: AdamConfig {
                        learning_rate: 1e-2,
                        ..AdamConfig::default()
                    },
                    lr_decay: Some(LrDecay {
                        every: 250,
                        factor: 0.5,
                    }),
                    validation_size: 256,
                    eval_period: 1000,
                    seed,
                    network: NetworkConfig::with_widths(vec![16, 16]),
                    ..TrainConfig::default()
                };
                let r = run_training(&cfg, g, &model);
                e += r.final_entry().val_rel_error.unwrap() / 4.0;
                s += r.wall_clock_secs / 4.0;
            }
            errs.push(e);
            secs.push(s);
        }
        let monotone = errs.windows(2).all(|w| w[1] <= w[0]);
        let slower = secs.windows(2).all(|w| w[1] > w[0]);
        ok &= monotone && slower;
        details.push(format!(
            "{name}: err {:.3}% / {:.3}% / {:.3}%, runtime {:.1}s / {:.1}s / {:.1}s",
            errs[0], errs[1], errs[2], secs[0], secs[1], secs[2]
        ));
    }
    check(ok, format!("M = 128/512/2048, 4 seeds: {}", details.join("; ")))
}

fn criterion_6() -> Outcome {
    let model = MarketModel::constant_benchmark();
    let eq = &g1_equilibrium().nets;
    let cfg = ExploitabilityConfig {
        best_response: TrainConfig {
            iterations: 5000,
            seed: 17,
            ..benchmark_train_config()
        },
        ..ExploitabilityConfig::default()
    };
    let base = exploitability(eq, &GraphonKernel::Constant, &model, &cfg).unwrap();
    let mut perturbed = eq.clone();
    perturbed.scale_z(1.5);
    let worse = exploitability(&perturbed, &GraphonKernel::Constant, &model, &cfg).unwrap();
    let (a, b) = (base.summary.average, worse.summary.average);
    check(
        a <= 1e-3 && b > a,
        format!("G1 equilibrium exploitability {a:.3e} (<= 1e-3); z-weights x1.5 gives {b:.3e} (> {a:.3e})"),
    )
}

fn criterion_7() -> Outcome {
    let model = MarketModel::markovian_benchmark();
    let base = benchmark_train_config();
    // Z is a function of the factor W_t, which wealth alone does not reveal
    let cfg = TrainConfig {
        iterations: 3000,
        network: NetworkConfig {
            factor_input: true,
            ..base.network.clone()
        },
        ..base
    };
    let report = run_training(&cfg, G3, &model);
    let grid = model.grid().unwrap();
    let batch = sample_batch_with_labels(&model, &grid, label_grid(4096), &mut seeded_rng(99)).unwrap();
    let traj = rollout(&report.nets, &G3, &model, &grid, &batch).unwrap();
    let test = index_independence_test(&traj, &G3, &G3.natural_groups()).unwrap();
    let flagged: Vec<String> = [("X", &test.wealth), ("Z", &test.volatility)]
        .iter()
        .flat_map(|(q, rows)| {
            rows.iter()
                .filter(|c| c.flagged)
                .map(move |c| format!("{q}@t={:.3} diff {:.2e} se {:.2e}", c.t, c.diff, c.se))
        })
        .collect();
    check(
        test.flagged_nodes() == 0,
        format!(
            "MarkovianBS G3, 4096 particles ({} major / {} minor), final loss {:.2e}: {} flagged nodes at 3 sigma [{}], max |z-score| {:.2}",
            test.counts.0,
            test.counts.1,
            report.history.last().map_or(f64::NAN, |h| h.val_loss),
            test.flagged_nodes(),
            flagged.join("; "),
            test.max_z_score()
        ),
    )
}

fn criterion_8() -> Outcome {
    let base = ClosedFormParams::from_model(&MarketModel::constant_benchmark(), GraphonKernel::Constant).unwrap();
    let mut worst: f64 = 0.0;
    for lambda in [0.0, 0.25, 0.5, 1.0] {
        for rho in [0.5, 1.0] {
            let p = ClosedFormParams { rho, ..base };
            for n in [2.0, 10.0, 100.0, 1e6] {
                let finite = finite_n_strategy(&p, n, lambda).unwrap();
                let closed = closed_form_strategy(p.eta, p.theta, p.sigma).unwrap();
                let expected = rho * lambda / (n - rho * lambda) * p.eta * p.theta / p.sigma;
                // one rounding per operand of the subtraction
                let ulp = f64::EPSILON * finite.abs().max(closed.abs());
                worst = worst.max(((finite - closed).abs() - expected).abs() / ulp.max(f64::MIN_POSITIVE));
            }
        }
    }
    check(
        worst <= 4.0,
        format!("N in {{2, 10, 100, 1e6}}, lambda in {{0, 0.25, 0.5, 1}}: worst deviation {worst:.2} ulp (<= 4)"),
    )
}

/// Monte Carlo utility under the physical measure: the population is rolled
/// out once to get the benchmark, then `paths` independent copies of the
/// tagged player are simulated with the learned control.
fn mc_utility(nets: &ControlNets, g: GraphonKernel, model: &MarketModel, targets: &[f64]) -> Vec<(f64, f64)> {
    let grid = model.grid().unwrap();
    let pop = sample_batch_with_labels(model, &grid, label_grid(8192), &mut seeded_rng(5)).unwrap();
    let traj = rollout(nets, &g, model, &grid, &pop).unwrap();
    let n = grid.n_steps();
    let xt: Vec<f64> = traj.x.column(n).to_vec();
    let eta = model.eta.constant_value().unwrap();
    let theta = model.theta.unwrap();
    let paths = 20_000;
    targets
        .iter()
        .map(|&u| {
            let bench = model.rho
                * pop.labels.iter().zip(&xt).map(|(&v, &x)| g.weight(u, v) * x).sum::<f64>()
                / pop.labels.len() as f64;
            let mut rng = seeded_rng(6);
            let samples: Vec<f64> = (0..paths)
                .map(|_| {
                    let mut x = 0.0;
                    for k in 0..n {
                        let dt = grid.dt(k);
                        let z = nets.z_value(k, grid.node(k) / grid.horizon(), u, x, theta).unwrap();
                        let dw: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * dt.sqrt();
                        x += (z + eta * theta) * (theta * dt + dw);
                    }
                    -(-(x - bench) / eta).exp()
                })
                .collect();
            let mean = samples.iter().sum::<f64>() / paths as f64;
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (paths as f64 - 1.0);
            (mean, (var / paths as f64).sqrt())
        })
        .collect()
}

fn criterion_9() -> Outcome {
    let model = MarketModel::constant_benchmark();
    let eta = model.eta.constant_value().unwrap();
    let v = |g: GraphonKernel, u: f64| -(reference_y0(&model, reference_degree(g, u)) / eta).exp();
    let mut ok = v(G2, 0.25) < v(G2, 0.75);
    let grid = label_grid(64);
    let g4: Vec<f64> = grid.iter().map(|&u| v(GraphonKernel::MinMax, u)).collect();
    let argmin = g4
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |b, (i, &x)| if x < b.1 { (i, x) } else { b })
        .0;
    ok &= (grid[argmin] - 0.5).abs() < 0.02;
    let g5: Vec<f64> = grid.iter().map(|&u| v(GraphonKernel::power_law(), u)).collect();
    ok &= g5.windows(2).all(|w| w[1] < w[0]);
    let oracle_ok = ok;

    let small = MarketModel {
        n_star: 10,
        ..model.clone()
    };
    let cfg = TrainConfig {
        iterations: 1500,
        batch_size: 512,
        validation_size: 256,
        eval_period: 1500,
        lr_decay: Some(LrDecay {
            every: 400,
            factor: 0.5,
        }),
        adam: AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        },
        network: NetworkConfig::with_widths(vec![16, 16]),
        ..TrainConfig::default()
    };
    let sep = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) / (a.1 * a.1 + b.1 * b.1).sqrt();
    let nets4 = run_training(&cfg, GraphonKernel::MinMax, &small).nets;
    let u4 = mc_utility(&nets4, GraphonKernel::MinMax, &small, &[0.1, 0.5, 0.9]);
    let nets5 = run_training(&cfg, GraphonKernel::power_law(), &small).nets;
    let u5 = mc_utility(&nets5, GraphonKernel::power_law(), &small, &[0.1, 0.5, 0.9]);
    let seps = [sep(u4[1], u4[0]), sep(u4[1], u4[2]), sep(u5[1], u5[0]), sep(u5[2], u5[1])];
    let mc_ok = seps.iter().all(|&s| s > 3.0);
    check(
        oracle_ok && mc_ok,
        format!(
            "oracle: G2 V(a) {:.4} < V(b) {:.4}, G4 argmin u = {:.3}, G5 decreasing = {}; MC separations {:.1} {:.1} (G4) {:.1} {:.1} (G5) sigma (> 3)",
            v(G2, 0.25),
            v(G2, 0.75),
            grid[argmin],
            g5.windows(2).all(|w| w[1] < w[0]),
            seps[0],
            seps[1],
            seps[2],
            seps[3]
        ),
    )
}

fn criterion_10() -> Outcome {
    let model = MarketModel::constant_benchmark();
    let cfg = TrainConfig {
        iterations: 300,
        batch_size: 256,
        seed: 41,
        ..benchmark_train_config()
    };
    let dir = tempfile::tempdir().unwrap();
    let digest = |tag: &str| -> Vec<String> {
        let r = run_training(&cfg, G2, &model);
        let mut history = Vec::new();
        r.write_csv(&mut history).unwrap();
        let ckpt = dir.path().join(format!("{tag}.bin"));
        r.nets.save(&ckpt).unwrap();
        let grid = model.grid().unwrap();
        let batch = sample_batch_seeded(&model, &grid, 64, 8).unwrap();
        let mut traj = Vec::new();
        rollout(&r.nets, &G2, &model, &grid, &batch).unwrap().write_csv(&mut traj).unwrap();
        [history, std::fs::read(&ckpt).unwrap(), traj]
            .iter()
            .map(|b| hex::encode(Sha256::digest(b)))
            .collect()
    };
    let (a, b) = (digest("a"), digest("b"));
    check(
        a == b,
        format!("two G2 runs, seed 41: history/checkpoint/trajectory sha256 {}", if a == b { "identical" } else { "differ" }),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut failed = 0;
    for (id, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {id}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {id}: {d} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
