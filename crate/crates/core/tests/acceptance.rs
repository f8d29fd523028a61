//! Exit criteria for the solver and harness. Each test prints one
//! `[PASS]`/`[FAIL]` line; run with
//! `cargo test --test acceptance -- --nocapture --test-threads=1`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drbsde::backward_solver::{backward_induct, implicit_step_solve, SolveOptions};
use drbsde::experiment::{fit_rate_constant, grid_sweep, penalty_sweep, run_trial, summarize, SweepRow, TrialSetup};
use drbsde::forward_sim::{simulate_euler_two_grid, simulate_exact_gbm, GridSpec, Sampler};
use drbsde::model::{penalized_driver, ModelSpec, PenaltyParam};
use drbsde::reference::{bs_put_price, crr_dynkin_price, TreeSpec};
use drbsde::regression::BasisSpec;

const REFERENCE: f64 = 1.626263795927;
/// Relative errors of the printed time-step sweep, n = 25 .. 3200.
const GRID_SWEEP_REL_ERR: [(usize, f64); 8] = [
    (25, 7.818e-2),
    (50, 5.478e-2),
    (100, 3.835e-2),
    (200, 2.565e-2),
    (400, 1.639e-2),
    (800, 9.684e-3),
    (1600, 5.824e-3),
    (3200, 5.127e-3),
];
const PENALTY_SWEEP_REL_ERR_A2: f64 = 2.551e-2;
const DESK_PATHS: usize = 20_000;
const DESK_SEEDS: [u64; 3] = [1, 2, 3];

fn verdict(id: u32, pass: bool, detail: &str) -> bool {
    println!("[{}] criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

fn desk_setup() -> TrialSetup {
    let spec = ModelSpec::default();
    TrialSetup {
        spec,
        basis: BasisSpec::new(8, true, spec.x0, spec.strike).unwrap(),
        n_paths: DESK_PATHS,
        m: 1,
        sampler: Sampler::Exact,
    }
}

#[test]
fn criterion_01_crr_reference() {
    let start = Instant::now();
    let value = single_thread(|| crr_dynkin_price(&ModelSpec::default(), TreeSpec::new(10_000).unwrap()).unwrap());
    let elapsed = start.elapsed();
    let again = crr_dynkin_price(&ModelSpec::default(), TreeSpec::new(10_000).unwrap()).unwrap();
    let diff = (value - REFERENCE).abs();
    let pass = diff <= 1e-9 && value.to_bits() == again.to_bits() && elapsed <= Duration::from_secs(5);
    assert!(verdict(
        1,
        pass,
        &format!("CRR n_tree=10000 value {value:.12}, |diff| {diff:.2e} (<= 1e-9), {:.2}s (<= 5s)", elapsed.as_secs_f64())
    ));
}

#[test]
fn criterion_02_european_reduction() {
    let spec = ModelSpec::default();
    let setup = TrialSetup {
        n_paths: 60_000,
        ..desk_setup()
    };
    let grid = GridSpec::new(200, 1, spec.maturity).unwrap();
    let zero = PenaltyParam::new(0.0).unwrap();
    let start = Instant::now();
    let estimates: Vec<f64> = DESK_SEEDS.iter().map(|&s| run_trial(&setup, &grid, zero, s).unwrap()).collect();
    let elapsed = start.elapsed();
    let closed = bs_put_price(&spec);
    let (mean, se, abs_err, _) = summarize(&estimates, closed);
    let pass = abs_err <= 3.0 * se && elapsed <= Duration::from_secs(30);
    assert!(verdict(
        2,
        pass,
        &format!(
            "lambda=0 n=200 N=60000: y0 {mean:.6} vs put {closed:.6}, |diff| {abs_err:.2e} <= 3*SE {:.2e}, {:.1}s (<= 30s)",
            3.0 * se,
            elapsed.as_secs_f64()
        )
    ));
}

#[test]
fn criterion_03_desk_grid_sweep() {
    let levels = [25, 50, 100, 200, 400];
    let start = Instant::now();
    let report = grid_sweep(&desk_setup(), &levels, 2000.0, &DESK_SEEDS, REFERENCE).unwrap();
    let elapsed = start.elapsed();
    let rows = &report.rows;

    let decreasing = rows.windows(2).all(|w| w[1].rel_err < w[0].rel_err);
    let mut within = true;
    let mut detail = String::new();
    for (row, &(n, printed)) in rows.iter().zip(GRID_SWEEP_REL_ERR.iter()) {
        assert_eq!(row.n, n);
        let ratio = row.rel_err / printed;
        let ok = (0.75..=1.25).contains(&ratio);
        within &= ok;
        detail.push_str(&format!(" n={n}:{:.3e}({:+.0}%{})", row.rel_err, 100.0 * (ratio - 1.0), if ok { "" } else { "!" }));
    }
    let c = fit_rate_constant(rows).unwrap().c;
    let c_ok = (0.30..=0.47).contains(&c);
    let time_ok = elapsed <= Duration::from_secs(600);

    verdict(3, decreasing, "(a) rel_err strictly decreasing across levels");
    verdict(3, within, &format!("(b) rel_err within +-25% of printed values:{detail}"));
    verdict(3, c_ok, &format!("(c) fitted C = {c:.4} in [0.30, 0.47]"));
    let pass = decreasing && within && c_ok && time_ok;
    assert!(verdict(3, pass, &format!("desk-scale grid sweep overall, {:.1}s (<= 600s)", elapsed.as_secs_f64())));
}

#[test]
fn criterion_04_penalty_sweep() {
    let exponents = [0.0, 0.5, 1.0, 2.0];
    let start = Instant::now();
    let report = penalty_sweep(&desk_setup(), 200, &exponents, 2000.0, &DESK_SEEDS, REFERENCE).unwrap();
    let elapsed = start.elapsed();
    let rows = &report.rows;

    let monotone = rows.windows(2).all(|w| {
        let se_diff = (w[0].se.powi(2) + w[1].se.powi(2)).sqrt() / REFERENCE;
        w[1].rel_err <= w[0].rel_err + 2.0 * se_diff
    });
    let last = rows.last().unwrap();
    let ratio = last.rel_err / PENALTY_SWEEP_REL_ERR_A2;
    let near = (0.75..=1.25).contains(&ratio);
    let errs: Vec<String> = rows
        .iter()
        .map(|r| format!("a={}:{:.4e}", r.a.unwrap(), r.rel_err))
        .collect();
    let pass = monotone && near && elapsed <= Duration::from_secs(480);
    assert!(verdict(
        4,
        pass,
        &format!(
            "n=200 penalty sweep [{}]; non-increasing within 2SE: {monotone}; a=2 is {:+.0}% of 2.551e-2 (+-25%); {:.1}s (<= 480s)",
            errs.join(" "),
            100.0 * (ratio - 1.0),
            elapsed.as_secs_f64()
        )
    ));
}

#[test]
fn criterion_05_rate_fit_on_printed_table() {
    let rows: Vec<SweepRow> = GRID_SWEEP_REL_ERR
        .iter()
        .map(|&(n, e)| SweepRow {
            n,
            dt: 1.0 / n as f64,
            lambda: 2000.0 * (n as f64).sqrt(),
            a: None,
            y0: f64::NAN,
            abs_err: f64::NAN,
            rel_err: e,
            n_seeds: 0,
            se: f64::NAN,
        })
        .collect();
    let c = fit_rate_constant(&rows).unwrap().c;
    assert!(verdict(5, (c - 0.382).abs() <= 0.005, &format!("C from printed column = {c:.5} (|C - 0.382| <= 0.005)")));
}

/// Sign-only bisection on `h(y) = y - c - dt f_lambda(y)`.
fn bisection_oracle(spec: &ModelSpec, lam: PenaltyParam, c: f64, t: f64, x: f64, dt: f64) -> f64 {
    let h = |y: f64| y - c - dt * penalized_driver(spec, lam, t, x, y, 0.0);
    let (mut lo, mut hi) = (-1e4, 1e4);
    while hi - lo > 0.0 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_06_implicit_solver_properties() {
    let spec = ModelSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let samples = 100_000;
    let dt_max = 1.0 / (2.0 * spec.r);

    let mut residual_failures = 0usize;
    let mut worst_residual = 0.0f64;
    let mut worst_scaled = 0.0f64;
    let mut worst_oracle = 0.0f64;
    let mut identity_ok = true;
    for _ in 0..samples {
        let c: f64 = rng.random_range(-5.0..40.0);
        let lambda: f64 = rng.random_range(0.0..=1e6);
        let dt: f64 = rng.random_range(f64::EPSILON..dt_max);
        let x: f64 = rng.random_range(0.0..50.0);
        let t: f64 = rng.random_range(0.0..=spec.maturity);
        let lam = PenaltyParam::new(lambda).unwrap();

        let y = implicit_step_solve(&spec, c, t, x, lam, dt, 0.0).unwrap();
        let residual = (y - c - dt * penalized_driver(&spec, lam, t, x, y, 0.0)).abs();
        let bound = 1e-12 * c.abs().max(1.0);
        if residual > bound {
            residual_failures += 1;
        }
        worst_residual = worst_residual.max(residual / c.abs().max(1.0));
        // residual divided by h'(y): the root error it corresponds to
        worst_scaled = worst_scaled.max(residual / (1.0 + spec.r * dt + lambda * dt) / c.abs().max(1.0));

        let oracle = bisection_oracle(&spec, lam, c, t, x, dt);
        worst_oracle = worst_oracle.max((y - oracle).abs());

        let free = implicit_step_solve(&spec, c, t, x, PenaltyParam::new(0.0).unwrap(), dt, 0.0).unwrap();
        identity_ok &= free == c / (1.0 + spec.r * dt);
    }

    let residual_ok = residual_failures == 0;
    let oracle_ok = worst_oracle <= 1e-10;
    verdict(
        6,
        residual_ok,
        &format!(
            "residual <= 1e-12*max(1,|c|): {residual_failures}/{samples} samples exceed it; worst {worst_residual:.2e} \
             (worst residual/h'(y) = {worst_scaled:.2e}, i.e. f64 rounding of y amplified by 1+r*dt+lambda*dt)"
        ),
    );
    verdict(6, oracle_ok, &format!("bisection oracle agreement: worst |diff| {worst_oracle:.2e} (<= 1e-10)"));
    verdict(6, identity_ok, "lambda=0 identity y = c/(1+r*dt)");
    assert!(verdict(6, residual_ok && oracle_ok && identity_ok, "implicit-solver property suite overall"));
}

#[test]
fn criterion_07_two_grid_strong_order() {
    let spec = ModelSpec::default();
    let n_paths = 50_000;
    let seed = 17;
    let mean_square_gap = |m: usize| {
        let grid = GridSpec::new(50, m, spec.maturity).unwrap();
        let euler = simulate_euler_two_grid(&spec, &grid, seed, n_paths, false);
        let exact = simulate_exact_gbm(&spec, &grid, seed, n_paths);
        let gaps = euler.x(50).iter().zip(exact.x(50)).map(|(a, b)| (a - b) * (a - b));
        gaps.sum::<f64>() / n_paths as f64
    };
    let ms: Vec<f64> = [1, 2, 4].iter().map(|&m| mean_square_gap(m)).collect();
    let r12 = ms[0] / ms[1];
    let r24 = ms[1] / ms[2];
    let pass = (1.5..=2.5).contains(&r12) && (1.5..=2.5).contains(&r24);
    assert!(verdict(
        7,
        pass,
        &format!(
            "E|X_T^euler - X_T^exact|^2 for m=1,2,4: {:.3e}, {:.3e}, {:.3e}; ratios {r12:.3}, {r24:.3} in [1.5, 2.5]",
            ms[0], ms[1], ms[2]
        )
    ));
}

#[test]
fn criterion_08_penalty_feasibility() {
    let setup = desk_setup();
    let grid = GridSpec::new(200, 1, setup.spec.maturity).unwrap();
    let paths = simulate_exact_gbm(&setup.spec, &grid, 1, setup.n_paths);
    let gap = |lambda: f64| {
        backward_induct(
            &paths,
            PenaltyParam::new(lambda).unwrap(),
            &setup.basis,
            &setup.spec,
            SolveOptions::default(),
        )
        .unwrap()
        .lower_gap
    };
    let low = gap(2000.0);
    let high = gap(2000.0 * 200f64.sqrt());
    let slack = 2.0 * (low.se.powi(2) + high.se.powi(2)).sqrt();
    let pass = high.mean <= low.mean + slack;
    assert!(verdict(
        8,
        pass,
        &format!(
            "mean (p_b - Y)^+: lambda=2000 -> {:.3e} (se {:.1e}), lambda=28284 -> {:.3e} (se {:.1e})",
            low.mean, low.se, high.mean, high.se
        )
    ));
}

fn run_cli(args: &[&str], dir: &Path) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_drbsde"))
        .args(args)
        .current_dir(dir)
        .env_remove("DRBSDE_N_PATHS")
        .output()
        .expect("spawn drbsde");
    (out.status.code().unwrap_or(-1), out.stdout)
}

#[test]
fn criterion_09_determinism_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.conf");
    std::fs::write(
        &config,
        "levels = 10,20,40\nn = 20\nn_paths = 3000\nseeds = 4,5\nexponents = 0,1\nn_tree = 500\nbasis_degree = 6\n",
    )
    .unwrap();
    let cfg = config.to_str().unwrap();

    let grid_csv = dir.path().join("grid-sweep.csv");
    let (code, _) = run_cli(&["sweep-grid", "--config", cfg, "--out", grid_csv.to_str().unwrap()], dir.path());
    assert_eq!(code, 0);

    let mut all_identical = true;
    let mut lines = Vec::new();
    for cmd in ["reference", "solve", "sweep-grid", "sweep-penalty", "check-european", "fit-rate"] {
        let mut outputs = Vec::new();
        for (k, threads) in ["1", "8", "1"].iter().enumerate() {
            let run_dir = dir.path().join(format!("{cmd}-{k}"));
            std::fs::create_dir(&run_dir).unwrap();
            let (code, stdout) = run_cli(
                &[cmd, "--config", cfg, "--out", "out.csv", "--csv", grid_csv.to_str().unwrap(), "--threads", threads],
                &run_dir,
            );
            let read = |name: &str| std::fs::read(run_dir.join(name)).ok();
            outputs.push((code, stdout, read("out.csv"), read("out.csv.manifest")));
        }
        let same = outputs.windows(2).all(|w| w[0] == w[1]);
        all_identical &= same && outputs[0].0 != 2;
        lines.push(format!("{cmd}:{}", if same { "identical" } else { "DIFFERENT" }));
    }
    assert!(verdict(
        9,
        all_identical,
        &format!("stdout/CSV/manifest byte-identical for --threads 1 vs 8 vs rerun ({})", lines.join(" "))
    ));
}
