//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! (written straight to stderr so it shows without `--nocapture`) and then
//! asserts the same condition, including its runtime budget.

use std::io::Write;
use std::time::{Duration, Instant};

use fedcluster_core::algorithms::*;
use fedcluster_core::analysis::{elbow_index, momentum_variance_probe, trace_assumptions, DEFAULT_ELBOW_FRACTION};
use fedcluster_core::attacks::{AttackKind, ByzantineSchedule};
use fedcluster_core::ids::ClusterId;
use fedcluster_core::problems::*;
use fedcluster_core::rng::{Purpose, RngStream};
use fedcluster_core::scenarios::*;
use fedcluster_core::threshold::*;
use fedcluster_core::Vector;

fn report(id: u32, ok: bool, elapsed: Duration, budget: Duration, detail: String) {
    let within = elapsed < budget;
    let verdict = if ok && within { "PASS" } else { "FAIL" };
    let line = format!(
        "{verdict} criterion {id}: {detail} [{:.2}s of {:.0}s budget]",
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(ok && within, "{line}");
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn criterion_01_example1_myopic_stuck_fc_recovers() {
    let start = Instant::now();
    let eta = 0.5;
    let p = make_example1(eta).unwrap();
    let base = TrainerConfig { eta, rounds: 200, record_every: 200, ..Default::default() };
    let myopic = run_myopic(&p, &base).unwrap();
    let fc_cfg = TrainerConfig { radius: RadiusPolicy::fixed(0.3 / eta), cluster_rounds: 10, ..base.clone() };
    let fc = run_federated_clustering(&p, &fc_cfg).unwrap();
    let elapsed = start.elapsed();

    let (m2, m3) = (myopic.final_params[1][0], myopic.final_params[2][0]);
    let fc2 = fc.final_params[1][0];
    let partition = fc.partition.clone().unwrap_or_default();
    let ok = m2 == 1.0 && m3 == 2.0 && fc2.abs() <= 1e-3 && partition == vec![vec![0, 1], vec![2]];
    report(
        1,
        ok,
        elapsed,
        Duration::from_secs(1),
        format!("myopic x2={m2} x3={m3}; fc x2={fc2:.6} partition={partition:?}"),
    );
}

#[test]
fn criterion_02_example2_ifca_frozen_fc_converges() {
    let start = Instant::now();
    let p = make_example2().unwrap();
    let cfg = TrainerConfig { eta: 0.1, rounds: 500, local_steps: 5, ..Default::default() };
    let mut frozen = true;
    for option in [IfcaOption::GradientAveraging, IfcaOption::ModelAveraging] {
        let rec = run_ifca(&p, &cfg, option).unwrap();
        frozen &= rec.server_states.iter().all(|m| m[1][0].abs() <= 1e-12);
        frozen &= rec.final_assignment.as_deref() == Some(&[ClusterId(1), ClusterId(1)][..]);
        frozen &= rec.rows.iter().all(|r| r.assignment == Some(ClusterId(1)));
    }
    let fc_cfg = TrainerConfig { eta: 0.1, rounds: 200, radius: RadiusPolicy::fixed(1.0), ..Default::default() };
    let fc = run_federated_clustering(&p, &fc_cfg).unwrap();
    let elapsed = start.elapsed();
    let (x1, x2) = (fc.final_params[0][0], fc.final_params[1][0]);
    let ok = frozen && (x1 + 0.5).abs() <= 1e-4 && (x2 - 0.5).abs() <= 1e-4;
    report(
        2,
        ok,
        elapsed,
        Duration::from_secs(1),
        format!("ifca frozen at 0 with both clients in cluster 2: {frozen}; fc x=({x1:.6}, {x2:.6})"),
    );
}

#[test]
fn criterion_03_example3_clustered_fl_coin_flip() {
    let start = Instant::now();
    let p = make_example3().unwrap();
    let seeds = 400;
    let mut hits = 0;
    for seed in 0..seeds {
        let cfg = TrainerConfig { eta: 0.1, seed, batch_size: Some(64), fedavg_tol: 0.05, ..Default::default() };
        if run_clustered_fl(&p, &cfg).unwrap().partition.unwrap() == vec![vec![0, 1], vec![2]] {
            hits += 1;
        }
    }
    let elapsed = start.elapsed();
    let freq = hits as f64 / seeds as f64;
    report(
        3,
        (0.43..=0.57).contains(&freq),
        elapsed,
        Duration::from_secs(10),
        format!("partition {{1,2}}|{{3}} in {hits}/{seeds} seeds (frequency {freq:.3}, band [0.43, 0.57])"),
    );
}

#[test]
fn criterion_04_center_error_scaling() {
    let start = Instant::now();
    let seeds = 200;
    let mut clustered = Vec::new();
    let mut oracle = Vec::new();
    for n_i in [15, 30, 60] {
        let setup = TwoBlobSetup { per_cluster: n_i, ..Default::default() };
        let trials: Vec<BlobTrial> = (0..seeds).map(|s| two_blob_trial(&setup, s).unwrap()).collect();
        clustered.push(mean(&trials.iter().map(|t| t.clustered).collect::<Vec<_>>()));
        oracle.push(mean(&trials.iter().map(|t| t.oracle).collect::<Vec<_>>()));
    }
    let elapsed = start.elapsed();
    let decreasing = clustered[0] > clustered[1] && clustered[1] > clustered[2];
    let ratio = clustered[2] / oracle[2];
    report(
        4,
        decreasing && ratio <= 4.0,
        elapsed,
        Duration::from_secs(30),
        format!(
            "error at n_i=15,30,60: {:.4}, {:.4}, {:.4}; ratio to known-label mean at 60: {ratio:.3}",
            clustered[0], clustered[1], clustered[2]
        ),
    );
}

#[test]
fn criterion_05_edge_attack_monotone() {
    let start = Instant::now();
    let seeds = 200;
    let clean: Vec<BlobTrial> = (0..seeds).map(|s| two_blob_trial(&TwoBlobSetup::default(), s).unwrap()).collect();
    let mut errors = Vec::new();
    let mut bit_exact = true;
    for beta in [0.0, 0.05, 0.1, 0.2] {
        let setup = TwoBlobSetup { beta, ..Default::default() };
        let trials: Vec<BlobTrial> = (0..seeds).map(|s| two_blob_trial(&setup, s).unwrap()).collect();
        if beta == 0.0 {
            bit_exact = trials == clean;
        }
        errors.push(mean(&trials.iter().map(|t| t.clustered).collect::<Vec<_>>()));
    }
    let elapsed = start.elapsed();
    let monotone = errors.windows(2).all(|w| w[0] <= w[1]);
    report(
        5,
        monotone && bit_exact,
        elapsed,
        Duration::from_secs(30),
        format!("mean error at beta=0,0.05,0.1,0.2: {errors:.4?}; beta=0 bit-exact with attack-free run: {bit_exact}"),
    );
}

#[test]
fn criterion_06_mixture_floor() {
    let start = Instant::now();
    let (sigma, gap) = (1.0, 2.0);
    let floor = make_lower_bound_mixture(sigma, gap).unwrap().floor;
    let seeds = 500;
    let errs: Vec<f64> = (0..seeds).map(|s| mixture_trial(sigma, gap, 50, 20, s).unwrap()).collect();
    let err = mean(&errs);
    let elapsed = start.elapsed();
    report(
        6,
        err >= floor,
        elapsed,
        Duration::from_secs(10),
        format!("mean squared error for the first mean {err:.4} vs floor {floor:.4}"),
    );
}

fn regression_losses(n_i: usize, seeds: u64) -> Vec<[f64; 4]> {
    (0..seeds)
        .map(|seed| {
            let p = make_synthetic_regression(&RegressionSpec { k: 4, n_i, d: 10, n: 9, seed }).unwrap();
            let cfg = TrainerConfig {
                eta: 1.0 / p.params.l,
                rounds: 600,
                cluster_rounds: 10,
                radius: RadiusPolicy::percentile(8.0),
                seed,
                record_every: 600,
                ..Default::default()
            };
            [
                run_ground_truth(&p, &cfg).unwrap().final_mean_eval_loss(),
                run_federated_clustering(&p, &cfg).unwrap().final_mean_eval_loss(),
                run_local(&p, &cfg).unwrap().final_mean_eval_loss(),
                run_fedavg(&p, &cfg).unwrap().final_mean_eval_loss(),
            ]
        })
        .collect()
}

#[test]
fn criterion_07_regression_gap_shrinks() {
    let start = Instant::now();
    let seeds = 20;
    let small = regression_losses(4, seeds);
    let large = regression_losses(16, seeds);
    let elapsed = start.elapsed();
    let avg = |rows: &[[f64; 4]], j: usize| mean(&rows.iter().map(|r| r[j]).collect::<Vec<_>>());
    let (gt, fc, local, global) = (avg(&small, 0), avg(&small, 1), avg(&small, 2), avg(&small, 3));
    let ordered = gt <= fc && fc <= local;
    let shrinking = small.iter().zip(&large).filter(|(s, l)| l[1] - l[0] < s[1] - s[0]).count();
    let beats_global = fc < global && avg(&large, 1) < avg(&large, 3);
    let ok = ordered && shrinking * 5 >= seeds as usize * 4 && beats_global;
    report(
        7,
        ok,
        elapsed,
        Duration::from_secs(120),
        format!(
            "n_i=4 gt={gt:.3} fc={fc:.3} local={local:.3} global={global:.2}; n_i=16 fc={:.3} global={:.2}; gap shrinks in {shrinking}/{seeds} seeds",
            avg(&large, 1),
            avg(&large, 3)
        ),
    );
}

#[test]
fn criterion_08_assumption_trace() {
    let start = Instant::now();
    let p = make_synthetic_regression(&RegressionSpec::default()).unwrap();
    let cfg = TrainerConfig { eta: 1.0 / p.params.l, rounds: 500, record_every: 500, ..Default::default() };
    let rec = run_ground_truth(&p, &cfg).unwrap();
    let trace = trace_assumptions(&p, &rec.server_states).unwrap();
    let elapsed = start.elapsed();
    let peak = trace.max_intra(50..=500);
    let last = trace.mean_intra[500];
    let sep = trace.min_separation();
    report(
        8,
        peak < 1.1 * last && sep > 0.0,
        elapsed,
        Duration::from_secs(60),
        format!("max intra ratio over rounds 50..500 {peak:.4} vs round 500 {last:.4}; min separation {sep:.4}"),
    );
}

#[test]
fn criterion_09_momentum_variance() {
    let start = Instant::now();
    let oracle = NoisyQuadratic { base: Quadratic::new(Vector::scalar(0.0), 1.0), noise_var: 1.0 };
    let x = Vector::scalar(0.5);
    let mut ok = true;
    let mut parts = Vec::new();
    for alpha in [0.05, 0.1, 0.5] {
        let v = momentum_variance_probe(&oracle, &x, alpha, 1, 10_000, 7).unwrap();
        ok &= v <= 1.2 * alpha;
        parts.push(format!("alpha={alpha}: {v:.4} (limit {:.3})", 1.2 * alpha));
    }
    report(9, ok, start.elapsed(), Duration::from_secs(5), parts.join("; "));
}

fn attack_losses(seed: u64) -> [[f64; 2]; 3] {
    let p = make_synthetic_regression(&RegressionSpec { k: 4, n_i: 16, d: 10, n: 9, seed }).unwrap();
    let base = TrainerConfig {
        eta: 1.0 / p.params.l,
        rounds: 600,
        cluster_rounds: 10,
        radius: RadiusPolicy::percentile(8.0),
        seed,
        record_every: 600,
        ..Default::default()
    };
    let schedules = [
        ByzantineSchedule::new(0.0, AttackKind::None),
        ByzantineSchedule::new(0.25, AttackKind::SignFlip),
        ByzantineSchedule::new(0.25, AttackKind::LargeGradient { scale: 1e4 }),
    ];
    schedules.map(|byzantine| {
        let cfg = TrainerConfig { byzantine, ..base.clone() };
        [
            run_federated_clustering(&p, &cfg).unwrap().final_mean_eval_loss(),
            run_fedavg(&p, &cfg).unwrap().final_mean_eval_loss(),
        ]
    })
}

#[test]
fn criterion_10_attacks_on_regression() {
    let start = Instant::now();
    let seeds = 10;
    let runs: Vec<[[f64; 2]; 3]> = (0..seeds).map(attack_losses).collect();
    let elapsed = start.elapsed();
    let avg = |a: usize, j: usize| mean(&runs.iter().map(|r| r[a][j]).collect::<Vec<_>>());
    let (fc0, gl0) = (avg(0, 0), avg(0, 1));
    let mut ok = true;
    let mut parts = vec![format!("attack-free fc={fc0:.3} global={gl0:.2}")];
    for (a, name) in [(1, "sign_flip"), (2, "large_gradient")] {
        let (fc, gl) = (avg(a, 0), avg(a, 1));
        let fc_ok = fc <= 2.0 * fc0;
        let gl_ok = gl >= 10.0 * gl0;
        ok &= fc_ok && gl_ok;
        parts.push(format!(
            "{name}: fc={fc:.3} ({:.2}x, within 2x: {fc_ok}) global={gl:.3e} ({:.2}x, at least 10x: {gl_ok})",
            fc / fc0,
            gl / gl0
        ));
    }
    report(10, ok, elapsed, Duration::from_secs(120), parts.join("; "));
}

#[test]
fn criterion_11_elbow_grows_with_sigma() {
    let start = Instant::now();
    let setup = ElbowSetup::default();
    let elbows: Vec<usize> = [0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|&s| elbow_index(&elbow_curve(&setup, s, 0).unwrap(), DEFAULT_ELBOW_FRACTION).unwrap())
        .collect();
    let elapsed = start.elapsed();
    report(
        11,
        elbows.windows(2).all(|w| w[0] <= w[1]),
        elapsed,
        Duration::from_secs(20),
        format!("elbow index for sigma=0.5,1,2,4: {elbows:?}"),
    );
}

fn random_points(rng: &mut RngStream, n: usize, d: usize, scale: f64) -> Vec<Vector> {
    (0..n).map(|_| rng.normal_vector(d, scale)).collect()
}

fn in_box(v: &Vector, pts: &[Vector]) -> bool {
    (0..v.dim()).all(|j| {
        let lo = pts.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
        v[j] >= lo - 1e-12 && v[j] <= hi + 1e-12
    })
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn criterion_12_invariant_suite() {
    let start = Instant::now();
    let mut failures: Vec<&str> = Vec::new();
    let mut rng = RngStream::root(12, Purpose::Custom(12));

    // clipping and one update stay within the radius and the convex hull
    let mut bounded = true;
    let mut hull = true;
    for _ in 0..200 {
        let n = 1 + rng.below(20);
        let pts = random_points(&mut rng, n, 3, 2.0);
        let v = rng.normal_vector(3, 2.0);
        let tau = 4.0 * rng.uniform();
        for z in &pts {
            bounded &= (&clip_point(z, &v, tau) - &v).norm() <= tau * (1.0 + 1e-12);
        }
        let next = threshold_update(&pts, &v, tau).unwrap();
        bounded &= (&next - &v).norm() <= tau * (1.0 + 1e-12);
        let mut with_v = pts.clone();
        with_v.push(v.clone());
        hull &= in_box(&next, &with_v);
    }
    if !bounded {
        failures.push("step boundedness");
    }
    if !hull {
        failures.push("convex hull");
    }

    // reductions: zero radius is local training, unbounded radius is the mean step
    let p = make_synthetic_regression(&RegressionSpec { k: 2, n_i: 3, d: 6, n: 4, seed: 3 }).unwrap();
    let cfg = TrainerConfig { eta: 0.01, rounds: 15, radius: RadiusPolicy::fixed(0.0), batch_size: Some(2), ..Default::default() };
    if run_federated_clustering(&p, &cfg).unwrap().final_params != run_local(&p, &cfg).unwrap().final_params {
        failures.push("Fixed(0) equals Local");
    }
    let one = TrainerConfig { eta: 0.05, rounds: 1, radius: RadiusPolicy::unbounded(), ..Default::default() };
    let out = run_federated_clustering(&p, &one).unwrap().final_params;
    let mean_ok = p.initial_params.iter().zip(&out).all(|(x, got)| {
        let grads: Vec<Vector> = p.clients.iter().map(|c| c.grad(x)).collect();
        let mut expect = x.clone();
        expect.axpy(-0.05, &fedcluster_core::mean(&grads).unwrap());
        (got - &expect).norm() <= 1e-12 * (1.0 + expect.norm())
    });
    if !mean_ok {
        failures.push("Fixed(inf) equals mean step");
    }

    // permutation invariance of clustering and of a full training run
    let pts = random_points(&mut rng, 30, 4, 3.0);
    let inits = vec![pts[0].clone(), pts[1].clone()];
    let base = run_threshold_clustering(&pts, &inits, 8, &RadiusPolicy::percentile(30.0)).unwrap();
    let mut perm: Vec<usize> = (0..30).collect();
    perm.reverse();
    perm.swap(3, 17);
    let shuffled: Vec<Vector> = perm.iter().map(|&i| pts[i].clone()).collect();
    let again = run_threshold_clustering(&shuffled, &inits, 8, &RadiusPolicy::percentile(30.0)).unwrap();
    if again.state.centers != base.state.centers {
        failures.push("clustering permutation invariance");
    }
    let cfg = TrainerConfig { eta: 0.01, rounds: 5, batch_size: Some(2), radius: RadiusPolicy::percentile(40.0), ..Default::default() };
    let perm6 = [4, 2, 0, 5, 1, 3];
    let a = run_federated_clustering(&p, &cfg).unwrap();
    let b = run_federated_clustering(&p.permuted(&perm6).unwrap(), &cfg).unwrap();
    if !perm6.iter().enumerate().all(|(j, &i)| b.final_params[j] == a.final_params[i]) {
        failures.push("training permutation invariance");
    }

    // bit-identical output across thread counts
    let csv = |threads: usize| {
        with_pool(threads, || {
            let rec = run_federated_clustering(&p, &cfg).unwrap();
            let mut buf = Vec::new();
            rec.write_csv_rows(&mut buf, "invariants", cfg.seed).unwrap();
            buf
        })
    };
    if csv(1) != csv(4) {
        failures.push("thread-count reproducibility");
    }

    let elapsed = start.elapsed();
    let detail = if failures.is_empty() {
        "boundedness, convex hull, Fixed(0)/Fixed(inf) reductions, permutation invariance, thread-count reproducibility".to_string()
    } else {
        format!("violated: {}", failures.join(", "))
    };
    report(12, failures.is_empty(), elapsed, Duration::from_secs(30), detail);
}
