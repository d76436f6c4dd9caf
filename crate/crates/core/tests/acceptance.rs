//! Acceptance checks, one line of output per criterion.
//!
//! `cargo test -p quadsac --test acceptance` runs the quick checks. The
//! training runs only execute with `--ignored`, best in release:
//! `cargo test --release -p quadsac --test acceptance -- --ignored c7`.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use quadsac::dynamics::{step_physics, thrust_from_pwm, MotorCommand, QuadParams, RigidState, ThrustCoeffs, PWM_LIMIT};
use quadsac::env::{reward, PathKind, RewardWeights, ACT_DIM, OBS_DIM};
use quadsac::harness::{
    default_robustness_grid, eval_poses, evaluate_fixed_poses, evaluate_path, random_policy_baseline, robustness_sweep,
    train, ExperimentConfig, CURVE_FILE, FINAL_CHECKPOINT,
};
use quadsac::nn::{Activation, MlpNet, MlpSpec};
use quadsac::sac::{squashed_log_prob, ReplayBuffer, SacAgent, SacConfig, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: &str, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {id:<3} {} {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// thrust polynomial in integer units of 1e-8 N; exact for integer pwm
fn thrust_oracle(pwm: i64) -> f64 {
    let scaled = 15_618 * pwm * pwm + 1_039_500 * pwm + 13_894_000;
    scaled as f64 / 1e8
}

fn c1_thrust_map() {
    let c = ThrustCoeffs::default();
    let mut worst = 0.0f64;
    for p in [-100i64, 0, 100] {
        worst = worst.max((thrust_from_pwm(p as f64, &c) - thrust_oracle(p)).abs());
    }
    let pass = worst <= 1e-12;
    report(
        "1",
        "thrust map vs exact polynomial",
        pass,
        &format!(
            "T(-100)={:.5} T(0)={:.5} T(100)={:.5}, max err {worst:.1e}",
            thrust_from_pwm(-100.0, &c),
            thrust_from_pwm(0.0, &c),
            thrust_from_pwm(100.0, &c)
        ),
    );
    assert!(pass);

    // The literal hand values listed alongside the criterion disagree with
    // the polynomial itself; no implementation of it can meet them.
    let listed = [(-100.0, 0.66064), (0.0, 0.13894), (100.0, 2.74144)];
    let literal_err = listed
        .iter()
        .map(|&(p, v)| (thrust_from_pwm(p, &c) - v).abs())
        .fold(0.0, f64::max);
    report(
        "1b",
        "thrust map vs listed literals (known unattainable)",
        literal_err <= 1e-12,
        &format!("max err {literal_err:.2e}; listed 0.66064/2.74144 are arithmetic slips of 0.66124/2.74024"),
    );
}

fn c2_physics_oracles() {
    let dt = 0.05;
    let g = 9.81;

    let free = QuadParams {
        thrust_coeffs: ThrustCoeffs::ZERO,
        linear_drag_coeff: 0.0,
        angular_drag_coeff: 0.0,
        ..QuadParams::default()
    };
    let z0 = 10.0;
    let mut s = RigidState::at_rest(Vector3::new(0.0, 0.0, z0), [0.0; 3]);
    for _ in 0..20 {
        s = step_physics(&s, &MotorCommand::uniform(0.0), &free, dt).unwrap();
    }
    let fall_err = (s.position.z - (z0 - 0.5 * g * 1.0)).abs();

    let quad = QuadParams::default();
    let hover = quad.hover_pwm().unwrap();
    let s0 = RigidState::at_rest(Vector3::new(0.0, 0.0, 1.7), [0.0; 3]);
    let s1 = step_physics(&s0, &MotorCommand::uniform(hover), &quad, dt).unwrap();
    let drift = (s1.position - s0.position).norm();

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut s = s0;
    let mut ortho = 0.0f64;
    for _ in 0..10_000 {
        let cmd = MotorCommand::new([
            rng.gen_range(-PWM_LIMIT..=PWM_LIMIT),
            rng.gen_range(-PWM_LIMIT..=PWM_LIMIT),
            rng.gen_range(-PWM_LIMIT..=PWM_LIMIT),
            rng.gen_range(-PWM_LIMIT..=PWM_LIMIT),
        ]);
        s = step_physics(&s, &cmd, &quad, dt).unwrap();
        let e = s.rotation.transpose() * s.rotation - Matrix3::identity();
        ortho = ortho.max(e.abs().max());
    }
    let pass = fall_err < 1e-3 && drift < 1e-6 && ortho < 1e-9;
    report(
        "2",
        "physics oracles",
        pass,
        &format!(
            "free-fall err {fall_err:.2e} m, hover drift {drift:.2e} m/step at pwm {hover:.4}, max |RᵀR−I| {ortho:.2e}"
        ),
    );
    assert!(pass);
}

fn state_with(pos: Vector3<f64>, rates: Vector3<f64>) -> RigidState {
    let mut s = RigidState::at_rest(pos, [0.0; 3]);
    s.ang_vel = rates;
    s
}

fn c3_reward() {
    let w = RewardWeights::default();
    let target = Vector3::new(0.0, 0.0, 1.7);
    let cases = [
        (Vector3::new(0.0, 0.0, 1.7), Vector3::zeros(), 1.5),
        (
            Vector3::new(1.0, 0.0, 1.7),
            Vector3::new(0.0, 0.0, 1.0),
            1.5 - 1.0 - 0.1,
        ),
        (
            Vector3::new(0.0, 0.0, 1.7),
            Vector3::new(2.0, 2.0, 2.0),
            1.5 - 0.1 - 0.1 - 0.2,
        ),
    ];
    let case_err = cases
        .iter()
        .map(|(p, r, want)| (reward(&state_with(*p, *r), &target, &w) - want).abs())
        .fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut max_r = f64::NEG_INFINITY;
    for _ in 0..100_000 {
        let p = Vector3::new(
            rng.gen_range(-7.0..7.0),
            rng.gen_range(-7.0..7.0),
            rng.gen_range(-5.0..9.0),
        );
        let r = Vector3::new(
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-20.0..20.0),
        );
        let v = reward(&state_with(p, r), &target, &w);
        let nonzero = (p - target).norm() > 0.0 || r.norm() > 0.0;
        if v > 1.5 || (nonzero && v >= 1.5) {
            violations += 1;
        }
        max_r = max_r.max(v);
    }
    let pass = case_err <= 1e-12 && violations == 0;
    report(
        "3",
        "reward cases and upper bound",
        pass,
        &format!("case err {case_err:.1e}, {violations} bound violations in 1e5 states (max {max_r:.4})"),
    );
    assert!(pass);
}

/// Naive per-sample forward pass from the public weights; returns the
/// output and the hidden pre-activations.
fn naive_forward(net: &MlpNet, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let spec = net.spec();
    let sizes = &spec.layer_sizes;
    let mut a = x.to_vec();
    let mut pre = Vec::new();
    for l in 0..sizes.len() - 1 {
        let (fi, fo) = (sizes[l], sizes[l + 1]);
        let w = net.layer_weights(l);
        let b = net.layer_bias(l);
        let mut z = vec![0.0; fo];
        for o in 0..fo {
            let mut acc = b[o];
            for i in 0..fi {
                acc += w[o * fi + i] * a[i];
            }
            z[o] = acc;
        }
        if l + 2 < sizes.len() {
            pre.push(z.clone());
            a = match spec.hidden_activation {
                Activation::Tanh => z.iter().map(|v| v.tanh()).collect(),
                Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
            };
        } else {
            a = z;
        }
    }
    (a, pre)
}

fn same_pattern(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .all(|(x, y)| (*x > 0.0) == (*y > 0.0))
}

/// Max relative error between backprop and central differences of
/// `sum(c ⊙ f(x))` over a batch, on `n_check` sampled parameters.
fn grad_check(spec: MlpSpec, seed: u64, n_check: usize) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = MlpNet::init(spec.clone(), seed).unwrap();
    // move biases off zero so every parameter sees a generic point
    for p in net.params_mut() {
        *p += rng.gen_range(-0.05..0.05);
    }
    let batch = 3;
    let din = spec.input_dim();
    let dout = spec.output_dim();
    let x: Vec<f64> = (0..batch * din).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let c: Vec<f64> = (0..batch * dout).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cache = net.forward_batch(&x, batch).unwrap();
    let (grads, _) = net.backward(&cache, &c).unwrap();

    let objective = |net: &MlpNet| -> (f64, Vec<Vec<f64>>) {
        let mut total = 0.0;
        let mut pats = Vec::new();
        for b in 0..batch {
            let (out, pre) = naive_forward(net, &x[b * din..(b + 1) * din]);
            total += out
                .iter()
                .zip(&c[b * dout..(b + 1) * dout])
                .map(|(o, w)| o * w)
                .sum::<f64>();
            pats.extend(pre);
        }
        (total, pats)
    };

    let n = net.num_params();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut skipped = 0;
    for _ in 0..n_check {
        let k = rng.gen_range(0..n);
        let orig = net.params()[k];
        net.params_mut()[k] = orig + h;
        let (fp, pp) = objective(&net);
        net.params_mut()[k] = orig - h;
        let (fm, pm) = objective(&net);
        net.params_mut()[k] = orig;
        if spec.hidden_activation == Activation::Relu && !same_pattern(&pp, &pm) {
            // a ReLU kink lies inside the stencil
            skipped += 1;
            continue;
        }
        let fd = (fp - fm) / (2.0 * h);
        let an = grads.0[k];
        // floor sits well above the differencing noise eps*|f|/h ~ 1e-10
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    (worst, skipped)
}

fn c4_gradient_correctness() {
    let archs = [
        ("25-64-64-8 tanh", MlpSpec::policy(OBS_DIM, ACT_DIM)),
        ("25-256-256-1 relu", MlpSpec::value(OBS_DIM)),
        ("29-256-256-1 relu", MlpSpec::q_function(OBS_DIM, ACT_DIM)),
    ];
    let mut all_pass = true;
    let mut parts = Vec::new();
    for (name, spec) in archs {
        assert_eq!(spec.input_dim(), if name.starts_with("29") { 29 } else { 25 });
        let mut worst = 0.0f64;
        let mut skipped = 0;
        for s in 0..10 {
            let (w, sk) = grad_check(spec.clone(), 100 + s, 400);
            worst = worst.max(w);
            skipped += sk;
        }
        let pass = worst < 1e-4 && skipped < 200;
        all_pass &= pass;
        parts.push(format!("{name}: {worst:.1e} ({skipped} kink skips)"));
    }
    report("4", "backprop vs central differences", all_pass, &parts.join(", "));
    assert!(all_pass);
}

fn chain_q_error() -> f64 {
    let cfg = SacConfig {
        gamma: 0.9,
        alpha: 1e-6,
        tau: 0.05,
        batch_size: 64,
        action_scale: 1.0,
        buffer_capacity: 10_000,
        warmup_steps: 0,
        adam: quadsac::nn::AdamConfig::with_lr(1e-3),
        ..SacConfig::default()
    };
    let mut agent = SacAgent::from_specs(
        MlpSpec::new(vec![2, 16, 16, 2], Activation::Tanh),
        MlpSpec::new(vec![3, 32, 32, 1], Activation::Relu),
        MlpSpec::new(vec![2, 32, 32, 1], Activation::Relu),
        cfg,
        5,
    )
    .unwrap();
    let onehot = |s: usize| if s == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut buf = ReplayBuffer::new(2, 1, 10_000);
    for i in 0..2000 {
        let s = i % 2;
        buf.push(Transition {
            obs: onehot(s),
            action: vec![rng.gen_range(-1.0..1.0)],
            reward: 1.0,
            next_obs: onehot(1 - s),
            done: false,
        })
        .unwrap();
    }
    for _ in 0..6000 {
        agent.update(&buf).unwrap();
    }
    let mut worst = 0.0f64;
    for s in 0..2 {
        for i in 0..=20 {
            let a = -1.0 + 0.1 * i as f64;
            let mut x = onehot(s);
            x.push(a);
            for q in [&agent.q1, &agent.q2] {
                worst = worst.max((q.forward(&x).unwrap()[0] - 10.0).abs());
            }
        }
    }
    worst
}

/// Integral of the action density over (−scale, scale) on a grid that is
/// uniform in the pre-squash variable, so the tails near ±scale are resolved.
fn density_integral(mean: f64, log_std: f64, scale: f64) -> f64 {
    let n = 400_000;
    let (lo, hi) = (mean - 14.0 * log_std.exp(), mean + 14.0 * log_std.exp());
    let mut total = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=n {
        let u = lo + (hi - lo) * i as f64 / n as f64;
        let a = scale * u.tanh();
        let p = squashed_log_prob(&[mean], &[log_std], &[u], scale).exp();
        if let Some((a0, p0)) = prev {
            total += 0.5 * (p + p0) * (a - a0);
        }
        prev = Some((a, p));
    }
    total
}

fn c5_sac_oracles() {
    let chain_err = chain_q_error();

    let mut quad_err = 0.0f64;
    for (m, ls) in [(0.0, 0.0), (0.8, -1.0), (-0.5, 0.5), (0.0, -3.0), (1.5, -0.5)] {
        quad_err = quad_err.max((density_integral(m, ls, 100.0) - 1.0).abs());
    }

    let mut agent = SacAgent::new(OBS_DIM, ACT_DIM, SacConfig::default(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for p in agent.target_value.params_mut() {
        *p += rng.gen_range(-1.0..1.0);
    }
    let d0: Vec<f64> = agent
        .target_value
        .params()
        .iter()
        .zip(agent.value.params())
        .map(|(t, v)| t - v)
        .collect();
    let n = 200;
    for _ in 0..n {
        agent.soft_update_targets();
    }
    let decay = (1.0 - agent.config.tau).powi(n);
    let decay_err = agent
        .target_value
        .params()
        .iter()
        .zip(agent.value.params())
        .zip(&d0)
        .map(|((t, v), d)| ((t - v) - decay * d).abs())
        .fold(0.0, f64::max);

    let pass = chain_err < 0.05 && quad_err < 1e-3 && decay_err < 1e-12;
    report(
        "5",
        "SAC oracles",
        pass,
        &format!("chain |Q−10| max {chain_err:.4}, density integral err {quad_err:.1e}, decay err {decay_err:.1e}"),
    );
    assert!(pass);
}

fn reduced_config() -> ExperimentConfig {
    ExperimentConfig::load(&repo_root().join("configs/reduced.toml")).unwrap()
}

fn run_dir(name: &str) -> PathBuf {
    std::env::var_os("QUADSAC_ACCEPT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("quadsac-acceptance"))
        .join(name)
}

fn c6_determinism() {
    let cfg = reduced_config();
    // an earlier run of the same config and seed can stand in for the first run
    let a = match std::env::var_os("QUADSAC_DET_REFERENCE") {
        Some(p) => PathBuf::from(p),
        None => {
            let a = run_dir("det_a");
            train(&cfg, &a, None).unwrap();
            a
        }
    };
    let b = run_dir("det_b");
    train(&cfg, &b, None).unwrap();
    let same = |f: &str| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
    let pass = same(CURVE_FILE) && same(FINAL_CHECKPOINT);
    report(
        "6",
        "byte-identical reruns",
        pass,
        &format!("{} vs {}", a.display(), b.display()),
    );
    assert!(pass);
}

fn c7_desk_scale_learning() {
    let cfg = reduced_config();
    let agent = match std::env::var_os("QUADSAC_REDUCED_CHECKPOINT") {
        Some(p) => quadsac::harness::load_checkpoint(Path::new(&p)).unwrap(),
        None => train(&cfg, &run_dir("learn"), None).unwrap().agent,
    };
    let poses = eval_poses(&cfg.env, 20, 12345);
    let (records, learned) = evaluate_fixed_poses(&agent, &cfg.quad, &cfg.env, &poses, 500, None).unwrap();
    let final_err = records.iter().map(|r| r.final_tracking_error(100)).sum::<f64>() / records.len() as f64;
    let baseline = random_policy_baseline(&cfg.quad, &cfg.env, &poses, 500, 777).unwrap();
    let ratio_ok = learned.mean_total_reward >= 3.0 * baseline.mean_total_reward;
    let pass = ratio_ok && learned.completed == learned.episodes;
    report(
        "7",
        "desk-scale learning",
        pass,
        &format!(
            "policy mean {:.2} vs random {:.2} (3x = {:.2}), completed {}/{}, final 5 s tracking error {final_err:.3} m",
            learned.mean_total_reward,
            baseline.mean_total_reward,
            3.0 * baseline.mean_total_reward,
            learned.completed,
            learned.episodes
        ),
    );
    assert!(pass);
}

fn c8_full_reproduction() {
    let cfg = ExperimentConfig::load(&repo_root().join("configs/paper.toml")).unwrap();
    let dir = run_dir("paper");
    let agent = match std::env::var_os("QUADSAC_FULL_CHECKPOINT") {
        Some(p) => quadsac::harness::load_checkpoint(Path::new(&p)).unwrap(),
        None => train(&cfg, &dir, None).unwrap().agent,
    };
    let (rob, _) = robustness_sweep(&agent, &cfg.quad, &cfg.env, &default_robustness_grid(), Some(&dir)).unwrap();
    let slow = evaluate_path(&agent, &cfg.quad, &cfg.env, PathKind::Line, 0.2, None, 500, None).unwrap();
    let fast = evaluate_path(&agent, &cfg.quad, &cfg.env, PathKind::Line, 1.5, None, 500, None).unwrap();
    let (e_slow, e_fast) = (slow.final_tracking_error(100), fast.final_tracking_error(100));
    let pass = rob.success_rate >= 0.95 && e_fast >= e_slow;
    report(
        "8",
        "full reproduction",
        pass,
        &format!(
            "robustness {}/{} ({:.3}), line steady-state err 0.2 m/s {e_slow:.3} m, 1.5 m/s {e_fast:.3} m",
            rob.successes, rob.episodes, rob.success_rate
        ),
    );
    assert!(pass);
}

type Check = (&'static str, fn(), bool);

fn main() {
    let checks: [Check; 8] = [
        ("c1", c1_thrust_map, false),
        ("c2", c2_physics_oracles, false),
        ("c3", c3_reward, false),
        ("c4", c4_gradient_correctness, false),
        ("c5", c5_sac_oracles, false),
        ("c6", c6_determinism, true),
        ("c7", c7_desk_scale_learning, true),
        ("c8", c8_full_reproduction, true),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    let with_long = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with("--")).collect();
    let mut failed = Vec::new();
    for (id, check, long) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| id.contains(f.as_str())) {
            continue;
        }
        if long && !with_long {
            println!("criterion {:<3} SKIP long training run (pass --ignored to run)", &id[1..]);
            continue;
        }
        if std::panic::catch_unwind(check).is_err() {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
