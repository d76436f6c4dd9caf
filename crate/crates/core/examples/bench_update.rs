use quadsac::sac::{ReplayBuffer, SacAgent, SacConfig, Transition};
use rand::{Rng, SeedableRng};
use std::time::Instant;

fn main() {
    let batch: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(256);
    let cfg = SacConfig {
        batch_size: batch,
        ..SacConfig::default()
    };
    let mut agent = SacAgent::new(25, 4, cfg, 0).unwrap();
    let mut buf = ReplayBuffer::new(25, 4, 100_000);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        buf.push(Transition {
            obs: (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: (0..4).map(|_| rng.gen_range(-100.0..100.0)).collect(),
            reward: rng.gen_range(-1.0..1.5),
            next_obs: (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            done: false,
        })
        .unwrap();
    }
    let n = 20;
    let t = Instant::now();
    for _ in 0..n {
        agent.update(&buf).unwrap();
    }
    println!(
        "batch {batch}: {:.2} ms/update",
        t.elapsed().as_secs_f64() * 1000.0 / n as f64
    );
}
