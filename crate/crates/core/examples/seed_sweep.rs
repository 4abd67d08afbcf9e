//! Optical versus fused accuracy over consecutive scene seeds.
//!
//! cargo run --example seed_sweep -- 20

use terrafuse::config::Config;
use terrafuse::pipeline::run_experiment;

fn main() {
    let n: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    let mut cfg = Config::default();
    for seed in cfg.scene.seed..cfg.scene.seed + n {
        cfg.scene.seed = seed;
        let t = std::time::Instant::now();
        let e = run_experiment(&cfg).unwrap();
        println!(
            "seed {seed:2}  optical {:.3}  fused {:.3}  delta {:+.3}  {:.1}s",
            e.optical.overall_accuracy,
            e.fused.overall_accuracy,
            e.comparison.overall_delta,
            t.elapsed().as_secs_f64()
        );
    }
}
