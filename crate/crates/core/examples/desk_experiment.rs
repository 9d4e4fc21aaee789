//! Compares standard, robust, DS-robust and random-robust training on
//! two-class Gaussian blobs and prints final accuracies per seed.
//!
//! cargo run --release -p advsel --example desk_experiment -- [seeds] [epochs]

use std::time::Instant;

use advsel::attacks::{AttackConfig, EpsilonGrid};
use advsel::data::{synth_gaussians, tradeoff_means};
use advsel::numerics::Model;
use advsel::selection::SelectionPolicy;
use advsel::training::{self, min_eps_probe, probe_indices, Mode, TrainConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map_or(Ok(3), |s| s.parse())?;
    let epochs: usize = args.get(2).map_or(Ok(30), |s| s.parse())?;
    let strong: f64 = args.get(3).map_or(Ok(0.25), |s| s.parse())?;
    let weak: f64 = args.get(4).map_or(Ok(0.08), |s| s.parse())?;
    let sigma: f64 = args.get(5).map_or(Ok(0.15), |s| s.parse())?;
    let lr: f64 = args.get(6).map_or(Ok(0.03), |s| s.parse())?;
    let batch: usize = args.get(7).map_or(Ok(16), |s| s.parse())?;

    let dims = 20;
    let means = tradeoff_means(dims, strong, weak);
    let attack = AttackConfig { epsilon: 0.1, alpha: 0.02, steps: 10, ..AttackConfig::default() };
    let grid = EpsilonGrid::linspace(0.0, 0.4, 0.01)?;

    for seed in 0..seeds {
        let train = synth_gaussians(1000 + seed, 1000, dims, &means, sigma)?;
        let test = synth_gaussians(2000 + seed, 250, dims, &means, sigma)?;
        let probe = test.subset(&probe_indices(test.len(), 50, seed))?;
        let model = Model::new_seeded(&[dims, 32, 32, 2], seed)?;
        let before = min_eps_probe(&model, &probe, &grid, &attack)?;
        for (mode, policy) in [
            (Mode::Standard, SelectionPolicy::all()),
            (Mode::Robust, SelectionPolicy::all()),
            (Mode::DsRobust, SelectionPolicy::top_loss(0.5)),
            (Mode::RandomRobust, SelectionPolicy::random(0.5, seed)),
        ] {
            let cfg = TrainConfig {
                mode,
                batch_clean_size: batch,
                epochs,
                lr,
                attack,
                policy,
                eval_attack: attack,
                seed,
                ..TrainConfig::default()
            };
            let t = Instant::now();
            let (m, hist) = training::train(cfg, model.clone(), &train, &test)?;
            let after = min_eps_probe(&m, &probe, &grid, &attack)?;
            if std::env::var_os("TRAJECTORY").is_some() && mode == Mode::DsRobust {
                let shares: Vec<String> = hist.iter().map(|h| format!("{:.2}/{:.2}", h.adversarial_share(), h.robust_accuracy)).collect();
                println!("  share/robust per epoch: {}", shares.join(" "));
            }
            let first = &hist[0];
            let last = hist.last().unwrap();
            println!(
                "seed {seed} {mode:?}: std {:.3} rob {:.3} | adv share {:.3} -> {:.3} | min-eps {:.4} -> {:.4} | backward {} | {:.1}s",
                last.standard_accuracy,
                last.robust_accuracy,
                first.adversarial_share(),
                last.adversarial_share(),
                before.mean.unwrap_or(f64::NAN),
                after.mean.unwrap_or(f64::NAN),
                last.backward_passes,
                t.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
