//! Acceptance suite. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line regardless of output capture; exits non-zero if any fail.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use advsel::attacks::{self, AttackConfig, EpsilonGrid};
use advsel::data::{parse_idx, synth_gaussians, tradeoff_means, Dataset};
use advsel::numerics::{Matrix, Model};
use advsel::selection::{self, select_top, update_pup, SelectionPolicy};
use advsel::training::{self, min_eps_probe, probe_indices, EpochMetrics, Mode, TrainConfig};
use advsel::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn random_input<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn random_labels<R: Rng>(rng: &mut R, rows: usize, classes: usize) -> Vec<usize> {
    (0..rows).map(|_| rng.gen_range(0..classes)).collect()
}

fn gradient_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    let (mut checked, mut kinks) = (0usize, 0usize);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = rng.gen_range(1..=3);
        let mut dims = vec![rng.gen_range(1..=32)];
        for _ in 0..layers {
            dims.push(rng.gen_range(2..=32));
        }
        let model = Model::new_seeded(&dims, seed).unwrap();
        let batch = rng.gen_range(1..=8);
        let x = random_input(&mut rng, batch, dims[0]);
        let y = random_labels(&mut rng, batch, *dims.last().unwrap());

        let analytic = common::flatten(&model.mean_param_grad(&x, &y).unwrap());
        for (a, n) in analytic.iter().zip(common::fd_params(&model, &x, &y, 1e-4)) {
            match n {
                Some(n) => {
                    worst = worst.max(common::rel_err(*a, n));
                    checked += 1;
                }
                None => kinks += 1,
            }
        }
        let (_, gx) = model.loss_and_input_grad(&x, &y).unwrap();
        for (a, n) in gx.as_slice().iter().zip(common::fd_inputs(&model, &x, &y, 1e-4)) {
            match n {
                Some(n) => {
                    worst = worst.max(common::rel_err(*a, n));
                    checked += 1;
                }
                None => kinks += 1,
            }
        }
    }
    outcome(
        worst < 1e-4,
        format!("max relative error {worst:.2e} over {checked} coordinates ({kinks} kink coordinates skipped)"),
    )
}

fn attack_feasibility() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let models: Vec<Model> = (0..8)
        .map(|s| {
            let hidden = if s % 2 == 0 { vec![6, 8, 3] } else { vec![6, 3] };
            Model::new_seeded(&hidden, s).unwrap()
        })
        .collect();
    let mut violations = 0usize;
    let mut iterates = 0usize;
    for _ in 0..10_000 {
        let model = &models[rng.gen_range(0..models.len())];
        let rows = rng.gen_range(1..=4);
        // a third of the coordinates sit exactly on the clip bounds
        let data: Vec<f64> = (0..rows * 6)
            .map(|_| match rng.gen_range(0..6) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.gen(),
            })
            .collect();
        let x = Matrix::from_vec(rows, 6, data).unwrap();
        let y = random_labels(&mut rng, rows, 3);
        let cfg = AttackConfig {
            epsilon: if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..0.6) },
            alpha: rng.gen_range(1e-3..0.5),
            steps: rng.gen_range(1..=6),
            random_start: rng.gen(),
            ..AttackConfig::default()
        };
        let ok = |adv: &Matrix| {
            x.as_slice()
                .iter()
                .zip(adv.as_slice())
                .all(|(&o, &a)| (a - o).abs() <= cfg.epsilon && (0.0..=1.0).contains(&a))
        };
        let adv = attacks::pgd_inspect(model, &x, &y, &cfg, &mut rng.clone(), |_, it| {
            iterates += 1;
            if !ok(it) {
                violations += 1;
            }
        })
        .unwrap();
        rng.gen::<u64>();
        if !ok(&adv) {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("10000 runs, {iterates} iterates checked, {violations} violations"))
}

/// Softmax cross-entropy gradient of a linear map, written out directly.
fn linear_input_grad(w: &Matrix, b: &[f64], x: &[f64], y: usize) -> Vec<f64> {
    let z: Vec<f64> = (0..w.rows())
        .map(|o| w.row(o).iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b[o])
        .collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let delta: Vec<f64> = e.iter().enumerate().map(|(o, v)| v / s - if o == y { 1.0 } else { 0.0 }).collect();
    (0..x.len()).map(|i| (0..w.rows()).map(|o| w.get(o, i) * delta[o]).sum()).collect()
}

fn fgsm_first_order() -> Outcome {
    let eps = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for seed in 0..10 {
        let model = Model::new_seeded(&[8, 4], seed).unwrap();
        let w = model.layers()[0].weights().clone();
        let b = model.layers()[0].biases().to_vec();
        for _ in 0..20 {
            let row: Vec<f64> = (0..8).map(|_| rng.gen_range(0.1..0.9)).collect();
            let y = rng.gen_range(0..4);
            let x = Matrix::from_vec(1, 8, row.clone()).unwrap();
            let adv = attacks::fgsm(&model, &x, &[y], eps).unwrap();
            let before = model.losses(&x, &[y]).unwrap()[0];
            let after = model.losses(&adv, &[y]).unwrap()[0];
            let predicted = eps * linear_input_grad(&w, &b, &row, y).iter().map(|g| g.abs()).sum::<f64>();
            worst = worst.max(((after - before) - predicted).abs() / predicted);
            points += 1;
        }
    }
    outcome(worst < 0.05, format!("{points} interior points, worst relative gap {worst:.2e}"))
}

fn selection_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0usize;
    let mut tie_trials = 0usize;
    for _ in 0..100_000 {
        let b = rng.gen_range(1..=12);
        let levels = rng.gen_range(1..=b + 1);
        let losses: Vec<f64> = (0..b).map(|_| rng.gen_range(0..levels) as f64 * 0.25).collect();
        let thousandths = rng.gen_range(1..=1000);
        let pup = thousandths as f64 / 1000.0;
        let k = common::count_oracle(b, thousandths);
        let mut sorted = losses.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            tie_trials += 1;
        }
        let got = select_top(&losses, pup).unwrap();
        if got.selected != common::top_k_oracle(&losses, k) || selection::selection_count(b, pup) != k {
            mismatches += 1;
        }
    }

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p0: f64 = rng.gen_range(0.05..=1.0);
        let floor = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..p0) };
        let mut p = p0;
        let mut product = 1.0;
        for _ in 0..rng.gen_range(1..40) {
            let acc: f64 = rng.gen_range(0.0..=1.0);
            p = update_pup(p, acc, floor);
            product *= 1.0 - acc;
            worst = worst.max((p - (p0 * product).max(floor)).abs());
        }
    }
    outcome(
        mismatches == 0 && worst <= 1e-12,
        format!("100000 trials ({tie_trials} with ties), {mismatches} mismatches; schedule max gap {worst:.1e}"),
    )
}

fn blobs(seed: u64, per_class: usize, dims: usize) -> Dataset {
    synth_gaussians(seed, per_class, dims, &tradeoff_means(dims, 0.25, 0.08), 0.15).unwrap()
}

fn backward_economy() -> Outcome {
    let train = blobs(50, 500, 10);
    let attack = AttackConfig { epsilon: 0.1, alpha: 0.05, steps: 2, ..AttackConfig::default() };
    let run = |pup: f64| {
        let cfg = TrainConfig {
            mode: Mode::DsRobust,
            batch_clean_size: 128,
            epochs: 2,
            lr: 0.05,
            attack,
            eval_attack: attack,
            policy: SelectionPolicy::top_loss(pup),
            ..TrainConfig::default()
        };
        training::train(cfg, Model::new_seeded(&[10, 16, 2], 0).unwrap(), &train, &train).unwrap().1
    };
    let full = run(1.0);
    let half = run(0.5);
    // 1000 clean rows: seven full batches of 256 and one ragged batch of 2 * 104
    let expected_half: usize = [256; 7].iter().chain(&[208]).map(|&b| common::count_oracle(b, 500)).sum();
    let mut ok = true;
    let mut detail = Vec::new();
    for (f, h) in full.iter().zip(&half) {
        ok &= f.backward_passes == f.rows_seen
            && h.backward_passes == expected_half
            && (2 * h.backward_passes).abs_diff(f.backward_passes) <= 1;
        detail.push(format!("epoch {}: {} vs {}", f.epoch, h.backward_passes, f.backward_passes));
    }
    outcome(ok, detail.join(", "))
}

struct DeskRun {
    last: EpochMetrics,
    first: EpochMetrics,
    min_eps_before: f64,
    min_eps_after: f64,
}

fn desk_experiment() -> Vec<[DeskRun; 3]> {
    let dims = 20;
    let attack = AttackConfig { epsilon: 0.1, alpha: 0.02, steps: 10, ..AttackConfig::default() };
    let grid = EpsilonGrid::linspace(0.0, 0.4, 0.01).unwrap();
    (0..3u64)
        .map(|seed| {
            let train = blobs(1000 + seed, 1000, dims);
            let test = blobs(2000 + seed, 250, dims);
            let probe = test.subset(&probe_indices(test.len(), 50, seed)).unwrap();
            let model = Model::new_seeded(&[dims, 32, 32, 2], seed).unwrap();
            let before = min_eps_probe(&model, &probe, &grid, &attack).unwrap().mean.unwrap();
            [
                (Mode::Standard, SelectionPolicy::all()),
                (Mode::Robust, SelectionPolicy::all()),
                (Mode::DsRobust, SelectionPolicy::top_loss(0.5)),
            ]
            .map(|(mode, policy)| {
                let cfg = TrainConfig {
                    mode,
                    batch_clean_size: 16,
                    epochs: 30,
                    lr: 0.03,
                    attack,
                    eval_attack: attack,
                    policy,
                    seed,
                    ..TrainConfig::default()
                };
                let (m, hist) = training::train(cfg, model.clone(), &train, &test).unwrap();
                DeskRun {
                    first: hist[0].clone(),
                    last: hist.last().unwrap().clone(),
                    min_eps_before: before,
                    min_eps_after: min_eps_probe(&m, &probe, &grid, &attack).unwrap().mean.unwrap_or(f64::INFINITY),
                }
            })
        })
        .collect()
}

fn criterion_6(runs: &[[DeskRun; 3]]) -> [Outcome; 3] {
    let mut a = (true, Vec::new());
    let mut b = (true, Vec::new());
    for (seed, [std, rob, ds]) in runs.iter().enumerate() {
        let gap = rob.last.robust_accuracy - std.last.robust_accuracy;
        a.0 &= gap >= 0.10;
        a.1.push(format!("seed {seed}: {:.3} vs {:.3}", std.last.robust_accuracy, rob.last.robust_accuracy));
        let diff = ds.last.robust_accuracy - rob.last.robust_accuracy;
        b.0 &= diff.abs() <= 0.03;
        b.1.push(format!("seed {seed}: {:.3} vs {:.3}", ds.last.robust_accuracy, rob.last.robust_accuracy));
    }
    let n = runs.len() as f64;
    let ds_std = runs.iter().map(|r| r[2].last.standard_accuracy).sum::<f64>() / n;
    let rob_std = runs.iter().map(|r| r[1].last.standard_accuracy).sum::<f64>() / n;
    [
        outcome(a.0, format!("standard vs robust robust accuracy: {}", a.1.join("; "))),
        outcome(b.0, format!("ds_robust vs robust robust accuracy: {}", b.1.join("; "))),
        outcome(ds_std >= rob_std, format!("seed-mean standard accuracy ds_robust {ds_std:.4} vs robust {rob_std:.4}")),
    ]
}

fn criterion_7(runs: &[[DeskRun; 3]]) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (seed, r) in runs.iter().enumerate() {
        let (first, last) = (r[2].first.adversarial_share(), r[2].last.adversarial_share());
        ok &= first > last;
        detail.push(format!("seed {seed}: {first:.3} -> {last:.3}"));
    }
    outcome(ok, format!("adversarial share of selected rows {}", detail.join("; ")))
}

fn criterion_8(runs: &[[DeskRun; 3]]) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (seed, r) in runs.iter().enumerate() {
        for (name, run) in [("robust", &r[1]), ("ds_robust", &r[2])] {
            ok &= run.min_eps_after > run.min_eps_before;
            detail.push(format!("seed {seed} {name}: {:.4} -> {:.4}", run.min_eps_before, run.min_eps_after));
        }
    }
    outcome(ok, format!("probe mean min-eps {}", detail.join("; ")))
}

fn advsel(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_advsel")).args(args).output().expect("advsel binary runs")
}

fn identical_files(a: &Path, b: &Path, names: &[&str]) -> Result<(), String> {
    for name in names {
        let (x, y) = (std::fs::read(a.join(name)), std::fs::read(b.join(name)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            (Ok(_), Ok(_)) => return Err(format!("{name} differs")),
            _ => return Err(format!("{name} missing")),
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        "seed = 11\ncheckpoint_every = 1\n\n[data]\nkind = \"synthetic\"\nsamples_per_class = 120\ndims = 6\n\n\
         [model]\nhidden = [8]\n\n[train]\nmode = \"ds_robust\"\nbatch = 16\nepochs = 3\nlr = 0.05\n\n\
         [attack]\nepsilon = 0.1\nalpha = 0.03\nsteps = 3\nrandom_start = true\n\n[policy]\npup = 0.5\n\n[probe]\nsize = 10\n",
    )
    .unwrap();
    let mut checks = Vec::new();
    let dirs = ["a", "b"].map(|d| tmp.path().join(d));
    for dir in &dirs {
        let out = dir.to_str().unwrap();
        let cfg = config.to_str().unwrap();
        let train = advsel(&["train", "--config", cfg, "--output", out]);
        let ckpt = format!("{out}/model.ckpt");
        let cache = format!("{out}/test.cache");
        let adv = format!("{out}/adv.cache");
        let attack = advsel(&[
            "attack", "--checkpoint", &ckpt, "--data", &cache, "--epsilon", "0.1", "--random-start", "--seed", "3", "--out", &adv,
        ]);
        let curves = format!("{out}/curves.csv");
        let export = advsel(&["export-curves", "--metrics", &format!("{out}/metrics.jsonl"), "--out", &curves]);
        let sweep = advsel(&["sweep-pup", "--config", cfg, "--pups", "0.5,1", "--output", &format!("{out}/sweep")]);
        checks.push([train, attack, export, sweep].iter().all(|o| o.status.success()));
    }
    if !checks.iter().all(|c| *c) {
        return outcome(false, "a command failed");
    }
    let files = [
        "metrics.jsonl",
        "model.ckpt",
        "manifest.json",
        "test.cache",
        "checkpoints/epoch-0001.ckpt",
        "checkpoints/epoch-0003.ckpt",
        "adv.cache",
        "curves.csv",
        "sweep/pup-0.5/metrics.jsonl",
        "sweep/pup-0.5/model.ckpt",
        "sweep/pup-1/metrics.jsonl",
        "sweep/pup-1/model.ckpt",
    ];
    // Manifests record their own output directory, which differs by design.
    let manifest = |d: &Path| std::fs::read_to_string(d.join("manifest.json")).unwrap().replace(d.to_str().unwrap(), "");
    let files_without_manifest: Vec<&str> = files.iter().copied().filter(|f| *f != "manifest.json").collect();
    let same = identical_files(&dirs[0], &dirs[1], &files_without_manifest)
        .and_then(|_| (manifest(&dirs[0]) == manifest(&dirs[1])).then_some(()).ok_or("manifest differs".to_string()));

    // In-process: identical config gives bit-identical parameters and metrics.
    let train = blobs(5, 80, 6);
    let cfg = TrainConfig {
        mode: Mode::RandomRobust,
        batch_clean_size: 12,
        epochs: 3,
        attack: AttackConfig { epsilon: 0.1, alpha: 0.03, steps: 3, random_start: true, ..AttackConfig::default() },
        policy: SelectionPolicy::random(0.5, 9),
        seed: 4,
        ..TrainConfig::default()
    };
    let run = || training::train(cfg.clone(), Model::new_seeded(&[6, 8, 2], 4).unwrap(), &train, &train).unwrap();
    let (m1, h1) = run();
    let (m2, h2) = run();
    let in_process = advsel::numerics::checkpoint::to_bytes(&m1) == advsel::numerics::checkpoint::to_bytes(&m2) && h1 == h2;
    match same {
        Ok(()) if in_process => outcome(true, format!("{} output files byte-identical across repeated CLI runs; trainer repeat identical", files.len())),
        Ok(()) => outcome(false, "in-process repeat differs"),
        Err(e) => outcome(false, e),
    }
}

fn idx_images(magic: u32, count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut v = Vec::new();
    for word in [magic, count, rows, cols] {
        v.extend_from_slice(&word.to_be_bytes());
    }
    v.extend_from_slice(pixels);
    v
}

fn idx_labels(magic: u32, count: u32, labels: &[u8]) -> Vec<u8> {
    let mut v = Vec::new();
    v.extend_from_slice(&magic.to_be_bytes());
    v.extend_from_slice(&count.to_be_bytes());
    v.extend_from_slice(labels);
    v
}

fn idx_parsing() -> Outcome {
    let pixels = [0, 255, 128, 0, 255, 64, 0, 32];
    let images = idx_images(0x803, 2, 2, 2, &pixels);
    let labels = idx_labels(0x801, 2, &[3, 1]);
    let mut failures = Vec::new();

    match parse_idx(&images, &labels) {
        Ok(d) => {
            let want: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
            let bits_match = d.features().as_slice().iter().map(|v| v.to_bits()).eq(want.iter().map(|v| v.to_bits()));
            if !(bits_match && d.features().shape() == (2, 4) && d.labels() == [3, 1] && d.class_count() == 4) {
                failures.push("valid fixture decoded wrongly".to_string());
            }
            if d.features().row(0) != [0.0, 1.0, 128.0 / 255.0, 0.0] {
                failures.push("first image differs from byte arithmetic".to_string());
            }
        }
        Err(e) => failures.push(format!("valid fixture rejected: {e}")),
    }

    let bad_magic = idx_images(0x804, 2, 2, 2, &pixels);
    if !matches!(parse_idx(&bad_magic, &labels), Err(Error::WrongMagic { expected: 0x803, found: 0x804, .. })) {
        failures.push("wrong image magic not reported".into());
    }
    if !matches!(
        parse_idx(&images, &idx_labels(0x803, 2, &[3, 1])),
        Err(Error::WrongMagic { expected: 0x801, found: 0x803, .. })
    ) {
        failures.push("wrong label magic not reported".into());
    }
    if !matches!(parse_idx(&images[..images.len() - 1], &labels), Err(Error::Truncated { needed: 24, found: 23, .. })) {
        failures.push("truncated payload not reported".into());
    }
    if !matches!(parse_idx(&images[..10], &labels), Err(Error::Truncated { needed: 16, found: 10, .. })) {
        failures.push("truncated header not reported".into());
    }
    if !matches!(
        parse_idx(&images, &idx_labels(0x801, 3, &[3, 1, 0])),
        Err(Error::CountMismatch { images: 2, labels: 3 })
    ) {
        failures.push("count mismatch not reported".into());
    }
    let detail = if failures.is_empty() {
        "valid, wrong magic (images, labels), truncated (header, payload), count mismatch".to_string()
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn main() {
    let mut results: Vec<(String, Outcome, f64)> = Vec::new();
    let mut timed = |name: &str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        results.push((name.to_string(), o, t.elapsed().as_secs_f64()));
    };
    timed("1 gradient correctness", &gradient_correctness);
    timed("2 attack feasibility", &attack_feasibility);
    timed("3 fgsm first-order oracle", &fgsm_first_order);
    timed("4 selection oracle", &selection_oracle);
    timed("5 backward-pass economy", &backward_economy);

    let t = Instant::now();
    let runs = desk_experiment();
    let desk_secs = t.elapsed().as_secs_f64();
    let [a, b, c] = criterion_6(&runs);
    results.push(("6a standard vs robust".into(), a, desk_secs));
    results.push(("6b ds_robust near robust".into(), b, 0.0));
    results.push(("6c ds_robust standard accuracy".into(), c, 0.0));
    results.push(("7 selection composition".into(), criterion_7(&runs), 0.0));
    results.push(("8 min-eps trend".into(), criterion_8(&runs), 0.0));

    let mut timed = |name: &str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        results.push((name.to_string(), o, t.elapsed().as_secs_f64()));
    };
    timed("9 determinism", &determinism);
    timed("10 idx parsing", &idx_parsing);

    let mut failed = 0;
    for (name, o, secs) in &results {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        if !o.passed {
            failed += 1;
        }
        println!("criterion {name:<32} {tag} ({secs:.1}s) {}", o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
