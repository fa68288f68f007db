// Calibration for acceptance-scale runs: epoch timing and periodicity
// structure on the criterion-5 synthetic dataset.
use std::time::Instant;
use step_core::data::*;
use step_core::inspect;
use step_core::tsformer::*;
use step_core::checkpoint;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let d_model: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(32);
    let enc_layers: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2);

    let noise: f64 = std::env::var("NOISE").ok().and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let spec = SyntheticSpec {
        seed: 11,
        nodes: 12,
        days: 28,
        steps_per_day: 48,
        k_planted: 2,
        noise_sd: noise,
        coupling: 0.4,
        weekend_factor: 0.6,
    };
    let (raw, _planted) = generate_synthetic(&spec).unwrap();
    let split = SplitSpec::new(raw.num_steps, 0.7, 0.1, 0.2).unwrap();
    let ds = fit_apply_zscore(&raw, &split).unwrap();
    println!("dataset: T={} N={} train={}", ds.num_steps, ds.num_nodes, split.train.len());

    let cfg = TSFormerConfig {
        patch_len: 12,
        num_patches: 56,
        mask_ratio: 0.75,
        d_model,
        enc_layers,
        dec_layers: 1,
        heads: 4,
        channels: 1,
    };
    let base_lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(5.0e-4);
    let settings = PretrainSettings {
        epochs,
        base_lr,
        ..Default::default()
    };
    let t0 = Instant::now();
    let out = pretrain(&cfg, &settings, &ds, &split, 7).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("pretrain {} epochs in {:.1}s ({:.2}s/epoch), best epoch {} val {:.4}",
        epochs, dt, dt / epochs as f64, out.best_epoch, out.best_val_loss);
    for log in out.log.iter().take(3) { println!("  epoch {} train {:.4} val {:.4}", log.epoch, log.train_loss, log.val_loss); }
    if let Some(last) = out.log.last() { println!("  last epoch {} train {:.4} val {:.4}", last.epoch, last.train_loss, last.val_loss); }

    // Periodicity probes (criterion 5): patch-rep similarity at day vs half-day lag.
    let hash = checkpoint::params_hash(&out.model.params());
    let hist = cfg.num_patches * cfg.patch_len;
    let start = split.train.end - hist; // one full window ending at train end
    let t1 = Instant::now();
    let bank = RepresentationBank::precompute(&out.model, &ds, &[start], "c", &hash).unwrap();
    println!("bank 1 start in {:.2}s", t1.elapsed().as_secs_f64());
    let day_lag = spec.steps_per_day / cfg.patch_len; // 4 patches
    let half_lag = day_lag / 2;
    let mut day_mean = 0.0;
    let mut half_mean = 0.0;
    let mut retrieval_hits = 0usize;
    let mut probes = 0usize;
    for node in 0..ds.num_nodes {
        let sim = inspect::patch_similarity(&bank, node, start).unwrap();
        day_mean += sim.mean_at_lag(day_lag);
        half_mean += sim.mean_at_lag(half_lag);
        for patch in 0..sim.n {
            let top = inspect::top_k_similar(&sim, patch, 3);
            probes += 1;
            if top.iter().any(|&j| {
                let lag = patch.abs_diff(j);
                lag % day_lag == 0 && lag > 0
            }) {
                retrieval_hits += 1;
            }
        }
    }
    day_mean /= ds.num_nodes as f64;
    half_mean /= ds.num_nodes as f64;
    println!("representation similarity: day-lag {:.4} half-day {:.4} gap {:.4}",
        day_mean, half_mean, day_mean - half_mean);
    println!("top-3 retrieval at integer-day lag: {}/{} = {:.1}%",
        retrieval_hits, probes, 100.0 * retrieval_hits as f64 / probes as f64);

    // Positional-embedding periodicity.
    let pos = inspect::posemb_similarity(&out.model).unwrap();
    println!("posemb similarity: day-lag {:.4} half-day {:.4}",
        pos.mean_at_lag(day_lag), pos.mean_at_lag(half_lag));

    // Reconstruction vs naive baselines on training windows.
    let windows = make_pretrain_windows(&ds, split.train.clone(), cfg.num_patches, cfg.patch_len, cfg.patch_len).unwrap();
    let mut rng = step_core::rng::split(99, "recon-probe");
    let mut model_mae = 0.0;
    let mut copy_mae = 0.0;
    let mut mean_mae = 0.0;
    let probes = 24.min(windows.len());
    for w in windows.iter().take(probes) {
        let mask = sample_mask(&mut rng, cfg.num_patches, cfg.mask_ratio).unwrap();
        let mut cx = step_core::tensor::Ctx::new();
        let patches = cx.constant(w.patches.clone(), &[cfg.num_patches, cfg.patch_len]);
        let (_, loss) = out.model.forward_masked(&mut cx, &patches, &mask);
        model_mae += loss.scalar_value();
        copy_mae += copy_last_baseline(w, &mask);
        mean_mae += unmasked_mean_baseline(w, &mask);
    }
    println!("masked recon MAE: model {:.4} copy-last {:.4} unmasked-mean {:.4}",
        model_mae / probes as f64, copy_mae / probes as f64, mean_mae / probes as f64);
}
// (appended) — reconstruction quality vs baselines, invoked via env flag.
