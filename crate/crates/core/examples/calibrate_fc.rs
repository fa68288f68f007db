// Forecaster-stage calibration: planted-graph recovery and ablation
// direction on the acceptance-scale synthetic dataset.
use std::time::Instant;
use step_core::checkpoint;
use step_core::data::*;
use step_core::forecaster::train::*;
use step_core::forecaster::TrainSchedule;
use step_core::graph::{knn_graph, GraphLearnerSettings};
use step_core::tsformer::*;

fn f1(pred_edges: &[(usize, usize)], truth_edges: &[(usize, usize)]) -> f64 {
    use std::collections::HashSet;
    let p: HashSet<_> = pred_edges.iter().collect();
    let t: HashSet<_> = truth_edges.iter().collect();
    let tp = p.intersection(&t).count() as f64;
    if p.is_empty() || t.is_empty() || tp == 0.0 {
        return 0.0;
    }
    let precision = tp / p.len() as f64;
    let recall = tp / t.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let fc_epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let pre_epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let noise: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let spec = SyntheticSpec { seed: 11, noise_sd: noise, ..Default::default() };
    let (raw, planted) = generate_synthetic(&spec).unwrap();
    let split = SplitSpec::new(raw.num_steps, 0.7, 0.1, 0.2).unwrap();
    let ds = fit_apply_zscore(&raw, &split).unwrap();

    let cfg = TSFormerConfig {
        patch_len: 12, num_patches: 56, mask_ratio: 0.75, d_model: 32,
        enc_layers: 2, dec_layers: 1, heads: 4, channels: 1,
    };
    let pre_settings = PretrainSettings { epochs: pre_epochs, base_lr: 2e-3, ..Default::default() };
    let t0 = Instant::now();
    let pre = pretrain(&cfg, &pre_settings, &ds, &split, 7).unwrap();
    println!("pretrain: {:.0}s", t0.elapsed().as_secs_f64());

    let hash = checkpoint::params_hash(&pre.model.params());
    let hist = cfg.num_patches * cfg.patch_len;
    let horizon = 12;
    // Starts for train strict + val/test crossing.
    let mut starts: Vec<usize> = Vec::new();
    let mut t = split.train.start;
    while t + hist + horizon <= split.train.end { starts.push(t); t += 1; }
    for range in [&split.val, &split.test] {
        let lo = range.start.max(hist);
        let mut ts = lo;
        while ts + horizon <= range.end { starts.push(ts - hist); ts += 1; }
    }
    starts.sort_unstable(); starts.dedup();
    let t1 = Instant::now();
    let bank = RepresentationBank::precompute(&pre.model, &ds, &starts, "c", &hash).unwrap();
    println!("bank over {} starts: {:.1}s", starts.len(), t1.elapsed().as_secs_f64());

    // How well does the kNN target itself match the planted graph?
    let train_starts: Vec<usize> = starts.iter().copied().filter(|&s| s + hist + horizon <= split.train.end).collect();
    let feats = bank.node_mean_features(&train_starts).unwrap();
    let knn = knn_graph(&feats, 12, bank.num_patches * bank.d, 2).unwrap();
    println!("knn(k=2, reps) vs planted: F1 {:.3}", f1(&knn.edges(), &planted.edges()));
    // Raw-series kNN for comparison.
    let mut raw_feats = Vec::new();
    for node in 0..12 {
        for t in split.train.clone() { raw_feats.push(ds.at(t, node, 0)); }
    }
    let knn_raw = knn_graph(&raw_feats, 12, split.train.len(), 2).unwrap();
    println!("knn(k=2, raw)  vs planted: F1 {:.3}", f1(&knn_raw.edges(), &planted.edges()));

    let inputs = TrainInputs {
        ds: &ds, split: &split, bank: Some(&bank), static_graph: None,
        num_patches: cfg.num_patches, patch_len: cfg.patch_len,
    };
    let anneal = std::env::var("ANNEAL").is_ok();
    let gsl = GraphLearnerSettings {
        k: 2,
        anneal: if anneal { Some((1.0, 0.1)) } else { None },
        ..Default::default()
    };
    let fc_lr: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.002);
    let schedule = TrainSchedule {
        epochs: fc_epochs, batch_size: 32, lr: fc_lr,
        warm_num: 5, cl_num: 1, milestones: vec![],
        ..Default::default()
    };
    let fc = ForecasterSettings { d_prime: 32, ..Default::default() };

    let t2 = Instant::now();
    let full = train(&fc, &schedule, &gsl, &inputs, seed).unwrap();
    println!("full STEP train: {:.0}s best val mae {:.4} (epoch {})",
        t2.elapsed().as_secs_f64(), full.best_val_mae, full.best_epoch);

    // Learned graph F1 vs planted.
    let theta = eval_adjacency(&full.model, &inputs, &gsl, &train_starts).unwrap();
    let mut pos_probs = Vec::new();
    let mut neg_probs = Vec::new();
    for i in 0..12 {
        for j in 0..12 {
            if i == j { continue; }
            if planted.has_edge(i, j) { pos_probs.push(theta[i * 12 + j]); }
            else { neg_probs.push(theta[i * 12 + j]); }
        }
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let minmax = |v: &Vec<f64>| (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    println!("theta' planted pairs: mean {:.3} range {:?}", mean(&pos_probs), minmax(&pos_probs));
    println!("theta' other pairs:   mean {:.3} range {:?}", mean(&neg_probs), minmax(&neg_probs));
    println!("positives above 0.5: {}/24, negatives above 0.5: {}/120",
        pos_probs.iter().filter(|&&p| p > 0.5).count(),
        neg_probs.iter().filter(|&&p| p > 0.5).count());
    let mut learned = Vec::new();
    for i in 0..12 {
        for j in 0..12 {
            if i != j && theta[i * 12 + j] > 0.5 { learned.push((i, j)); }
        }
    }
    println!("learned edges: {} | F1 vs planted {:.3}", learned.len(), f1(&learned, &planted.edges()));

    // Random-graph baseline F1 (same edge count as planted, 3 draws).
    let mut rng = step_core::rng::split(1234, "random-f1");
    let mut rand_f1 = 0.0;
    for _ in 0..3 {
        let mut edges = Vec::new();
        for i in 0..12 {
            for pick in step_core::rng::sample_indices(&mut rng, 11, 2) {
                let j = if pick < i { pick } else { pick + 1 };
                edges.push((i, j));
            }
        }
        rand_f1 += f1(&edges, &planted.edges());
    }
    println!("random baseline F1 (mean of 3): {:.3}", rand_f1 / 3.0);

    if std::env::var("F1ONLY").is_ok() { return; }
    // Backend-only ablation.
    let t3 = Instant::now();
    let fc_off = ForecasterSettings { d_prime: 32, fusion: false, ..Default::default() };
    let gsl_off = GraphLearnerSettings { enabled: false, k: 2, source: step_core::graph::SimilaritySource::RawSeries, ..Default::default() };
    let inputs_off = TrainInputs {
        ds: &ds, split: &split, bank: None, static_graph: None,
        num_patches: cfg.num_patches, patch_len: cfg.patch_len,
    };
    let backend_only = train(&fc_off, &schedule, &gsl_off, &inputs_off, seed).unwrap();
    println!("backend-only train: {:.0}s best val mae {:.4}", t3.elapsed().as_secs_f64(), backend_only.best_val_mae);

    // STEP w/o GSL (fusion on, static knn graph).
    let gsl_nogsl = GraphLearnerSettings { enabled: false, k: 2, ..Default::default() };
    let wo_gsl = train(&fc, &schedule, &gsl_nogsl, &inputs, seed).unwrap();
    println!("STEP w/o GSL best val mae {:.4}", wo_gsl.best_val_mae);
    println!("direction: full {:.4} vs backend-only {:.4} vs w/o-gsl {:.4}",
        full.best_val_mae, backend_only.best_val_mae, wo_gsl.best_val_mae);
}
