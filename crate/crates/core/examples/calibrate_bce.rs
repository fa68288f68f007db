// Standalone BCE convergence probe: graph learner vs fixed kNN target.
use step_core::checkpoint;
use step_core::data::*;
use step_core::graph::*;
use step_core::tensor::optim::{clip_gradients, OptimizerState};
use step_core::tensor::Ctx;
use step_core::tsformer::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.005);

    let spec = SyntheticSpec { seed: 11, noise_sd: 0.4, ..Default::default() };
    let (raw, planted) = generate_synthetic(&spec).unwrap();
    let split = SplitSpec::new(raw.num_steps, 0.7, 0.1, 0.2).unwrap();
    let ds = fit_apply_zscore(&raw, &split).unwrap();
    let cfg = TSFormerConfig {
        patch_len: 12, num_patches: 56, mask_ratio: 0.75, d_model: 32,
        enc_layers: 2, dec_layers: 1, heads: 4, channels: 1,
    };
    let pre = pretrain(&cfg, &PretrainSettings { epochs: 30, base_lr: 2e-3, ..Default::default() }, &ds, &split, 7).unwrap();
    let hash = checkpoint::params_hash(&pre.model.params());
    let hist = cfg.num_patches * cfg.patch_len;
    let starts: Vec<usize> = (0..=(split.train.end - hist - 12)).collect();
    let bank = RepresentationBank::precompute(&pre.model, &ds, &starts, "c", &hash).unwrap();
    let feats = bank.node_mean_features(&starts).unwrap();
    let target = knn_graph(&feats, 12, bank.num_patches * bank.d, 2).unwrap();

    let mut series = Vec::new();
    for node in 0..12 {
        let mut s = Vec::new();
        for t in split.train.clone() { s.push(ds.at(t, node, 0)); }
        series.push(s);
    }

    let settings = GraphLearnerSettings { k: 2, ..Default::default() };
    let mut r = step_core::rng::split(seed, "probe");
    let mut learner = GraphLearner::new(&mut r, &settings, split.train.len(), 1, bank.num_patches * bank.d).unwrap();
    let mut opt = OptimizerState::adam(&learner.params(), lr, 1e-5, 1e-8, (0.9, 0.999));
    let h_mean = bank.node_mean_features(&starts).unwrap();

    for step in 0..steps {
        let mut cx = Ctx::new();
        let g = learner.global_features(&mut cx, &series);
        let h = cx.constant(h_mean.clone(), &[12, h_mean.len() / 12]);
        let z = learner.node_embeddings(&mut cx, &h, &g);
        let theta = learner.pairwise_logits(&mut cx, &z);
        let tp = positive_probability(&theta);
        let loss = graph_regularization(&mut cx, &tp, &target);
        loss.backward();
        let mut grads: Vec<Vec<f64>> = learner.params().iter().map(|p| cx.grad(p)).collect();
        clip_gradients(&mut grads, 5.0);
        opt.step(&mut learner.params_mut(), &grads);
        if step % 50 == 49 || step == steps - 1 {
            let probs = tp.to_vec();
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for i in 0..12 { for j in 0..12 {
                if i == j { continue; }
                if planted.has_edge(i, j) { pos.push(probs[i*12+j]); } else { neg.push(probs[i*12+j]); }
            }}
            let m = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
            println!("step {step}: loss {:.3} pos mean {:.3} (min {:.3}) neg mean {:.3} above: {}/{}",
                loss.scalar_value(), m(&pos),
                pos.iter().cloned().fold(f64::INFINITY, f64::min),
                m(&neg),
                pos.iter().filter(|&&p| p > 0.5).count(),
                neg.iter().filter(|&&p| p > 0.5).count());
        }
    }
}
