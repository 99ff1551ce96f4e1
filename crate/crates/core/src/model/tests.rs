use super::*;
use crate::numerics::finite_diff_gradient;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab: 5,
        dim: 4,
        ffn_hidden: 6,
        classes: 3,
        seq_len: 5,
    }
}

fn random_batch(cfg: &ModelConfig, n: usize, rng: &mut Rng) -> Batch {
    Batch {
        token_ids: (0..n * cfg.seq_len).map(|_| rng.below(cfg.vocab)).collect(),
        labels: (0..n).map(|_| rng.below(cfg.classes)).collect(),
    }
}

/// Scalar-loop forward pass written independently of the matrix code.
fn reference_forward(params: &ModelParams, tokens: &[usize]) -> Vec<f64> {
    let cfg = params.config;
    let w = |i: usize, r: usize, c: usize| params.tensors[i].matrix[(r, c)];
    let b = |i: usize, c: usize| params.tensors[i].bias.as_ref().unwrap()[c];
    let (l, d, f) = (cfg.seq_len, cfg.dim, cfg.ffn_hidden);
    let x: Vec<Vec<f64>> = tokens.iter().map(|&t| (0..d).map(|c| w(0, t, c)).collect()).collect();
    let proj = |m: usize| -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| (0..d).map(|c| (0..d).map(|k| row[k] * w(m, k, c)).sum()).collect())
            .collect()
    };
    let (q, k, v) = (proj(1), proj(2), proj(3));
    let mut pooled = vec![0.0; d];
    for i in 0..l {
        let scores: Vec<f64> = (0..l)
            .map(|j| (0..d).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let m = scores.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let a: Vec<f64> = (0..d).map(|c| (0..l).map(|j| e[j] / z * v[j][c]).sum()).collect();
        let h: Vec<f64> = (0..d).map(|c| x[i][c] + (0..d).map(|t| a[t] * w(4, t, c)).sum::<f64>()).collect();
        let r: Vec<f64> = (0..f)
            .map(|u| ((0..d).map(|t| h[t] * w(5, t, u)).sum::<f64>() + b(5, u)).max(0.0))
            .collect();
        for c in 0..d {
            let y = h[c] + (0..f).map(|u| r[u] * w(6, u, c)).sum::<f64>() + b(6, c);
            pooled[c] += y / l as f64;
        }
    }
    (0..cfg.classes)
        .map(|c| (0..d).map(|t| pooled[t] * w(7, t, c)).sum::<f64>() + b(7, c))
        .collect()
}

#[test]
fn default_model_has_eight_named_tensors() {
    let p = build_model(ModelConfig::default(), &mut Rng::new(42)).unwrap();
    let names: Vec<&str> = p.tensors.iter().map(|t| t.name.as_str()).collect();
    assert_eq!(names, TENSOR_NAMES);
    assert_eq!(p.prunable_names(), ["wq", "wk", "wv", "wo", "ffn_in", "ffn_out"]);
    assert_eq!(p.get(FFN_IN).unwrap().matrix.shape().to_string(), "16x64");
}

#[test]
fn build_is_deterministic_and_validated() {
    let a = build_model(ModelConfig::default(), &mut Rng::new(9)).unwrap();
    let b = build_model(ModelConfig::default(), &mut Rng::new(9)).unwrap();
    assert_eq!(a, b);
    let bad = ModelConfig {
        dim: 0,
        ..ModelConfig::default()
    };
    assert!(build_model(bad, &mut Rng::new(9)).is_err());
    let bad = ModelConfig {
        classes: 9,
        ..ModelConfig::default()
    };
    assert!(build_model(bad, &mut Rng::new(9)).is_err());
}

#[test]
fn zero_weights_give_zero_logits() {
    let cfg = tiny_config();
    let mut p = build_model(cfg, &mut Rng::new(1)).unwrap();
    for t in &mut p.tensors {
        t.matrix = Matrix::zeros(t.matrix.rows(), t.matrix.cols());
    }
    let batch = random_batch(&cfg, 4, &mut Rng::new(2));
    let (logits, _) = forward(&p, &batch).unwrap();
    assert_eq!(logits, Matrix::zeros(4, cfg.classes));
}

#[test]
fn hand_computed_two_token_forward() {
    let cfg = ModelConfig {
        vocab: 2,
        dim: 2,
        ffn_hidden: 2,
        classes: 2,
        seq_len: 2,
    };
    let mut p = build_model(cfg, &mut Rng::new(0)).unwrap();
    let id = Matrix::identity(2);
    for (i, m) in [id.clone(), Matrix::zeros(2, 2), Matrix::zeros(2, 2), id.clone(), id.clone(), id.clone(), id.clone(), id.clone()]
        .into_iter()
        .enumerate()
    {
        p.tensors[i].matrix = m;
    }
    p.tensors[5].bias = Some(vec![0.0, -1.0]);
    // X = I; uniform attention gives A = 0.5 everywhere; H = [[1.5,.5],[.5,1.5]];
    // relu(H + [0,-1]) = [[1.5,0],[.5,.5]]; Y = H + that = [[3,.5],[1,2]]; mean = [2, 1.25].
    let batch = Batch {
        token_ids: vec![0, 1],
        labels: vec![0],
    };
    let (logits, cache) = forward(&p, &batch).unwrap();
    assert_eq!(logits.as_slice(), &[2.0, 1.25]);
    assert_eq!(cache.attention_probs()[0], Matrix::filled(2, 2, 0.5));
}

#[test]
fn forward_matches_scalar_reference() {
    let cfg = tiny_config();
    let mut rng = Rng::new(77);
    let mut p = build_model(cfg, &mut rng).unwrap();
    for t in &mut p.tensors {
        if let Some(b) = &mut t.bias {
            b.iter_mut().for_each(|x| *x = rng.normal() * 0.1);
        }
    }
    let batch = random_batch(&cfg, 3, &mut rng);
    let (logits, _) = forward(&p, &batch).unwrap();
    for s in 0..3 {
        let expect = reference_forward(&p, &batch.token_ids[s * cfg.seq_len..(s + 1) * cfg.seq_len]);
        for (a, b) in logits.row(s).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn batch_rows_are_independent() {
    let cfg = tiny_config();
    let mut rng = Rng::new(3);
    let p = build_model(cfg, &mut rng).unwrap();
    let batch = random_batch(&cfg, 4, &mut rng);
    let (logits, _) = forward(&p, &batch).unwrap();
    let order = [2, 0, 3, 1];
    let mut permuted = Batch {
        token_ids: vec![],
        labels: vec![],
    };
    for &s in &order {
        permuted
            .token_ids
            .extend_from_slice(&batch.token_ids[s * cfg.seq_len..(s + 1) * cfg.seq_len]);
        permuted.labels.push(batch.labels[s]);
    }
    let (logits2, _) = forward(&p, &permuted).unwrap();
    for (i, &s) in order.iter().enumerate() {
        assert_eq!(logits2.row(i), logits.row(s));
    }
    let (again, _) = forward(&p, &batch).unwrap();
    assert_eq!(again, logits);
}

#[test]
fn forward_rejects_malformed_batches() {
    let cfg = tiny_config();
    let p = build_model(cfg, &mut Rng::new(3)).unwrap();
    let mut batch = random_batch(&cfg, 2, &mut Rng::new(4));
    batch.token_ids[0] = cfg.vocab;
    assert!(forward(&p, &batch).is_err());
    let mut batch = random_batch(&cfg, 2, &mut Rng::new(4));
    batch.token_ids.pop();
    assert!(forward(&p, &batch).is_err());
}

#[test]
fn softmax_rows_sum_to_one() {
    let cfg = tiny_config();
    let mut rng = Rng::new(8);
    let p = build_model(cfg, &mut rng).unwrap();
    let batch = random_batch(&cfg, 3, &mut rng);
    let (logits, cache) = forward(&p, &batch).unwrap();
    for probs in cache.attention_probs().iter().chain(std::iter::once(&softmax_rows(&logits))) {
        for i in 0..probs.rows() {
            assert!((probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn loss_examples() {
    let uniform = Matrix::zeros(4, 8);
    assert!((loss(&uniform, &[0, 1, 2, 7]).unwrap() - 8f64.ln()).abs() < 1e-12);
    let confident = Matrix::from_rows(&[[1000.0, 0.0, 0.0]]);
    assert!(loss(&confident, &[0]).unwrap() < 1e-12);
    assert!(loss(&confident, &[3]).is_err());

    let mut rng = Rng::new(5);
    let logits = Matrix::random_normal(6, 5, 3.0, &mut rng);
    let labels: Vec<usize> = (0..6).map(|_| rng.below(5)).collect();
    let mut oracle = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let z: f64 = logits.row(i).iter().map(|v| v.exp()).sum();
        oracle += z.ln() - logits[(i, y)];
    }
    oracle /= 6.0;
    assert!((loss(&logits, &labels).unwrap() - oracle).abs() < 1e-12);
}

fn loss_at(params: &ModelParams, batch: &Batch) -> f64 {
    let (logits, _) = forward(params, batch).unwrap();
    loss(&logits, &batch.labels).unwrap()
}

/// Max over tensors (weights and biases) of `max|analytic - fd| / max|fd|`.
fn max_relative_gradient_error(params: &ModelParams, batch: &Batch) -> f64 {
    let (_, cache) = forward(params, batch).unwrap();
    let grads = backward(params, &cache, &batch.labels).unwrap();
    let mut worst: f64 = 0.0;
    for (ti, tg) in grads.tensors.iter().enumerate() {
        let fd = finite_diff_gradient(
            |m| {
                let mut p = params.clone();
                p.tensors[ti].matrix = m.clone();
                loss_at(&p, batch)
            },
            &params.tensors[ti].matrix,
            1e-5,
        )
        .unwrap();
        let scale = fd.max_abs().max(1e-8);
        worst = worst.max(tg.weight.max_abs_diff(&fd).unwrap() / scale);

        if let Some(bias) = &params.tensors[ti].bias {
            let b0 = Matrix::from_vec(1, bias.len(), bias.clone()).unwrap();
            let fd = finite_diff_gradient(
                |m| {
                    let mut p = params.clone();
                    p.tensors[ti].bias = Some(m.as_slice().to_vec());
                    loss_at(&p, batch)
                },
                &b0,
                1e-5,
            )
            .unwrap();
            let analytic = Matrix::from_vec(1, bias.len(), tg.bias.clone().unwrap()).unwrap();
            worst = worst.max(analytic.max_abs_diff(&fd).unwrap() / fd.max_abs().max(1e-8));
        }
    }
    worst
}

#[test]
fn backward_matches_finite_differences() {
    for seed in 0..5 {
        let cfg = tiny_config();
        let mut rng = Rng::new(1000 + seed);
        let mut p = build_model(cfg, &mut rng).unwrap();
        for t in &mut p.tensors {
            if let Some(b) = &mut t.bias {
                b.iter_mut().for_each(|x| *x = rng.normal() * 0.1);
            }
        }
        let batch = random_batch(&cfg, 3, &mut rng);
        let err = max_relative_gradient_error(&p, &batch);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn dead_path_has_zero_gradient() {
    let cfg = tiny_config();
    let mut rng = Rng::new(6);
    let mut p = build_model(cfg, &mut rng).unwrap();
    p.tensors[I_FFN_OUT].matrix = Matrix::zeros(cfg.ffn_hidden, cfg.dim);
    let batch = random_batch(&cfg, 3, &mut rng);
    let (_, cache) = forward(&p, &batch).unwrap();
    let g = backward(&p, &cache, &batch.labels).unwrap();
    let ffn_in = g.get(FFN_IN).unwrap();
    assert_eq!(ffn_in.weight, Matrix::zeros(cfg.dim, cfg.ffn_hidden));
    assert!(ffn_in.bias.as_ref().unwrap().iter().all(|&x| x == 0.0));
}

#[test]
fn duplicated_batch_keeps_mean_gradient() {
    let cfg = tiny_config();
    let mut rng = Rng::new(14);
    let p = build_model(cfg, &mut rng).unwrap();
    let batch = random_batch(&cfg, 3, &mut rng);
    let doubled = Batch {
        token_ids: [batch.token_ids.clone(), batch.token_ids.clone()].concat(),
        labels: [batch.labels.clone(), batch.labels.clone()].concat(),
    };
    let g1 = {
        let (_, c) = forward(&p, &batch).unwrap();
        backward(&p, &c, &batch.labels).unwrap()
    };
    let g2 = {
        let (_, c) = forward(&p, &doubled).unwrap();
        backward(&p, &c, &doubled.labels).unwrap()
    };
    for (a, b) in g1.tensors.iter().zip(&g2.tensors) {
        assert!(a.weight.max_abs_diff(&b.weight).unwrap() < 1e-10, "{}", a.name);
    }
}

#[test]
fn stale_cache_is_rejected() {
    let cfg = tiny_config();
    let mut rng = Rng::new(15);
    let mut p = build_model(cfg, &mut rng).unwrap();
    let batch = random_batch(&cfg, 2, &mut rng);
    let (_, cache) = forward(&p, &batch).unwrap();
    p.tensors[1].matrix[(0, 0)] += 1.0;
    assert!(matches!(backward(&p, &cache, &batch.labels), Err(Error::StaleCache)));
}

#[test]
fn zeroed_and_masked_weights_agree() {
    let cfg = tiny_config();
    let mut rng = Rng::new(16);
    let p = build_model(cfg, &mut rng).unwrap();
    let batch = random_batch(&cfg, 3, &mut rng);
    let mask = Matrix::from_fn(cfg.dim, cfg.ffn_hidden, |i, j| if (i + j) % 3 == 0 { 0.0 } else { 1.0 });
    let mut zeroed = p.clone();
    let mut multiplied = p.clone();
    for i in 0..cfg.dim {
        for j in 0..cfg.ffn_hidden {
            if mask[(i, j)] == 0.0 {
                zeroed.tensors[I_FFN_IN].matrix[(i, j)] = 0.0;
            }
        }
    }
    multiplied.tensors[I_FFN_IN].matrix = p.tensors[I_FFN_IN].matrix.hadamard(&mask).unwrap();
    assert_eq!(forward(&zeroed, &batch).unwrap().0, forward(&multiplied, &batch).unwrap().0);
}

#[test]
fn untrained_accuracy_is_near_chance() {
    let ds = make_synthetic_dataset(2024, 4000, 16, 8).unwrap();
    let mut total = 0.0;
    let seeds = [1u64, 2, 3, 4, 5, 6, 7, 8];
    for &seed in &seeds {
        let p = build_model(ModelConfig::default(), &mut Rng::new(seed)).unwrap();
        total += evaluate(&p, &ds).unwrap();
    }
    let mean = total / seeds.len() as f64;
    assert!((mean - 0.125).abs() < 0.05, "{mean}");
}

#[test]
fn evaluate_edge_cases() {
    let cfg = ModelConfig::default();
    let p = build_model(cfg, &mut Rng::new(3)).unwrap();
    let mut ds = make_synthetic_dataset(5, 300, 16, 8).unwrap();
    // relabel with the model's own predictions
    for (i, batch) in ds.batches(1).iter().enumerate() {
        let (logits, _) = forward(&p, batch).unwrap();
        ds.labels[i] = argmax(logits.row(0));
    }
    assert_eq!(evaluate(&p, &ds).unwrap(), 1.0);

    let ds = make_synthetic_dataset(6, 500, 16, 8).unwrap();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    Rng::new(1).shuffle(&mut order);
    assert_eq!(evaluate(&p, &ds).unwrap(), evaluate(&p, &ds.permuted(&order)).unwrap());

    let empty = Dataset {
        seq_len: 16,
        vocab: 8,
        tokens: vec![],
        labels: vec![],
    };
    assert!(matches!(evaluate(&p, &empty), Err(Error::EmptyDataset)));
}

#[test]
fn argmax_prefers_smallest_index() {
    assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    assert_eq!(argmax(&[2.0, 2.0]), 0);
}
