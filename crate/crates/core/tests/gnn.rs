mod common;

use gridnse::factor_graph::{build_factor_graph, build_factor_graph_with, encode_features, AugmentedFactorGraph};
use gridnse::gnn::{
    adam_step, attention_aggregate, attention_logit, init_model, mse_loss, read_checkpoint, variable_labels,
    write_checkpoint, AdamState, GnnConfig, GnnModel, GraphBatch,
};
use gridnse::grid::{Bus, BusKind, PowerSystem, Side, StateVector};
use gridnse::measurement::{eval_h, Location, Measurement, MeasurementKind, MeasurementSet, Provenance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gradients_match_finite_differences_on_two_bus_graph() {
    let g = common::two_bus_graph(true);
    let batch = GraphBatch::single(&g).unwrap();
    let labels = variable_labels(&g, &common::two_bus_truth());
    for seed in 0..20 {
        common::fd_check(&common::tiny(seed), &batch, &labels).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

#[test]
fn gradients_match_finite_differences_on_batched_ieee30_sample() {
    let sys = gridnse::matpower::ieee30();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = StateVector {
        magnitudes: (0..30).map(|_| rng.gen_range(0.95..1.05)).collect(),
        angles: (0..30).map(|_| rng.gen_range(-0.3..0.3)).collect(),
    };
    let mut ms = MeasurementSet::new();
    for b in 0..sys.branches.len() {
        if b % 3 == 0 {
            let mut m = Measurement::new(MeasurementKind::ActiveFlow, Location::Branch { branch: b, side: Side::To }, 0.0, 1e-3).unwrap();
            m.value = eval_h(&sys, &x, &m);
            ms.push(m, Provenance::Clean);
        }
    }
    for bus in [0, 5, 11] {
        let mut m = Measurement::new(MeasurementKind::PmuVoltageAngle, Location::Bus(bus), 0.0, 1e-5).unwrap();
        m.value = x.angles[bus];
        ms.push(m, Provenance::Clean);
    }
    let g = encode_features(build_factor_graph(&sys, &ms).unwrap(), 30).unwrap();
    let g2 = common::two_bus_graph(true);
    let g2 = encode_features(g2, 2).unwrap();
    let batch = GraphBatch::new(&[&g, &g2]).unwrap();
    let mut labels = variable_labels(&g, &x);
    labels.extend(variable_labels(&g2, &common::two_bus_truth()));
    common::fd_check(&common::tiny(99), &batch, &labels).unwrap();
}

/// Straightforward per-edge evaluation of the same network.
fn reference_forward(model: &GnnModel, g: &AugmentedFactorGraph) -> Vec<f64> {
    let cfg = &model.config;
    let (s, u, h, q) = (cfg.embedding, cfg.message, cfg.message_hidden, cfg.head_hidden);
    let p = |name: &str| {
        let t = model.tensor(name).unwrap_or_else(|| panic!("{name}"));
        model.params[t.offset..t.offset + t.rows * t.cols].to_vec()
    };
    let lin = |w: &[f64], b: &[f64], x: &[f64], out: usize, relu: bool| -> Vec<f64> {
        (0..out)
            .map(|j| {
                let z = b[j] + x.iter().enumerate().map(|(i, xi)| xi * w[i * out + j]).sum::<f64>();
                if relu { z.max(0.0) } else { z }
            })
            .collect()
    };
    let enc = |x: &[f64], name: &str| lin(&p(&format!("{name}.weight")), &p(&format!("{name}.bias")), x, s, true);
    let mut hv: Vec<Vec<f64>> = g.variables.iter().map(|v| enc(&v.feature, "encoder.variable")).collect();
    let mut hf: Vec<Vec<f64>> = g.factors.iter().map(|f| enc(&f.feature, "encoder.factor")).collect();
    for k in 0..cfg.layers {
        let message = |kind: &str, src: &[f64], dst: &[f64]| {
            let pre = format!("layer{k}.message_{kind}");
            let cat: Vec<f64> = src.iter().chain(dst).copied().collect();
            let hid = lin(&p(&format!("{pre}.0.weight")), &p(&format!("{pre}.0.bias")), &cat, h, true);
            lin(&p(&format!("{pre}.1.weight")), &p(&format!("{pre}.1.bias")), &hid, u, false)
        };
        let update = |kind: &str, m: &[f64]| {
            let pre = format!("layer{k}.update_{kind}");
            lin(&p(&format!("{pre}.weight")), &p(&format!("{pre}.bias")), m, s, true)
        };
        let att_v = p(&format!("layer{k}.attention_variable"));
        let att_f = p(&format!("layer{k}.attention_factor"));
        let mut new_hv = hv.clone();
        for (vi, h_dst) in hv.iter().enumerate() {
            let mut msgs = Vec::new();
            let mut logits = Vec::new();
            for &(f, v) in &g.factor_edges {
                if v == vi {
                    msgs.push(message("fv", &hf[f], h_dst));
                    logits.push(attention_logit(&att_v, &hf[f], h_dst));
                }
            }
            for &(a, b) in &g.variable_edges {
                for (src, dst) in [(a, b), (b, a)] {
                    if dst == vi {
                        msgs.push(message("vv", &hv[src], h_dst));
                        logits.push(attention_logit(&att_v, &hv[src], h_dst));
                    }
                }
            }
            if !msgs.is_empty() {
                new_hv[vi] = update("variable", &attention_aggregate(&msgs, &logits).unwrap());
            }
        }
        let mut new_hf = hf.clone();
        for (fi, h_dst) in hf.iter().enumerate() {
            let mut msgs = Vec::new();
            let mut logits = Vec::new();
            for &(f, v) in &g.factor_edges {
                if f == fi {
                    msgs.push(message("vf", &hv[v], h_dst));
                    logits.push(attention_logit(&att_f, &hv[v], h_dst));
                }
            }
            if !msgs.is_empty() {
                new_hf[fi] = update("factor", &attention_aggregate(&msgs, &logits).unwrap());
            }
        }
        hv = new_hv;
        hf = new_hf;
    }
    hv.iter()
        .map(|x| {
            let hid = lin(&p("head.0.weight"), &p("head.0.bias"), x, q, true);
            lin(&p("head.1.weight"), &p("head.1.bias"), &hid, 1, false)[0]
        })
        .collect()
}

#[test]
fn forward_matches_per_edge_reference() {
    let g = common::two_bus_graph(true);
    for seed in 0..5 {
        let m = common::tiny(seed);
        let fast = m.forward(&GraphBatch::single(&g).unwrap()).unwrap();
        let slow = reference_forward(&m, &g);
        assert_eq!(fast.len(), 4);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
    let m = init_model(&GnnConfig::tiny(8, 3, 12), 5).unwrap();
    let fast = m.forward(&GraphBatch::single(&g).unwrap()).unwrap();
    let slow = reference_forward(&m, &g);
    for (a, b) in fast.iter().zip(&slow) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn inference_and_training_forward_agree_exactly() {
    let g = common::two_bus_graph(true);
    let batch = GraphBatch::single(&g).unwrap();
    for seed in 0..3 {
        let m = common::tiny(seed);
        assert_eq!(m.forward(&batch).unwrap(), m.forward_cached(&batch).unwrap().predictions);
    }
}

#[test]
fn parameter_count_matches_hand_count() {
    let cfg = GnnConfig::default();
    let m = init_model(&cfg, 1).unwrap();
    // encoders 2(12·64 + 64), per layer 3(128·64 + 64 + 64·64 + 64) + 256 + 2(64·64 + 64), head 64·64 + 64 + 64 + 1
    let hand = 2 * (12 * 64 + 64) + 4 * (3 * (128 * 64 + 64 + 64 * 64 + 64) + 256 + 2 * (64 * 64 + 64)) + (64 * 64 + 64 + 64 + 1);
    assert_eq!(hand, 189_185);
    assert_eq!(m.parameter_count(), hand);
    assert_eq!(cfg.parameter_count(), hand);
}

#[test]
fn init_is_deterministic_and_minimal_model_builds() {
    let cfg = GnnConfig::tiny(4, 2, 12);
    assert_eq!(init_model(&cfg, 7).unwrap(), init_model(&cfg, 7).unwrap());
    assert_ne!(init_model(&cfg, 7).unwrap().params, init_model(&cfg, 8).unwrap().params);
    let m = init_model(&GnnConfig::tiny(1, 1, 12), 0).unwrap();
    let out = m.forward(&GraphBatch::single(&common::two_bus_graph(true)).unwrap()).unwrap();
    assert_eq!(out.len(), 4);
    assert!(out.iter().all(|v| v.is_finite()));
    let bad = GnnConfig { embedding: 0, ..GnnConfig::default() };
    assert!(init_model(&bad, 0).is_err());
}

#[test]
fn isolated_variable_node_is_constant_across_depth() {
    let sys = PowerSystem::new(
        "one-bus",
        vec![Bus { id: 0, kind: BusKind::Reference, shunt_conductance: 0.0, shunt_susceptance: 0.0 }],
        vec![],
        100.0,
        None,
    )
    .unwrap();
    let g = encode_features(build_factor_graph(&sys, &MeasurementSet::new()).unwrap(), 2).unwrap();
    let batch = GraphBatch::single(&g).unwrap();
    let mut outs = Vec::new();
    for k in 1..=4 {
        let mut m = init_model(&GnnConfig::tiny(5, k, 12), 11).unwrap();
        // share encoder and head across depths
        let base = init_model(&GnnConfig::tiny(5, 1, 12), 11).unwrap();
        for name in ["encoder.variable.weight", "encoder.variable.bias", "head.0.weight", "head.0.bias", "head.1.weight", "head.1.bias"] {
            let (src, dst) = (base.tensor(name).unwrap().clone(), m.tensor(name).unwrap().clone());
            let vals = base.params[src.offset..src.offset + src.rows * src.cols].to_vec();
            m.params[dst.offset..dst.offset + dst.rows * dst.cols].copy_from_slice(&vals);
        }
        outs.push(m.forward(&batch).unwrap());
    }
    assert!(outs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn singleton_attention_weight_is_one() {
    // a one-measurement graph: each variable of bus 0 hears exactly the one
    // factor plus its partner through the augmentation edge
    let sys = common::fig2_two_bus();
    let mut ms = MeasurementSet::new();
    ms.push(Measurement::new(MeasurementKind::VoltageMagnitude, Location::Bus(1), 1.0, 1e-3).unwrap(), Provenance::Clean);
    let g = encode_features(build_factor_graph_with(&sys, &ms, false).unwrap(), 2).unwrap();
    let m = common::tiny(1);
    let cache = m.forward_cached(&GraphBatch::single(&g).unwrap()).unwrap();
    assert_eq!(cache.variable_attention(0), &[1.0, 1.0]);
}

#[test]
fn aggregation_examples_and_convexity() {
    let a = vec![0.3, -1.0];
    assert_eq!(attention_aggregate(std::slice::from_ref(&a), &[5.0]).unwrap(), a);
    let two = attention_aggregate(&[a.clone(), a.clone()], &[-3.0, 2.0]).unwrap();
    assert!(two.iter().zip(&a).all(|(x, y)| (x - y).abs() < 1e-15));
    assert_eq!(attention_aggregate(&[vec![1.0, 2.0], vec![3.0, 6.0]], &[0.0, 0.0]).unwrap(), vec![2.0, 4.0]);
    assert!(attention_aggregate(&[], &[]).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let msgs: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let out = attention_aggregate(&msgs, &logits).unwrap();
        for c in 0..3 {
            let lo = msgs.iter().map(|m| m[c]).fold(f64::INFINITY, f64::min);
            let hi = msgs.iter().map(|m| m[c]).fold(f64::NEG_INFINITY, f64::max);
            assert!(out[c] >= lo - 1e-12 && out[c] <= hi + 1e-12);
        }
    }
    assert_eq!(attention_logit(&[1.0, 1.0], &[-1.0], &[0.0]), -0.2);
}

#[test]
fn neighbor_order_does_not_matter() {
    let g = common::two_bus_graph(true);
    let mut shuffled = g.clone();
    shuffled.factor_edges.reverse();
    shuffled.variable_edges.reverse();
    let m = common::tiny(2);
    let a = m.forward(&GraphBatch::single(&g).unwrap()).unwrap();
    let b = m.forward(&GraphBatch::single(&shuffled).unwrap()).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-6);
    }
}

#[test]
fn unused_parameters_get_zero_gradient() {
    let g = common::two_bus_graph(false);
    let batch = GraphBatch::single(&g).unwrap();
    let labels = variable_labels(&g, &common::two_bus_truth());
    let m = common::tiny(3);
    let (_, grad) = m.loss_and_grad(&batch, &labels).unwrap();
    let last = m.config.layers - 1;
    for t in m.tensors() {
        let zero = t.name.contains("message_vv")
            || t.name.starts_with(&format!("layer{last}.message_vf"))
            || t.name.starts_with(&format!("layer{last}.attention_factor"))
            || t.name.starts_with(&format!("layer{last}.update_factor"));
        if zero {
            assert!(grad[t.offset..t.offset + t.rows * t.cols].iter().all(|v| *v == 0.0), "{}", t.name);
        }
    }
}

#[test]
fn zero_head_and_labels_give_zero_head_bias_gradient() {
    let g = common::two_bus_graph(true);
    let batch = GraphBatch::single(&g).unwrap();
    let mut m = common::tiny(4);
    let w2 = m.tensor("head.1.weight").unwrap().clone();
    let b2 = m.tensor("head.1.bias").unwrap().clone();
    m.params[w2.offset..w2.offset + w2.rows].fill(0.0);
    m.params[b2.offset] = 0.0;
    let (loss, grad) = m.loss_and_grad(&batch, &[0.0; 4]).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(grad[b2.offset], 0.0);
}

#[test]
fn loss_examples() {
    assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(mse_loss(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 2.5);
    assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    let g = common::two_bus_graph(true);
    let labels = variable_labels(&g, &common::two_bus_truth());
    let m = common::tiny(5);
    let one = mse_loss(&m.forward(&GraphBatch::new(&[&g]).unwrap()).unwrap(), &labels).unwrap();
    let doubled: Vec<f64> = labels.iter().chain(&labels).copied().collect();
    let two = mse_loss(&m.forward(&GraphBatch::new(&[&g, &g]).unwrap()).unwrap(), &doubled).unwrap();
    assert!((one - two).abs() < 1e-15);
}

#[test]
fn adam_examples() {
    let cfg = GnnConfig::tiny(1, 1, 12);
    let mut m = init_model(&cfg, 0).unwrap();
    let before = m.params.clone();
    let mut st = AdamState::new(m.parameter_count());
    adam_step(&mut m, &mut st, &vec![0.0; before.len()], 1e-3).unwrap();
    assert_eq!(m.params, before);
    let grad: Vec<f64> = (0..before.len()).map(|i| if i % 2 == 0 { 0.5 } else { -2.0 }).collect();
    let mut st = AdamState::new(before.len());
    adam_step(&mut m, &mut st, &grad, 1e-3).unwrap();
    for i in 0..before.len() {
        let expected = before[i] - 1e-3 * grad[i].signum();
        assert!((m.params[i] - expected).abs() < 1e-9);
    }
    adam_step(&mut m, &mut st, &grad, 1e-3).unwrap();
    assert_eq!(st.step, 2);
}

#[test]
fn checkpoint_round_trip() {
    let cfg = GnnConfig::tiny(4, 2, 12);
    let m = init_model(&cfg, 9).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&m, &mut buf).unwrap();
    assert_eq!(&buf[..8], b"GRIDNSE\0");
    let back = read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(back.config, m.config);
    for (a, b) in back.params.iter().zip(&m.params) {
        assert_eq!(*a, *b as f32 as f64);
    }
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(read_checkpoint(&mut bad.as_slice()).is_err());
    assert!(read_checkpoint(&mut &buf[..buf.len() - 1]).is_err());
}

#[test]
fn training_reduces_loss_on_one_graph() {
    let g = common::two_bus_graph(true);
    let batch = GraphBatch::single(&g).unwrap();
    let labels = variable_labels(&g, &common::two_bus_truth());
    let mut m = init_model(&GnnConfig::tiny(8, 2, 12), 1).unwrap();
    let mut st = AdamState::new(m.parameter_count());
    let (first, _) = m.loss_and_grad(&batch, &labels).unwrap();
    let mut last = first;
    for _ in 0..300 {
        let (l, grad) = m.loss_and_grad(&batch, &labels).unwrap();
        last = l;
        adam_step(&mut m, &mut st, &grad, 1e-2).unwrap();
    }
    assert!(last < 1e-3 * first.max(1e-3), "{first} -> {last}");
}

#[test]
fn checkpoint_hash_tracks_parameters() {
    let a = common::tiny(1);
    let mut b = a.clone();
    let h = gridnse::gnn::checkpoint_hash(&a).unwrap();
    assert_eq!(h.len(), 12);
    assert_eq!(h, gridnse::gnn::checkpoint_hash(&a.clone()).unwrap());
    b.params[0] += 1.0;
    assert_ne!(h, gridnse::gnn::checkpoint_hash(&b).unwrap());
}
