use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, GradCheckOptions};
use crate::softsort::HardPermutation;

fn small_config(width: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        query_dim: 3,
        item_dim: 4,
        max_len: 6,
        encoder: EncoderConfig {
            depth: 2,
            width,
            heads,
            ffn_mult: 2,
            use_cls: true,
        },
    }
}

fn random_group(rng: &mut ChaCha8Rng, len: usize) -> (Vec<f64>, Tensor) {
    let q = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let items: Vec<f64> = (0..len * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    (q, Tensor::new(vec![len, 4], items).unwrap())
}

fn permute_rows(t: &Tensor, order: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| t.row(i).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn shuffled(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

fn embed(q: &[f64], items: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let qv = tape.constant(Tensor::vector(q.to_vec()));
    let iv = tape.constant_ref(items);
    let (wv, bv) = (tape.constant_ref(w), tape.constant_ref(b));
    let e = embed_group(&mut tape, qv, iv, wv, bv).unwrap();
    tape.value(e).clone()
}

#[test]
fn embed_group_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (q, items) = random_group(&mut rng, 5);
    let zero_w = Tensor::zeros(&[7, 8]);
    let zero_b = Tensor::zeros(&[8]);
    assert!(embed(&q, &items, &zero_w, &zero_b).data().iter().all(|&v| v == 0.0));

    let w = xavier(&[7, 8], &mut rng);
    let b = xavier(&[1, 8], &mut rng).reshaped(vec![8]).unwrap();
    let full = embed(&q, &items, &w, &b);
    let perm = shuffled(&mut rng, 5);
    let permuted = embed(&q, &permute_rows(&items, &perm), &w, &b);
    assert_eq!(permuted, permute_rows(&full, &perm));

    for l in 0..5 {
        let x: Vec<f64> = q.iter().chain(items.row(l)).copied().collect();
        for j in 0..8 {
            let expect: f64 = b.data()[j] + (0..7).map(|i| x[i] * w.at(i, j)).sum::<f64>();
            assert!((full.at(l, j) - expect).abs() < 1e-12);
        }
    }

    let bad_w = Tensor::zeros(&[6, 8]);
    let mut tape = Tape::new();
    let qv = tape.constant(Tensor::vector(q.clone()));
    let iv = tape.constant_ref(&items);
    let (wv, bv) = (tape.constant_ref(&bad_w), tape.constant_ref(&zero_b));
    assert!(matches!(embed_group(&mut tape, qv, iv, wv, bv), Err(Error::Contract(_))));
}

fn reward_with_rows(model: &RewardModel, q: &[f64], items: &Tensor, rows: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let qv = tape.constant(Tensor::vector(q.to_vec()));
    let iv = tape.constant_ref(items);
    let pv = tape.constant_ref(rows);
    let g = model.forward(&mut tape, &bound, qv, iv, pv).unwrap();
    tape.scalar_value(g)
}

#[test]
fn reward_output_is_a_probability_and_set_invariant_without_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = small_config(8, 2);
    for _ in 0..100 {
        let model = RewardModel::new(&cfg, &mut rng).unwrap();
        let (q, items) = random_group(&mut rng, 5);
        let zeros = Tensor::zeros(&[5, 8]);
        let g = reward_with_rows(&model, &q, &items, &zeros);
        assert!(g > 0.0 && g < 1.0);
        let perm = shuffled(&mut rng, 5);
        let gp = reward_with_rows(&model, &q, &permute_rows(&items, &perm), &zeros);
        assert!((g - gp).abs() < 1e-10);
    }
}

#[test]
fn swapping_items_with_their_positions_keeps_reward() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = small_config(8, 2);
    for _ in 0..100 {
        let model = RewardModel::new(&cfg, &mut rng).unwrap();
        let (q, items) = random_group(&mut rng, 5);
        let order = shuffled(&mut rng, 5);
        let perm = HardPermutation::new(order.clone()).unwrap();
        let g = model.predict(&q, &items, &perm).unwrap();

        // Swap items a and b in the input and relabel the permutation so
        // each item keeps its position.
        let (a, b) = (rng.random_range(0..5), rng.random_range(0..5));
        let mut idx: Vec<usize> = (0..5).collect();
        idx.swap(a, b);
        let swapped_items = permute_rows(&items, &idx);
        let relabel: Vec<usize> = order
            .iter()
            .map(|&i| if i == a { b } else if i == b { a } else { i })
            .collect();
        let g2 = model
            .predict(&q, &swapped_items, &HardPermutation::new(relabel).unwrap())
            .unwrap();
        assert!((g - g2).abs() < 1e-10, "{g} vs {g2}");
    }
}

#[test]
fn reward_rejects_lists_longer_than_position_table() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = RewardModel::new(&small_config(8, 2), &mut rng).unwrap();
    let (q, items) = random_group(&mut rng, 7);
    let perm = HardPermutation::identity(7);
    assert!(matches!(model.predict(&q, &items, &perm), Err(Error::Contract(_))));
    let (q, items) = random_group(&mut rng, 4);
    assert!(model.predict(&q[..2], &items, &HardPermutation::identity(4)).is_err());
}

#[test]
fn ranker_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = small_config(8, 2);
    for _ in 0..100 {
        let model = RankerModel::new(&cfg, &mut rng).unwrap();
        let (q, items) = random_group(&mut rng, 6);
        let s = model.predict_scores(&q, &items).unwrap();
        assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
        let perm = shuffled(&mut rng, 6);
        let sp = model.predict_scores(&q, &permute_rows(&items, &perm)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert!((sp[k] - s[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn duplicate_items_get_equal_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = RankerModel::new(&small_config(8, 2), &mut rng).unwrap();
    let (q, items) = random_group(&mut rng, 4);
    let dup = permute_rows(&items, &[0, 1, 2, 1]);
    let s = model.predict_scores(&q, &dup).unwrap();
    assert!((s[1] - s[3]).abs() < 1e-10);
    assert!(model.predict_scores(&q, &Tensor::zeros(&[4, 3])).is_err());
}

#[test]
fn ranker_gradients_pass_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = RankerModel::new(&small_config(8, 2), &mut rng).unwrap();
    let (q, items) = random_group(&mut rng, 4);
    let params: Vec<Tensor> = model.params().tensors().cloned().collect();
    let report = grad_check(
        |t, v| {
            let qv = t.constant(Tensor::vector(q.clone()));
            let iv = t.constant(items.clone());
            let s = model.forward(t, v, qv, iv)?;
            Ok(t.sum(s))
        },
        &params,
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(1e-4), "{report:?}");
}

#[test]
fn reward_gradients_pass_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = RewardModel::new(&small_config(8, 2), &mut rng).unwrap();
    let (q, items) = random_group(&mut rng, 4);
    let mut inputs: Vec<Tensor> = model.params().tensors().cloned().collect();
    inputs.push(xavier(&[4, 8], &mut rng));
    inputs.push(items);
    let n = model.params().len();
    let report = grad_check(
        |t, v| {
            let qv = t.constant(Tensor::vector(q.clone()));
            model.forward(t, &v[..n], qv, v[n + 1], v[n])
        },
        &inputs,
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(1e-4), "{report:?}");
}

#[test]
fn encoder_config_validation() {
    let mut cfg = small_config(8, 3);
    assert!(cfg.validate().is_err());
    cfg.encoder.heads = 2;
    cfg.encoder.depth = 0;
    assert!(cfg.validate().is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = small_config(8, 2);
    let reward = RewardModel::new(&cfg, &mut rng).unwrap();
    let text = Checkpoint::from_reward(&reward).to_json_string().unwrap();
    let back = Checkpoint::from_json_str(&text).unwrap().into_reward().unwrap();
    for (a, b) in reward.params().tensors().zip(back.params().tensors()) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }

    let ranker = RankerModel::new(&cfg, &mut rng).unwrap();
    let ckpt = Checkpoint::from_ranker(&ranker);
    let back = Checkpoint::from_json_str(&ckpt.to_json_string().unwrap()).unwrap();
    assert_eq!(back, ckpt);
    assert!(back.clone().into_reward().is_err());
    assert_eq!(back.into_ranker().unwrap().params(), ranker.params());
}

#[test]
fn checkpoint_rejects_other_versions_and_tampering() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let ranker = RankerModel::new(&small_config(8, 2), &mut rng).unwrap();
    let mut value: serde_json::Value =
        serde_json::from_str(&Checkpoint::from_ranker(&ranker).to_json_string().unwrap()).unwrap();
    value["version"] = 7.into();
    let err = Checkpoint::from_json_str(&value.to_string()).unwrap_err();
    assert!(matches!(err, Error::SchemaVersion { found: 7, expected: 1, .. }));

    value["version"] = 1.into();
    value["params"][0]["tensor"]["shape"] = serde_json::json!([1]);
    assert!(Checkpoint::from_json_str(&value.to_string()).is_err());
    assert!(Checkpoint::from_json_str("{}").is_err());
    assert!(Checkpoint::from_json_str("[1,2").is_err());
}
