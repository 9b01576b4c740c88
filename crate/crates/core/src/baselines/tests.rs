use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, GradCheckOptions, Tape};
use crate::softsort::{all_permutations, hard_permutation, HardPermutation};
use crate::tensor::Tensor;

fn perm(order: &[usize]) -> HardPermutation {
    HardPermutation::new(order.to_vec()).unwrap()
}

// Sequential-softmax probability, written independently of pl_log_prob.
fn pl_prob_oracle(scores: &[f64], order: &[usize]) -> f64 {
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let mut p = 1.0;
    for &item in order {
        let z: f64 = remaining.iter().map(|&j| scores[j].exp()).sum();
        p *= scores[item].exp() / z;
        remaining.retain(|&j| j != item);
    }
    p
}

fn chi2_critical_001(dof: usize) -> f64 {
    match dof {
        1 => 10.828,
        5 => 20.515,
        23 => 49.728,
        _ => panic!("no table entry for {dof}"),
    }
}

#[test]
fn relaxed_ndcg_examples() {
    // Hard DCG of gains [1, 0, 1] in the given order.
    let hard: f64 = [1.0, 0.0, 1.0].iter().enumerate().map(|(k, g)| g / ((k + 2) as f64).log2()).sum();
    assert!((hard - 1.5).abs() < 1e-12);

    let mut tape = Tape::new();
    let s = tape.param(Tensor::vector(vec![3.0, 2.0, 1.0]));
    let l = relaxed_ndcg_loss(&mut tape, s, &[0.9, 0.5, 0.1], 1e-3).unwrap();
    assert!(tape.scalar_value(l) < 1e-4);

    let mut tape = Tape::new();
    let s = tape.param(Tensor::vector(vec![0.3, -2.0, 1.0, 0.7]));
    let l = relaxed_ndcg_loss(&mut tape, s, &[0.4; 4], 1.0).unwrap();
    assert!(tape.scalar_value(l).abs() < 1e-12);

    let mut tape = Tape::new();
    let s = tape.param(Tensor::vector(vec![0.3, -2.0]));
    let l = relaxed_ndcg_loss(&mut tape, s, &[0.0, 0.0], 1.0).unwrap();
    assert_eq!(tape.scalar_value(l), 0.0);
    assert!(relaxed_ndcg_loss(&mut tape, s, &[0.0, -1.0], 1.0).is_err());
    assert!(relaxed_ndcg_loss(&mut tape, s, &[1.0], 1.0).is_err());
}

#[test]
fn relaxed_ndcg_limit_matches_hard_ndcg() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let n = rng.random_range(2..8);
        // Distinct integer-spaced scores keep the relaxation saturated.
        let mut scores: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 1.0).collect();
        scores.shuffle(&mut rng);
        let gains: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let order = hard_permutation(&scores);
        let dcg = |o: &[usize]| -> f64 { o.iter().enumerate().map(|(k, &i)| gains[i] / ((k + 2) as f64).log2()).sum() };
        let mut ideal: Vec<usize> = (0..n).collect();
        ideal.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
        let hard = 1.0 - dcg(order.order()) / dcg(&ideal);
        let mut tape = Tape::new();
        let s = tape.param(Tensor::vector(scores));
        let l = relaxed_ndcg_loss(&mut tape, s, &gains, 1e-4).unwrap();
        assert!((tape.scalar_value(l) - hard).abs() < 1e-6);
    }
}

#[test]
fn relaxed_ndcg_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let x = Tensor::vector((0..5).map(|_| rng.random_range(-1.0..1.0)).collect());
        let gains: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        let r = grad_check(|t, v| relaxed_ndcg_loss(t, v[0], &gains, 0.7), &[x], GradCheckOptions::default()).unwrap();
        assert!(r.passed(1e-4), "{r:?}");
    }
}

#[test]
fn pl_log_prob_examples() {
    assert_eq!(pl_log_prob(&[0.4], &perm(&[0])).unwrap(), 0.0);
    for o in [[0, 1], [1, 0]] {
        assert!((pl_log_prob(&[0.0, 0.0], &perm(&o)).unwrap() - 0.5f64.ln()).abs() < 1e-12);
    }
    let v = pl_log_prob(&[1.0, 0.0], &perm(&[0, 1])).unwrap();
    assert!((v - (1.0 - (1f64.exp() + 1.0).ln())).abs() < 1e-12);
    assert!((v + 0.313262).abs() < 1e-6);
    // Stable for large scores.
    assert!(pl_log_prob(&[800.0, 0.0], &perm(&[1, 0])).unwrap().is_finite());
}

#[test]
fn pl_probabilities_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n in 1..=5 {
        for _ in 0..5 {
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let total: f64 = all_permutations(n).iter().map(|p| pl_log_prob(&s, p).unwrap().exp()).sum();
            assert!((total - 1.0).abs() < 1e-8);
            for p in all_permutations(n) {
                assert!((pl_log_prob(&s, &p).unwrap().exp() - pl_prob_oracle(&s, p.order())).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn pl_log_prob_var_matches_and_differentiates() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let s: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = all_permutations(4)[rng.random_range(0..24)].clone();
        let mut tape = Tape::new();
        let v = tape.param(Tensor::vector(s.clone()));
        let lp = pl_log_prob_var(&mut tape, v, &p).unwrap();
        assert!((tape.scalar_value(lp) - pl_log_prob(&s, &p).unwrap()).abs() < 1e-12);
        let r = grad_check(|t, x| pl_log_prob_var(t, x[0], &p), &[Tensor::vector(s)], GradCheckOptions::default()).unwrap();
        assert!(r.passed(1e-6));
    }
}

#[test]
fn pl_sample_examples() {
    let sampler = PlackettLuceSampler::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 10_000;
    let first = (0..n).filter(|_| pl_sample(&sampler, &[10.0, -10.0], &mut rng).order() == [0, 1]).count();
    assert!(first as f64 / n as f64 > 0.999);
    let first = (0..n).filter(|_| pl_sample(&sampler, &[0.0, 0.0], &mut rng).order() == [0, 1]).count();
    assert!((first as f64 / n as f64 - 0.5).abs() < 0.02);
}

fn chi2_against_law(scores: &[f64], sampler: &PlackettLuceSampler, draws: usize, seed: u64) -> (f64, usize) {
    let perms = all_permutations(scores.len());
    let mut counts = vec![0usize; perms.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws {
        let p = pl_sample(sampler, scores, &mut rng);
        counts[perms.iter().position(|q| *q == p).unwrap()] += 1;
    }
    let logits: Vec<f64> = scores.iter().map(|s| s / sampler.temperature).collect();
    let chi2 = perms
        .iter()
        .zip(&counts)
        .map(|(p, &c)| {
            let e = draws as f64 * pl_prob_oracle(&logits, p.order());
            (c as f64 - e).powi(2) / e
        })
        .sum();
    (chi2, perms.len() - 1)
}

#[test]
fn pl_sample_matches_analytic_law() {
    let sampler = PlackettLuceSampler {
        temperature: 1.0,
        samples: 1,
    };
    for (i, scores) in [vec![0.3, -0.4], vec![0.5, -0.2, 0.1], vec![0.2, 0.9, -0.5, 0.0]].into_iter().enumerate() {
        let (chi2, dof) = chi2_against_law(&scores, &sampler, 100_000, 10 + i as u64);
        assert!(chi2 < chi2_critical_001(dof), "L={} chi2 {chi2}", scores.len());
    }
    // The default temperature sharpens the law to scores / 0.1.
    let (chi2, dof) = chi2_against_law(&[0.05, 0.0, 0.12], &PlackettLuceSampler::default(), 100_000, 20);
    assert!(chi2 < chi2_critical_001(dof));
}

// Exact ∇_s E[g] by enumeration over the 3! orders.
fn exact_policy_gradient(scores: &[f64], temperature: f64, g: &dyn Fn(&HardPermutation) -> f64) -> Vec<f64> {
    let perms = all_permutations(scores.len());
    let logits: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let probs: Vec<f64> = perms.iter().map(|p| pl_prob_oracle(&logits, p.order())).collect();
    let mean_g: f64 = perms.iter().zip(&probs).map(|(p, pr)| pr * g(p)).sum();
    let mut grad = vec![0.0; scores.len()];
    for (p, &pr) in perms.iter().zip(&probs) {
        // ∂ log P / ∂ s_i by central differences of the closed form.
        for (i, gi) in grad.iter_mut().enumerate() {
            let h = 1e-6;
            let mut up = logits.clone();
            up[i] += h / temperature;
            let mut dn = logits.clone();
            dn[i] -= h / temperature;
            let dlog = (pl_prob_oracle(&up, p.order()).ln() - pl_prob_oracle(&dn, p.order()).ln()) / (2.0 * h);
            *gi += pr * (g(p) - mean_g) * dlog;
        }
    }
    grad
}

#[test]
fn pg_estimator_is_unbiased() {
    let g = |p: &HardPermutation| -> f64 {
        // A list utility that prefers item 2 on top and item 0 last.
        let pos = p.positions();
        0.2 + 0.5 * f64::from(u8::from(pos[2] == 0)) + 0.2 * pos[0] as f64 / 2.0 + 0.05 * pos[1] as f64
    };
    for (samples, scores, temperature) in [(5usize, vec![0.1, 0.4, 0.2], 0.5), (2, vec![0.3, 0.0, 0.1], 1.0), (1, vec![0.0, 0.2, 0.4], 1.0)] {
        let sampler = PlackettLuceSampler { temperature, samples };
        let exact = exact_policy_gradient(&scores, temperature, &g);
        let steps = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(30 + samples as u64);
        let mut sum = vec![0.0; 3];
        let mut sq = vec![0.0; 3];
        for _ in 0..steps {
            let (est, _) = pg_score_gradient(&sampler, &scores, &mut rng, |p| Ok(g(p))).unwrap();
            for i in 0..3 {
                sum[i] += est[i];
                sq[i] += est[i] * est[i];
            }
        }
        for i in 0..3 {
            let mean = sum[i] / steps as f64;
            let var = sq[i] / steps as f64 - mean * mean;
            let se = (var / steps as f64).sqrt();
            assert!((mean - exact[i]).abs() < 3.0 * se + 1e-9, "K={samples} coord {i}: {mean} vs {exact:?} (se {se})");
        }
    }
}

#[test]
fn pg_degenerate_cases_give_zero() {
    // Identical samples: every leave-one-out advantage vanishes.
    let sampler = PlackettLuceSampler {
        temperature: 0.1,
        samples: 4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (grad, _) = pg_score_gradient(&sampler, &[100.0, 0.0, -100.0], &mut rng, |p| Ok(p.order()[2] as f64)).unwrap();
    assert!(grad.iter().all(|&x| x == 0.0));
    // Constant reward: zero for any draw with a baseline.
    let (grad, mean) = pg_score_gradient(&sampler, &[0.1, 0.0, 0.05], &mut rng, |_| Ok(0.7)).unwrap();
    assert!(grad.iter().all(|&x| x == 0.0));
    assert!((mean - 0.7).abs() < 1e-12);
}

#[test]
fn sampler_validation() {
    assert!(PlackettLuceSampler { temperature: 0.0, samples: 1 }.validate().is_err());
    assert!(PlackettLuceSampler { temperature: 0.1, samples: 0 }.validate().is_err());
}

#[test]
fn urcc_pair_loss_examples() {
    assert!((urcc_pair_loss(0.4, 0.4) - 2f64.ln()).abs() < 1e-12);
    assert!((urcc_pair_loss(1.5, 0.5) - 0.313262).abs() < 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let a = rng.random_range(-5.0..5.0);
        let b = a + rng.random_range(1e-3..1.0);
        assert!(urcc_pair_loss(b, 0.0) < urcc_pair_loss(a, 0.0));
    }
}

#[test]
fn swap_neighborhood_is_all_transpositions() {
    for n in 1..=8 {
        let p = hard_permutation(&(0..n).map(|i| (i * 7 % n) as f64).collect::<Vec<_>>());
        let nb = swap_neighborhood(&p);
        assert_eq!(nb.len(), n * (n - 1) / 2);
        for q in &nb {
            let diff = p.order().iter().zip(q.order()).filter(|(a, b)| a != b).count();
            assert_eq!(diff, 2);
        }
        let mut uniq = nb.clone();
        uniq.sort_by(|a, b| a.order().cmp(b.order()));
        uniq.dedup();
        assert_eq!(uniq.len(), nb.len());
    }
}

#[test]
fn urcc_pairs_are_ordered_and_drop_ties() {
    let p = perm(&[0, 1, 2, 3]);
    let g = |q: &HardPermutation| Ok(q.order()[0] as f64 + if q.order()[3] == 3 { 0.0 } else { 0.5 });
    let pairs = urcc_pairs(&p, g).unwrap();
    for pair in &pairs {
        assert!(pair.g_plus > pair.g_minus);
        assert!(pair.pi_plus == p || pair.pi_minus == p);
    }
    // Swapping positions 1 and 2 leaves the reward unchanged.
    assert_eq!(pairs.len(), 5);
    assert!(PermutationPair::new(p.clone(), 0.1, p.clone(), 0.2).is_err());
}

#[test]
fn urcc_surrogate_matches_list_scores() {
    let s = vec![0.9, 0.2, 0.5];
    let pair = PermutationPair::new(perm(&[0, 2, 1]), 0.8, perm(&[1, 2, 0]), 0.3).unwrap();
    let list_score = |o: &[usize]| -> f64 { o.iter().enumerate().map(|(k, &i)| s[i] / ((k + 2) as f64).log2()).sum() };
    let expect = urcc_pair_loss(list_score(&[0, 2, 1]), list_score(&[1, 2, 0]));
    let mut tape = Tape::new();
    let v = tape.param(Tensor::vector(s.clone()));
    let l = urcc_surrogate(&mut tape, v, &pair).unwrap();
    assert!((tape.scalar_value(l) - expect).abs() < 1e-12);
    let r = grad_check(|t, x| urcc_surrogate(t, x[0], &pair), &[Tensor::vector(s)], GradCheckOptions::default()).unwrap();
    assert!(r.passed(1e-6));
}
