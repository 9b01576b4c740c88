use std::io::Cursor;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{generate, SyntheticWorldConfig};
use crate::oracles::BehavioralUser;

fn world(seed: u64, list_len: usize) -> SyntheticWorldConfig {
    SyntheticWorldConfig {
        seed,
        list_len,
        ..Default::default()
    }
}

/// Scores rank items in the stored order.
struct FixedPolicy(Vec<HardPermutation>);

impl RankingPolicy for FixedPolicy {
    fn rank(&self, group: &QueryGroup, _: &ModelInputs) -> Result<HardPermutation> {
        Ok(self.0[group.group_id as usize % self.0.len()].clone())
    }
}

#[test]
fn ndcg_examples() {
    let r = [2.0, 0.5, -1.0, 1.0];
    assert_eq!(ndcg_rel(&r, &r, 4).unwrap(), 1.0);
    assert_eq!(ndcg_rel(&[0.3, 0.1, 0.9], &[0.2; 3], 3).unwrap(), 1.0);
    assert!(matches!(ndcg_rel(&r, &r, 0), Err(Error::Contract(_))));
    assert!(ndcg_rel(&r, &r, 5).is_err());

    // Gains (1, 0.5, 0) in reverse order, checked with raw gains.
    let gains_rev = [0.0, 0.5, 1.0];
    let dcg = dcg_at(&gains_rev, 3);
    assert!((dcg - 0.81546).abs() < 1e-5);
    let ideal = dcg_at(&[1.0, 0.5, 0.0], 3);
    assert!((ideal - 1.31546).abs() < 1e-5);
    assert!((dcg / ideal - 0.61990).abs() < 1e-5);
}

#[test]
fn exponential_gains() {
    let r = [1.0, -1.0];
    let reversed = HardPermutation::new(vec![1, 0]).unwrap();
    let p = ndcg_rel_with(&reversed, &r, 2, GainKind::Probability).unwrap();
    let e = ndcg_rel_with(&reversed, &r, 2, GainKind::Exponential).unwrap();
    assert!(p < 1.0 && e < 1.0 && p != e);
}

#[test]
fn random_ranker_matches_uniform_reference() {
    let d = generate(&world(1, 6), 3000).unwrap().train;
    let report = eval_kd("random", &RandomPolicy { seed: 5 }, &d.world.examination, &d, &KdEvalConfig { k: 6, ..Default::default() }).unwrap();
    let got = report.get("random", "ndcg_rel@6", None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut sum = 0.0;
    let draws = 20;
    for g in &d.groups {
        for _ in 0..draws {
            let mut o: Vec<usize> = (0..g.len()).collect();
            o.shuffle(&mut rng);
            sum += ndcg_rel_with(&HardPermutation::new(o).unwrap(), &g.rel_logits, 6, GainKind::Probability).unwrap();
        }
    }
    let reference = sum / (d.len() * draws) as f64;
    assert!((got.mean - reference).abs() < 3.0 * got.se, "{} vs {reference}", got.mean);
}

#[test]
fn kd_rows_and_ideal_bound() {
    let d = generate(&world(2, 8), 200).unwrap().test;
    let oracle = &d.world.examination;
    let report = eval_kd("ideal_sorter", &IdealPolicy, oracle, &d, &KdEvalConfig::default()).unwrap();
    let a = report.get("ideal_sorter", "u_ips", None).unwrap();
    let b = report.get(IDEAL, "u_ips", None).unwrap();
    assert_eq!((a.mean, a.se, a.n), (b.mean, b.se, b.n));
    assert!(report.get(LOGGED, "u_ips", None).unwrap().mean <= b.mean);
    let r = eval_kd("random", &RandomPolicy { seed: 1 }, oracle, &d, &KdEvalConfig::default()).unwrap();
    assert!(r.get("random", "u_ips", None).unwrap().mean <= b.mean);
    assert!(r.get("random", "ndcg_rel@8", None).is_some());
}

#[test]
fn summaries_match_streaming_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [1usize, 2, 17, 1000] {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let (mean, se) = mean_se(&v).unwrap();
        // Welford's algorithm.
        let (mut m, mut s2) = (0.0, 0.0);
        for (i, &x) in v.iter().enumerate() {
            let d = x - m;
            m += d / (i + 1) as f64;
            s2 += d * (x - m);
        }
        let se_ref = if n > 1 { (s2 / (n - 1) as f64 / n as f64).sqrt() } else { 0.0 };
        assert!((mean - m).abs() < 1e-12 && (se - se_ref).abs() < 1e-12);
    }
    assert!(mean_se(&[]).is_err());
}

#[test]
fn lau_identity_reranker_equals_policy_in_data() {
    let w = SyntheticWorldConfig {
        label_mode: crate::data::LabelMode::Behavioral,
        ..world(3, 8)
    };
    let d = generate(&w, 300).unwrap().test;
    let cutoffs = [0.8, 0.6, 0.4];
    let report = eval_lau("identity", &LoggedPolicy, &w.behavioral, &d, &cutoffs).unwrap();
    for c in [None, Some(0.8), Some(0.6), Some(0.4)] {
        assert_eq!(report.get("identity", "p_purchase", c), report.get(POLICY_IN_DATA, "p_purchase", c).map(|e| e).map(|e| {
            let mut e = e.clone();
            e.method = "identity".into();
            e
        }).as_ref());
    }
    // Nested cutoff sets.
    let n = |c| report.get(POLICY_IN_DATA, "p_purchase", c).map_or(0, |e| e.n);
    assert!(n(Some(0.4)) <= n(Some(0.6)) && n(Some(0.6)) <= n(Some(0.8)) && n(Some(0.8)) <= n(None));
    // Stored logged purchase probabilities agree with the recomputation.
    let user = BehavioralUser::new(w.behavioral.clone()).unwrap();
    assert_eq!(logged_purchase(&user, &d).unwrap(), d.groups.iter().map(|g| g.logged_purchase).collect::<Vec<_>>());
    assert!(matches!(eval_lau("x", &LoggedPolicy, &w.behavioral, &d, &[0.0]), Err(Error::Domain(_))));
    assert!(eval_lau("x", &LoggedPolicy, &w.behavioral, &d, &[1.2]).is_err());
}

#[test]
fn exhaustive_oracle_upper_bounds_every_ranker() {
    let w = SyntheticWorldConfig {
        label_mode: crate::data::LabelMode::Behavioral,
        ..world(4, 6)
    };
    let d = generate(&w, 100).unwrap().train;
    let user = BehavioralUser::new(w.behavioral.clone()).unwrap();
    let oracle = BehavioralOraclePolicy { user: user.clone() };
    let best = rank_all(&oracle, &d).unwrap();
    for policy in [&IdealPolicy as &dyn RankingPolicy, &LoggedPolicy, &RandomPolicy { seed: 9 }] {
        for ((g, p), b) in d.groups.iter().zip(rank_all(policy, &d).unwrap()).zip(&best) {
            let v = user.purchase_prob_group(g, &p).unwrap().p_purchase;
            let top = user.purchase_prob_group(g, b).unwrap().p_purchase;
            assert!(v <= top);
        }
    }
}

#[test]
fn click_dcg_examples() {
    let d = generate(&world(5, 8), 100).unwrap().train;
    // A policy that lists clicked items first.
    struct ClicksFirst;
    impl RankingPolicy for ClicksFirst {
        fn rank(&self, g: &QueryGroup, _: &ModelInputs) -> Result<HardPermutation> {
            Ok(hard_permutation(&g.clicks.iter().map(|&c| f64::from(c)).collect::<Vec<_>>()))
        }
    }
    let report = dcg_clicks("clicks_first", &ClicksFirst, &d, 5).unwrap();
    let expect: Vec<f64> = d
        .groups
        .iter()
        .map(|g| {
            let c = g.clicks.iter().filter(|&&c| c == 1).count();
            (1..=c.min(5)).map(|i| 1.0 / ((i + 1) as f64).log2()).sum()
        })
        .collect();
    let e = report.get("clicks_first", "dcg@5", None).unwrap();
    assert!((e.mean - expect.iter().sum::<f64>() / expect.len() as f64).abs() < 1e-12);
    assert!(report.get(LOGGED, "dcg@5", None).unwrap().mean <= e.mean);
    let mut none = d.clone();
    for g in &mut none.groups {
        g.clicks.iter_mut().for_each(|c| *c = 0);
    }
    assert_eq!(dcg_clicks("x", &ClicksFirst, &none, 5).unwrap().get("x", "dcg@5", None).unwrap().mean, 0.0);
    assert!(dcg_clicks("x", &ClicksFirst, &d, 0).is_err());
}

#[test]
fn metrics_csv_round_trip() {
    let mut r = MetricsReport::new();
    r.push("a", "u_ips", None, &[0.1, 0.2, 0.35]);
    r.push("a", "p_purchase", Some(0.4), &[0.3]);
    r.push("b,c", "p_purchase", None, &[]);
    assert_eq!(r.entries.len(), 2);
    let csv = r.to_csv().unwrap();
    assert!(csv.starts_with("# permurank.metrics v1\nmethod,metric,cutoff,mean,se,n\n"));
    assert_eq!(MetricsReport::from_csv(&csv, "m").unwrap(), r);
    assert!(matches!(MetricsReport::from_csv(&csv.replace("v1", "v9"), "m"), Err(Error::SchemaVersion { .. })));
    assert!(MetricsReport::from_csv("method,metric\n", "m").is_err());
    assert!(r.to_table().contains("u_ips"));
}

fn lau_setup() -> (Dataset, BehavioralUserConfig, Vec<HardPermutation>) {
    let w = SyntheticWorldConfig {
        label_mode: crate::data::LabelMode::Behavioral,
        ..world(6, 8)
    };
    let d = generate(&w, 250).unwrap().train;
    let perms = rank_all(&RandomPolicy { seed: 4 }, &d).unwrap();
    (d, w.behavioral, perms)
}

#[test]
fn judge_exchange_round_trip_reproduces_lau() {
    let (d, cfg, perms) = lau_setup();
    let cutoffs = [0.8, 0.6, 0.4];
    let requests = export_requests(&d, &perms).unwrap();
    let user = BehavioralUser::new(cfg.clone()).unwrap();
    let responses = simulate_responses(Cursor::new(&requests), &user).unwrap();
    let (report, stats) = import_responses(Cursor::new(&responses), "resp", &d, "m", &cfg, &cutoffs).unwrap();
    let direct = eval_lau("m", &FixedPolicy(perms.clone()), &cfg, &d, &cutoffs);
    // FixedPolicy indexes by group id; build the direct report from the same rankings instead.
    drop(direct);
    struct ByIndex<'a>(&'a Dataset, &'a [HardPermutation]);
    impl RankingPolicy for ByIndex<'_> {
        fn rank(&self, g: &QueryGroup, _: &ModelInputs) -> Result<HardPermutation> {
            let i = self.0.groups.iter().position(|x| x.group_id == g.group_id).unwrap();
            Ok(self.1[i].clone())
        }
    }
    let direct = eval_lau("m", &ByIndex(&d, &perms), &cfg, &d, &cutoffs).unwrap();
    assert_eq!(report, direct);
    assert_eq!(stats, ImportStats { received: d.len(), ..Default::default() });
    let reqs = read_requests(Cursor::new(&requests), "req").unwrap();
    assert_eq!(reqs.len(), d.len());
    assert_eq!(reqs[0].order, perms[0].order());
}

#[test]
fn judge_import_bookkeeping() {
    let (d, cfg, perms) = lau_setup();
    let user = BehavioralUser::new(cfg.clone()).unwrap();
    let responses = simulate_responses(Cursor::new(export_requests(&d, &perms).unwrap()), &user).unwrap();
    let lines: Vec<&str> = responses.lines().collect();
    // Drop every tenth response.
    let kept: Vec<&str> = lines.iter().enumerate().filter(|(i, _)| *i == 0 || i % 10 != 1).map(|(_, l)| *l).collect();
    let dropped = lines.len() - kept.len();
    let (report, stats) = import_responses(Cursor::new(kept.join("\n")), "r", &d, "m", &cfg, &[0.5]).unwrap();
    assert_eq!(stats.missing, dropped);
    assert_eq!(report.get("m", "p_purchase", None).unwrap().n, d.len() - dropped);
    assert_eq!(report.get(POLICY_IN_DATA, "p_purchase", None).unwrap().n, d.len());

    // A duplicate line overrides the earlier one.
    let first: JudgeResponse = serde_json::from_str(lines[1]).unwrap();
    let replaced = JudgeResponse {
        p_purchase: 0.0,
        ..first.clone()
    };
    let mut dup = lines.clone();
    let extra = serde_json::to_string(&replaced).unwrap();
    dup.push(&extra);
    let (report, stats) = import_responses(Cursor::new(dup.join("\n")), "r", &d, "m", &cfg, &[]).unwrap();
    assert_eq!(stats.duplicates, 1);
    let (base, _) = import_responses(Cursor::new(lines.join("\n")), "r", &d, "m", &cfg, &[]).unwrap();
    let n = d.len() as f64;
    let diff = base.get("m", "p_purchase", None).unwrap().mean - report.get("m", "p_purchase", None).unwrap().mean;
    assert!((diff - first.p_purchase / n).abs() < 1e-12);

    // Malformed lines name their line number.
    let mut bad = lines.clone();
    bad[3] = "{\"group_id\": 1, \"p_purchase\": ";
    match import_responses(Cursor::new(bad.join("\n")), "r", &d, "m", &cfg, &[]) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("{other:?}"),
    }
    let mut bad = lines.clone();
    let out_of_range = lines[2].replace("\"p_purchase\":", "\"p_purchase\":1.5,\"x\":");
    bad[2] = &out_of_range;
    assert!(import_responses(Cursor::new(bad.join("\n")), "r", &d, "m", &cfg, &[]).is_err());
    assert!(import_responses(Cursor::new(""), "r", &d, "m", &cfg, &[]).is_err());
    let wrong_header = responses.replacen("judge_response", "judge_request", 1);
    assert!(import_responses(Cursor::new(wrong_header), "r", &d, "m", &cfg, &[]).is_err());
}
