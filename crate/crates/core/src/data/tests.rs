use std::io::Cursor;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::oracles::ideal_permutation;

fn small(seed: u64) -> SyntheticWorldConfig {
    SyntheticWorldConfig {
        seed,
        ..Default::default()
    }
}

// Independent NDCG with sigmoid gains over the full list.
fn ndcg_oracle(gains: &[f64], order: &[usize]) -> f64 {
    let dcg = |o: &[usize]| -> f64 { o.iter().enumerate().map(|(k, &i)| gains[i] / ((k + 2) as f64).log2()).sum() };
    let mut ideal: Vec<usize> = (0..gains.len()).collect();
    ideal.sort_by(|&a, &b| gains[b].partial_cmp(&gains[a]).unwrap());
    dcg(order) / dcg(&ideal)
}

fn kendall_tau(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let pos = |o: &[usize]| {
        let mut p = vec![0usize; n];
        for (k, &i) in o.iter().enumerate() {
            p[i] = k;
        }
        p
    };
    let (pa, pb) = (pos(a), pos(b));
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let x = (pa[i] as f64 - pa[j] as f64).signum() * (pb[i] as f64 - pb[j] as f64).signum();
            s += x;
        }
    }
    s / (n * (n - 1) / 2) as f64
}

#[test]
fn split_sizes() {
    let d = generate(&small(7), 1000).unwrap();
    assert_eq!((d.train.len(), d.val.len(), d.test.len()), (800, 100, 100));
    assert_eq!(split_counts(10), (8, 1, 1));
    assert!(matches!(generate(&small(7), 9), Err(Error::Contract(_))));
    let mut ids: Vec<u64> = [&d.train, &d.val, &d.test].iter().flat_map(|s| s.groups.iter().map(|g| g.query_id)).collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..1000).collect::<Vec<_>>());
}

#[test]
fn noiseless_logger_is_ideal() {
    let cfg = SyntheticWorldConfig {
        logging_noise: 0.0,
        ..small(3)
    };
    let d = generate(&cfg, 50).unwrap();
    for g in d.train.groups.iter().chain(&d.test.groups) {
        assert_eq!(g.logged, ideal_permutation(&g.rel_logits));
    }
}

#[test]
fn generation_is_deterministic() {
    let a = generate(&small(11), 40).unwrap();
    let b = generate(&small(11), 40).unwrap();
    assert_eq!(write_dataset(&a.train).unwrap(), write_dataset(&b.train).unwrap());
    let c = generate(&small(12), 40).unwrap();
    assert_ne!(a.train.groups[0].rel_logits, c.train.groups[0].rel_logits);
}

#[test]
fn worker_count_does_not_change_output() {
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = serial.install(|| generate(&small(5), 60).unwrap());
    let b = wide.install(|| generate(&small(5), 60).unwrap());
    assert_eq!(a, b);
}

#[test]
fn noisy_logger_approaches_uniform_ndcg() {
    let cfg = SyntheticWorldConfig {
        logging_noise: 1e4,
        ..small(1)
    };
    let d = generate(&cfg, 2000).unwrap();
    let groups: Vec<&QueryGroup> = d.train.groups.iter().chain(&d.val.groups).chain(&d.test.groups).collect();
    let logged: f64 = groups.iter().map(|g| ndcg_oracle(&g.relevance(), g.logged.order())).sum::<f64>() / groups.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut uniform = 0.0;
    let draws = 20;
    for g in &groups {
        for _ in 0..draws {
            let mut o: Vec<usize> = (0..g.len()).collect();
            o.shuffle(&mut rng);
            uniform += ndcg_oracle(&g.relevance(), &o);
        }
    }
    uniform /= (groups.len() * draws) as f64;
    assert!((logged - uniform).abs() < 0.01, "logged {logged} uniform {uniform}");
}

#[test]
fn soft_ips_labels_are_not_degenerate() {
    let d = generate(&small(0), 500).unwrap();
    let mean = d.train.groups.iter().map(|g| g.label).sum::<f64>() / d.train.len() as f64;
    assert!(mean > 0.1 && mean < 0.9, "mean label {mean}");
    for g in &d.train.groups {
        let u = d.train.world.examination.u_ips(&g.rel_logits, &g.logged).unwrap();
        assert_eq!(g.label, u);
    }
}

#[test]
fn label_modes() {
    for mode in [LabelMode::BinaryClick, LabelMode::Behavioral] {
        let cfg = SyntheticWorldConfig {
            label_mode: mode,
            ..small(4)
        };
        let d = generate(&cfg, 200).unwrap();
        for g in &d.train.groups {
            match mode {
                LabelMode::BinaryClick => {
                    assert_eq!(g.label, f64::from(u8::from(g.clicks.contains(&1))));
                }
                _ => assert_eq!(g.label, g.logged_purchase),
            }
        }
        // Binary labels average to U_IPS.
        if mode == LabelMode::BinaryClick {
            let all: Vec<&QueryGroup> = d.train.groups.iter().collect();
            let mean = all.iter().map(|g| g.label).sum::<f64>() / all.len() as f64;
            let u = all.iter().map(|g| cfg.examination.u_ips(&g.rel_logits, &g.logged).unwrap()).sum::<f64>() / all.len() as f64;
            assert!((mean - u).abs() < 0.06, "{mean} vs {u}");
        }
    }
}

#[test]
fn attribute_marginals_are_uniform() {
    let cfg = SyntheticWorldConfig {
        n_brands: 5,
        n_colors: 3,
        ..small(8)
    };
    let d = generate(&cfg, 1250).unwrap();
    let groups: Vec<&QueryGroup> = d.train.groups.iter().chain(&d.val.groups).chain(&d.test.groups).collect();
    // 10^4 items; chi-square critical values at p = 0.001 for 4 and 2 dof.
    for (vals, k, crit) in [
        (groups.iter().flat_map(|g| g.brands.clone()).collect::<Vec<_>>(), 5usize, 18.467),
        (groups.iter().flat_map(|g| g.colors.clone()).collect(), 3, 13.816),
    ] {
        assert_eq!(vals.len(), 10_000);
        let mut counts = vec![0f64; k];
        for v in &vals {
            counts[*v as usize] += 1.0;
        }
        let e = vals.len() as f64 / k as f64;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        assert!(chi2 < crit, "chi2 {chi2} counts {counts:?}");
    }
}

#[test]
fn logging_noise_reduces_kendall_tau() {
    let taus: Vec<f64> = [0.0, 0.5, 1.0, 2.0]
        .iter()
        .map(|&s| {
            let cfg = SyntheticWorldConfig {
                logging_noise: s,
                ..small(2)
            };
            let d = generate(&cfg, 400).unwrap();
            let gs = &d.train.groups;
            gs.iter().map(|g| kendall_tau(g.logged.order(), ideal_permutation(&g.rel_logits).order())).sum::<f64>() / gs.len() as f64
        })
        .collect();
    assert!((taus[0] - 1.0).abs() < 1e-12);
    assert!(taus.windows(2).all(|w| w[1] < w[0]), "{taus:?}");
}

#[test]
fn multi_permutation_logs_share_the_query() {
    let cfg = SyntheticWorldConfig {
        logged_per_query: 5,
        ..small(6)
    };
    let d = generate(&cfg, 20).unwrap();
    assert_eq!(d.train.len(), 16 * 5);
    for chunk in d.train.groups.chunks(5) {
        assert!(chunk.iter().all(|g| g.query_id == chunk[0].query_id && g.items == chunk[0].items));
        assert_eq!(chunk[4].group_id, chunk[0].group_id + 4);
    }
}

#[test]
fn context_features_are_appended() {
    let cfg = SyntheticWorldConfig {
        context_dim: 2,
        ..small(6)
    };
    let d = generate(&cfg, 10).unwrap();
    let g = &d.train.groups[0];
    assert_eq!(g.query_features().len(), cfg.model_query_dim());
    let x = g.item_features(cfg.features());
    assert_eq!(x.shape(), &[8, cfg.model_item_dim()]);
    let row = x.row(0);
    assert_eq!(row[6..].iter().sum::<f64>(), 2.0);
    assert_eq!(row[6 + g.brands[0] as usize], 1.0);
    assert_eq!(row[10 + g.colors[0] as usize], 1.0);
    let back = read_dataset(Cursor::new(write_dataset(&d.train).unwrap()), "mem").unwrap();
    assert_eq!(back, d.train);
}

#[test]
fn round_trip_is_exact() {
    let d = generate(&small(21), 125).unwrap();
    assert_eq!(d.train.len(), 100);
    let dir = tempfile::tempdir().unwrap();
    for name in ["train.jsonl", "train.jsonl.gz"] {
        let path = dir.path().join(name);
        save(&d.train, &path).unwrap();
        assert_eq!(load(&path).unwrap(), d.train);
    }
    // gzip output is reproducible too.
    let p1 = dir.path().join("a.jsonl.gz");
    let p2 = dir.path().join("b.jsonl.gz");
    save(&d.val, &p1).unwrap();
    save(&d.val, &p2).unwrap();
    assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    save_splits(&d, dir.path().join("splits"), false).unwrap();
    assert_eq!(load_split(dir.path().join("splits"), Split::Test).unwrap(), d.test);
}

fn text_of(d: &Dataset) -> String {
    write_dataset(d).unwrap()
}

#[test]
fn unknown_fields_are_accepted() {
    let d = generate(&small(1), 10).unwrap().val;
    let text = text_of(&d);
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[0] = lines[0].replacen('{', r#"{"producer":"v2","#, 1);
    lines[0] = lines[0].replacen(r#""world":{"#, r#""world":{"future_knob":3,"#, 1);
    lines[1] = lines[1].replacen('{', r#"{"dwell_time":[1,2],"#, 1);
    let back = read_dataset(Cursor::new(lines.join("\n")), "fixture").unwrap();
    assert_eq!(back, d);
}

#[test]
fn malformed_files_are_refused() {
    let d = generate(&small(1), 10).unwrap().val;
    let text = text_of(&d);

    assert!(matches!(read_dataset(Cursor::new(""), "empty"), Err(Error::Data(_))));

    let truncated = &text[..text.len() - 20];
    match read_dataset(Cursor::new(truncated), "t") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }

    let bumped = text.replacen(r#""version":1"#, r#""version":7"#, 1);
    match read_dataset(Cursor::new(bumped), "v") {
        Err(Error::SchemaVersion { found, expected, .. }) => assert_eq!((found, expected), (7, 1)),
        other => panic!("{other:?}"),
    }

    let headless: String = text.lines().skip(1).collect::<Vec<_>>().join("\n");
    assert!(matches!(read_dataset(Cursor::new(headless), "h"), Err(Error::Parse { line: 1, .. })));

    let short: String = text.lines().take(1).collect::<Vec<_>>().join("\n");
    assert!(matches!(read_dataset(Cursor::new(short), "s"), Err(Error::Data(_))));

    let bad_perm = text.replacen(r#""logged":["#, r#""logged":[0,"#, 1);
    assert!(read_dataset(Cursor::new(bad_perm), "p").is_err());
}
