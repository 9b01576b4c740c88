use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use super::{Dataset, LabelMode, QueryGroup, Split, SyntheticWorldConfig};
use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::oracles::{sample_label, BehavioralUser};
use crate::rng::{global_stream, group_stream, mix64};
use crate::softsort::hard_permutation;

/// Train, validation and test splits of one generated world.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl DatasetSplits {
    pub fn get(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Queries per split for `n` queries: 80/10/10 with the remainder in test.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let val = n / 10;
    (train, val, n - train - val)
}

fn standard_normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws `n_queries` queries from the synthetic world described by `cfg`.
pub fn generate(cfg: &SyntheticWorldConfig, n_queries: usize) -> Result<DatasetSplits> {
    cfg.validate()?;
    if n_queries < 10 {
        return Err(Error::contract(format!("need at least 10 queries, got {n_queries}")));
    }
    // Bilinear relevance form with unit-variance logits for standard normal
    // queries and items.
    let (qd, id) = (cfg.query_dim, cfg.item_dim);
    let w_std = 1.0 / ((qd * id) as f64).sqrt();
    let w_dist = Normal::new(0.0, w_std).unwrap();
    let mut world_rng = global_stream(cfg.seed, 0);
    let bilinear: Vec<f64> = (0..qd * id).map(|_| w_dist.sample(&mut world_rng)).collect();
    let user = BehavioralUser::new(cfg.behavioral.clone())?;

    let per_query: Vec<Vec<QueryGroup>> = (0..n_queries as u64)
        .into_par_iter()
        .map(|query_id| draw_query(cfg, &bilinear, &user, query_id))
        .collect::<Result<_>>()?;

    // Deterministic pseudo-random assignment of queries to splits.
    let mut order: Vec<u64> = (0..n_queries as u64).collect();
    order.sort_by_key(|&q| (mix64(q ^ mix64(cfg.seed)), q));
    let (n_train, n_val, _) = split_counts(n_queries);
    let mut assign = vec![Split::Test; n_queries];
    for (rank, &q) in order.iter().enumerate() {
        assign[q as usize] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let mut splits = [Vec::new(), Vec::new(), Vec::new()];
    for (q, groups) in per_query.into_iter().enumerate() {
        splits[assign[q] as usize].extend(groups);
    }
    let [train, val, test] = splits;
    let make = |split, groups| Dataset {
        world: cfg.clone(),
        split,
        groups,
    };
    Ok(DatasetSplits {
        train: make(Split::Train, train),
        val: make(Split::Val, val),
        test: make(Split::Test, test),
    })
}

fn draw_query(cfg: &SyntheticWorldConfig, bilinear: &[f64], user: &BehavioralUser, query_id: u64) -> Result<Vec<QueryGroup>> {
    let (qd, id, len) = (cfg.query_dim, cfg.item_dim, cfg.list_len);
    let mut rng = group_stream(cfg.seed, query_id);
    let query = standard_normals(&mut rng, qd);
    let context = (cfg.context_dim > 0).then(|| standard_normals(&mut rng, cfg.context_dim));
    let items: Vec<Vec<f64>> = (0..len).map(|_| standard_normals(&mut rng, id)).collect();
    let brands: Vec<u32> = (0..len).map(|_| rng.random_range(0..cfg.n_brands as u32)).collect();
    let colors: Vec<u32> = (0..len).map(|_| rng.random_range(0..cfg.n_colors as u32)).collect();

    let rel_logits: Vec<f64> = items
        .iter()
        .map(|item| {
            let mut form = 0.0;
            for (j, qj) in query.iter().enumerate() {
                for (k, ik) in item.iter().enumerate() {
                    form += qj * bilinear[j * id + k] * ik;
                }
            }
            let noise: f64 = StandardNormal.sample(&mut rng);
            cfg.relevance_scale * form + cfg.relevance_bias + cfg.relevance_noise * noise
        })
        .collect();
    let relevance: Vec<f64> = rel_logits.iter().map(|&r| sigmoid(r)).collect();

    let mut groups = Vec::with_capacity(cfg.logged_per_query);
    for j in 0..cfg.logged_per_query {
        let noisy: Vec<f64> = rel_logits
            .iter()
            .map(|&r| {
                let n: f64 = StandardNormal.sample(&mut rng);
                r + cfg.logging_noise * n
            })
            .collect();
        let logged = hard_permutation(&noisy);
        let mut clicks = vec![0u8; len];
        for (k, &item) in logged.order().iter().enumerate() {
            clicks[item] = sample_label(cfg.examination.click_prob(k, rel_logits[item])?, &mut rng)?;
        }
        let purchase = user.purchase_prob(&relevance, &brands, &colors, &logged)?.p_purchase;
        let label = match cfg.label_mode {
            LabelMode::BinaryClick => f64::from(u8::from(clicks.contains(&1))),
            LabelMode::SoftIps => cfg.examination.u_ips(&rel_logits, &logged)?,
            LabelMode::Behavioral => purchase,
        };
        groups.push(QueryGroup {
            group_id: query_id * cfg.logged_per_query as u64 + j as u64,
            query_id,
            query: query.clone(),
            context: context.clone(),
            items: items.clone(),
            brands: brands.clone(),
            colors: colors.clone(),
            rel_logits: rel_logits.clone(),
            logged,
            label,
            clicks,
            logged_purchase: purchase,
        });
    }
    Ok(groups)
}
