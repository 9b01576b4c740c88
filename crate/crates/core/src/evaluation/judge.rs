//! File exchange with an external list judge.
//!
//! Requests (`permurank.judge_request`) carry one ranked list per line:
//! `{"group_id":3,"items":[{"id":0,"brand":1,"color":2,"rel":0.7},...],"order":[2,0,1,...]}`.
//! Responses (`permurank.judge_response`) carry
//! `{"group_id":3,"p_purchase":0.42,"chosen_item":2}`.
//! Both files start with a `{"format":...,"version":1}` header line.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{check_cutoffs, lau_rows, logged_purchase, MetricsReport, POLICY_IN_DATA};
use crate::data::io::{check_format, from_object, parse_object, strip_unknown};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::oracles::{BehavioralUser, BehavioralUserConfig};
use crate::softsort::HardPermutation;

pub const REQUEST_FORMAT: &str = "permurank.judge_request";
pub const RESPONSE_FORMAT: &str = "permurank.judge_response";
const EXCHANGE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeItem {
    pub id: usize,
    pub brand: u32,
    pub color: u32,
    /// Relevance probability of the item.
    pub rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeRequest {
    pub group_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_text: Option<String>,
    pub items: Vec<JudgeItem>,
    /// Item ids from top to bottom.
    pub order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeResponse {
    pub group_id: u64,
    pub p_purchase: f64,
    pub chosen_item: usize,
}

/// Bookkeeping of one response import.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ImportStats {
    pub received: usize,
    /// Dataset groups without a response.
    pub missing: usize,
    /// Lines that repeated an earlier group id (the later line wins).
    pub duplicates: usize,
    /// Responses for group ids not in the dataset.
    pub unknown: usize,
}

fn header(format: &str, count: usize) -> String {
    serde_json::json!({ "format": format, "version": EXCHANGE_VERSION, "count": count }).to_string()
}

/// One request line per group, listing `rankings[i]` for group `i`.
pub fn export_requests(ds: &Dataset, rankings: &[HardPermutation]) -> Result<String> {
    if rankings.len() != ds.len() {
        return Err(Error::contract(format!("{} rankings for {} groups", rankings.len(), ds.len())));
    }
    let mut out = header(REQUEST_FORMAT, ds.len());
    out.push('\n');
    for (g, p) in ds.groups.iter().zip(rankings) {
        if p.len() != g.len() {
            return Err(Error::contract(format!("ranking for group {} has the wrong length", g.group_id)));
        }
        let rel = g.relevance();
        let req = JudgeRequest {
            group_id: g.group_id,
            query_text: None,
            items: (0..g.len())
                .map(|i| JudgeItem {
                    id: i,
                    brand: g.brands[i],
                    color: g.colors[i],
                    rel: rel[i],
                })
                .collect(),
            order: p.order().to_vec(),
        };
        out.push_str(&serde_json::to_string(&req)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses a versioned exchange file into its body objects, with line numbers.
fn read_exchange<R: BufRead, T: serde::de::DeserializeOwned>(reader: R, format: &str, known: &[&str], origin: &str) -> Result<Vec<(usize, T)>> {
    let mut warned = BTreeSet::new();
    let mut lines = reader.lines().enumerate();
    let first = match lines.next() {
        Some((_, l)) => l.map_err(|e| Error::io(origin, e))?,
        None => return Err(Error::Data(format!("{origin}: empty exchange file"))),
    };
    let head = parse_object(&first, origin, 1)?;
    check_format(&head, format, EXCHANGE_VERSION, origin)?;
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut obj = parse_object(&line, origin, i + 1)?;
        strip_unknown(&mut obj, known, format, &mut warned);
        out.push((i + 1, from_object(obj, origin, i + 1)?));
    }
    Ok(out)
}

pub fn read_requests<R: BufRead>(reader: R, origin: &str) -> Result<Vec<JudgeRequest>> {
    let reqs: Vec<(usize, JudgeRequest)> = read_exchange(reader, REQUEST_FORMAT, &["group_id", "query_text", "items", "order"], origin)?;
    reqs.into_iter()
        .map(|(line, r)| {
            let bad = |m: &str| Error::Parse {
                what: origin.to_string(),
                line,
                message: m.to_string(),
            };
            if r.items.iter().enumerate().any(|(i, it)| it.id != i) {
                return Err(bad("item ids must be 0..L in order"));
            }
            if r.items.iter().any(|it| !(0.0..=1.0).contains(&it.rel)) {
                return Err(bad("item relevance outside [0, 1]"));
            }
            HardPermutation::new(r.order.clone()).map_err(|e| bad(&e.to_string()))?;
            if r.order.len() != r.items.len() {
                return Err(bad("order length differs from item count"));
            }
            Ok(r)
        })
        .collect()
}

/// Parses responses, validating ranges per line.
pub fn read_responses<R: BufRead>(reader: R, origin: &str) -> Result<Vec<(usize, JudgeResponse)>> {
    let resps: Vec<(usize, JudgeResponse)> = read_exchange(reader, RESPONSE_FORMAT, &["group_id", "p_purchase", "chosen_item"], origin)?;
    for (line, r) in &resps {
        if !(0.0..=1.0).contains(&r.p_purchase) {
            return Err(Error::Parse {
                what: origin.to_string(),
                line: *line,
                message: format!("p_purchase {} outside [0, 1]", r.p_purchase),
            });
        }
    }
    Ok(resps)
}

/// Answers a request file with the rule-based behavioral user.
pub fn simulate_responses<R: BufRead>(requests: R, user: &BehavioralUser) -> Result<String> {
    let reqs = read_requests(requests, "judge requests")?;
    let mut out = header(RESPONSE_FORMAT, reqs.len());
    out.push('\n');
    for r in reqs {
        let rels: Vec<f64> = r.items.iter().map(|i| i.rel).collect();
        let brands: Vec<u32> = r.items.iter().map(|i| i.brand).collect();
        let colors: Vec<u32> = r.items.iter().map(|i| i.color).collect();
        let perm = HardPermutation::new(r.order)?;
        let resp = JudgeResponse {
            group_id: r.group_id,
            p_purchase: user.purchase_prob(&rels, &brands, &colors, &perm)?.p_purchase,
            chosen_item: user.choose_item(&rels, &perm)?,
        };
        out.push_str(&serde_json::to_string(&resp)?);
        out.push('\n');
    }
    Ok(out)
}

/// Aggregates judge responses like the behavioral protocol: responses give
/// the method row, the behavioral user `cfg` scores the logged lists that
/// define cutoff membership and the reference row.
pub fn import_responses<R: BufRead>(responses: R, origin: &str, ds: &Dataset, method: &str, cfg: &BehavioralUserConfig, cutoffs: &[f64]) -> Result<(MetricsReport, ImportStats)> {
    check_cutoffs(cutoffs)?;
    let resps = read_responses(responses, origin)?;
    let index: BTreeMap<u64, usize> = ds.groups.iter().enumerate().map(|(i, g)| (g.group_id, i)).collect();
    let mut stats = ImportStats {
        received: resps.len(),
        ..Default::default()
    };
    let mut by_group: Vec<Option<f64>> = vec![None; ds.len()];
    for (line, r) in resps {
        let Some(&i) = index.get(&r.group_id) else {
            stats.unknown += 1;
            continue;
        };
        if r.chosen_item >= ds.groups[i].len() {
            return Err(Error::Parse {
                what: origin.to_string(),
                line,
                message: format!("chosen item {} out of range", r.chosen_item),
            });
        }
        if by_group[i].replace(r.p_purchase).is_some() {
            stats.duplicates += 1;
        }
    }
    stats.missing = by_group.iter().filter(|v| v.is_none()).count();
    if stats.duplicates > 0 {
        log::warn!("{origin}: {} duplicate group ids, later lines kept", stats.duplicates);
    }
    if stats.missing > 0 {
        log::warn!("{origin}: {} groups without a response skipped", stats.missing);
    }
    if stats.unknown > 0 {
        log::warn!("{origin}: {} responses for unknown groups ignored", stats.unknown);
    }
    let user = BehavioralUser::new(cfg.clone())?;
    let logged = logged_purchase(&user, ds)?;
    let (values, cond): (Vec<f64>, Vec<f64>) = by_group.iter().zip(&logged).filter_map(|(v, &l)| v.map(|v| (v, l))).unzip();
    let mut report = MetricsReport::new();
    lau_rows(&mut report, method, &values, &cond, cutoffs);
    lau_rows(&mut report, POLICY_IN_DATA, &logged, &logged, cutoffs);
    Ok((report, stats))
}

