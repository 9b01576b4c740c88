//! Finite-difference audit of every differentiable component, shared by the
//! `gradcheck` command and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, GradCheckOptions, GradCheckReport, Tape, Var};
use crate::baselines::{pl_log_prob_var, relaxed_ndcg_loss, urcc_surrogate, PermutationPair};
use crate::error::Result;
use crate::models::{EncoderConfig, ModelConfig, RankerModel, RewardModel};
use crate::softsort::{hard_permutation, soft_position_embed, softsort};
use crate::tensor::Tensor;
use crate::training::{reward_loss, stage2_objective, LossKind, TrainConfig};

/// Items per group in the model-level checks.
pub const GROUP_LEN: usize = 4;

/// Worst relative error of one component over all trials.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    /// True if any trial produced a NaN gradient on either side.
    pub nan: bool,
    pub trials: usize,
}

impl ComponentCheck {
    pub fn passed(&self, tol: f64) -> bool {
        !self.nan && self.max_rel_error < tol
    }
}

pub(crate) type Primitive = for<'a> fn(&mut Tape<'a>, &[Var]) -> Result<Var>;

pub(crate) fn uniform<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches data")
}

/// Weighted sum so every output coordinate carries a distinct adjoint.
pub(crate) fn weighted_sum(tape: &mut Tape<'_>, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(v).shape().to_vec();
    let w = tape.constant(uniform(&mut rng, &shape, -1.0, 1.0));
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

/// Every tape primitive wrapped into a scalar function of its inputs, with
/// input shapes and the sampling range for those inputs.
pub(crate) fn primitive_cases() -> Vec<(&'static str, Vec<Vec<usize>>, (f64, f64), Primitive)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], (-2.0, 2.0), |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, 1)
        }),
        ("transpose", vec![vec![3, 2]], (-2.0, 2.0), |t, v| {
            let y = t.transpose(v[0])?;
            weighted_sum(t, y, 2)
        }),
        ("add", vec![vec![2, 3], vec![2, 3]], (-2.0, 2.0), |t, v| {
            let y = t.add(v[0], v[1])?;
            weighted_sum(t, y, 3)
        }),
        ("sub", vec![vec![5], vec![5]], (-2.0, 2.0), |t, v| {
            let y = t.sub(v[0], v[1])?;
            weighted_sum(t, y, 4)
        }),
        ("mul", vec![vec![2, 3], vec![2, 3]], (-2.0, 2.0), |t, v| {
            let y = t.mul(v[0], v[1])?;
            weighted_sum(t, y, 5)
        }),
        ("add_row", vec![vec![3, 4], vec![4]], (-2.0, 2.0), |t, v| {
            let y = t.add_row(v[0], v[1])?;
            weighted_sum(t, y, 6)
        }),
        ("mul_row", vec![vec![3, 4], vec![4]], (-2.0, 2.0), |t, v| {
            let y = t.mul_row(v[0], v[1])?;
            weighted_sum(t, y, 7)
        }),
        ("scale", vec![vec![4]], (-2.0, 2.0), |t, v| {
            let y = t.scale(v[0], -1.7);
            weighted_sum(t, y, 8)
        }),
        ("concat", vec![vec![2, 3], vec![2, 2]], (-2.0, 2.0), |t, v| {
            let y = t.concat(&[v[0], v[1]])?;
            weighted_sum(t, y, 9)
        }),
        ("vstack", vec![vec![1, 3], vec![2, 3], vec![3]], (-2.0, 2.0), |t, v| {
            let y = t.vstack(&[v[0], v[1], v[2]])?;
            weighted_sum(t, y, 21)
        }),
        ("sum", vec![vec![3, 3]], (-2.0, 2.0), |t, v| {
            let sq = t.mul(v[0], v[0])?;
            Ok(t.sum(sq))
        }),
        ("mean", vec![vec![3, 3]], (-2.0, 2.0), |t, v| {
            let sq = t.mul(v[0], v[0])?;
            Ok(t.mean(sq))
        }),
        ("exp", vec![vec![5]], (-2.0, 2.0), |t, v| {
            let y = t.exp(v[0]);
            weighted_sum(t, y, 10)
        }),
        ("log", vec![vec![5]], (0.1, 2.0), |t, v| {
            let y = t.log(v[0])?;
            weighted_sum(t, y, 11)
        }),
        ("abs", vec![vec![6]], (-2.0, 2.0), |t, v| {
            let y = t.abs(v[0]);
            weighted_sum(t, y, 12)
        }),
        ("sigmoid", vec![vec![5]], (-2.0, 2.0), |t, v| {
            let y = t.sigmoid(v[0]);
            weighted_sum(t, y, 13)
        }),
        ("tanh", vec![vec![5]], (-2.0, 2.0), |t, v| {
            let y = t.tanh(v[0]);
            weighted_sum(t, y, 14)
        }),
        ("softplus", vec![vec![5]], (-2.0, 2.0), |t, v| {
            let y = t.softplus(v[0]);
            weighted_sum(t, y, 15)
        }),
        ("softmax_rows", vec![vec![3, 4]], (-2.0, 2.0), |t, v| {
            let y = t.softmax_rows(v[0]);
            weighted_sum(t, y, 16)
        }),
        ("layer_norm", vec![vec![3, 5]], (-2.0, 2.0), |t, v| {
            let y = t.layer_norm(v[0]);
            weighted_sum(t, y, 17)
        }),
        ("select_rows", vec![vec![4, 3]], (-2.0, 2.0), |t, v| {
            let y = t.select_rows(v[0], &[2, 0, 2])?;
            weighted_sum(t, y, 18)
        }),
        ("gather", vec![vec![6]], (-2.0, 2.0), |t, v| {
            let y = t.gather(v[0], &[5, 1, 1, 3])?;
            weighted_sum(t, y, 19)
        }),
        ("reshape", vec![vec![6]], (-2.0, 2.0), |t, v| {
            let y = t.reshape(v[0], &[2, 3])?;
            weighted_sum(t, y, 20)
        }),
        ("add_scalar", vec![vec![3]], (-2.0, 2.0), |t, v| {
            let y = t.add_scalar(v[0], 0.25);
            let y = t.mul(y, y)?;
            Ok(t.sum(y))
        }),
    ]
}

fn tiny_models(seed: u64) -> Result<(RankerModel, RewardModel, TrainConfig)> {
    let encoder = EncoderConfig {
        depth: 1,
        width: 8,
        heads: 2,
        ffn_mult: 2,
        use_cls: true,
    };
    let cfg = ModelConfig {
        query_dim: 3,
        item_dim: 3,
        max_len: GROUP_LEN,
        encoder: encoder.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranker = RankerModel::new(&cfg, &mut rng)?;
    let reward = RewardModel::new(&cfg, &mut rng)?;
    let train = TrainConfig {
        lambda: 0.5,
        encoder,
        ..Default::default()
    };
    Ok((ranker, reward, train))
}

struct Tally(Vec<ComponentCheck>);

impl Tally {
    fn add(&mut self, name: &'static str, r: &GradCheckReport) {
        let entry = match self.0.iter_mut().find(|c| c.name == name) {
            Some(e) => e,
            None => {
                self.0.push(ComponentCheck {
                    name,
                    max_rel_error: 0.0,
                    nan: false,
                    trials: 0,
                });
                self.0.last_mut().expect("just pushed")
            }
        };
        entry.max_rel_error = entry.max_rel_error.max(r.max_rel_error);
        entry.nan |= r.nan_at.is_some();
        entry.trials += 1;
    }
}

/// Runs `trials` random instances of every primitive, the relaxations, the
/// surrogate losses, both models and the full ranker objective on groups of
/// [`GROUP_LEN`] items.
pub fn gradient_suite(seed: u64, trials: usize) -> Result<Vec<ComponentCheck>> {
    let mut tally = Tally(Vec::new());
    let opts = GradCheckOptions::default();
    for trial in 0..trials as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ crate::rng::mix64(trial));
        for (name, shapes, (lo, hi), f) in primitive_cases() {
            let inputs: Vec<Tensor> = shapes.iter().map(|s| uniform(&mut rng, s, lo, hi)).collect();
            let o = GradCheckOptions {
                kink_margin: (name == "abs").then_some(1e-3),
                ..opts
            };
            tally.add(name, &grad_check(f, &inputs, o)?);
        }

        let n = GROUP_LEN;
        let scores = uniform(&mut rng, &[n], -2.0, 2.0);
        let positions = uniform(&mut rng, &[n, 3], -1.0, 1.0);
        let r = grad_check(
            |t, v| {
                let pi = softsort(t, v[0], 1.0)?;
                weighted_sum(t, pi, 30)
            },
            std::slice::from_ref(&scores),
            opts,
        )?;
        tally.add("softsort", &r);
        let r = grad_check(
            |t, v| {
                let pi = softsort(t, v[0], 0.5)?;
                let e = soft_position_embed(t, pi, v[1])?;
                weighted_sum(t, e, 31)
            },
            &[scores.clone(), positions],
            opts,
        )?;
        tally.add("soft_position_embed", &r);

        let gains: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let r = grad_check(|t, v| relaxed_ndcg_loss(t, v[0], &gains, 1.0), std::slice::from_ref(&scores), opts)?;
        tally.add("relaxed_ndcg_loss", &r);

        let perm = hard_permutation(&uniform(&mut rng, &[n], 0.0, 1.0).into_data());
        let r = grad_check(|t, v| pl_log_prob_var(t, v[0], &perm), std::slice::from_ref(&scores), opts)?;
        tally.add("pl_log_prob", &r);

        let pair = PermutationPair::new(perm.clone(), 0.7, perm.swapped(0, n - 1), 0.4)?;
        let r = grad_check(|t, v| urcc_surrogate(t, v[0], &pair), std::slice::from_ref(&scores), opts)?;
        tally.add("urcc_surrogate", &r);

        let z = Tensor::scalar(rng.random_range(-3.0..3.0));
        let y = rng.random_range(0.0..1.0);
        for (name, kind) in [("reward_loss_ce", LossKind::CrossEntropy), ("reward_loss_mse", LossKind::SquaredError)] {
            let r = grad_check(|t, v| Ok(reward_loss(t, v[0], y, kind)), std::slice::from_ref(&z), opts)?;
            tally.add(name, &r);
        }

        let (ranker, reward, train) = tiny_models(rng.random())?;
        let query = uniform(&mut rng, &[3], -1.0, 1.0);
        let items = uniform(&mut rng, &[n, 3], -1.0, 1.0);
        let ranker_params: Vec<Tensor> = ranker.params().tensors().cloned().collect();
        let reward_params: Vec<Tensor> = reward.params().tensors().cloned().collect();

        let r = grad_check(
            |t, v| {
                let (q, it) = (t.constant(query.clone()), t.constant(items.clone()));
                let s = ranker.forward(t, v, q, it)?;
                weighted_sum(t, s, 32)
            },
            &ranker_params,
            opts,
        )?;
        tally.add("ranker_forward", &r);
        let r = grad_check(
            |t, v| {
                let (q, it) = (t.constant(query.clone()), t.constant(items.clone()));
                let rows = reward.hard_position_rows(t, v, &perm)?;
                reward.forward(t, v, q, it, rows)
            },
            &reward_params,
            opts,
        )?;
        tally.add("reward_forward", &r);
        let label = rng.random_range(0.0..1.0);
        let g_logged = rng.random_range(0.0..1.0);
        let r = grad_check(
            |t, v| {
                let (q, it) = (t.constant(query.clone()), t.constant(items.clone()));
                Ok(stage2_objective(t, &ranker, v, &reward, q, it, label, g_logged, &train)?.objective)
            },
            &ranker_params,
            opts,
        )?;
        tally.add("stage2_objective", &r);
    }
    Ok(tally.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_covers_every_component_and_passes() {
        let checks = gradient_suite(3, 2).unwrap();
        assert_eq!(checks.len(), primitive_cases().len() + 10);
        for c in &checks {
            assert_eq!(c.trials, 2);
            assert!(c.passed(1e-4), "{c:?}");
        }
    }
}
