//! Policy-gradient checks against independent oracles: central finite
//! differences of the forward log-likelihood, the score-function identity,
//! and likelihood improvement after one ascent step.

use fairnas::controller::{ControllerState, EpisodeRecord, Hyper};
use fairnas::search_space::{BlockType, SearchSpaceConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn space(n: usize, allow_skip: bool) -> SearchSpaceConfig {
    SearchSpaceConfig {
        num_searchable_blocks: n,
        block_types: BlockType::ALL.to_vec(),
        kernel_choices: vec![3, 5, 7],
        ch2_choices: vec![8, 16],
        ch3_choices: vec![8, 16, 24],
        allow_skip,
        header_out_channels: 8,
        input_resolution: 16,
    }
}

fn tiny(batch_size: usize, discount: f64) -> Hyper {
    Hyper {
        hidden_dim: 4,
        embedding_dim: 3,
        batch_size,
        discount,
        ..Hyper::default()
    }
}

/// The surrogate objective whose gradient the estimator returns, evaluated
/// with forward passes only.
fn objective(state: &ControllerState, batch: &[EpisodeRecord]) -> f64 {
    let steps = state.steps();
    let gamma = state.hyper.discount;
    batch
        .iter()
        .map(|ep| {
            let lp = state.log_probs(&ep.actions).unwrap();
            let adv = ep.reward - state.baseline;
            lp.iter()
                .enumerate()
                .map(|(t, l)| gamma.powi((steps - 1 - t) as i32) * l * adv)
                .sum::<f64>()
        })
        .sum::<f64>()
        / batch.len() as f64
}

fn max_relative_error(state: &ControllerState, batch: &[EpisodeRecord]) -> (f64, String) {
    let analytic = state.policy_gradient(batch).unwrap();
    let h = 1e-5;
    let mut worst = (0.0, String::new());
    for (name, range) in state.layout.tensors() {
        for i in range {
            let mut plus = state.clone();
            plus.params[i] += h;
            let mut minus = state.clone();
            minus.params[i] -= h;
            let numeric = (objective(&plus, batch) - objective(&minus, batch)) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
            let rel = (analytic[i] - numeric).abs() / denom;
            if rel > worst.0 {
                worst = (
                    rel,
                    format!("{name}[{i}] analytic {} numeric {numeric}", analytic[i]),
                );
            }
        }
    }
    worst
}

fn sampled_batch(
    state: &ControllerState,
    cfg: &SearchSpaceConfig,
    rewards: &[f64],
    seed: u64,
) -> Vec<EpisodeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rewards
        .iter()
        .map(|&r| {
            let (_, mut ep) = state.sample(cfg, &mut rng).unwrap();
            ep.reward = r;
            ep
        })
        .collect()
}

#[test]
fn finite_differences_single_block() {
    for discount in [1.0, 0.9] {
        let cfg = space(1, true);
        let mut state = ControllerState::init(&cfg, tiny(3, discount), 17).unwrap();
        // larger weights make the recurrent path matter
        state.params.iter_mut().for_each(|p| *p *= 10.0);
        state.baseline = 0.2;
        let batch = sampled_batch(&state, &cfg, &[0.9, -1.0, 0.35], 5);
        let (err, worst) = max_relative_error(&state, &batch);
        assert!(err < 1e-4, "gamma {discount}: {err} at {worst}");
    }
}

#[test]
fn finite_differences_with_skipped_blocks() {
    let cfg = space(3, true);
    let mut state = ControllerState::init(&cfg, tiny(4, 0.95), 3).unwrap();
    state.params.iter_mut().for_each(|p| *p *= 10.0);
    let batch = sampled_batch(&state, &cfg, &[0.7, 0.1, -1.0, 0.5], 21);
    assert!(batch.iter().any(|e| e.actions.chunks(5).any(|b| b[0] == 0)));
    let (err, worst) = max_relative_error(&state, &batch);
    assert!(err < 1e-4, "{err} at {worst}");
}

#[test]
fn score_function_has_zero_mean() {
    // skip is disabled so that no all-skip draw is rejected and the
    // sampling distribution is exactly the policy
    let cfg = space(1, false);
    let mut state = ControllerState::init(&cfg, tiny(1, 1.0), 9).unwrap();
    state.params.iter_mut().for_each(|p| *p *= 8.0);
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let dim = state.layout.len;
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    for _ in 0..n {
        let (_, mut ep) = state.sample(&cfg, &mut rng).unwrap();
        ep.reward = 1.0;
        let g = state.policy_gradient(&[ep]).unwrap();
        for i in 0..dim {
            sum[i] += g[i];
            sum_sq[i] += g[i] * g[i];
        }
    }
    let nf = n as f64;
    let mean_norm_sq: f64 = sum.iter().map(|s| (s / nf).powi(2)).sum();
    let var_of_mean: f64 = sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, q)| (q / nf - (s / nf).powi(2)) / nf)
        .sum();
    let ratio = mean_norm_sq.sqrt() / var_of_mean.sqrt();
    assert!(ratio < 3.0, "mean gradient norm is {ratio} standard errors");
}

#[test]
fn ascent_raises_episode_likelihood() {
    let cfg = space(2, true);
    let mut state = ControllerState::init(
        &cfg,
        Hyper {
            learning_rate: 1e-2,
            ..tiny(1, 1.0)
        },
        4,
    )
    .unwrap();
    let batch = sampled_batch(&state, &cfg, &[0.8], 1);
    let before: f64 = state.log_probs(&batch[0].actions).unwrap().iter().sum();
    state.update(&batch).unwrap();
    let after: f64 = state.log_probs(&batch[0].actions).unwrap().iter().sum();
    assert!(after > before, "{before} -> {after}");
}

#[test]
fn updates_are_deterministic() {
    let cfg = space(2, true);
    let run = || {
        let mut state = ControllerState::init(&cfg, tiny(2, 0.99), 12).unwrap();
        for round in 0..5 {
            let batch = sampled_batch(&state, &cfg, &[0.3, 0.6], round);
            state.update(&batch).unwrap();
        }
        state
    };
    assert_eq!(run(), run());
}
