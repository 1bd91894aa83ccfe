use egomind_core::reward::{
    clipped_surrogate, combined_reward, default_thresholds, group_advantages, kl_penalty, mra, RolloutGroup,
};
use proptest::prelude::*;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

proptest! {
    #[test]
    fn advantages_are_standardized(rewards in prop::collection::vec(-5.0f64..5.0, 2..64)) {
        let a = group_advantages(&rewards).unwrap();
        prop_assert!(mean(&a).abs() <= 1e-12);
        if population_std(&rewards) > 1e-6 {
            prop_assert!((population_std(&a) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn advantages_are_affine_invariant(
        rewards in prop::collection::vec(0.0f64..1.0, 2..64),
        scale in 0.01f64..100.0,
        shift in -50.0f64..50.0,
    ) {
        prop_assume!(population_std(&rewards) > 1e-6);
        let base = group_advantages(&rewards).unwrap();
        let moved: Vec<f64> = rewards.iter().map(|r| scale * r + shift).collect();
        for (x, y) in base.iter().zip(group_advantages(&moved).unwrap()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn surrogate_bounds(r in 0.0f64..5.0, a in -10.0f64..10.0, eps in 0.01f64..0.99) {
        let v = clipped_surrogate(r, a, eps);
        prop_assert!(v <= r * a);
        prop_assert!(v <= r.clamp(1.0 - eps, 1.0 + eps) * a);
        if a > 0.0 {
            prop_assert!(v <= (1.0 + eps) * a + 1e-12);
            prop_assert!(v >= r.min(1.0 - eps) * a - 1e-12);
        } else if a < 0.0 {
            prop_assert!(v <= (1.0 - eps) * a + 1e-12);
            prop_assert!(v >= r.max(1.0 + eps) * a - 1e-12);
        }
    }

    #[test]
    fn kl_is_non_negative(pairs in prop::collection::vec((-20.0f64..0.0, -20.0f64..0.0), 1..50)) {
        let (p, q): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let k = kl_penalty(&p, &q).unwrap();
        prop_assert!(k >= 0.0);
        prop_assert_eq!(kl_penalty(&p, &p).unwrap(), 0.0);
        if p != q {
            prop_assert!(k > 0.0);
        }
    }

    #[test]
    fn mra_is_monotone_in_error(truth in -100.0f64..100.0, e1 in 0.0f64..300.0, e2 in 0.0f64..300.0, sign in any::<bool>()) {
        prop_assume!(truth != 0.0);
        let t = default_thresholds();
        let (near, far) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let s = if sign { 1.0 } else { -1.0 };
        prop_assert!(mra(truth + s * near, truth, &t).unwrap() >= mra(truth + s * far, truth, &t).unwrap());
    }

    #[test]
    fn reward_stays_in_unit_interval(f in 0u8..2, acc in 0.0f64..=1.0, w in 0.0f64..=1.0) {
        let r = combined_reward(f as f64, acc, w, 1.0 - w).unwrap();
        prop_assert!((0.0..=1.0 + 1e-15).contains(&r));
    }
}

#[test]
fn rollout_group_jsonl_shape() {
    let line = r#"{"question_id":"q1","epsilon":0.2,"beta":0.0001,"rollouts":[
        {"reward":1.0,"policy_logprobs":[-0.1,-0.2],"old_logprobs":[-0.1,-0.2],"ref_logprobs":[-0.1,-0.3],"response_text":"a"},
        {"reward":0.0,"policy_logprobs":[-0.5],"old_logprobs":[-0.5],"ref_logprobs":[-0.5]}]}"#
        .replace('\n', "");
    let group: RolloutGroup = serde_json::from_str(&line).unwrap();
    group.validate().unwrap();
    assert_eq!(group.rollouts[0].token_count(), 2);
    let mut bad = group.clone();
    bad.rollouts[0].ref_logprobs.pop();
    assert!(bad.validate().is_err());
    let mut positive = group;
    positive.rollouts[1].old_logprobs[0] = 0.5;
    assert!(positive.validate().is_err());
}
