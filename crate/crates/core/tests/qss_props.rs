mod common;

use common::{grad_check, weighted_sum, weights};
use proptest::prelude::*;
use qnn::qss::{
    entropy, hard_select, soft_quantize, soft_quantize_on_tape, GumbelNoise, SchemeSearchState,
    TemperatureSchedule, TAU_MIN,
};
use qnn::schemes::{QuantConfig, SchemeId};
use qnn::tensor::{softmax_slice, Tensor};

fn state(theta: Vec<f32>) -> SchemeSearchState {
    let cands = [SchemeId::FixedQ, SchemeId::ZoomQ, SchemeId::ClipQ, SchemeId::PotQ]
        .iter()
        .map(|&s| QuantConfig::new(s, 3))
        .collect();
    SchemeSearchState::with_theta(cands, theta).unwrap()
}

fn theta4() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-3.0f32..3.0, 4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn probabilities_sum_to_one(theta in theta4(), seed in any::<u64>(), tau in 0.01f32..50.0) {
        let s = state(theta);
        let p = s.probabilities(&GumbelNoise::draw(4, seed), tau).unwrap();
        let total: f64 = p.iter().map(|&x| x as f64).sum();
        prop_assert!((total - 1.0).abs() < 1e-5);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn soft_output_lies_in_candidate_hull(
        d in prop::collection::vec(-3.0f32..3.0, 1..20),
        theta in theta4(),
        seed in any::<u64>(),
        tau in 0.01f32..20.0,
    ) {
        let s = state(theta);
        let d = Tensor::from_vec(d).unwrap();
        let out = soft_quantize(&d, &s, &GumbelNoise::draw(4, seed), tau).unwrap();
        let qs: Vec<Tensor> = s.candidates().iter().map(|c| c.apply(&d).unwrap()).collect();
        for (i, &y) in out.data().iter().enumerate() {
            let lo = qs.iter().map(|q| q.data()[i]).fold(f32::INFINITY, f32::min);
            let hi = qs.iter().map(|q| q.data()[i]).fold(f32::NEG_INFINITY, f32::max);
            let slack = 1e-5 * (1.0 + lo.abs().max(hi.abs()));
            prop_assert!(y >= lo - slack && y <= hi + slack, "{y} not in [{lo}, {hi}]");
        }
    }

    #[test]
    fn lowering_temperature_never_raises_entropy(
        theta in theta4(),
        seed in any::<u64>(),
        taus in prop::collection::vec(0.01f32..20.0, 2..8),
    ) {
        let s = state(theta);
        let g = GumbelNoise::draw(4, seed);
        let mut taus = taus;
        taus.sort_by(|a, b| b.total_cmp(a));
        let hs: Vec<f64> = taus.iter().map(|&t| entropy(&s.probabilities(&g, t).unwrap())).collect();
        for w in hs.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-6, "{:?}", hs);
        }
    }

    #[test]
    fn hard_select_ignores_constant_shifts(theta in theta4(), c in -100.0f32..100.0, seed in any::<u64>()) {
        let shifted: Vec<f32> = theta.iter().map(|t| t + c).collect();
        // Rounding of `θ + c` can merge near-ties, so only clear winners are compared.
        let gap = |v: &[f32]| {
            let mut v = v.to_vec();
            v.sort_by(f32::total_cmp);
            v[3] - v[2]
        };
        let k = hard_select(&theta, None);
        if gap(&theta) > 1e-3 {
            prop_assert_eq!(k, hard_select(&shifted, None));
        }
        let g = GumbelNoise::draw(4, seed);
        let scores: Vec<f32> = theta.iter().zip(&g.g).map(|(t, n)| t + n).collect();
        if gap(&scores) > 1e-3 {
            prop_assert_eq!(hard_select(&theta, Some(&g)), hard_select(&shifted, Some(&g)));
        }
        let p = softmax_slice(&theta);
        let best = (0..4).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        prop_assert_eq!(k, best);
    }

    #[test]
    fn same_seed_same_noise(seed in any::<u64>(), n in 1usize..10) {
        prop_assert_eq!(GumbelNoise::draw(n, seed), GumbelNoise::draw(n, seed));
    }

    #[test]
    fn schedule_decreases_strictly(tau0 in 0.5f32..20.0, total in 1u32..60, power in 0.25f32..3.0) {
        let s = TemperatureSchedule::new(tau0, total, power).unwrap();
        let taus: Vec<f32> = (1..=total).map(|e| s.at(e).unwrap()).collect();
        prop_assert_eq!(*taus.last().unwrap(), TAU_MIN);
        prop_assert!(taus.iter().all(|&t| t >= TAU_MIN && t < tau0));
        for w in taus.windows(2) {
            prop_assert!(w[1] < w[0] || w[1] == TAU_MIN, "{:?}", taus);
        }
    }

    #[test]
    fn theta_gradient_matches_finite_differences(
        theta in theta4(),
        d in prop::collection::vec(-2.0f32..2.0, 6),
        seed in any::<u64>(),
        tau in 0.5f32..5.0,
    ) {
        let s = state(theta.clone());
        let g = GumbelNoise::draw(4, seed);
        let w = weights(6);
        let data = Tensor::from_vec(d).unwrap();
        let err = grad_check(&[Tensor::from_vec(theta).unwrap()], 1e-3, |t, v| {
            let x = t.leaf(data.clone());
            let y = soft_quantize_on_tape(t, x, &s, v[0], &g, tau)?;
            weighted_sum(t, y, &w)
        });
        prop_assert!(err < 1e-3, "{err}");
    }
}

#[test]
fn single_candidate_search_is_plain_quantization() {
    let cfg = QuantConfig::new(SchemeId::ZoomQ, 3);
    let s = SchemeSearchState::new(vec![cfg]).unwrap();
    let d = Tensor::from_vec(vec![0.1, -0.4, 2.0]).unwrap();
    let out = soft_quantize(&d, &s, &GumbelNoise::draw(1, 3), 0.7).unwrap();
    assert_eq!(out, cfg.apply(&d).unwrap());
    assert_eq!(hard_select(s.theta.value().data(), None), 0);
}
