mod common;

use logit_uq::analysis::{normalize_per_model_metric, operating_points, Comparison, Constraint, MetricCell};
use logit_uq::decoder::Question;
use logit_uq::embedding::prism_pool;
use logit_uq::metrics::{
    align_min_length, cosine_similarity_pair, js_divergence_pair, kl_divergence_pair, mae_pair,
    pairwise_metrics, softmax_with_temperature, MetricId, RunGroup,
};
use logit_uq::Tensor;
use proptest::collection::vec;
use proptest::prelude::*;

fn tensor_pair() -> impl Strategy<Value = (Tensor, Tensor)> {
    (1usize..=16, 2usize..=64).prop_flat_map(|(steps, vocab)| {
        let n = steps * vocab;
        (vec(-10.0f64..10.0, n), vec(-10.0f64..10.0, n)).prop_map(move |(a, b)| {
            (
                Tensor::new(vocab, a, vec![0; steps]).unwrap(),
                Tensor::new(vocab, b, vec![0; steps]).unwrap(),
            )
        })
    })
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.rows().map(<[f64]>::to_vec).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn metric_ranges((a, b) in tensor_pair(), t in 0.05f64..2.0) {
        let js = js_divergence_pair(&a, &b, t).unwrap();
        let kl = kl_divergence_pair(&a, &b, t).unwrap();
        let cs = cosine_similarity_pair(&a, &b).unwrap();
        prop_assert!((0.0..=std::f64::consts::LN_2 + 1e-9).contains(&js));
        prop_assert!(kl >= -1e-9);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&cs));
        prop_assert!(mae_pair(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn symmetric_metrics((a, b) in tensor_pair(), t in 0.05f64..2.0) {
        let d = js_divergence_pair(&a, &b, t).unwrap() - js_divergence_pair(&b, &a, t).unwrap();
        prop_assert!(d.abs() <= 1e-12);
        prop_assert_eq!(cosine_similarity_pair(&a, &b).unwrap(), cosine_similarity_pair(&b, &a).unwrap());
        prop_assert_eq!(mae_pair(&a, &b).unwrap(), mae_pair(&b, &a).unwrap());
    }

    #[test]
    fn self_comparison_is_neutral((a, _) in tensor_pair(), t in 0.05f64..2.0) {
        prop_assert!(kl_divergence_pair(&a, &a, t).unwrap().abs() <= 1e-9);
        prop_assert!(js_divergence_pair(&a, &a, t).unwrap().abs() <= 1e-9);
        prop_assert_eq!(mae_pair(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(cosine_similarity_pair(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn kernels_match_oracles((a, b) in tensor_pair(), t in 0.05f64..2.0) {
        let (ra, rb) = (rows(&a), rows(&b));
        let pa: Vec<Vec<f64>> = ra.iter().map(|r| common::softmax(r, t)).collect();
        let pb: Vec<Vec<f64>> = rb.iter().map(|r| common::softmax(r, t)).collect();
        let js = common::per_step(&pa, &pb, common::js);
        let kl = common::per_step(&pa, &pb, common::kl);
        let cs = common::per_step(&ra, &rb, common::cosine);
        prop_assert!((js_divergence_pair(&a, &b, t).unwrap() - js).abs() <= 1e-9);
        prop_assert!((kl_divergence_pair(&a, &b, t).unwrap() - kl).abs() <= 1e-9);
        prop_assert!((cosine_similarity_pair(&a, &b).unwrap() - cs).abs() <= 1e-12);
    }

    #[test]
    fn cosine_ignores_positive_scale((a, b) in tensor_pair(), k in 0.01f64..100.0) {
        let scaled = Tensor::new(a.vocab_size(), a.values().iter().map(|v| v * k).collect(), a.tokens().to_vec()).unwrap();
        let d = cosine_similarity_pair(&scaled, &b).unwrap() - cosine_similarity_pair(&a, &b).unwrap();
        prop_assert!(d.abs() <= 1e-12);
    }

    #[test]
    fn entropy_grows_with_temperature(z in vec(-10.0f64..10.0, 2..64), t1 in 0.05f64..2.0, dt in 0.0f64..2.0) {
        let h1 = softmax_with_temperature(&z, t1).unwrap().entropy();
        let h2 = softmax_with_temperature(&z, t1 + dt).unwrap().entropy();
        prop_assert!(h2 >= h1 - 1e-9);
    }

    #[test]
    fn low_temperature_approaches_greedy(mut z in vec(-10.0f64..10.0, 2..64), pick in any::<prop::sample::Index>()) {
        let top = pick.index(z.len());
        let max = z.iter().cloned().fold(f64::MIN, f64::max);
        z[top] = max + 0.1;
        let p = softmax_with_temperature(&z, 1e-3).unwrap();
        prop_assert_eq!(p.argmax(), top);
        prop_assert!(p.as_slice()[top] > 1.0 - 1e-9);
    }

    #[test]
    fn alignment_is_idempotent(lengths in vec(0usize..12, 1..8), vocab in 2usize..8) {
        let runs: Vec<Tensor> = lengths
            .iter()
            .map(|&s| Tensor::new(vocab, vec![0.5; s * vocab], vec![0; s]).unwrap())
            .collect();
        let (once, t_min) = align_min_length(&runs).unwrap();
        prop_assert_eq!(t_min, *lengths.iter().min().unwrap());
        prop_assert!(once.iter().all(|r| r.steps() == t_min));
        let (twice, t2) = align_min_length(&once).unwrap();
        prop_assert_eq!(t2, t_min);
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn pair_count_is_n_choose_2(n in 2usize..14, steps in 1usize..4) {
        let runs: Vec<Tensor> = (0..n)
            .map(|i| Tensor::new(3, (0..steps * 3).map(|k| ((i * 7 + k) as f64).sin()).collect(), vec![0; steps]).unwrap())
            .collect();
        let g = pairwise_metrics(&RunGroup { temperature: 0.7, runs }).unwrap();
        for m in MetricId::ALL {
            prop_assert_eq!(g.get(m).pairs.len(), common::binomial2(n));
        }
    }

    #[test]
    fn pooling_is_linear(cls in vec(-5.0f64..5.0, 1..16), rows in 1usize..6, a in -3.0f64..3.0, seed in any::<u64>()) {
        let d = cls.len();
        let patches: Vec<f64> = (0..rows * d).map(|i| ((i as u64 ^ seed) % 97) as f64 / 13.0 - 3.0).collect();
        let base = prism_pool(&cls, &patches).unwrap();
        let scaled_cls: Vec<f64> = cls.iter().map(|v| a * v).collect();
        let scaled_patches: Vec<f64> = patches.iter().map(|v| a * v).collect();
        let scaled = prism_pool(&scaled_cls, &scaled_patches).unwrap();
        prop_assert_eq!(scaled.len(), 2 * d);
        for (s, b) in scaled.iter().zip(&base) {
            prop_assert!((s - a * b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }
}

fn cells_from(values: &[(usize, usize, f64)]) -> Vec<MetricCell> {
    values
        .iter()
        .map(|&(model, step, v)| MetricCell {
            model: format!("m{model}"),
            question: Question::ALL[step % 3],
            temperature: (step / 3) as f64 / 10.0,
            metric: MetricId::Js,
            raw_mean: v,
            raw_std: 0.0,
            normalized_mean: None,
            pair_count: 45,
        })
        .collect()
}

proptest! {
    #[test]
    fn normalization_invariants(raw in vec((0usize..3, -50.0f64..50.0), 2..60)) {
        let values: Vec<(usize, usize, f64)> = raw.iter().enumerate().map(|(i, &(m, v))| (m, i, v)).collect();
        let cells = cells_from(&values);
        let out = normalize_per_model_metric(&cells).unwrap().cells;
        for model in 0..3 {
            let name = format!("m{model}");
            let scope: Vec<(&MetricCell, &MetricCell)> =
                cells.iter().zip(&out).filter(|(c, _)| c.model == name).collect();
            if scope.is_empty() {
                continue;
            }
            let norm: Vec<f64> = scope.iter().map(|(_, o)| o.normalized_mean.unwrap()).collect();
            prop_assert!(norm.iter().all(|v| (0.0..=1.0).contains(v)));
            let distinct = scope.iter().any(|(c, _)| c.raw_mean != scope[0].0.raw_mean);
            if distinct {
                prop_assert_eq!(norm.iter().cloned().fold(f64::MAX, f64::min), 0.0);
                prop_assert_eq!(norm.iter().cloned().fold(f64::MIN, f64::max), 1.0);
            }
            // Order-preserving within the scope.
            for (i, (ci, _)) in scope.iter().enumerate() {
                for (j, (cj, _)) in scope.iter().enumerate() {
                    if ci.raw_mean < cj.raw_mean {
                        prop_assert!(norm[i] <= norm[j]);
                    }
                }
            }
        }
        // Normalizing normalized values is the identity.
        let renorm_input: Vec<MetricCell> = out
            .iter()
            .map(|c| MetricCell { raw_mean: c.normalized_mean.unwrap(), ..c.clone() })
            .collect();
        let again = normalize_per_model_metric(&renorm_input).unwrap().cells;
        for (a, b) in out.iter().zip(&again) {
            let distinct_scope = out.iter().filter(|c| c.model == a.model).any(|c| c.normalized_mean != Some(0.0));
            if distinct_scope {
                prop_assert!((a.normalized_mean.unwrap() - b.normalized_mean.unwrap()).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn tighter_thresholds_never_raise_the_ceiling(
        series in vec(0.0f64..1.0, 11),
        lo in 0.0f64..1.0,
        bump in 0.0f64..0.5,
    ) {
        let cells: Vec<MetricCell> = series
            .iter()
            .enumerate()
            .map(|(i, &v)| MetricCell {
                model: "m".into(),
                question: Question::Q1,
                temperature: i as f64 / 10.0,
                metric: MetricId::Cs,
                raw_mean: v,
                raw_std: 0.0,
                normalized_mean: Some(v),
                pair_count: 45,
            })
            .collect();
        let at = |th: f64| {
            operating_points(&cells, &[Constraint::new(MetricId::Cs, Comparison::Ge, th)]).unwrap()[0]
                .max_safe_temperature
                .unwrap_or(-1.0)
        };
        prop_assert!(at(lo + bump) <= at(lo));
    }
}
