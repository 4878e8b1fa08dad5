use proptest::prelude::*;
use reptile_core::model::encode_with;
use reptile_core::optim::reptile_interpolate;
use reptile_core::stats::{
    curve_smoothness, gradient_alignment, paired_t_test, student_t_two_tailed, Curve, PairedSample,
};
use reptile_core::tape::{maxpool_time, softmax_rows, ComputeTape};
use reptile_core::{GradientSet, ModelConfig, ParameterSet, Tensor};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-10.0f64..10.0, rows * cols)
        .prop_map(move |data| Tensor::matrix(rows, cols, data).unwrap())
}

fn sized_matrix() -> impl Strategy<Value = Tensor> {
    (1usize..7, 1usize..7).prop_flat_map(|(r, c)| matrix(r, c))
}

/// Two parameter sets sharing one random layout.
fn param_pair() -> impl Strategy<Value = (ParameterSet, ParameterSet)> {
    prop::collection::vec((1usize..5, 1usize..5), 1..4).prop_flat_map(|shapes| {
        let n: usize = shapes.iter().map(|(r, c)| r * c).sum();
        (
            prop::collection::vec(-100.0f64..100.0, n),
            prop::collection::vec(-100.0f64..100.0, n),
        )
            .prop_map(move |(a, b)| (build(&shapes, &a), build(&shapes, &b)))
    })
}

fn build(shapes: &[(usize, usize)], values: &[f64]) -> ParameterSet {
    let mut params = ParameterSet::new();
    let mut at = 0;
    for (i, &(r, c)) in shapes.iter().enumerate() {
        let data = values[at..at + r * c].to_vec();
        params
            .insert(format!("p{i}"), Tensor::matrix(r, c, data).unwrap())
            .unwrap();
        at += r * c;
    }
    params
}

fn gradient_of(values: &[f64]) -> GradientSet {
    let mut g = GradientSet::new();
    g.insert("g", Tensor::vector(values.to_vec()).unwrap())
        .unwrap();
    g
}

proptest! {
    #[test]
    fn matmul_shapes_compose(
        (n, k, m) in (1usize..6, 1usize..6, 1usize..6),
        extra in 1usize..6,
    ) {
        let a = Tensor::zeros(&[n, k]);
        let b = Tensor::zeros(&[k, m]);
        let c = a.matmul(&b).unwrap();
        prop_assert_eq!(c.shape(), &[n, m]);
        let bad = Tensor::zeros(&[k + extra, m]);
        prop_assert!(a.matmul(&bad).is_err());
    }

    #[test]
    fn elementwise_ops_keep_shape(a in sized_matrix(), c in -3.0f64..3.0) {
        let mut tape = ComputeTape::new();
        let x = tape.constant(a.clone()).unwrap();
        let y = tape.constant(a.map(|v| v * 0.5)).unwrap();
        for v in [
            tape.add(x, y).unwrap(),
            tape.sub(x, y).unwrap(),
            tape.hadamard(x, y).unwrap(),
            tape.scale(x, c).unwrap(),
            tape.sigmoid(x).unwrap(),
            tape.tanh(x).unwrap(),
            tape.relu(x).unwrap(),
        ] {
            prop_assert_eq!(tape.value(v).shape(), a.shape());
        }
        let t = a.transpose().unwrap();
        prop_assert_eq!(t.shape(), &[a.shape()[1], a.shape()[0]]);
        prop_assert_eq!(t.transpose().unwrap(), a);
    }

    #[test]
    fn maxpool_ignores_row_order(a in sized_matrix(), key in any::<u64>()) {
        let (rows, _) = a.dims2().unwrap();
        let mut order: Vec<usize> = (0..rows).collect();
        order.sort_by_key(|&i| (i as u64).wrapping_mul(key | 1).rotate_left(17));
        let permuted: Vec<Vec<f64>> = order.iter().map(|&i| a.row(i).unwrap().to_vec()).collect();
        let permuted = Tensor::from_rows(&permuted).unwrap();
        prop_assert_eq!(maxpool_time(&permuted).unwrap(), maxpool_time(&a).unwrap());
    }

    #[test]
    fn identity_recurrence_encodes_order_free(a in sized_matrix()) {
        let (rows, cols) = a.dims2().unwrap();
        let mut reversed: Vec<Vec<f64>> = (0..rows).map(|i| a.row(i).unwrap().to_vec()).collect();
        reversed.reverse();
        let reversed = Tensor::from_rows(&reversed).unwrap();
        let embed = |x: &Tensor| {
            let mut tape = ComputeTape::new();
            let f = tape.constant(x.clone()).unwrap();
            let e = encode_with(&mut tape, f, &[cols, cols], |_, _, x_t, _| Ok(x_t)).unwrap();
            tape.value(e).clone()
        };
        prop_assert_eq!(embed(&a), embed(&reversed));
    }

    #[test]
    fn softmax_rows_sum_to_one(a in sized_matrix(), shift in -500.0f64..500.0) {
        let p = softmax_rows(&a.map(|v| v * 10.0 + shift)).unwrap();
        let (rows, _) = p.dims2().unwrap();
        for r in 0..rows {
            let row = p.row(r).unwrap();
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn flatten_roundtrip((a, _) in param_pair()) {
        prop_assert_eq!(a.unflatten(&a.flatten()).unwrap(), a.clone());
        let model = ModelConfig::toy(3, 2);
        let zeros = model.zero_params();
        let flat: Vec<f64> = (0..zeros.num_scalars()).map(|i| i as f64).collect();
        prop_assert_eq!(zeros.unflatten(&flat).unwrap().flatten(), flat);
    }

    #[test]
    fn interpolation_algebra((theta, prime) in param_pair(), alpha in 0.0f64..=1.0) {
        let out = reptile_interpolate(&theta, &prime, alpha).unwrap();
        let (t, p, o) = (theta.flatten(), prime.flatten(), out.flatten());
        let before = t.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let after = o.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        for i in 0..t.len() {
            prop_assert_eq!(o[i].to_bits(), (t[i] + alpha * (p[i] - t[i])).to_bits());
            let mixed = (1.0 - alpha) * t[i] + alpha * p[i];
            prop_assert!((o[i] - mixed).abs() <= 4.0 * f64::EPSILON * t[i].abs().max(p[i].abs()));
        }
        prop_assert!((after - (1.0 - alpha) * before).abs() <= 1e-12 * before.max(1.0));
    }

    #[test]
    fn alignment_ignores_positive_scaling(
        raw in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 2..6),
        scales in prop::collection::vec(0.01f64..100.0, 6),
    ) {
        prop_assume!(raw.iter().all(|g| g.iter().any(|v| v.abs() > 1e-3)));
        let plain: Vec<GradientSet> = raw.iter().map(|g| gradient_of(g)).collect();
        let scaled: Vec<GradientSet> = raw
            .iter()
            .zip(&scales)
            .map(|(g, c)| gradient_of(&g.iter().map(|v| v * c).collect::<Vec<_>>()))
            .collect();
        let a = gradient_alignment(&plain).unwrap();
        let b = gradient_alignment(&scaled).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn smoothness_translation_and_scale(
        values in prop::collection::vec(0.0f64..1.0, 3..30),
        shift in -10.0f64..10.0,
        scale in -4.0f64..4.0,
    ) {
        let base = curve_smoothness(&Curve::from_values(&values)).unwrap();
        let moved: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        let moved = curve_smoothness(&Curve::from_values(&moved)).unwrap();
        let scaled = curve_smoothness(&Curve::from_values(&scaled)).unwrap();
        prop_assert!((moved - base).abs() <= 1e-9 * base.max(1e-3));
        prop_assert!((scaled - scale * scale * base).abs() <= 1e-9 * (scale * scale * base).max(1e-6));
    }

    #[test]
    fn t_test_is_antisymmetric(
        pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..30),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let forward = paired_t_test(&PairedSample::new(a.clone(), b.clone()).unwrap());
        let backward = paired_t_test(&PairedSample::new(b, a).unwrap());
        if let (Ok(f), Ok(r)) = (forward, backward) {
            prop_assert_eq!(f.t, -r.t);
            prop_assert!((f.p - r.p).abs() < 1e-12);
        }
    }
}

#[test]
fn p_falls_as_t_grows() {
    for df in [1.0, 2.0, 4.0, 9.0, 29.0, 200.0] {
        let ps: Vec<f64> = (0..=400)
            .map(|i| student_t_two_tailed(i as f64 * 0.05, df).unwrap())
            .collect();
        assert_eq!(ps[0], 1.0);
        assert!(ps.windows(2).all(|w| w[1] <= w[0]), "df {df}");
        assert!(ps.windows(2).any(|w| w[1] < w[0]));
        let negative = student_t_two_tailed(-1.7, df).unwrap();
        assert_eq!(negative, student_t_two_tailed(1.7, df).unwrap());
    }
}
