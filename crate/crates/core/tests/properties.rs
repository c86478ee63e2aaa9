use ndarray::Array2;
use proptest::prelude::*;

use cwgan::data::Normalizer;
use cwgan::transport::{exact_w1, PointCloud};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-50.0..50.0f64, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // A rigid shift moves every point by |t|, and no coupling can do better.
    #[test]
    fn w1_of_a_translate_is_the_shift_length(
        (points, shift) in (1usize..8, 1usize..4).prop_flat_map(|(n, d)| {
            (matrix(n, d), prop::collection::vec(-5.0..5.0f64, d))
        })
    ) {
        let a = PointCloud::new(points).unwrap();
        let b = a.translated(&shift);
        let norm = shift.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((exact_w1(&a, &b).unwrap() - norm).abs() <= 1e-9 * (1.0 + norm));
    }

    #[test]
    fn normalizer_round_trips(
        values in (2usize..30, 1usize..5).prop_flat_map(|(n, d)| matrix(n, d)),
        split in 0.1..1.0f64,
    ) {
        let fit_rows = ((values.nrows() as f64 * split).ceil() as usize).max(2);
        let norm = Normalizer::fit(values.view(), 0..fit_rows);
        prop_assume!(norm.is_ok());
        let norm = norm.unwrap();
        let back = norm.invert(norm.apply(values.view()).unwrap().view()).unwrap();
        for (a, b) in values.iter().zip(back.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
