mod common;

use approx::assert_abs_diff_eq;
use common::random_grid;
use dmc::clustering::Modality;
use dmc::encoder::{encode, encoder_backward, extract_patches, EncoderParams, Nonlinearity};
use dmc::grad::relative_error;
use dmc::grid::RawGrid;
use dmc::numerics::Matrix;
use dmc::DmcError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params(rng: &mut ChaCha8Rng, n: usize, patch: (usize, usize), ch: usize, nl: Nonlinearity) -> EncoderParams {
    let mut p = EncoderParams::init(n, patch, ch, nl, rng).unwrap();
    for b in p.bias.iter_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    p
}

fn weighted_sum(grid: &RawGrid, params: &EncoderParams, g: &[Vec<f64>]) -> f64 {
    let f = encode(grid, params, Modality::Visual).unwrap();
    f.vectors()
        .iter()
        .zip(g)
        .map(|(u, w)| u.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

#[test]
fn nonlinearity_values() {
    let c = Nonlinearity::RationalCubic;
    assert_eq!(c.apply(0.0), 0.0);
    assert_abs_diff_eq!(c.apply(1.0), 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(c.apply(-2.0), -8.0 / 9.0, epsilon = 1e-15);
    assert_abs_diff_eq!(c.derivative(1.0), 0.75, epsilon = 1e-15);
    assert_eq!(c.derivative(0.0), 0.0);
    for nl in [Nonlinearity::Tanh, Nonlinearity::RationalCubic, Nonlinearity::Identity] {
        assert_eq!(Nonlinearity::from_name(nl.name()), Some(nl));
        for x in [-3.0, -0.4, 0.7, 2.5] {
            assert_eq!(nl.apply(-x), -nl.apply(x));
            let h = 1e-6;
            let numeric = (nl.apply(x + h) - nl.apply(x - h)) / (2.0 * h);
            assert!(relative_error(nl.derivative(x), numeric) < 1e-8);
        }
    }
    assert_eq!(Nonlinearity::from_name("relu"), None);
}

#[test]
fn zero_grid_and_bias_give_zero_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = EncoderParams::init(8, (4, 4), 3, Nonlinearity::Tanh, &mut rng).unwrap();
    assert!(params.bias.iter().all(|&b| b == 0.0));
    let f = encode(&RawGrid::zeros(8, 8, 3), &params, Modality::Visual).unwrap();
    assert!(f.vectors().iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn unit_patches_with_identity_weight_return_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = random_grid(&mut rng, 3, 5, 2);
    let params = EncoderParams::new((1, 1), 2, Matrix::identity(2), vec![0.0; 2], Nonlinearity::Identity).unwrap();
    let f = encode(&grid, &params, Modality::Visual).unwrap();
    assert_eq!(f.grid_shape(), (3, 5));
    for r in 0..3 {
        for c in 0..5 {
            for ch in 0..2 {
                assert_eq!(f.vectors()[r * 5 + c][ch], grid.get(r, c, ch));
            }
        }
    }
}

#[test]
fn output_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = EncoderParams::init(8, (4, 4), 1, Nonlinearity::RationalCubic, &mut rng).unwrap();
    let grid = random_grid(&mut rng, 32, 32, 1);
    let f = encode(&grid, &params, Modality::Audio).unwrap();
    assert_eq!(f.count(), 64);
    assert_eq!(f.dim(), 8);
    assert_eq!(f.grid_shape(), (8, 8));
    assert_eq!(f.modality(), Modality::Audio);
}

#[test]
fn indivisible_grid_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = EncoderParams::init(4, (4, 4), 1, Nonlinearity::Tanh, &mut rng).unwrap();
    let grid = random_grid(&mut rng, 10, 8, 1);
    assert!(matches!(
        encode(&grid, &params, Modality::Visual),
        Err(DmcError::Shape(_))
    ));
    assert!(matches!(extract_patches(&grid, (3, 4)), Err(DmcError::Shape(_))));
    let rgb = random_grid(&mut rng, 8, 8, 3);
    assert!(matches!(
        encode(&rgb, &params, Modality::Visual),
        Err(DmcError::Shape(_))
    ));
    assert!(EncoderParams::new((2, 2), 1, Matrix::zeros(3, 5), vec![0.0; 3], Nonlinearity::Tanh).is_err());
    assert!(EncoderParams::new((2, 2), 1, Matrix::zeros(3, 4), vec![0.0; 2], Nonlinearity::Tanh).is_err());
}

#[test]
fn patch_order_is_row_col_channel() {
    let values: Vec<f64> = (0..4 * 4 * 2).map(|i| i as f64 / 32.0).collect();
    let grid = RawGrid::new(4, 4, 2, values).unwrap();
    let (patches, shape) = extract_patches(&grid, (2, 2)).unwrap();
    assert_eq!(shape, (2, 2));
    let expected: Vec<f64> = [
        (2, 0, 0),
        (2, 0, 1),
        (2, 1, 0),
        (2, 1, 1),
        (3, 0, 0),
        (3, 0, 1),
        (3, 1, 0),
        (3, 1, 1),
    ]
    .iter()
    .map(|&(r, c, ch)| grid.get(r, c, ch))
    .collect();
    assert_eq!(patches[2], expected);
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = random_params(&mut rng, 6, (2, 2), 3, Nonlinearity::RationalCubic);
    let grid = random_grid(&mut rng, 4, 6, 3);
    let g = encoder_backward(&vec![vec![0.0; 6]; 6], &params, &grid).unwrap();
    assert!(g.weight.data().iter().all(|&v| v == 0.0));
    assert!(g.bias.iter().all(|&v| v == 0.0));
    assert!(matches!(
        encoder_backward(&vec![vec![0.0; 6]; 5], &params, &grid),
        Err(DmcError::Shape(_))
    ));
    assert!(matches!(
        encoder_backward(&vec![vec![0.0; 5]; 6], &params, &grid),
        Err(DmcError::Shape(_))
    ));
}

#[test]
fn backward_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for nl in [Nonlinearity::RationalCubic, Nonlinearity::Tanh] {
        let params = random_params(&mut rng, 5, (2, 3), 2, nl);
        let grid = random_grid(&mut rng, 4, 6, 2);
        let g: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let grads = encoder_backward(&g, &params, &grid).unwrap();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for i in 0..params.weight.data().len() {
            let mut plus = params.clone();
            plus.weight.data_mut()[i] += h;
            let mut minus = params.clone();
            minus.weight.data_mut()[i] -= h;
            let numeric = (weighted_sum(&grid, &plus, &g) - weighted_sum(&grid, &minus, &g)) / (2.0 * h);
            worst = worst.max(relative_error(grads.weight.data()[i], numeric));
        }
        for i in 0..params.bias.len() {
            let mut plus = params.clone();
            plus.bias[i] += h;
            let mut minus = params.clone();
            minus.bias[i] -= h;
            let numeric = (weighted_sum(&grid, &plus, &g) - weighted_sum(&grid, &minus, &g)) / (2.0 * h);
            worst = worst.max(relative_error(grads.bias[i], numeric));
        }
        assert!(worst < 1e-6, "{}: {worst}", nl.name());
    }
}

#[test]
fn linear_encoder_gradient_is_outer_product_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = random_params(&mut rng, 3, (2, 2), 1, Nonlinearity::Identity);
    let grid = random_grid(&mut rng, 4, 4, 1);
    let (patches, _) = extract_patches(&grid, (2, 2)).unwrap();
    let g: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let grads = encoder_backward(&g, &params, &grid).unwrap();
    for r in 0..3 {
        let bias: f64 = g.iter().map(|gi| gi[r]).sum();
        assert_abs_diff_eq!(grads.bias[r], bias, epsilon = 1e-14);
        for c in 0..4 {
            let w: f64 = g.iter().zip(&patches).map(|(gi, x)| gi[r] * x[c]).sum();
            assert_abs_diff_eq!(grads.weight.get(r, c), w, epsilon = 1e-14);
        }
    }
}

#[test]
fn init_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = EncoderParams::init(32, (4, 4), 3, Nonlinearity::RationalCubic, &mut rng).unwrap();
    let a = (1.0f64 / 48.0).sqrt();
    assert_eq!(p.fan_in(), 48);
    assert_eq!(p.feature_dim(), 32);
    assert!(p.weight.data().iter().all(|w| w.abs() <= a));
    let again = EncoderParams::init(
        32,
        (4, 4),
        3,
        Nonlinearity::RationalCubic,
        &mut ChaCha8Rng::seed_from_u64(8),
    )
    .unwrap();
    assert_eq!(p, again);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shift_by_one_patch_shifts_features(seed in any::<u64>(), rows in 1usize..4, cols in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ph, pw, ch) = (2, 3, 2);
        let params = random_params(&mut rng, 4, (ph, pw), ch, Nonlinearity::Tanh);
        let grid = random_grid(&mut rng, rows * ph, cols * pw, ch);
        let (h, w) = (rows * ph, cols * pw);
        let mut shifted = vec![0.0; h * w * ch];
        for r in 0..h {
            for c in pw..w {
                for k in 0..ch {
                    shifted[(r * w + c) * ch + k] = grid.get(r, c - pw, k);
                }
            }
        }
        let moved = RawGrid::new(h, w, ch, shifted).unwrap();
        let a = encode(&grid, &params, Modality::Visual).unwrap();
        let b = encode(&moved, &params, Modality::Visual).unwrap();
        for pr in 0..rows {
            for pc in 0..cols - 1 {
                prop_assert_eq!(&b.vectors()[pr * cols + pc + 1], &a.vectors()[pr * cols + pc]);
            }
        }
    }

    #[test]
    fn count_times_dim_matches_grid(rows in 1usize..6, cols in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = random_params(&mut rng, n, (2, 2), 1, Nonlinearity::RationalCubic);
        let f = encode(&random_grid(&mut rng, rows * 2, cols * 2, 1), &params, Modality::Audio).unwrap();
        prop_assert_eq!(f.count(), rows * cols);
        prop_assert_eq!(f.dim(), n);
        prop_assert_eq!(f.grid_shape(), (rows, cols));
    }
}
