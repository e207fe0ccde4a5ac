use approx::assert_abs_diff_eq;
use dmc::clustering::{
    compute_distances, init_state, objective, run_clustering, update_assignments, update_centers, ClusterConfig,
    ClusterState, FeatureSet, Modality, ProjectionBank,
};
use dmc::numerics::{l2_normalize, Matrix};
use dmc::DmcError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn features(vectors: Vec<Vec<f64>>) -> FeatureSet {
    let p = vectors.len();
    FeatureSet::new(vectors, (1, p), Modality::Visual).unwrap()
}

fn config(k: usize, iterations: usize, z: f64) -> ClusterConfig {
    ClusterConfig { k, iterations, z }
}

fn random_vectors(rng: &mut ChaCha8Rng, p: usize, n: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn argmin(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v < row[best] {
            best = j;
        }
    }
    best
}

#[test]
fn default_config() {
    let c = ClusterConfig::default();
    assert_eq!((c.k, c.iterations, c.z), (2, 3, 1.0));
    assert!(config(0, 3, 1.0).validate().is_err());
    assert!(config(2, 0, 1.0).validate().is_err());
    assert!(config(2, 3, 0.0).validate().is_err());
}

#[test]
fn init_state_is_uniform() {
    let f = features(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
    let s = init_state(&f, &ProjectionBank::identity(4, 2).unwrap(), &config(4, 3, 1.0)).unwrap();
    assert_eq!(s.assignments, vec![vec![0.25; 4]; 3]);
    assert_eq!(s.distances, vec![vec![0.0; 4]; 3]);
    assert!(s.centers.is_empty());
    assert_eq!(s.iteration, 0);
    let one = init_state(&f, &ProjectionBank::identity(1, 2).unwrap(), &config(1, 3, 1.0)).unwrap();
    assert_eq!(one.assignments, vec![vec![1.0]; 3]);
}

#[test]
fn empty_or_mismatched_inputs_are_rejected() {
    assert!(matches!(
        FeatureSet::new(Vec::new(), (0, 0), Modality::Audio),
        Err(DmcError::Shape(_))
    ));
    assert!(matches!(
        FeatureSet::new(vec![vec![1.0], vec![1.0, 2.0]], (1, 2), Modality::Audio),
        Err(DmcError::Shape(_))
    ));
    assert!(matches!(
        FeatureSet::new(vec![vec![1.0]], (2, 2), Modality::Audio),
        Err(DmcError::Shape(_))
    ));
    let f = features(vec![vec![1.0, 0.0, 0.0]]);
    let bank = ProjectionBank::identity(2, 2).unwrap();
    assert!(matches!(
        init_state(&f, &bank, &config(2, 1, 1.0)),
        Err(DmcError::Shape(_))
    ));
    let f2 = features(vec![vec![1.0, 0.0]]);
    assert!(matches!(
        init_state(&f2, &bank, &config(3, 1, 1.0)),
        Err(DmcError::Shape(_))
    ));
    assert!(matches!(
        update_centers(&f2, &bank, &[vec![0.5, 0.5], vec![0.5, 0.5]]),
        Err(DmcError::Shape(_))
    ));
}

#[test]
fn distances_of_aligned_and_orthogonal_features() {
    let bank = ProjectionBank::identity(1, 2).unwrap();
    let f = features(vec![vec![0.0, 2.0], vec![3.0, 0.0]]);
    let d = compute_distances(&f, &bank, &[vec![0.0, 5.0]]).unwrap();
    assert_abs_diff_eq!(d[0][0], -2.0, epsilon = 1e-15);
    assert_eq!(d[1][0], 0.0);
}

#[test]
fn distances_match_scalar_oracle() {
    let f = features(vec![vec![0.5, -1.0], vec![2.0, 0.25], vec![-1.5, 1.5]]);
    let bank = ProjectionBank::new(vec![
        Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 2.0]]).unwrap(),
        Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 1.0]]).unwrap(),
    ])
    .unwrap();
    let d = compute_distances(&f, &bank, &[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
    let expected = [
        [1.7888543819998317, -0.7397954428741078],
        [-1.3975424859373686, 0.5342967087424112],
        [-2.347871376374779, 0.9863939238321437],
    ];
    for i in 0..3 {
        for j in 0..2 {
            assert_abs_diff_eq!(d[i][j], expected[i][j], epsilon = 1e-14);
        }
    }
}

#[test]
fn degenerate_center_is_an_error() {
    let f = features(vec![vec![1.0, 0.0]]);
    let bank = ProjectionBank::identity(2, 2).unwrap();
    let err = compute_distances(&f, &bank, &[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap_err();
    assert!(matches!(err, DmcError::DegenerateCenter { cluster: 1, .. }));
    let zero = features(vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    assert!(matches!(
        run_clustering(&zero, &bank, &config(2, 1, 1.0)),
        Err(DmcError::DegenerateCenter { cluster: 0, .. })
    ));
}

#[test]
fn assignment_examples() {
    let s = update_assignments(&[vec![0.0, 0.0, 0.0]], 3.0).unwrap();
    for v in &s[0] {
        assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
    }
    let s = update_assignments(&[vec![-1.0, 0.0]], 1.0).unwrap();
    assert_abs_diff_eq!(s[0][0], 0.731059, epsilon = 1e-6);
    assert_abs_diff_eq!(s[0][1], 0.268941, epsilon = 1e-6);
    assert!(matches!(
        update_assignments(&[vec![f64::NAN, 0.0]], 1.0),
        Err(DmcError::InvalidArgument(_))
    ));
    assert!(update_assignments(&[vec![0.0, 0.0]], -1.0).is_err());
}

#[test]
fn center_examples() {
    let bank = ProjectionBank::identity(1, 3).unwrap();
    let f = features(vec![vec![0.25, -2.0, 7.0]]);
    let c = update_centers(&f, &bank, &[vec![1.0]]).unwrap();
    assert_eq!(c, vec![vec![0.25, -2.0, 7.0]]);

    let vectors = vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 4.0]];
    let k = 3;
    let f = features(vectors.clone());
    let c = update_centers(
        &f,
        &ProjectionBank::identity(k, 2).unwrap(),
        &vec![vec![1.0 / 3.0; k]; 3],
    )
    .unwrap();
    for cj in &c {
        for r in 0..2 {
            let expected: f64 = vectors.iter().map(|u| u[r] / 3.0).sum();
            assert_abs_diff_eq!(cj[r], expected, epsilon = 1e-15);
        }
    }
}

#[test]
fn centers_match_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (p, k, m, n) = (7, 3, 4, 5);
    let vectors = random_vectors(&mut rng, p, n);
    let bank = ProjectionBank::random(k, m, n, &mut rng).unwrap();
    let s: Vec<Vec<f64>> = (0..p)
        .map(|_| update_assignments(&[random_vectors(&mut rng, 1, k)[0].clone()], 1.0).unwrap()[0].clone())
        .collect();
    let c = update_centers(&features(vectors.clone()), &bank, &s).unwrap();
    for j in 0..k {
        let w = &bank.matrices()[j];
        for r in 0..m {
            let mut acc = 0.0;
            for i in 0..p {
                let mut y = 0.0;
                for col in 0..n {
                    y += w.get(r, col) * vectors[i][col];
                }
                acc += s[i][j] * y;
            }
            assert_abs_diff_eq!(c[j][r], acc, epsilon = 1e-13);
        }
    }
}

#[test]
fn single_iteration_matches_hand_stepped_oracle() {
    let f = features(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
    let bank = ProjectionBank::new(vec![
        Matrix::identity(2),
        Matrix::from_rows(&[vec![2.0, 0.0], vec![1.0, -1.0]]).unwrap(),
    ])
    .unwrap();
    let state = run_clustering(&f, &bank, &config(2, 1, 1.0)).unwrap();
    // Uniform s = 1/2 gives c_0 = (1, 1) and c_1 = ((2,1) + (0,-1) + (2,0))/2 = (2, 0).
    assert_eq!(state.iteration, 1);
    assert_eq!(state.assignments, vec![vec![0.5, 0.5]; 3]);
    let centers = [[1.0, 1.0], [2.0, 0.0]];
    for j in 0..2 {
        for r in 0..2 {
            assert_abs_diff_eq!(state.centers[j][r], centers[j][r], epsilon = 1e-12);
        }
    }
    let h = 0.5f64.sqrt();
    let distances = [[-h, -2.0], [-h, 0.0], [-2.0 * h, -2.0]];
    for i in 0..3 {
        for j in 0..2 {
            assert_abs_diff_eq!(state.distances[i][j], distances[i][j], epsilon = 1e-12);
        }
    }
}

#[test]
fn separated_groups_are_partitioned() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut vectors = Vec::new();
    for g in 0..2 {
        for _ in 0..6 {
            let mut v = vec![0.0; 4];
            v[2 * g] = 1.0 + rng.random_range(0.0..0.2);
            v[2 * g + 1] = rng.random_range(-0.1..0.1);
            vectors.push(v);
        }
    }
    let diag = |a: f64, b: f64| {
        let mut w = Matrix::identity(4);
        w.set(0, 0, a);
        w.set(1, 1, a);
        w.set(2, 2, b);
        w.set(3, 3, b);
        w
    };
    let bank = ProjectionBank::new(vec![diag(1.0, 0.5), diag(0.5, 1.0)]).unwrap();
    let state = run_clustering(&features(vectors.clone()), &bank, &config(2, 20, 50.0)).unwrap();
    // Hard oracle: each point joins the cluster with the larger cosine to the final unit centers.
    for (i, u) in vectors.iter().enumerate() {
        let label = argmax(&state.assignments[i]);
        assert_eq!(label, i / 6);
        let scores: Vec<f64> = (0..2)
            .map(|j| {
                let y = bank.matrices()[j].matvec(u);
                let c = l2_normalize(&state.centers[j]).unwrap();
                y.iter().zip(&c).map(|(a, b)| a * b).sum()
            })
            .collect();
        assert_eq!(argmax(&scores), label);
    }
}

#[test]
fn duplicated_features_share_assignments() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = random_vectors(&mut rng, 5, 3);
    let mut doubled = base.clone();
    doubled.extend(base.iter().cloned());
    let bank = ProjectionBank::random(3, 3, 3, &mut rng).unwrap();
    let state = run_clustering(&features(doubled), &bank, &config(3, 4, 2.0)).unwrap();
    for i in 0..5 {
        assert_eq!(state.assignments[i], state.assignments[i + 5]);
        assert_eq!(state.distances[i], state.distances[i + 5]);
    }
}

#[test]
fn identical_inputs_give_bitwise_identical_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = features(random_vectors(&mut rng, 9, 4));
    let bank = ProjectionBank::random(2, 3, 4, &mut rng).unwrap();
    let a = run_clustering(&f, &bank, &config(2, 5, 3.0)).unwrap();
    let b = run_clustering(&f, &bank, &config(2, 5, 3.0)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn objective_examples() {
    let state = |d: Vec<Vec<f64>>| ClusterState {
        assignments: vec![vec![1.0]; d.len()],
        distances: d,
        centers: Vec::new(),
        iteration: 1,
    };
    let single = state(vec![vec![-0.3], vec![1.25], vec![0.0]]);
    let o = objective(&single, 7.0).unwrap();
    assert_eq!(o.smooth, o.hard);
    assert_abs_diff_eq!(o.hard, 0.95, epsilon = 1e-15);

    let zero = state(vec![vec![0.0; 4]; 5]);
    let o = objective(&zero, 2.0).unwrap();
    assert_eq!(o.hard, 0.0);
    assert_abs_diff_eq!(o.smooth, -5.0 * 4f64.ln() / 2.0, epsilon = 1e-14);
}

/// Unit direction of `W_j Σ_i s_ij u_i` for the assignments that would follow the final distances.
fn next_direction(state: &ClusterState, vectors: &[Vec<f64>], bank: &ProjectionBank, z: f64, j: usize) -> Vec<f64> {
    let next = update_assignments(&state.distances, z).unwrap();
    let mut v = vec![0.0; vectors[0].len()];
    for (u, s) in vectors.iter().zip(&next) {
        for (a, b) in v.iter_mut().zip(u) {
            *a += s[j] * b;
        }
    }
    l2_normalize(&bank.matrices()[j].matvec(&v)).unwrap()
}

fn assert_fixed_point(vectors: &[Vec<f64>], bank: &ProjectionBank, z: f64) {
    let k = bank.k();
    let state = run_clustering(&features(vectors.to_vec()), bank, &config(k, 50, z)).unwrap();
    for j in 0..k {
        let c = l2_normalize(&state.centers[j]).unwrap();
        let v = next_direction(&state, vectors, bank, z, j);
        let gap: f64 = c.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(gap <= 1e-6, "cluster {j}: gap {gap}");
    }
}

#[test]
fn fixed_point_with_identity_projections() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let vectors = random_vectors(&mut rng, 12, 4);
        assert_fixed_point(&vectors, &ProjectionBank::identity(2, 4).unwrap(), 1.0);
    }
}

#[test]
fn fixed_point_with_distinct_projections() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut tested = 0;
    while tested < 5 {
        let vectors: Vec<Vec<f64>> = random_vectors(&mut rng, 12, 4)
            .into_iter()
            .map(|v| v.into_iter().map(|x| x + 0.5).collect())
            .collect();
        let mut bank = ProjectionBank::identity(2, 4).unwrap().matrices().to_vec();
        for w in bank.iter_mut() {
            for x in w.data_mut() {
                *x += rng.random_range(-0.3..0.3);
            }
        }
        assert_fixed_point(&vectors, &ProjectionBank::new(bank).unwrap(), 1.0);
        tested += 1;
    }
}

#[test]
fn hard_limit_on_separated_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let k = rng.random_range(2..6);
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|_| {
                let mut row: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
                let j = rng.random_range(0..k);
                let min = row.iter().copied().fold(f64::INFINITY, f64::min);
                row[j] = min - 0.1 - rng.random_range(0.001..0.5);
                row
            })
            .collect();
        let s = update_assignments(&rows, 100.0).unwrap();
        for (d, sr) in rows.iter().zip(&s) {
            assert_eq!(argmax(sr), argmin(d));
        }
    }
}

fn instance() -> impl Strategy<Value = (u64, usize, usize, usize, usize)> {
    (any::<u64>(), 1usize..10, 1usize..5, 1usize..5, 1usize..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rows_stay_stochastic((seed, p, k, n, t) in instance(), z in 0.5f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = random_vectors(&mut rng, p, n);
        let bank = ProjectionBank::random(k, n, n, &mut rng).unwrap();
        let f = features(vectors);
        for iterations in 1..=t {
            match run_clustering(&f, &bank, &config(k, iterations, z)) {
                Ok(state) => {
                    for row in &state.assignments {
                        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                    }
                }
                Err(e) => {
                    let degenerate = matches!(e, DmcError::DegenerateCenter { .. });
                    prop_assert!(degenerate);
                }
            }
        }
    }

    #[test]
    fn permutation_equivariance((seed, p, k, n, t) in instance()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = random_vectors(&mut rng, p, n);
        let bank = ProjectionBank::random(k, n, n, &mut rng).unwrap();
        let mut order: Vec<usize> = (0..p).collect();
        for i in (1..p).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let permuted: Vec<Vec<f64>> = order.iter().map(|&i| vectors[i].clone()).collect();
        let cfg = config(k, t, 2.0);
        let (Ok(a), Ok(b)) = (
            run_clustering(&features(vectors), &bank, &cfg),
            run_clustering(&features(permuted), &bank, &cfg),
        ) else {
            return Ok(());
        };
        for (slot, &i) in order.iter().enumerate() {
            for j in 0..k {
                prop_assert!((b.assignments[slot][j] - a.assignments[i][j]).abs() <= 1e-12);
                prop_assert!((b.distances[slot][j] - a.distances[i][j]).abs() <= 1e-12);
            }
        }
        for (ca, cb) in a.centers.iter().zip(&b.centers) {
            for (x, y) in ca.iter().zip(cb) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn objective_sandwich((seed, p, k, n, t) in instance(), z in 0.5f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = ProjectionBank::random(k, n, n, &mut rng).unwrap();
        let Ok(state) = run_clustering(&features(random_vectors(&mut rng, p, n)), &bank, &config(k, t, z)) else {
            return Ok(());
        };
        let o = objective(&state, z).unwrap();
        prop_assert!(o.smooth <= o.hard + 1e-12);
        prop_assert!(o.smooth >= o.hard - p as f64 * (k as f64).ln() / z - 1e-12);
    }
}
