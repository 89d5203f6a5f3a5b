use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use dcmm::inference::average_rank;
use dcmm::influence::{covariance_with, first_order_deltas, variance_with, InferenceContext, InfluenceBuilder};
use dcmm::io::{load_adjacency, parse_edge_list, save_adjacency, write_adjacency, AdjacencyFormat};
use dcmm::membership::barycentric_coords;
use dcmm::model::{AdjacencyMatrix, DcmmParams};
use dcmm::special::{normal_cdf, normal_quantile};
use dcmm::vertex::match_permutation;

fn square(n: usize, range: std::ops::Range<f64>) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(range, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

fn symmetric(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    square(n, -1.0..1.0).prop_map(|m| (&m + m.transpose()) * 0.5)
}

fn probabilities(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    square(n, 0.0..1.0).prop_map(|m| (&m + m.transpose()) * 0.5)
}

fn adjacency(n: usize, self_loop: bool) -> impl Strategy<Value = AdjacencyMatrix> {
    prop::collection::vec(any::<bool>(), n * n).prop_map(move |bits| {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                if (i != j || self_loop) && bits[i * n + j] {
                    m[(i, j)] = 1.0;
                    m[(j, i)] = 1.0;
                }
            }
        }
        AdjacencyMatrix::new(m, self_loop).unwrap()
    })
}

/// Three communities, three pure nodes each, unit-diagonal P.
fn small_model() -> impl Strategy<Value = DcmmParams> {
    let n = 18;
    (
        prop::collection::vec(prop::collection::vec(0.05..1.0f64, 3), n - 9),
        prop::collection::vec(0.5..0.9f64, n),
        prop::collection::vec(0.05..0.3f64, 3),
    )
        .prop_map(move |(mixed, theta, off)| {
            let mut pi = DMatrix::zeros(n, 3);
            for i in 0..9 {
                pi[(i, i % 3)] = 1.0;
            }
            for (r, w) in mixed.iter().enumerate() {
                let s: f64 = w.iter().sum();
                for c in 0..3 {
                    pi[(9 + r, c)] = w[c] / s;
                }
            }
            let mut p = DMatrix::identity(3, 3);
            for (idx, (a, b)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
                p[(a, b)] = off[idx];
                p[(b, a)] = off[idx];
            }
            DcmmParams::new(theta, pi, p, false).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn variance_is_nonnegative_and_quadratic(m in square(8, -2.0..2.0), h in probabilities(8), scale in -3.0..3.0f64, self_loop in any::<bool>()) {
        let v = variance_with(&m, &h, self_loop);
        prop_assert!(v >= 0.0);
        let scaled = variance_with(&(&m * scale), &h, self_loop);
        prop_assert!((scaled - scale * scale * v).abs() <= 1e-9 * (1.0 + scaled.abs()));
    }

    #[test]
    fn covariance_is_symmetric_and_bounded(a in square(8, -2.0..2.0), b in square(8, -2.0..2.0), h in probabilities(8)) {
        let ab = covariance_with(&a, &b, &h, false);
        let ba = covariance_with(&b, &a, &h, false);
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab.abs()));
        let bound = (variance_with(&a, &h, false) * variance_with(&b, &h, false)).sqrt();
        prop_assert!(ab.abs() <= bound * (1.0 + 1e-10) + 1e-12);
        let sum = variance_with(&(&a + &b), &h, false);
        let expanded = variance_with(&a, &h, false) + variance_with(&b, &h, false) + 2.0 * ab;
        prop_assert!((sum - expanded).abs() <= 1e-9 * (1.0 + sum.abs()));
    }

    #[test]
    fn permutation_matching_undoes_a_shuffle(rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 4), perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle()) {
        let truth = DMatrix::from_fn(4, 3, |r, c| rows[r][c] + 20.0 * (r as f64) * (c as f64 + 1.0));
        let est = DMatrix::from_fn(4, 3, |e, c| truth[(perm.iter().position(|&t| t == e).unwrap(), c)] + 1e-3);
        let found = match_permutation(&est, &truth).unwrap();
        for t in 0..4 {
            prop_assert_eq!(found[t], perm[t]);
        }
    }

    #[test]
    fn barycentric_coordinates_reconstruct(verts in prop::collection::vec(-3.0..3.0f64, 6), w in prop::collection::vec(0.0..1.0f64, 3)) {
        let v = DMatrix::from_row_slice(3, 2, &verts);
        let area = (v[(1, 0)] - v[(0, 0)]) * (v[(2, 1)] - v[(0, 1)]) - (v[(2, 0)] - v[(0, 0)]) * (v[(1, 1)] - v[(0, 1)]);
        prop_assume!(area.abs() > 0.5);
        let s: f64 = w.iter().sum();
        prop_assume!(s > 1e-3);
        let weights = DVector::from_iterator(3, w.iter().map(|x| x / s));
        let point = v.transpose() * &weights;
        let a = barycentric_coords(point.as_slice(), &v).unwrap();
        prop_assert!((a.sum() - 1.0).abs() < 1e-10);
        prop_assert!((&a - &weights).amax() < 1e-8);
    }

    #[test]
    fn average_ranks_are_a_partition(values in prop::collection::vec(prop::sample::select(vec![0.0, 0.25, 0.5, 0.75, 1.0]), 1..30)) {
        let n = values.len();
        let ranks: Vec<f64> = (0..n).map(|i| average_rank(&values, i)).collect();
        prop_assert!(ranks.iter().all(|&r| (1.0..=n as f64).contains(&r)));
        prop_assert!((ranks.iter().sum::<f64>() - (n * (n + 1)) as f64 / 2.0).abs() < 1e-9);
        for i in 0..n {
            for j in 0..n {
                if values[i] > values[j] {
                    prop_assert!(ranks[i] < ranks[j]);
                }
            }
        }
    }

    #[test]
    fn normal_quantile_inverts_cdf(p in 1e-6..(1.0 - 1e-6)) {
        let x = normal_quantile(p).unwrap();
        prop_assert!((normal_cdf(x) - p).abs() < 1e-9);
    }

    #[test]
    fn edge_list_round_trips(adj in adjacency(12, false)) {
        let mut buf = Vec::new();
        write_adjacency(&adj, AdjacencyFormat::EdgeListCsv, &mut buf).unwrap();
        let back = parse_edge_list(std::str::from_utf8(&buf).unwrap(), Some(12), false).unwrap();
        prop_assert_eq!(back.entries(), adj.entries());
    }

    #[test]
    fn saved_adjacency_reloads(adj in adjacency(9, true), dense in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.csv");
        let format = if dense { AdjacencyFormat::DenseCsv } else { AdjacencyFormat::EdgeListCsv };
        save_adjacency(&path, &adj, format).unwrap();
        let back = load_adjacency(&path, format, true).unwrap();
        if dense {
            prop_assert_eq!(back.entries(), adj.entries());
        } else {
            // trailing isolated nodes are not representable in an edge list
            let m = back.n();
            prop_assert_eq!(back.entries(), &adj.entries().view((0, 0), (m, m)).into_owned());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn first_order_terms_are_linear_traces(params in small_model(), w1 in symmetric(18), w2 in symmetric(18), scale in -2.0..2.0f64) {
        let ctx = InferenceContext::ground_truth(&params).unwrap();
        let d1 = first_order_deltas(&ctx, &w1).unwrap();
        let d2 = first_order_deltas(&ctx, &w2).unwrap();
        let combo = first_order_deltas(&ctx, &(&w1 + &w2 * scale)).unwrap();
        let expect = &d1.dpi + &d2.dpi * scale;
        prop_assert!((&combo.dpi - &expect).amax() <= 1e-8 * (1.0 + expect.amax()));

        let mut builder = InfluenceBuilder::new(&ctx);
        for (i, k) in [(10, 0), (14, 2), (3, 1)] {
            let c = builder.cpi(i, k).unwrap().dense();
            let trace = c.component_mul(&w1.transpose()).sum();
            prop_assert!((trace - d1.dpi[(i, k)]).abs() <= 1e-8 * (1.0 + trace.abs()));
        }
    }
}
