use flexireg_core::aggregate::{aggregate_region_embeddings, Weighting};
use flexireg_core::autograd::{softmax_rows, Mat};
use flexireg_core::evalharness::{k_folds, metrics};
use flexireg_core::geometry::polygon::clip_halfplane;
use flexireg_core::geometry::{build_overlap_map, overlap_coefficient, MultiPolygon, Point, Polygon, Rect};
use flexireg_core::graphs::{cosine_adjacency, top_k_sparsify};
use flexireg_core::gridlearner::sample_triplets;
use flexireg_core::io::{decode_embedding, encode_embedding};
use flexireg_core::{CellShape, HexGrid, Region};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;

fn star(cx: f64, cy: f64, radii: &[f64]) -> Vec<Point> {
    let k = radii.len();
    (0..k)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / k as f64;
            Point::new(cx + radii[i] * a.cos(), cy + radii[i] * a.sin())
        })
        .collect()
}

fn region(id: u64, ring: Vec<Point>) -> Region {
    Region {
        id,
        shape: MultiPolygon::single(Polygon::new(ring)),
    }
}

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Mat> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-5.0f64..5.0, r * c).prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn overlap_is_a_fraction(
        cx in -300.0f64..300.0,
        cy in -300.0f64..300.0,
        radii in proptest::collection::vec(20.0f64..250.0, 5..12),
    ) {
        let grid = HexGrid::build(Rect::new(-300.0, -300.0, 300.0, 300.0), 80.0, CellShape::Hex).unwrap();
        let r = region(1, star(cx, cy, &radii));
        let mut covered = 0.0;
        for c in &grid.cells {
            let o = overlap_coefficient(&r, c).unwrap();
            prop_assert!((0.0..=1.0).contains(&o));
            covered += o * c.area();
        }
        // Cells tile the grid box, so covered area never exceeds the region.
        prop_assert!(covered <= r.area() * (1.0 + 1e-9));
    }

    #[test]
    fn splitting_a_region_splits_its_embedding(
        radii in proptest::collection::vec(50.0f64..400.0, 6..10),
        angle in 0.0f64..std::f64::consts::PI,
        offset in -40.0f64..40.0,
        seed in 0u64..1000,
    ) {
        let grid = HexGrid::build(Rect::new(-450.0, -450.0, 450.0, 450.0), 60.0, CellShape::Hex).unwrap();
        let whole = star(0.0, 0.0, &radii);
        let (nx, ny) = (angle.cos(), angle.sin());
        let left = clip_halfplane(&whole, |p| p.x * nx + p.y * ny - offset);
        let right = clip_halfplane(&whole, |p| offset - p.x * nx - p.y * ny);
        prop_assume!(left.len() >= 3 && right.len() >= 3);
        let regions = vec![region(1, whole), region(2, left), region(3, right)];
        let map = build_overlap_map(&regions, &grid);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let e = Array2::from_shape_fn((grid.len(), 4), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let h = aggregate_region_embeddings(&e, &map, &[1, 2, 3], Weighting::Overlap).unwrap().h;
        for k in 0..4 {
            prop_assert!((h[[0, k]] - h[[1, k]] - h[[2, k]]).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_adjacency_is_symmetric_and_bounded(x in matrix(8, 5)) {
        let a = cosine_adjacency(&x).unwrap();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                prop_assert_eq!(a[[i, j]], a[[j, i]]);
                prop_assert!((-1.0..=1.0).contains(&a[[i, j]]));
            }
        }
    }

    #[test]
    fn sparsified_graph_is_a_symmetric_subgraph(x in matrix(8, 4), k in 1usize..4) {
        let a = cosine_adjacency(&x).unwrap();
        let s = top_k_sparsify(&a, k);
        for i in 0..a.nrows() {
            prop_assert_eq!(s[[i, i]], a[[i, i]]);
            let kept = (0..a.ncols()).filter(|&j| j != i && s[[i, j]] == a[[i, j]]).count();
            prop_assert!(kept >= k.min(a.nrows() - 1));
            for j in 0..a.ncols() {
                prop_assert_eq!(s[[i, j]], s[[j, i]]);
                prop_assert!(s[[i, j]] == 0.0 || s[[i, j]] == a[[i, j]]);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(x in matrix(6, 7), shift in -500.0f64..500.0) {
        let s = softmax_rows(&x.mapv(|v| v * 20.0 + shift));
        for row in s.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn f32_matrices_round_trip(bits in proptest::collection::vec(any::<u32>(), 0..40), cols in 1usize..5) {
        let rows = bits.len() / cols;
        let vals: Vec<f64> = bits[..rows * cols]
            .iter()
            .map(|b| f32::from_bits(*b))
            .filter(|v| !v.is_nan())
            .map(f64::from)
            .collect();
        let rows = vals.len() / cols;
        let m = Array2::from_shape_vec((rows, cols), vals[..rows * cols].to_vec()).unwrap();
        let back = decode_embedding(&encode_embedding(&m).unwrap()).unwrap();
        prop_assert!(back.iter().zip(m.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn folds_partition_indices(n in 10usize..200, k in 2usize..10, seed in any::<u64>()) {
        let folds = k_folds(n, k, seed).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn perfect_predictions_score_one(y in proptest::collection::vec(-100.0f64..100.0, 3..30)) {
        prop_assume!(y.iter().any(|v| (v - y[0]).abs() > 1e-6));
        let m = metrics(&y, &y).unwrap();
        prop_assert_eq!(m.mae, 0.0);
        prop_assert_eq!(m.r2, 1.0);
    }

    #[test]
    fn triplets_respect_adjacency(m in 4usize..30, seed in any::<u64>()) {
        let adjacency: Vec<Vec<usize>> = (0..m).map(|i| vec![(i + m - 1) % m, (i + 1) % m]).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for (a, p, n) in sample_triplets(&adjacency, &mut rng).unwrap() {
            prop_assert!(adjacency[a].contains(&p));
            prop_assert!(n != a && !adjacency[a].contains(&n));
        }
    }
}
