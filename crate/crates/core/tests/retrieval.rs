use geomret::metrics::MetricKind;
use geomret::retrieval::{
    build_index, evaluate, gen_synthetic, load_index, rank, save_index, BuildConfig, IndexMode,
    LabeledFeatures, SignatureIndex, SyntheticParams,
};
use geomret::FeatureMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const COVARIANCE_METRICS: [MetricKind; 4] = [
    MetricKind::GaussianKl,
    MetricKind::Wasserstein,
    MetricKind::Riemannian,
    MetricKind::EuclideanMean,
];

fn dataset(
    categories: usize,
    items: usize,
    rows: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Vec<LabeledFeatures> {
    gen_synthetic(&SyntheticParams {
        categories,
        items_per_category: items,
        rows,
        dim,
        separation,
        anisotropy: 4.0,
        seed,
    })
    .unwrap()
    .items
}

fn small_gmm() -> BuildConfig {
    BuildConfig {
        components: 3,
        ..BuildConfig::default()
    }
}

fn metrics_for(mode: IndexMode) -> Vec<MetricKind> {
    MetricKind::ALL
        .into_iter()
        .filter(|m| !m.requires_gmm() || mode == IndexMode::Gmm)
        .collect()
}

fn ranking_ids(index: &SignatureIndex, q: usize, metric: MetricKind) -> Vec<(String, u64)> {
    let query = &index.entries()[q];
    rank(index, query, metric)
        .unwrap()
        .ranked
        .into_iter()
        .map(|r| (r.item_id, r.distance.to_bits()))
        .collect()
}

#[test]
fn ranking_invariant_under_entry_reordering() {
    let items = dataset(3, 4, 60, 4, 2.0, 1);
    let mut shuffled = items.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    for (mode, cfg) in [
        (IndexMode::Sample, BuildConfig::default()),
        (IndexMode::Gmm, small_gmm()),
        (IndexMode::Smt, BuildConfig::default()),
    ] {
        let a = build_index(&items, mode, &cfg).unwrap();
        let b = build_index(&shuffled, mode, &cfg).unwrap();
        for metric in metrics_for(mode) {
            for e in a.entries() {
                let ra = rank(&a, e, metric).unwrap();
                let rb = rank(&b, e, metric).unwrap();
                assert_eq!(ra.ranked, rb.ranked, "{mode} {metric} query {}", e.item_id);
                let mut ids: Vec<_> = ra.ranked.iter().map(|r| r.item_id.clone()).collect();
                ids.push(e.item_id.clone());
                ids.sort();
                let mut all: Vec<_> = a.entries().iter().map(|x| x.item_id.clone()).collect();
                all.sort();
                assert_eq!(ids, all, "ranking must cover every other entry");
                assert!(ra.ranked.windows(2).all(|w| w[0].distance <= w[1].distance));
            }
        }
    }
}

#[test]
fn results_independent_of_thread_count() {
    let items = dataset(3, 3, 50, 4, 1.0, 2);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let mut out = Vec::new();
            for (mode, cfg) in [
                (IndexMode::Gmm, small_gmm()),
                (IndexMode::Smt, BuildConfig::default()),
            ] {
                let idx = build_index(&items, mode, &cfg).unwrap();
                for metric in metrics_for(mode) {
                    for q in 0..idx.len() {
                        out.push(ranking_ids(&idx, q, metric));
                    }
                }
            }
            out
        })
    };
    assert_eq!(run(1), run(4));
}

fn scaled(items: &[LabeledFeatures], c: f64) -> Vec<LabeledFeatures> {
    items
        .iter()
        .map(|it| LabeledFeatures {
            features: FeatureMatrix::new(
                it.features.n_rows(),
                it.features.n_cols(),
                it.features.values().iter().map(|v| v * c).collect(),
            )
            .unwrap(),
            ..it.clone()
        })
        .collect()
}

#[test]
fn global_rescaling_preserves_nearest_neighbours() {
    let items = dataset(4, 5, 80, 6, 1.5, 3);
    let c = 3.0;
    let a = build_index(&items, IndexMode::Sample, &BuildConfig::default()).unwrap();
    let b = build_index(
        &scaled(&items, c),
        IndexMode::Sample,
        &BuildConfig::default(),
    )
    .unwrap();
    assert_eq!(a.len(), 20);
    for q in 0..a.len() {
        let ra = rank(&a, &a.entries()[q], MetricKind::Riemannian).unwrap();
        let rb = rank(&b, &b.entries()[q], MetricKind::Riemannian).unwrap();
        for (x, y) in ra.ranked.iter().zip(&rb.ranked) {
            assert_eq!(x.item_id, y.item_id);
            assert!((x.distance - y.distance).abs() <= 1e-8 * x.distance.max(1.0));
        }
        let wa = rank(&a, &a.entries()[q], MetricKind::Wasserstein).unwrap();
        let wb = rank(&b, &b.entries()[q], MetricKind::Wasserstein).unwrap();
        for (x, y) in wa.ranked.iter().zip(&wb.ranked) {
            assert_eq!(x.item_id, y.item_id);
            assert!((y.distance - c * c * x.distance).abs() <= 1e-8 * y.distance);
        }
        for metric in [MetricKind::GaussianKl, MetricKind::EuclideanMean] {
            let ia: Vec<_> = rank(&a, &a.entries()[q], metric)
                .unwrap()
                .ranked
                .into_iter()
                .map(|r| r.item_id)
                .collect();
            let ib: Vec<_> = rank(&b, &b.entries()[q], metric)
                .unwrap()
                .ranked
                .into_iter()
                .map(|r| r.item_id)
                .collect();
            assert_eq!(ia, ib, "{metric}");
        }
    }
}

#[test]
fn separated_clusters_top10_majority_under_wasserstein() {
    let items = dataset(5, 10, 500, 16, 8.0, 7);
    let cfg = BuildConfig {
        components: 8,
        ..BuildConfig::default()
    };
    let idx = build_index(&items, IndexMode::Gmm, &cfg).unwrap();
    for e in idx.entries() {
        let r = rank(&idx, e, MetricKind::Wasserstein).unwrap();
        let same = r
            .ranked
            .iter()
            .take(10)
            .filter(|x| x.category == e.category)
            .count();
        assert!(
            same > 5,
            "{}: {same} of top 10 from own category",
            e.item_id
        );
    }
}

#[test]
fn identical_categories_give_chance_precision() {
    let (cats, per) = (5usize, 10usize);
    let mut total = [0.0f64; 2];
    let seeds = 12;
    for seed in 0..seeds {
        let items = gen_synthetic(&SyntheticParams {
            categories: cats,
            items_per_category: per,
            rows: 40,
            dim: 3,
            separation: 0.0,
            anisotropy: 1.0,
            seed,
        })
        .unwrap()
        .items;
        let idx = build_index(&items, IndexMode::Sample, &BuildConfig::default()).unwrap();
        let queries = idx.entries().to_vec();
        for (k, metric) in [MetricKind::Wasserstein, MetricKind::EuclideanMean]
            .into_iter()
            .enumerate()
        {
            let r = evaluate(&idx, &queries, metric, &[10]).unwrap();
            total[k] += r.precision_at(10).unwrap();
        }
    }
    // other members of the query's category over everything else
    let chance = (per - 1) as f64 / (cats * per - 1) as f64;
    for t in total {
        let mean = t / seeds as f64;
        assert!(
            (mean - chance).abs() < 0.06,
            "mean P@10 {mean} vs chance {chance}"
        );
    }
}

#[test]
fn map_bounds_and_single_category() {
    let items = dataset(1, 6, 40, 3, 0.0, 4);
    let idx = build_index(&items, IndexMode::Smt, &BuildConfig::default()).unwrap();
    let queries = idx.entries().to_vec();
    for metric in metrics_for(IndexMode::Smt) {
        let r = evaluate(&idx, &queries, metric, &[1, 5, 10]).unwrap();
        assert_eq!(r.map, vec![1.0; 3], "{metric}");
    }
    let items = dataset(4, 3, 40, 3, 1.0, 5);
    let idx = build_index(&items, IndexMode::Sample, &BuildConfig::default()).unwrap();
    let queries = idx.entries().to_vec();
    for metric in COVARIANCE_METRICS {
        let r = evaluate(&idx, &queries, metric, &[1, 5, 10]).unwrap();
        for v in r.map.iter().chain(&r.mean_precision) {
            assert!((0.0..=1.0).contains(v));
        }
        for q in &r.queries {
            for v in q.precision.iter().chain(&q.average_precision) {
                assert!((0.0..=1.0).contains(v));
            }
        }
        assert!(r.mean_pair_seconds >= 0.0);
    }
}

#[test]
fn built_indices_survive_save_and_load() {
    let items = dataset(2, 3, 50, 5, 2.0, 6);
    let dir = tempfile::tempdir().unwrap();
    for (mode, cfg) in [
        (IndexMode::Sample, BuildConfig::default()),
        (IndexMode::Gmm, small_gmm()),
        (IndexMode::Smt, BuildConfig::default()),
    ] {
        let idx = build_index(&items, mode, &cfg).unwrap();
        let path = dir.path().join(format!("{mode}.sidx"));
        save_index(&idx, &path).unwrap();
        let back = load_index(&path).unwrap();
        assert_eq!(back, idx);
        // queries built from the reloaded config match those of the original
        let qa = idx.make_query("q", "cat00", &items[0].features).unwrap();
        let qb = back.make_query("q", "cat00", &items[0].features).unwrap();
        assert_eq!(qa, qb);
        for metric in metrics_for(mode) {
            assert_eq!(
                rank(&idx, &qa, metric).unwrap().ranked,
                rank(&back, &qb, metric).unwrap().ranked
            );
        }
    }
}

#[test]
fn query_with_indexed_features_matches_its_entry() {
    let items = dataset(2, 3, 60, 4, 2.0, 8);
    for (mode, cfg) in [
        (IndexMode::Sample, BuildConfig::default()),
        (IndexMode::Gmm, small_gmm()),
        (IndexMode::Smt, BuildConfig::default()),
    ] {
        let idx = build_index(&items, mode, &cfg).unwrap();
        let q = idx.make_query("", "", &items[4].features).unwrap();
        assert_eq!(q.signature, idx.entries()[4].signature, "{mode}");
        for metric in metrics_for(mode) {
            let r = rank(&idx, &q, metric).unwrap();
            assert_eq!(r.ranked[0].item_id, items[4].item_id, "{mode} {metric}");
            assert!(
                r.ranked[0].distance <= 1e-9,
                "{mode} {metric}: {}",
                r.ranked[0].distance
            );
        }
    }
}
