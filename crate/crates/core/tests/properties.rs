use proptest::prelude::*;
use satscope_core::fixtures::log_from_rows;
use satscope_core::ingest::{sessionize, temporal_split, train_prefix_len};
use satscope_core::metrics::{recommendation_entropy, unseen_fraction};
use satscope_core::models::top_k;
use satscope_core::saturation::{
    aggregate_curve, assign_quantiles, detect_saturation, profile_all, profile_user,
    DetectionConfig, QuantileScheme, RuleFired,
};
use satscope_core::{Axis, Catalog, RecommendationEvent, UtilityProxy};

fn catalog(clusters: Vec<u32>, n_clusters: usize) -> Catalog {
    Catalog {
        cluster_of: clusters,
        labels: (0..n_clusters).map(|c| format!("c{c}")).collect(),
    }
}

fn event(user: u32, e: f64, hit: bool) -> RecommendationEvent {
    RecommendationEvent {
        user,
        t: 0,
        anchor: 0,
        top_k: vec![],
        entropy: e,
        unseen: e,
        hit,
        cont: !hit,
        quantile: None,
        cold: false,
        truncated: false,
        terminal: false,
    }
}

fn labelled(user: u32, q: u32, hit: bool) -> RecommendationEvent {
    let mut e = event(user, q as f64, hit);
    e.quantile = Some(q);
    e
}

proptest! {
    #[test]
    fn entropy_within_bounds_and_order_free(
        n_clusters in 1usize..12,
        assignment in prop::collection::vec(0u32..1000, 30),
        list in prop::collection::vec(0u32..30, 1..15),
        rotate in 0usize..15,
    ) {
        let cat = catalog(assignment.iter().map(|c| c % n_clusters as u32).collect(), n_clusters);
        let h = recommendation_entropy(&list, &cat).unwrap();
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (n_clusters as f64).ln() + 1e-9);
        let mut shuffled = list.clone();
        shuffled.reverse();
        shuffled.rotate_left(rotate % list.len());
        prop_assert_eq!(h.to_bits(), recommendation_entropy(&shuffled, &cat).unwrap().to_bits());
    }

    #[test]
    fn entropy_extremes(n_clusters in 1usize..20, reps in 1usize..4) {
        // one item per cluster, each listed `reps` times → uniform
        let cat = catalog((0..n_clusters as u32).collect(), n_clusters);
        let list: Vec<u32> = (0..n_clusters as u32).flat_map(|i| std::iter::repeat_n(i, reps)).collect();
        let h = recommendation_entropy(&list, &cat).unwrap();
        prop_assert!((h - (n_clusters as f64).ln()).abs() < 1e-9);
        let single = vec![0u32; reps * 3];
        prop_assert!(recommendation_entropy(&single, &cat).unwrap().abs() < 1e-9);
    }

    #[test]
    fn unseen_fraction_never_grows_with_history(
        list in prop::collection::vec(0u32..40, 1..12),
        seen in prop::collection::btree_set(0u32..40, 0..30),
        extra in prop::collection::btree_set(0u32..40, 0..10),
    ) {
        let before = unseen_fraction(&list, |i| seen.contains(&i));
        let after = unseen_fraction(&list, |i| seen.contains(&i) || extra.contains(&i));
        prop_assert!(after <= before);
        prop_assert!((0.0..=1.0).contains(&before));
    }

    #[test]
    fn top_k_matches_full_sort_and_ignores_offsets(
        raw in prop::collection::vec(-64i32..64, 1..60),
        k in 0usize..70,
        offset in -1000i32..1000,
        excluded in prop::collection::btree_set(0u32..60, 0..10),
    ) {
        // multiples of 1/8 keep the shifted scores exact
        let scores: Vec<f64> = raw.iter().map(|&r| r as f64 / 8.0).collect();
        let shifted: Vec<f64> = scores.iter().map(|s| s + offset as f64).collect();
        let got = top_k(&scores, k, |i| excluded.contains(&i));
        let mut oracle: Vec<u32> = (0..scores.len() as u32).filter(|i| !excluded.contains(i)).collect();
        oracle.sort_by(|&a, &b| scores[b as usize].partial_cmp(&scores[a as usize]).unwrap().then(a.cmp(&b)));
        oracle.truncate(k);
        prop_assert_eq!(&got, &oracle);
        prop_assert_eq!(top_k(&shifted, k, |i| excluded.contains(&i)), got);
    }

    #[test]
    fn split_is_an_order_preserving_partition(
        gaps in prop::collection::vec(prop::collection::vec(0i64..50, 1..25), 1..6),
        fraction in 0.05f64..0.95,
    ) {
        let mut rows = Vec::new();
        for (u, g) in gaps.iter().enumerate() {
            let mut t = 0;
            for (p, d) in g.iter().enumerate() {
                t += d;
                rows.push((format!("u{u}"), format!("i{}", (p * 7 + u) % 11), t));
            }
        }
        let borrowed: Vec<(&str, &str, i64)> = rows.iter().map(|(u, i, t)| (u.as_str(), i.as_str(), *t)).collect();
        let log = log_from_rows(&borrowed);
        let split = temporal_split(&log, fraction).unwrap();
        for u in 0..log.n_users() as u32 {
            let mut joined = split.train.history(u).to_vec();
            joined.extend_from_slice(split.test.history(u));
            prop_assert_eq!(joined.as_slice(), log.history(u));
            prop_assert_eq!(split.train.history_len(u), train_prefix_len(log.history_len(u), fraction));
        }
    }

    #[test]
    fn sessionize_is_idempotent_on_its_boundaries(
        gaps in prop::collection::vec(0i64..4000, 1..60),
        gap_seconds in 1u64..3000,
    ) {
        let mut t = 0;
        let rows: Vec<(String, i64)> = gaps.iter().enumerate().map(|(p, d)| { t += d; (format!("i{p}"), t) }).collect();
        let borrowed: Vec<(&str, &str, i64)> = rows.iter().map(|(i, t)| ("u", i.as_str(), *t)).collect();
        let log = log_from_rows(&borrowed);
        let sessions = sessionize(&log, gap_seconds).unwrap();
        prop_assert_eq!(sessions.first().unwrap().start, 0);
        prop_assert_eq!(sessions.last().unwrap().end, gaps.len());
        for s in &sessions {
            let sub: Vec<(&str, &str, i64)> = borrowed[s.start..s.end].to_vec();
            let again = sessionize(&log_from_rows(&sub), gap_seconds).unwrap();
            prop_assert_eq!(again.len(), 1);
            prop_assert_eq!(again[0].len(), s.len());
        }
        for w in sessions.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
        }
    }

    #[test]
    fn telescoping(
        users in prop::collection::vec(prop::collection::vec((1u32..11, any::<bool>()), 1..80), 1..8),
        min_events in 1usize..4,
    ) {
        for (u, evs) in users.iter().enumerate() {
            let events: Vec<_> = evs.iter().map(|&(q, h)| labelled(u as u32, q, h)).collect();
            let p = profile_user(u as u32, &events, 10, min_events, Axis::Entropy, UtilityProxy::Hit).unwrap();
            let means = p.means();
            if means.len() < 2 {
                prop_assert!(p.insufficient);
                continue;
            }
            let sum: f64 = p.deltas.iter().map(|d| d.value).sum();
            let span = means.last().unwrap().1 - means[0].1;
            prop_assert!((sum - span).abs() <= 1e-12);
        }
    }

    #[test]
    fn quantiles_are_ordered(values in prop::collection::vec(-5.0f64..5.0, 1..300), k in 1usize..16) {
        let mut events: Vec<_> = values.iter().map(|&v| event(0, v, true)).collect();
        let scheme = assign_quantiles(&mut events, k, Axis::Entropy).unwrap();
        prop_assert!(scheme.boundaries.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(scheme.n_quantiles() <= k);
        for a in &events {
            for b in &events {
                if a.quantile < b.quantile {
                    prop_assert!(a.entropy <= b.entropy);
                }
            }
        }
    }

    #[test]
    fn larger_m_never_fires_earlier(
        deltas in prop::collection::vec(prop_oneof![Just(0.0), -0.2f64..0.2], 1..12),
        m in 1usize..5,
    ) {
        use satscope_core::saturation::{Delta, SaturationProfile};
        let profile = SaturationProfile {
            user: 0,
            n_events: 0,
            stats: vec![],
            populated: vec![],
            deltas: deltas.iter().enumerate().map(|(j, &v)| Delta { k: j as u32 + 2, value: v, var_u: 0.0 }).collect(),
            insufficient: false,
            saturation_index: None,
            rule: RuleFired::None,
        };
        // a window longer than any profile switches rule B off
        let cfg = |m| DetectionConfig { m, variance_window: 100, ..Default::default() };
        let (a, _) = detect_saturation(&profile, &cfg(m));
        let (b, _) = detect_saturation(&profile, &cfg(m + 1));
        if let Some(b) = b {
            prop_assert!(a.is_some_and(|a| a <= b));
        }
    }

    #[test]
    fn aggregate_curve_is_weighted_user_mean(
        users in prop::collection::vec(prop::collection::vec((1u32..6, any::<bool>()), 1..40), 1..10),
    ) {
        let events: Vec<_> = users
            .iter()
            .enumerate()
            .flat_map(|(u, evs)| evs.iter().map(move |&(q, h)| labelled(u as u32, q, h)))
            .collect();
        let curve = aggregate_curve(&events, 5, Axis::Entropy, UtilityProxy::Hit).unwrap();
        let cfg = DetectionConfig { min_events_per_quantile: 1, ..Default::default() };
        let profiles = profile_all(&events, 5, Axis::Entropy, UtilityProxy::Hit, &cfg).unwrap();
        for point in &curve {
            let q = point.k as usize - 1;
            let (mut num, mut den) = (0.0, 0usize);
            for p in &profiles {
                let s = p.stats[q];
                if s.count > 0 {
                    num += s.mean_u() * s.count as f64;
                    den += s.count;
                }
            }
            prop_assert_eq!(den, point.n_events);
            prop_assert!((num / den as f64 - point.mean_u).abs() < 1e-12);
        }
    }
}

#[test]
fn quantile_counts_match_sort_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
    let values: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
    let k = 7;
    let scheme = QuantileScheme::from_values(&values, k).unwrap();
    let mut counts = vec![0usize; scheme.n_quantiles()];
    for &v in &values {
        counts[scheme.label(v) as usize - 1] += 1;
    }
    // sort oracle: ranks split into K nearly equal blocks
    let n = values.len();
    let oracle: Vec<usize> = (1..=k)
        .map(|j| (j * n).div_ceil(k) - ((j - 1) * n).div_ceil(k))
        .collect();
    assert_eq!(scheme.n_quantiles(), k);
    for (c, o) in counts.iter().zip(&oracle) {
        assert!(
            c.abs_diff(*o) <= 1 && c.abs_diff(n / k) <= 1,
            "{counts:?} vs {oracle:?}"
        );
    }
}
