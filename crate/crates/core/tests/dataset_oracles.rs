use std::collections::BTreeSet;

use owsc_core::dataset::{
    encode_features, generate, generate_with_truth, split_by_state, Split, SynthConfig,
};
use owsc_core::rng::seeded;
use rand::Rng;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn dist32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn confusers_found_by_pairwise_latent_scan() {
    let cfg = SynthConfig {
        n_categories: 4,
        objects_per_category: 10,
        confuser_fraction: 0.5,
        ..SynthConfig::default()
    };
    let (ds, truth) = generate_with_truth(&cfg).unwrap();
    let n = truth.latents.len();
    let mut flagged = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            let (ci, cj) = (ds.category_of(i as u32), ds.category_of(j as u32));
            if ci != cj && dist(&truth.latents[i], &truth.latents[j]) < cfg.confuser_epsilon {
                flagged.insert(i);
                flagged.insert(j);
            }
        }
    }
    assert!(
        flagged.len() >= 20,
        "only {} objects in near-duplicate groups",
        flagged.len()
    );
    for o in &flagged {
        assert!(truth.is_confuser(*o as u32));
    }
}

#[test]
fn planted_confusers_are_closer_than_any_other_cross_category_pair() {
    let cfg = SynthConfig {
        n_categories: 3,
        objects_per_category: 6,
        states_per_object: 3,
        views_per_state: 2,
        feature_dim: 16,
        confuser_fraction: 0.34,
        noise_sigma: 0.0,
        seed: 19,
        ..SynthConfig::default()
    };
    let (ds, truth) = generate_with_truth(&cfg).unwrap();
    let recs = ds.records();
    let group_of = |o: u32| truth.confuser_groups.iter().position(|g| g.contains(&o));
    let mut inside = f64::INFINITY;
    let mut outside = f64::INFINITY;
    for a in recs {
        for b in recs {
            if a.object_id >= b.object_id {
                continue;
            }
            let d = dist32(&a.feature, &b.feature);
            match (group_of(a.object_id), group_of(b.object_id)) {
                (Some(g), Some(h)) if g == h => inside = inside.min(d),
                (None, None) if a.category_id != b.category_id => outside = outside.min(d),
                _ => {}
            }
        }
    }
    assert!(!truth.confuser_groups.is_empty());
    assert!(inside < outside, "inside {inside} outside {outside}");
}

#[test]
fn generator_bytes_are_reproducible() {
    let cfg = SynthConfig::default();
    let a = encode_features(&generate(&cfg).unwrap());
    let b = encode_features(&generate(&cfg).unwrap());
    assert_eq!(a, b);
}

/// Independent seeded shuffle: objects ascending, each object's states
/// ascending, Fisher–Yates from the back, first ⌈ratio·n⌉ go to test.
fn reference_test_states(
    objects: &[(u32, Vec<u32>)],
    ratio: f64,
    seed: u64,
) -> BTreeSet<(u32, u32)> {
    let mut rng = seeded(seed);
    let mut out = BTreeSet::new();
    for (o, states) in objects {
        let mut s = states.clone();
        let mut i = s.len() - 1;
        while i > 0 {
            let j = rng.random_range(0..=i);
            s.swap(i, j);
            i -= 1;
        }
        let n_test = (ratio * s.len() as f64).ceil() as usize;
        out.extend(s[..n_test].iter().map(|&st| (*o, st)));
    }
    out
}

#[test]
fn split_matches_reference_shuffle() {
    let cfg = SynthConfig {
        n_categories: 2,
        objects_per_category: 3,
        states_per_object: 8,
        views_per_state: 2,
        feature_dim: 4,
        ..SynthConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    for seed in [0u64, 5, 99] {
        let split = split_by_state(&ds, 0.25, seed).unwrap();
        let got: BTreeSet<(u32, u32)> = split
            .records()
            .iter()
            .filter(|r| r.split == Split::Test)
            .map(|r| (r.object_id, r.state_id))
            .collect();
        let objects: Vec<(u32, Vec<u32>)> = ds
            .objects()
            .into_iter()
            .map(|o| (o, ds.states_of(o)))
            .collect();
        let expected = reference_test_states(&objects, 0.25, seed);
        assert_eq!(got, expected);
        for o in ds.objects() {
            assert_eq!(expected.iter().filter(|(eo, _)| *eo == o).count(), 2);
        }
        // every view of a state lands on the same side
        for r in split.records() {
            assert_eq!(
                r.split == Split::Test,
                got.contains(&(r.object_id, r.state_id))
            );
        }
    }
}
