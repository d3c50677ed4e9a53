use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;

use coast::data::{
    load_dataset, load_dataset_dir, split_leave_one_out, synth_generate, write_dataset_dir, Domain, FeatureSources,
    SynthConfig, NUM_NEGATIVES,
};
use proptest::prelude::*;

fn fallback() -> FeatureSources {
    FeatureSources { fallback_dim: Some(8), ..Default::default() }
}

#[test]
fn douban_movie_scale_counts_are_exact() {
    const USERS: usize = 2_712;
    const ITEMS: usize = 34_893;
    const ROWS: usize = 1_278_401;
    // lcm(USERS, ITEMS) exceeds ROWS, so every (j mod USERS, j mod ITEMS) pair is distinct.
    let mut body = String::with_capacity(ROWS * 24);
    for j in 0..ROWS {
        let _ = writeln!(body, "u{}\tm{}\tT\t{}", j % USERS, j % ITEMS, 1 + j % 5);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("movie.tsv");
    fs::write(&path, body).unwrap();
    let ds = load_dataset(&path, &fallback(), 5).unwrap();
    let stats = ds.stats();
    assert_eq!(stats.users[1], USERS);
    assert_eq!(stats.items[1], ITEMS);
    assert_eq!(stats.interactions[1], ROWS);
}

#[test]
fn synthetic_dataset_round_trips_through_files() {
    let cfg = SynthConfig {
        n_source_only: 40,
        n_target_only: 30,
        n_overlap: 20,
        n_items: [150, 140],
        seed: 3,
        ..SynthConfig::default()
    };
    let synth = synth_generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset_dir(&synth.dataset, dir.path(), Some(&synth.interests)).unwrap();
    let back = load_dataset_dir(dir.path(), 1).unwrap();
    // Items nobody interacted with are absent from the log, so only users and edges compare.
    let (a, b) = (back.stats(), synth.dataset.stats());
    assert_eq!((a.users, a.interactions, a.overlap), (b.users, b.interactions, b.overlap));
    let labels = fs::read_to_string(dir.path().join("labels.tsv")).unwrap();
    assert_eq!(labels.lines().count(), synth.dataset.n_users());
    // Feature values survive the text round trip bit-exactly.
    let u = back.users.iter().position(|x| x == "u5").unwrap();
    assert_eq!(back.user_features.row(u), synth.dataset.user_features.row(5));
}

#[test]
fn split_over_synthetic_data_is_pure() {
    let synth = synth_generate(&SynthConfig {
        n_source_only: 50,
        n_target_only: 50,
        n_overlap: 25,
        n_items: [200, 200],
        seed: 9,
        ..SynthConfig::default()
    })
    .unwrap();
    let ds = synth.dataset;
    let plan = split_leave_one_out(&ds, 1).unwrap();
    let train = ds.without_held_out(&plan);
    for c in &plan.cases {
        assert_eq!(c.negatives.len(), NUM_NEGATIVES);
        assert!(!train.has_interaction(c.user, c.domain, c.positive));
        assert!(c.negatives.iter().all(|&n| !ds.is_observed(c.user, c.domain, n)));
    }
    assert_eq!(train.n_interactions(Domain::S) + plan.cases_in(Domain::S).count(), ds.n_interactions(Domain::S));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn filter_reaches_fixpoint(
        rows in proptest::collection::vec((0usize..12, 0usize..10, any::<bool>()), 1..150),
        min in 1usize..5,
    ) {
        let mut body = String::new();
        for (u, i, t) in &rows {
            let _ = writeln!(body, "u{u}\ti{i}\t{}\t1", if *t { "T" } else { "S" });
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.tsv");
        fs::write(&path, body).unwrap();
        let ds = load_dataset(&path, &fallback(), min).unwrap();
        let mut user_count: HashMap<usize, usize> = HashMap::new();
        for d in Domain::ALL {
            for (u, items) in ds.positives[d.index()].iter().enumerate() {
                *user_count.entry(u).or_default() += items.len();
            }
            for deg in ds.item_degree(d) {
                prop_assert!(deg >= min);
            }
        }
        for u in 0..ds.n_users() {
            prop_assert!(user_count[&u] >= min);
        }
    }
}
