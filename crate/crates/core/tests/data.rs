use std::collections::BTreeSet;

use fedagg_core::data::{
    heterogeneity, label_histograms, load_idx, parse_idx, partition_dirichlet, partition_iid, partition_pathological,
    synth_generate, Dataset, Partition,
};
use fedagg_core::federation::evaluate;
use fedagg_core::{gradient, DataError, F64Dataset, F64Params, ModelSpec, Samples};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn blobs(k: usize, per_class: usize, seed: u64) -> F64Dataset {
    synth_generate(k, k.max(2), per_class, 3.0, seed).unwrap()
}

fn covered(p: &Partition) -> BTreeSet<usize> {
    p.assignments.iter().flatten().copied().collect()
}

fn assert_disjoint(p: &Partition, n: usize) {
    p.validate(n).unwrap();
    let total: usize = p.sizes().iter().sum();
    assert_eq!(covered(p).len(), total);
}

fn idx_bytes(images: &[[u8; 4]], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    for word in [0x0803u32, images.len() as u32, 2, 2] {
        img.extend_from_slice(&word.to_be_bytes());
    }
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = Vec::new();
    for word in [0x0801u32, labels.len() as u32] {
        lab.extend_from_slice(&word.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (img, lab)
}

#[test]
fn idx_pair_parses_and_scales() {
    let (img, lab) = idx_bytes(&[[0, 255, 51, 102], [255, 255, 0, 0]], &[3, 7]);
    let ds: F64Dataset = parse_idx(&img, &lab, "img", "lab").unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.input_dim(), 4);
    assert_eq!(ds.num_classes(), 8);
    assert_eq!(ds.features(0), &[0.0, 1.0, 0.2, 0.4]);
    assert_eq!(ds.label(1), 7);
}

#[test]
fn idx_errors_are_specific() {
    let (img, lab) = idx_bytes(&[[0; 4], [0; 4]], &[1, 2]);
    let mut bad_magic = img.clone();
    bad_magic[3] = 0x02;
    assert!(matches!(parse_idx::<f64>(&bad_magic, &lab, "i", "l"), Err(DataError::Format { .. })));
    let (_, short_lab) = idx_bytes(&[[0; 4]], &[1]);
    assert!(matches!(parse_idx::<f64>(&img, &short_lab, "i", "l"), Err(DataError::Consistency(_))));
    let cut = &img[..img.len() - 1];
    match parse_idx::<f64>(cut, &lab, "i", "l") {
        Err(DataError::Io { source, .. }) => assert_eq!(source.kind(), std::io::ErrorKind::UnexpectedEof),
        other => panic!("expected truncation error, got {other:?}"),
    }
}

#[test]
fn idx_files_load_from_disk() {
    let dir = std::env::temp_dir().join(format!("idx-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (img, lab) = idx_bytes(&[[1, 2, 3, 4]], &[0]);
    std::fs::write(dir.join("img"), img).unwrap();
    std::fs::write(dir.join("lab"), lab).unwrap();
    let ds: F64Dataset = load_idx(&dir.join("img"), &dir.join("lab")).unwrap();
    assert_eq!(ds.len(), 1);
    assert!(matches!(load_idx::<f64>(&dir.join("missing"), &dir.join("lab")), Err(DataError::Io { .. })));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn dataset_rejects_bad_labels() {
    assert!(Dataset::<f64>::new(vec![0.0, 1.0], vec![0, 3], 1, 3).is_err());
    assert!(Dataset::<f64>::new(vec![0.0, 1.0, 2.0], vec![0, 1], 1, 3).is_err());
}

#[test]
fn iid_clients_have_equal_sizes_and_flat_labels() {
    let ds = blobs(10, 200, 1);
    let p = partition_iid(&ds, 20, 7).unwrap();
    assert_disjoint(&p, ds.len());
    assert!(p.sizes().iter().all(|&s| s == 100));
    let h = heterogeneity(&p, &ds).unwrap();
    assert!(h.mean_distance < 0.05, "{}", h.mean_distance);
}

#[test]
fn partitions_are_deterministic_in_seed() {
    let ds = blobs(4, 150, 2);
    assert_eq!(partition_iid(&ds, 6, 3).unwrap(), partition_iid(&ds, 6, 3).unwrap());
    assert_ne!(partition_iid(&ds, 6, 3).unwrap(), partition_iid(&ds, 6, 4).unwrap());
    assert_eq!(
        partition_dirichlet(&ds, 0.5, 6, false, 9).unwrap(),
        partition_dirichlet(&ds, 0.5, 6, false, 9).unwrap()
    );
    assert_eq!(
        partition_pathological(&ds, 12, 50, 2, 6, 1).unwrap(),
        partition_pathological(&ds, 12, 50, 2, 6, 1).unwrap()
    );
}

#[test]
fn pathological_matches_hand_replay() {
    let ds = blobs(5, 40, 3);
    let (n_shards, shard_size, per_client, n_clients, seed) = (10, 20, 2, 5, 42);
    let p = partition_pathological(&ds, n_shards, shard_size, per_client, n_clients, seed).unwrap();
    let labels = ds.labels();
    let mut sorted: Vec<usize> = (0..labels.len()).collect();
    sorted.sort_by_key(|&j| (labels[j], j));
    let mut ids: Vec<usize> = (0..n_shards).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for i in 0..n_clients {
        let mut expected: Vec<usize> = ids[i * per_client..(i + 1) * per_client]
            .iter()
            .flat_map(|&s| sorted[s * shard_size..(s + 1) * shard_size].to_vec())
            .collect();
        expected.sort_unstable();
        assert_eq!(p.assignments[i], expected, "client {i}");
    }
}

#[test]
fn pathological_clients_see_at_most_two_labels() {
    // 10 classes x 600 samples, 200 shards of 30, 2 per client: every shard is single-label
    let ds = blobs(10, 600, 4);
    let p = partition_pathological(&ds, 200, 30, 2, 100, 5).unwrap();
    assert_disjoint(&p, ds.len());
    let hist = label_histograms(&p, &ds);
    let distinct: Vec<usize> = hist.iter().map(|h| h.iter().filter(|&&c| c > 0).count()).collect();
    assert!(distinct.iter().all(|&d| (1..=2).contains(&d)));
    let two = distinct.iter().filter(|&&d| d == 2).count();
    assert!(two >= 80, "{two} clients with two labels");
}

#[test]
fn pathological_rejects_inconsistent_shards() {
    let ds = blobs(2, 50, 5);
    assert!(matches!(partition_pathological(&ds, 5, 10, 2, 3, 0), Err(DataError::Config(_))));
    assert!(matches!(partition_pathological(&ds, 6, 20, 2, 3, 0), Err(DataError::Config(_))));
}

#[test]
fn huge_concentration_dirichlet_is_near_uniform() {
    let ds = blobs(10, 1000, 6);
    let p = partition_dirichlet(&ds, 1e6, 10, false, 11).unwrap();
    assert_disjoint(&p, ds.len());
    assert_eq!(covered(&p).len(), ds.len());
    for (i, d) in heterogeneity(&p, &ds).unwrap().per_client_distance.iter().enumerate() {
        // total variation is half the L1 distance
        assert!(d / 2.0 < 0.05, "client {i}: {d}");
    }
}

#[test]
fn equal_size_dirichlet_balances_clients() {
    let ds = blobs(10, 100, 7);
    let p = partition_dirichlet(&ds, 0.3, 8, true, 2).unwrap();
    assert_disjoint(&p, ds.len());
    assert!(p.sizes().iter().all(|&s| s == ds.len() / 8));
}

#[test]
fn heterogeneity_orders_with_concentration() {
    let ds = blobs(10, 300, 8);
    let mean = |p: &Partition| heterogeneity(p, &ds).unwrap().mean_distance;
    let mut order = [0f64; 4];
    for seed in 0..5 {
        order[0] += mean(&partition_pathological(&ds, 60, 50, 2, 30, seed).unwrap());
        order[1] += mean(&partition_dirichlet(&ds, 0.1, 30, true, seed).unwrap());
        order[2] += mean(&partition_dirichlet(&ds, 10.0, 30, true, seed).unwrap());
        order[3] += mean(&partition_iid(&ds, 30, seed).unwrap());
    }
    assert!(order.windows(2).all(|w| w[0] > w[1]), "{order:?}");
}

#[test]
fn heterogeneity_of_single_label_client_is_hand_computed() {
    // two balanced classes; a client holding only class 0 sits at |1 - 0.5| + |0 - 0.5| = 1
    let ds = Dataset::new(vec![0.0; 4], vec![0, 0, 1, 1], 1, 2).unwrap();
    let p = Partition {
        assignments: vec![vec![0, 1], vec![2, 3]],
        scheme: fedagg_core::data::PartitionScheme::Iid,
        seed: 0,
    };
    let h = heterogeneity(&p, &ds).unwrap();
    assert_eq!(h.per_client_distance, vec![1.0, 1.0]);
    let overlapping = Partition {
        assignments: vec![vec![0, 1], vec![1]],
        ..p
    };
    assert!(heterogeneity(&overlapping, &ds).is_err());
}

#[test]
fn synthetic_blobs_are_learnable() {
    let train = synth_generate::<f64>(3, 5, 300, 4.0, 1).unwrap();
    let test = synth_generate::<f64>(3, 5, 300, 4.0, 2).unwrap();
    assert_eq!(train.class_counts(), vec![300; 3]);
    let spec = ModelSpec::linear(5, 3);
    let mut w = F64Params::zeros(spec.param_count());
    for _ in 0..200 {
        let g = gradient(&spec, &w, &train).unwrap();
        w.axpy(-0.5, &g);
    }
    let (acc, _) = evaluate(&spec, &w, &test, 128).unwrap();
    assert!(acc > 0.9, "accuracy {acc}");
    assert_eq!(synth_generate::<f64>(3, 5, 10, 4.0, 1).unwrap(), synth_generate::<f64>(3, 5, 10, 4.0, 1).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn every_scheme_yields_disjoint_clients(seed in any::<u64>(), n_clients in 1usize..12, sigma in 0.05f64..5.0, equal in any::<bool>()) {
        let ds = blobs(4, 60, seed % 7);
        let iid = partition_iid(&ds, n_clients, seed).unwrap();
        assert_disjoint(&iid, ds.len());
        prop_assert_eq!(iid.sizes().iter().sum::<usize>(), ds.len() - ds.len() % n_clients);
        let dir = partition_dirichlet(&ds, sigma, n_clients, equal, seed).unwrap();
        assert_disjoint(&dir, ds.len());
        if !equal {
            prop_assert_eq!(covered(&dir).len(), ds.len());
        }
        let path = partition_pathological(&ds, 2 * n_clients, 240 / (2 * n_clients), 2, n_clients, seed).unwrap();
        assert_disjoint(&path, ds.len());
        for a in iid.assignments.iter().chain(&dir.assignments).chain(&path.assignments) {
            prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn histograms_sum_to_sizes(seed in any::<u64>(), sigma in 0.1f64..3.0) {
        let ds = blobs(5, 40, 1);
        let p = partition_dirichlet(&ds, sigma, 7, false, seed).unwrap();
        let h = label_histograms(&p, &ds);
        for (row, size) in h.iter().zip(p.sizes()) {
            prop_assert_eq!(row.iter().sum::<usize>(), size);
        }
        let r = heterogeneity(&p, &ds).unwrap();
        prop_assert!(r.per_client_distance.iter().all(|&d| (0.0..=2.0).contains(&d)));
    }
}
