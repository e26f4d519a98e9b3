//! Cross-module invariants checked on generated inputs.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use xdecode::adaptation::{
    adapt, iwn_weights, kmm_weights, median_distance, rtlc_transfer, ulsif_fit, DomainPair, KmmProblem, Method,
    MethodParams,
};
use xdecode::dataset::{Domain, SubjectDataset, TrialTable};
use xdecode::exec::Execution;
use xdecode::io::{read_dataset, write_dataset, Manifest};
use xdecode::linear::{fit_logistic, FitConfig, LinearClassifier};
use xdecode::partition::make_partition;
use xdecode::rng::{rng_from_seed, standard_normal};
use xdecode::stats::{shaffer_adjust, sign_flip_permutation_test, PermutationConfig, TfceConfig};
use xdecode::volume::{BrainMask, SampleStack, VoxelGrid};

fn pair(seed: u64, ns: usize, nt: usize, d: usize, shift: f64) -> DomainPair {
    let mut rng = rng_from_seed(seed);
    let mut draw = |n: usize, off: f64| {
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x = DMatrix::from_fn(n, d, |i, j| {
            let mean = if j == 0 { f64::from(y[i]) * 2.0 - 1.0 } else { 0.0 };
            mean + off + standard_normal(&mut rng)
        });
        (x, y)
    };
    let (xs, ys) = draw(ns, 0.0);
    let (xt, yt) = draw(nt, shift);
    DomainPair::new(xs, ys, xt, yt).unwrap()
}

fn quick_params(seed: u64) -> MethodParams {
    MethodParams {
        iwn_steps: 5,
        seed,
        ..MethodParams::default()
    }
}

fn trial_table(n_src_trials: usize, n_tgt_trials: usize, len: usize) -> TrialTable {
    let (mut ids, mut labels, mut domains) = (Vec::new(), Vec::new(), Vec::new());
    let mut next = 0u64;
    for (domain, n) in [(Domain::Source, n_src_trials), (Domain::Target, n_tgt_trials)] {
        for t in 0..n {
            for _ in 0..len {
                ids.push(next);
                labels.push((t % 2) as u8);
                domains.push(domain);
            }
            next += 1;
        }
    }
    TrialTable::new(ids, labels, domains).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rtlc_distance_shrinks_with_lambda(seed in 0u64..10_000, n in 2usize..30, d in 1usize..12) {
        let mut rng = rng_from_seed(seed);
        let xt = DMatrix::from_fn(n, d, |_, _| standard_normal(&mut rng));
        let yt: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let source = LinearClassifier {
            beta: (0..d).map(|_| standard_normal(&mut rng)).collect(),
            intercept: standard_normal(&mut rng),
        };
        let ts = DVector::from_iterator(d + 1, source.beta.iter().copied().chain([source.intercept]));
        let mut prev = f64::INFINITY;
        for lam in [0.01, 0.1, 1.0, 10.0, 100.0, 1e4] {
            let m = rtlc_transfer(&source, &xt, &yt, lam, true).unwrap();
            let t = DVector::from_iterator(d + 1, m.beta.iter().copied().chain([m.intercept]));
            let dist = (t - &ts).norm();
            prop_assert!(dist <= prev * (1.0 + 1e-10) + 1e-14);
            prev = dist;
        }
    }

    #[test]
    fn unsupervised_methods_never_read_target_labels(seed in 0u64..10_000, shift in 0.0f64..1.5) {
        let p = pair(seed, 30, 16, 3, shift);
        let mut relabeled = p.clone();
        let mut rng = rng_from_seed(seed ^ 0xabc);
        for v in relabeled.yt.iter_mut() {
            *v = (rand::RngCore::next_u32(&mut rng) & 1) as u8;
        }
        let params = quick_params(seed);
        let cfg = FitConfig::default();
        for m in [Method::Kmm, Method::Ulsif, Method::Rulsif, Method::Nnw, Method::Sa, Method::Iwn] {
            // a degenerate weighting must fail the same way for both label sets
            let out = |q: &DomainPair| adapt(m, q, &params, &cfg).map(|a| (a.model, a.weights)).map_err(|e| e.to_string());
            prop_assert_eq!(out(&p), out(&relabeled), "{}", m);
        }
    }

    #[test]
    fn importance_weights_are_finite_and_nonnegative(seed in 0u64..10_000, shift in 0.0f64..3.0) {
        let p = pair(seed, 30, 16, 2, shift);
        let params = quick_params(seed);
        let bw = median_distance(&p.xs, &p.xt);
        let centers = p.xt.clone();
        let weights = [
            ("kmm", kmm_weights(&p, &params).unwrap()),
            ("ulsif", ulsif_fit(&p.xs, &p.xt, centers.clone(), bw, 0.1, 0.0).unwrap().weights),
            ("rulsif", ulsif_fit(&p.xs, &p.xt, centers, bw, 0.1, 0.1).unwrap().weights),
            ("iwn", iwn_weights(&p, &params).unwrap().0),
        ];
        for (name, w) in weights {
            prop_assert_eq!(w.len(), 30);
            prop_assert!(w.iter().all(|v| v.is_finite() && *v >= 0.0), "{}", name);
        }
        // the final fit either succeeds with valid weights or reports degenerate data
        for m in [Method::Kmm, Method::Ulsif, Method::Rulsif, Method::Nnw, Method::Iwn] {
            match adapt(m, &p, &params, &FitConfig::default()) {
                Ok(a) => {
                    let w = a.weights.unwrap().w;
                    prop_assert!(w.iter().all(|v| v.is_finite() && *v >= 0.0), "{}", m);
                }
                Err(e) => prop_assert!(e.is_fit_failure(), "{}: {}", m, e),
            }
        }
    }

    #[test]
    fn kmm_never_worse_than_uniform(seed in 0u64..10_000, ns in 5usize..40, shift in 0.0f64..2.0) {
        let p = pair(seed, ns, 20, 2, shift);
        let prob = KmmProblem::new(&p.xs, &p.xt, 1.0, 1000.0, 0.5).unwrap();
        let w = prob.solve(20_000, 1e-7).unwrap();
        let ones = DVector::from_element(ns, 1.0);
        prop_assert!(prob.is_feasible(&w, 1e-9));
        prop_assert!(prob.objective(&w) <= prob.objective(&ones) + 1e-6);
    }

    #[test]
    fn duplicated_row_equals_doubled_weight(seed in 0u64..10_000, row in 0usize..20) {
        let p = pair(seed, 20, 0, 3, 0.0);
        let cfg = FitConfig { tol: 1e-9, ..FitConfig::default() };
        let mut w = vec![1.0; 20];
        w[row] = 2.0;
        let doubled = fit_logistic(&p.xs, &p.ys, &w, &cfg).unwrap();
        let mut x = p.xs.clone().insert_row(20, 0.0);
        for j in 0..3 {
            x[(20, j)] = p.xs[(row, j)];
        }
        let mut y = p.ys.clone();
        y.push(p.ys[row]);
        let dup = fit_logistic(&x, &y, &[1.0; 21], &cfg).unwrap();
        for (a, b) in doubled.beta.iter().chain([&doubled.intercept]).zip(dup.beta.iter().chain([&dup.intercept])) {
            prop_assert!((a - b).abs() <= 1e-7, "{} vs {}", a, b);
        }
    }

    #[test]
    fn plans_never_share_trials(seed in 0u64..100_000, nt in 2usize..30, len in 1usize..4) {
        let table = trial_table(40, 30, len);
        let plan = make_partition(&table, nt, seed).unwrap();
        prop_assert!(plan.audit(&table).is_none());
        let trials = |idx: &[usize]| idx.iter().map(|&i| table.trial_id(i)).collect::<std::collections::BTreeSet<_>>();
        prop_assert!(trials(&plan.source_train).is_disjoint(&trials(&plan.source_test)));
        prop_assert!(trials(&plan.target_train).is_disjoint(&trials(&plan.target_test)));
        prop_assert_eq!(plan.target_train.len(), nt);
    }

    #[test]
    fn shaffer_is_monotone_in_raw_p(seed in 0u64..10_000, k in 2usize..7) {
        let m = k * (k - 1) / 2;
        let mut rng = rng_from_seed(seed);
        let raw: Vec<f64> = (0..m).map(|_| xdecode::rng::uniform01(&mut rng).powi(2)).collect();
        let adj = shaffer_adjust(&raw, k).unwrap();
        for i in 0..m {
            for j in 0..m {
                if raw[i] < raw[j] {
                    prop_assert!(adj[i] <= adj[j]);
                }
            }
            prop_assert!(adj[i] >= raw[i] && adj[i] <= 1.0);
        }
    }

    #[test]
    fn p_values_respect_the_permutation_floor(seed in 0u64..10_000, n in 2usize..9, n_perm in 1usize..60) {
        let grid = VoxelGrid::isotropic([4, 4, 3], 3.0).unwrap();
        let mask = BrainMask::full(grid);
        let mut rng = rng_from_seed(seed);
        let maps: Vec<Vec<f64>> = (0..n).map(|_| (0..48).map(|_| 0.3 + standard_normal(&mut rng)).collect()).collect();
        let cfg = PermutationConfig { n_perm, sigma_mm: 3.0, seed };
        let p = sign_flip_permutation_test(&maps, &mask, &cfg, TfceConfig::default(), Execution::Sequential).unwrap();
        let floor = 1.0 / p.n_permutations as f64;
        prop_assert!(p.p.iter().all(|&v| v >= floor - 1e-15 && v <= 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn bundles_round_trip_bit_exactly(seed in 0u64..10_000, nx in 1usize..5, ny in 1usize..5, nz in 1usize..4) {
        let grid = VoxelGrid::isotropic([nx, ny, nz], 2.5).unwrap();
        let n_vox = grid.n_voxels();
        let mut rng = rng_from_seed(seed);
        let mut included: Vec<bool> = (0..n_vox).map(|_| rand::RngCore::next_u32(&mut rng) & 3 != 0).collect();
        included[0] = true;
        let mask = BrainMask::new(grid, included).unwrap();
        let table = trial_table(2, 2, 2);
        let n = table.len();
        // arbitrary bit patterns, including subnormals and signed zeros
        let data: Vec<f32> = (0..n * n_vox)
            .map(|_| {
                let v = f32::from_bits(rand::RngCore::next_u32(&mut rng));
                if v.is_finite() { v } else { -0.0 }
            })
            .collect();
        let ds = SubjectDataset::new(mask, SampleStack::new([nx, ny, nz], n, data).unwrap(), table).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path(), &Manifest::default()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        let bits = |s: &SampleStack| (0..s.n_samples).flat_map(|i| s.volume(i).iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.samples), bits(&ds.samples));
        prop_assert_eq!(back.mask, ds.mask);
        prop_assert_eq!(back.trials, ds.trials);
    }
}
