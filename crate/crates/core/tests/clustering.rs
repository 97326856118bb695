use behavclust::clustering::*;
use behavclust::data::{generate_synthetic, SyntheticSpec};
use behavclust::dissimilarity::{build_matrix, DissimilarityOptions, Measure};
use behavclust::var_model::{fit_accounts, AccountFit, VarOptions};

fn fits(n_per_cluster: usize, seed: u64) -> Vec<AccountFit> {
    let spec = SyntheticSpec { accounts_per_cluster: n_per_cluster, seed, ..SyntheticSpec::default() };
    let p = generate_synthetic(&spec).unwrap();
    let (fits, excluded) = fit_accounts(&p.accounts, &VarOptions::default());
    assert!(excluded.is_empty());
    fits
}

fn opts(measure: Measure) -> DissimilarityOptions {
    DissimilarityOptions { measure, n_samples: 4000, seed: 17, ..Default::default() }
}

#[test]
fn copy_of_a_medoid_joins_its_cluster() {
    let f = fits(8, 1);
    let o = opts(Measure::Ellipsoid);
    let m = build_matrix(&f, &o).unwrap();
    let r = k_medoids(&m, 3, 0).unwrap();
    let medoids: Vec<AccountFit> = r.medoid_indices.iter().map(|&i| f[i].clone()).collect();
    let twin = AccountFit { id: "twin".into(), fit: medoids[1].fit.clone() };
    let d = test_medoid_dissimilarities(std::slice::from_ref(&twin), &medoids, &o).unwrap();
    assert_eq!(d[0][1], 0.0);
    assert_eq!(assign_test_accounts(&[twin], &medoids, &o).unwrap(), vec![vec![0, 1, 0]]);
}

#[test]
fn test_assignment_agrees_with_full_matrix() {
    for measure in [Measure::Ellipsoid, Measure::Euclidean] {
        let all = fits(10, 2);
        let o = opts(measure);
        let (train, test) = (&all[..20], &all[20..30]);
        let m = build_matrix(train, &o).unwrap();
        let r = k_medoids(&m, 3, 0).unwrap();
        let medoids: Vec<AccountFit> = r.medoid_indices.iter().map(|&i| train[i].clone()).collect();
        let z = assign_test_accounts(test, &medoids, &o).unwrap();
        assert_eq!(z, assign_test_accounts(test, &medoids, &o).unwrap());

        // full matrix over medoids and the 10 test accounts
        let mut joint = medoids.clone();
        joint.extend_from_slice(test);
        let full = build_matrix(&joint, &o).unwrap();
        for (t, zt) in z.iter().enumerate() {
            let row: Vec<f64> = (0..3).map(|l| full.get(3 + t, l)).collect();
            assert_eq!(zt, &assign_to_medoids(&row).unwrap());
        }
    }
}

#[test]
fn clustering_ignores_thread_count() {
    let f = fits(12, 3);
    let o = opts(Measure::Ellipsoid);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| k_medoids(&build_matrix(&f, &o).unwrap(), 3, 0).unwrap())
    };
    assert_eq!(run(1), run(4));
}
