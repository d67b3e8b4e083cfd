use causalmesh::workload::{KeyGen, Shape, WorkloadSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn rank_one_frequency_matches_harmonic_number() {
    let spec = WorkloadSpec {
        key_pool_size: 10_000,
        zipf_theta: 1.0,
        ..WorkloadSpec::default()
    };
    let gen = KeyGen::new(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 1_000_000;
    let hits = (0..draws).filter(|_| gen.rank(&mut rng) == 1).count();

    let h: f64 = (1..=10_000).map(|r| 1.0 / r as f64).sum();
    let p = 1.0 / h;
    let sigma = (p * (1.0 - p) / draws as f64).sqrt();
    let freq = hits as f64 / draws as f64;
    assert!((freq - p).abs() <= 3.0 * sigma, "freq {freq}, expected {p} +- {}", 3.0 * sigma);
}

#[test]
fn tiny_theta_is_close_to_uniform() {
    let spec = WorkloadSpec {
        key_pool_size: 20,
        zipf_theta: 1e-9,
        ..WorkloadSpec::default()
    };
    let gen = KeyGen::new(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 200_000;
    let mut counts = [0u64; 20];
    for _ in 0..draws {
        counts[gen.rank(&mut rng) - 1] += 1;
    }
    let e = draws as f64 / 20.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 19 degrees of freedom; 43.8 is the 0.1% critical value.
    assert!(chi2 < 43.8, "chi2 {chi2}");
}

#[test]
fn generated_workloads_are_valid_dags() {
    for shape in [Shape::RandomDag, Shape::Micro3Fn, Shape::WriteThenRead2Fn] {
        for tcc in [false, true] {
            let w = WorkloadSpec {
                key_pool_size: 100,
                requests: 200,
                shape,
                tcc,
                seed: 3,
                ..WorkloadSpec::default()
            }
            .build()
            .unwrap();
            assert_eq!(w.workflows.len(), 200);
            for d in &w.workflows {
                d.validate().unwrap();
            }
        }
    }
}
