use nap_core::aggregate::{consensus_merge, nap_sir, parametric_merge, BoundedDensity, DiagonalGaussian, NapMode, SubposteriorEnsemble};
use nap_core::linalg::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn unit_pair() -> SubposteriorEnsemble {
    let members: Vec<Box<dyn BoundedDensity>> = vec![
        Box::new(DiagonalGaussian::new(vec![0.0, 2.0], vec![1.0, 1.0]).unwrap()),
        Box::new(DiagonalGaussian::new(vec![1.0, -2.0], vec![1.0, 1.0]).unwrap()),
    ];
    SubposteriorEnsemble::new(members, vec!["a".into(), "b".into()]).unwrap()
}

/// Product of N(0,1)·N(1,1) per axis is N(0.5, 0.5) and N(0, 0.5): moment
/// errors stay inside 4-sigma bands that shrink like 1/sqrt(R).
#[test]
fn exact_density_harness_converges_in_r() {
    let ens = unit_pair();
    for (i, r) in [1_000usize, 10_000, 100_000].into_iter().enumerate() {
        let out = nap_sir(&ens, 10 * r, r, NapMode::Installments, &mut ChaCha8Rng::seed_from_u64(i as u64)).unwrap();
        let x = &out.samples.values;
        let means = x.column_means();
        let cov = x.covariance();
        let mean_band = 4.0 * (0.5 / r as f64).sqrt();
        let var_band = 4.0 * (2.0 * 0.25 / r as f64).sqrt();
        for (d, target) in [0.5, 0.0].into_iter().enumerate() {
            assert!((means[d] - target).abs() < mean_band, "R={r} dim {d}: mean {}", means[d]);
            assert!((cov.get(d, d) - 0.5).abs() < var_band, "R={r} dim {d}: var {}", cov.get(d, d));
        }
    }
}

#[test]
fn all_mergers_are_deterministic_given_seed() {
    let ens = unit_pair();
    let a = nap_sir(&ens, 2000, 500, NapMode::Installments, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = nap_sir(&ens, 2000, 500, NapMode::Installments, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a.samples.values, b.samples.values);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sets: Vec<Matrix> = (0..3).map(|k| ens.member(k % 2).sample(400, &mut rng)).collect();
    let refs: Vec<&Matrix> = sets.iter().collect();
    let p1 = parametric_merge(&refs, 300, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let p2 = parametric_merge(&refs, 300, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(p1.samples.values, p2.samples.values);
    assert_eq!(consensus_merge(&refs).unwrap().samples.values, consensus_merge(&refs).unwrap().samples.values);
}
