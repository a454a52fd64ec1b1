use std::collections::BTreeMap;

use arrayssl::gradsuite::gradient_suite;
use arrayssl::models::{InpaintNet, Model};
use arrayssl::tensor::gradcheck::{grad_check, GradCheckConfig};
use arrayssl::tensor::{init, mse, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_op_and_block_over_twenty_seeds() {
    let mut skipped: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for seed in 0..20 {
        for case in gradient_suite(seed).unwrap() {
            let r = &case.report;
            assert!(r.passed, "{} seed {seed}: {:?}", case.name, r.worst);
            assert!(r.checked > 0, "{} seed {seed} checked nothing", case.name);
            let e = skipped.entry(case.name).or_default();
            e.0 += r.skipped_nonsmooth;
            e.1 += r.checked + r.skipped_nonsmooth;
        }
    }
    for (name, (s, total)) in skipped {
        assert!((s as f64) < 0.05 * total as f64, "{name}: {s} of {total} elements at kinks");
    }
}

#[test]
fn inpaint_net_end_to_end_on_sampled_params() {
    let net = InpaintNet::new(8, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = init::normal(&mut rng, &[1, 8, 8, 64], 1.0);
    let target = init::normal(&mut rng, &[1, 8, 8, 64], 1.0);
    let params = net.trainable();
    let total: usize = params.iter().map(Tensor::len).sum();
    let cfg = GradCheckConfig {
        max_elements: Some(24),
        seed: 3,
        ..GradCheckConfig::default()
    };
    let report = grad_check(|_| mse(&net.forward(&x)?, &target), &params, &cfg).unwrap();
    let visited = report.checked + report.skipped_nonsmooth;
    assert!(visited * 100 >= total, "visited {visited} of {total}");
    assert!(report.skipped_fraction() < 0.05, "{report:?}");
    assert!(report.passed, "{:?}", report.worst);
}
