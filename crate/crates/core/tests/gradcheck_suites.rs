use hazeforge::gradcheck::{self, GeneratorLoss};
use hazeforge::networks::{build_discriminator, build_generator, ArchConfig};
use hazeforge::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn full_report_passes() {
    let report = gradcheck::run_all(0).unwrap();
    for line in report.lines() {
        println!("{line}");
    }
    assert!(report.passed());
    assert!(report.ops.len() >= 17);
}

#[test]
fn generator_checks_hold_across_seeds() {
    for seed in 1..6 {
        for loss in [GeneratorLoss::L1, GeneratorLoss::Photorealism] {
            let r = gradcheck::generator_check(loss, 8, 3, seed).unwrap();
            assert!(r.passed(), "seed {seed}: {}", r.summary());
        }
    }
}

#[test]
fn reference_forward_matches_the_tape() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let arch = ArchConfig {
        base_channels: 4,
        num_residual_blocks: 2,
        image_size: 16,
    };
    for net in [
        build_generator(arch, &mut rng).unwrap(),
        build_discriminator(arch, &mut rng).unwrap(),
    ] {
        let x = Tensor::rand_uniform([2, 3, 16, 16], -1.0, 1.0, &mut rng);
        let taped = net.infer(&x).unwrap();
        let params: Vec<Vec<f64>> = net
            .params()
            .iter()
            .map(|(_, t)| t.data().iter().map(|&v| v as f64).collect())
            .collect();
        let input: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
        let (reference, shape) = gradcheck::reference_forward(&net, &params, &input, x.shape()).unwrap();
        assert_eq!(shape, taped.shape());
        for (a, b) in taped.data().iter().zip(&reference) {
            assert!((*a as f64 - b).abs() < 1e-4, "{a} vs {b}");
        }
    }
}

#[test]
fn adjoint_identities() {
    for r in gradcheck::adjoint_suite(3).unwrap() {
        assert!(r.passed(gradcheck::ADJOINT_TOL), "{} {}", r.name, r.rel_err);
    }
}
