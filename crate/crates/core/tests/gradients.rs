use std::time::Instant;

use mqc_core::nn::gradcheck::{self, TOLERANCE};

#[test]
fn layer_checks_pass() {
    let reports = [
        gradcheck::check_conv(20, 2024).unwrap(),
        gradcheck::check_batchnorm(20, 2024).unwrap(),
        gradcheck::check_dense(20, 2024).unwrap(),
        gradcheck::check_softmax_ce(20, 2024).unwrap(),
    ];
    for r in &reports {
        assert!(r.worst < TOLERANCE, "{} worst relative error {:e}", r.name, r.worst);
    }
}

#[test]
fn architecture_checks_pass_on_a_few_draws() {
    let start = Instant::now();
    for resnet in [false, true] {
        let r = gradcheck::check_architecture(resnet, 3, 31).unwrap();
        println!("{:<20} worst={:.3e}", r.name, r.worst);
        assert!(r.worst < TOLERANCE, "{} worst relative error {:e}", r.name, r.worst);
    }
    println!("elapsed {:?}", start.elapsed());
}

#[test]
fn relative_error_uses_floor_for_zero_gradients() {
    assert_eq!(gradcheck::relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    let e = gradcheck::relative_error(&[0.0], &[1e-9]);
    assert!((e - 1e-3).abs() < 1e-12);
    let e = gradcheck::relative_error(&[3.0, 4.0], &[3.0, 4.0 + 1e-4]);
    let numeric_norm = (9.0f64 + (4.0f64 + 1e-4).powi(2)).sqrt();
    assert!((e - 1e-4 / numeric_norm).abs() < 1e-15, "{e}");
}
