//! Manual timing probe for the per-epoch training cost.
//!
//! Run with `cargo test --test epoch_bench -- --ignored --nocapture`.

use pdelab::loss::{
    evaluate_with_grad, BoundaryMode, FieldCache, Formulation, LossScratch, LossSpec,
    MultiplierState,
};
use pdelab::net::{Activation, Network, NetworkConfig, ParamVector};
use pdelab::problems;
use pdelab::sampling::{gauss_boundary, gauss_interior, BoxDomain};
use std::time::Instant;

fn time_epochs(formulation: Formulation, reps: usize) -> f64 {
    let problem = problems::example1(1);
    let net = Network::new(NetworkConfig::new(2, 4, 35, Activation::Sine)).unwrap();
    let params = net.init_glorot(0);
    let domain = BoxDomain::unit_square();
    let interior = gauss_interior(&domain, 64).unwrap();
    let boundary = gauss_boundary(&domain, 64).unwrap();
    let fields = FieldCache::new(&problem, &interior, &boundary);
    let spec = LossSpec {
        formulation,
        boundary: BoundaryMode::Augmented,
        ..LossSpec::default()
    };
    let mult = MultiplierState::new(boundary.len());
    let mut scratch = LossScratch::new();
    let mut grad = ParamVector::zeros(net.layout().clone());
    // warmup
    for _ in 0..3 {
        evaluate_with_grad(
            &net, &params, &interior, &boundary, &problem, &spec, Some(&mult), &fields,
            &mut scratch, &mut grad,
        )
        .unwrap();
    }
    let start = Instant::now();
    for _ in 0..reps {
        evaluate_with_grad(
            &net, &params, &interior, &boundary, &problem, &spec, Some(&mult), &fields,
            &mut scratch, &mut grad,
        )
        .unwrap();
    }
    start.elapsed().as_secs_f64() / reps as f64
}

#[test]
#[ignore]
fn epoch_cost() {
    let ritz = time_epochs(Formulation::Ritz, 50);
    let pinn = time_epochs(Formulation::Pinn, 50);
    println!("ritz epoch: {:.3} ms", ritz * 1e3);
    println!("pinn epoch: {:.3} ms", pinn * 1e3);
    println!("20k ritz epochs: {:.1} s", ritz * 20_000.0);
    println!("20k pinn epochs: {:.1} s", pinn * 20_000.0);
}
