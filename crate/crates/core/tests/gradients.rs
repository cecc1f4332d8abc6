mod common;

use std::time::Instant;

use common::{edge_fd_worst, hinge_fd_worst, reduction_worst, softmax_worst, triple_fd_worst, TOLERANCE};
use medembed::kg::{Norm, ObjectiveForm};

#[test]
fn triple_objective_gradients_match_finite_differences() {
    let started = Instant::now();
    for norm in [Norm::L1, Norm::L2] {
        for form in [ObjectiveForm::Corrected, ObjectiveForm::Literal] {
            let worst = triple_fd_worst(norm, form);
            assert!(worst < TOLERANCE, "{norm:?} {form:?}: max relative error {worst}");
        }
    }
    assert!(started.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn edge_objective_gradients_match_finite_differences() {
    for form in [ObjectiveForm::Corrected, ObjectiveForm::Literal] {
        let worst = edge_fd_worst(form);
        assert!(worst < TOLERANCE, "{form:?}: max relative error {worst}");
    }
}

#[test]
fn hinge_penalty_gradients_match_finite_differences() {
    let worst = hinge_fd_worst();
    assert!(worst < TOLERANCE, "max relative error {worst}");
}

#[test]
fn kl_form_and_reduced_form_share_gradients() {
    let worst = reduction_worst();
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn exact_distributions_are_normalized() {
    let worst = softmax_worst();
    assert!(worst < 1e-9, "{worst}");
}
