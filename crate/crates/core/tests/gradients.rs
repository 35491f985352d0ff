#[path = "support/gradient_suite.rs"]
mod gradient_suite;

use gradient_suite::{CaseResult, Group, GROUPS, TOL, TRIALS};

fn check(group: Group) {
    let mut out: Vec<CaseResult> = Vec::new();
    group(&mut out);
    assert!(!out.is_empty());
    for r in &out {
        println!("{}: max rel err {:.2e} over {TRIALS} trials", r.name, r.worst);
        assert!(r.passed(), "{}: trial {:?} reached rel err {:e} (tol {TOL:e})", r.name, r.failed_trial, r.worst);
    }
}

#[test]
fn matmul_both_sides() {
    check(gradient_suite::matmul_both_sides);
}

#[test]
fn add_sub_mul() {
    check(gradient_suite::add_sub_mul);
}

#[test]
fn scalar_ops() {
    check(gradient_suite::scalar_ops);
}

#[test]
fn activations() {
    check(gradient_suite::activations);
}

#[test]
fn softmax_and_cross_entropy() {
    check(gradient_suite::softmax_and_cross_entropy);
}

#[test]
fn structural_ops() {
    check(gradient_suite::structural_ops);
}

#[test]
fn reductions() {
    check(gradient_suite::reductions);
}

#[test]
fn bounded_head() {
    check(gradient_suite::bounded_head);
}

#[test]
fn unbounded_head() {
    check(gradient_suite::unbounded_head);
}

#[test]
fn composite_mlp() {
    check(gradient_suite::composite_mlp);
}

#[test]
fn every_group_is_listed() {
    assert_eq!(GROUPS.len(), 10);
}
