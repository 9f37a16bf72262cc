//! Acceptance suite: every criterion runs at its stated tolerance and
//! prints one pass/fail line. The same checks back `ttsflow verify`.

use std::time::Instant;

use ttsflow::verify::{dsp_suite, flows_suite, grad, losses_suite, mas_suite, sdp_suite, CheckResult};

fn require(result: CheckResult) {
    println!("{result}");
    assert!(result.passed, "{result}");
}

#[test]
fn mas_oracle_equivalence_1000_instances_under_30s() {
    let start = Instant::now();
    require(mas_suite::mas_oracle_equivalence(0xA11CE, 1000));
    let elapsed = start.elapsed();
    println!("PASS mas/oracle_equivalence runtime — {elapsed:.2?} (limit 30s)");
    assert!(elapsed.as_secs_f64() < 30.0, "runtime {elapsed:?} exceeds 30s");
}

#[test]
fn mas_structural_invariants_10000_instances() {
    require(mas_suite::mas_structural_invariants(0xB0B, 10_000));
}

#[test]
fn flow_bijectivity_spline_1e8_affine_1e12() {
    require(flows_suite::spline_roundtrip(0xC0FFEE, 1000));
    require(flows_suite::affine_roundtrip(0xC0FFEF, 1000));
}

#[test]
fn flow_logdet_matches_finite_differences() {
    require(flows_suite::spline_logdet_fd(0xD1CE, 1000));
    require(flows_suite::stack_logdet_jacobian(0xD1CF, 50));
}

#[test]
fn spline_29_channel_convention() {
    require(flows_suite::spline_param_convention(0));
}

#[test]
fn gradient_checks_every_primitive() {
    for result in grad::run(0xF00D) {
        require(result);
    }
}

#[test]
fn gradient_checks_every_loss() {
    for result in losses_suite::loss_gradients(0xFEED, 100) {
        require(result);
    }
}

#[test]
fn kl_consistency_closed_form_and_quadrature() {
    require(losses_suite::kl_mc_vs_closed_form(0xAB5, 10, 100_000));
    require(losses_suite::kl_mc_vs_quadrature(0xAB6, 200_000));
}

#[test]
fn gan_loss_optima_exact() {
    require(losses_suite::gan_optima(0));
}

#[test]
fn duration_elbo_validity_20_draws() {
    require(sdp_suite::elbo_validity(0xE1B0, 20, 4000));
}

#[test]
fn toy_duration_training_500_steps_under_5_min() {
    let start = Instant::now();
    require(sdp_suite::toy_training(42));
    let elapsed = start.elapsed();
    println!("PASS sdp/toy_training runtime — {elapsed:.2?} (limit 300s)");
    assert!(elapsed.as_secs_f64() < 300.0, "runtime {elapsed:?} exceeds 5 minutes");
}

#[test]
fn dsp_sine_peak_zero_floor_and_shapes() {
    require(dsp_suite::sine_peak_bin(0));
    require(dsp_suite::zero_signal_log_floor(0));
    require(dsp_suite::output_shapes(0));
}

#[test]
fn stop_gradient_condition_gradient_exactly_zero() {
    require(sdp_suite::stop_gradient_exact(0x570));
}
