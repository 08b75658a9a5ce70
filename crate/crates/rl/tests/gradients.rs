use pgo_rl::diffnet::Activation;
use pgo_rl::gradcheck::{self, TOLERANCE};

fn check(name: &str, err: f64) {
    eprintln!("{name}: max relative error {err:e}");
    assert!(err <= TOLERANCE, "{name}: relative error {err}");
}

#[test]
fn dense_gradients_match_differences() {
    for (seed, act) in [Activation::Relu, Activation::Tanh, Activation::Identity].into_iter().enumerate() {
        check(&format!("{act:?}"), gradcheck::dense(act, seed as u64));
    }
}

#[test]
fn lstm_bptt_five_steps() {
    check("bptt T=5", gradcheck::lstm_bptt(5, 11));
}

#[test]
fn lstm_bptt_eight_steps() {
    check("bptt T=8", gradcheck::lstm_bptt(8, 12));
}

#[test]
fn squashed_gaussian_derivatives() {
    check("squashed", gradcheck::squashed_gaussian(5));
}

#[test]
fn encoder_gradients_match_differences() {
    check("encoder", gradcheck::encoder(21));
}

#[test]
fn critic_loss_gradients_match_differences() {
    check("critic", gradcheck::critic_loss(31));
}

#[test]
fn policy_loss_gradients_match_differences() {
    check("policy", gradcheck::policy_loss(41));
}

#[test]
fn checks_hold_across_seeds() {
    for seed in 100..105 {
        check("lstm", gradcheck::lstm_bptt(6, seed));
        check("critic", gradcheck::critic_loss(seed));
        check("policy", gradcheck::policy_loss(seed));
    }
}
