//! Clipped double Q, target smoothing, delayed updates and target networks.

mod common;

use common::td3;

#[test]
fn clipped_target_is_dominated_by_single_critic() {
    for seed in [1, 2, 3] {
        td3::min_dominance(seed);
    }
}

#[test]
fn target_smoothing_noise_is_clipped() {
    for seed in [1, 2] {
        td3::smoothing_is_clipped(seed);
    }
}

#[test]
fn polyak_matches_closed_form() {
    td3::polyak_closed_form(4);
}

#[test]
fn delayed_actor_updates() {
    td3::update_bookkeeping(5);
}

#[test]
fn targets_are_detached() {
    td3::stop_gradient(6);
}
