#[path = "support/properties.rs"]
mod properties;

#[test]
fn feature_is_similarity_invariant() {
    properties::feature_is_similarity_invariant();
}

#[test]
fn transition_semigroup() {
    properties::transition_semigroup();
}

#[test]
fn recursion_matches_impulse_convolution() {
    properties::recursion_matches_impulse_convolution();
}

#[test]
fn hankel_factorization_has_rank_n() {
    properties::hankel_factorization_has_rank_n();
}

#[test]
fn stationary_intervals_sit_inside_segments() {
    properties::stationary_intervals_sit_inside_segments();
}

#[test]
fn detections_respect_step_bounds() {
    properties::detections_respect_step_bounds();
}

#[test]
fn global_basis_change_is_invisible() {
    properties::global_basis_change_is_invisible();
}

#[test]
fn every_switch_agrees_with_the_tree() {
    properties::every_switch_agrees_with_the_tree();
}

#[test]
fn fixed_seeds_reproduce() {
    properties::fixed_seeds_reproduce();
}
