mod common;

use common::{check_gradients, random_instance};
use ctm_core::model::InputMode;

#[test]
fn contextual_single_hidden_layer() {
    let inst = random_instance(InputMode::Contextual, 7, 4, 3, vec![5], 2, 1);
    let r = check_gradients(&inst, 1e-4);
    assert!(r.max_relative_error < 1e-4, "{}", r.worst);
}

#[test]
fn bow_mode_two_hidden_layers() {
    let inst = random_instance(InputMode::Bow, 6, 0, 3, vec![4, 5], 3, 2);
    let r = check_gradients(&inst, 1e-4);
    assert!(r.max_relative_error < 1e-4, "{}", r.worst);
}

#[test]
fn combined_mode_with_learned_decoder_scale() {
    let mut inst = random_instance(InputMode::Combined, 5, 3, 4, vec![4, 3], 4, 3);
    inst.config.learn_decoder_bn_scale = true;
    let r = check_gradients(&inst, 1e-4);
    assert!(r.checked > 0);
    assert!(r.max_relative_error < 1e-4, "{}", r.worst);
}

#[test]
fn normalized_embeddings_still_differentiate() {
    let mut inst = random_instance(InputMode::Contextual, 5, 4, 2, vec![3], 3, 4);
    inst.config.normalize_embeddings = true;
    let r = check_gradients(&inst, 1e-4);
    assert!(r.max_relative_error < 1e-4, "{}", r.worst);
}

#[test]
fn many_seeds_tiny_contextual() {
    for seed in 10..20 {
        let inst = random_instance(InputMode::Contextual, 7, 4, 3, vec![5], 2, seed);
        let r = check_gradients(&inst, 1e-4);
        assert!(r.max_relative_error < 1e-4, "seed {seed}: {}", r.worst);
    }
}
