mod common;

use common::gradcheck;

#[test]
fn dense_layer() {
    gradcheck::dense_layer().unwrap();
}

#[test]
fn batch_norm_train_and_eval() {
    gradcheck::batch_norm().unwrap();
}

#[test]
fn mse() {
    gradcheck::mse().unwrap();
}

#[test]
fn mlp_head_with_relu_and_batch_norm() {
    gradcheck::mlp_head().unwrap();
}

#[test]
fn spine_with_heads() {
    gradcheck::spine_with_heads().unwrap();
}
