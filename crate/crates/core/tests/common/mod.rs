#![allow(dead_code)]

use fedmlac::client::UpdateMeta;
use fedmlac::nn::{Activation, Batch, Matrix, ModelParams, ModelSpec};
use fedmlac::ClientUpload;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random MLP with at most `max_params` parameters and one hidden activation.
pub fn random_model(rng: &mut ChaCha8Rng, max_params: usize) -> ModelParams {
    let act = if rng.random_bool(0.5) {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    random_model_with(rng, max_params, act)
}

pub fn random_model_with(rng: &mut ChaCha8Rng, max_params: usize, act: Activation) -> ModelParams {
    loop {
        let input = rng.random_range(1..=5);
        let classes = rng.random_range(2..=4);
        let depth = rng.random_range(0..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=6)).collect();
        let spec = ModelSpec::mlp(input, &hidden, classes, act).unwrap();
        if spec.num_params() <= max_params {
            let mut m = ModelParams::init(&spec, rng);
            m.values_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
            return m;
        }
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, model: &ModelParams, n: usize) -> Batch {
    let spec = model.spec();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..spec.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..spec.output_dim())).collect();
    Batch::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap()
}

pub fn upload(client_id: usize, model: ModelParams, n_k: usize) -> ClientUpload {
    ClientUpload {
        client_id,
        model,
        n_k,
        train_loss: 0.0,
        grad_sq_norm: 0.0,
        meta: UpdateMeta {
            epochs: 1,
            batch_size: 1,
            lr: 0.0,
            steps: 0,
        },
    }
}
