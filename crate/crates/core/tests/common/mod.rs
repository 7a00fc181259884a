//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod oracles;

use std::path::Path;

use mbclassify::dataset::{split, LabeledSample, SplitConfig};
use mbclassify::nn::{build_network, Bindings, Mode, NetworkSpec, ParamKind, ParameterStore};
use mbclassify::synthetic::{write_synthetic_dataset, SyntheticConfig};
use mbclassify::tensor::{finite_diff_check_all, Tape, Var};
use mbclassify::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(dims: Vec<usize>, lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(dims, |_| rng.random_range(lo..hi)).unwrap()
}

/// Move batch-norm affine and running statistics away from 1/0 so that
/// all-zero patches do not sit exactly on a ReLU kink.
pub fn perturb_batch_norm(store: &mut ParameterStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let p = store.get_mut(id);
        let (lo, hi) = match p.kind {
            ParamKind::Gamma | ParamKind::RunningVar => (0.5, 1.5),
            ParamKind::Beta | ParamKind::RunningMean => (-0.2, 0.2),
            _ => continue,
        };
        for v in p.tensor.data_mut() {
            *v = rng.random_range(lo..hi);
        }
    }
}

/// Worst finite-difference error over every parameter of a two-stage desk
/// network at 16x16 input, in f64.
pub fn desk_network_grad_error(mode: Mode, step: f64) -> f64 {
    let mut spec = NetworkSpec::desk();
    spec.input_size = [16, 16, 3];
    let (net, mut store) = build_network::<f64>(&spec, 5).unwrap();
    assert_eq!(spec.stages.len(), 2);
    perturb_batch_norm(&mut store, 6);
    let x = rand_tensor(vec![2, 16, 16, 3], 0.0, 1.0, 7);
    let labels = [1usize, 3];
    let params: Vec<Tensor<f64>> = store.iter().map(|(_, p)| p.tensor.clone()).collect();
    finite_diff_check_all(
        |tape: &mut Tape<f64>, vars: &[Var]| {
            let bindings = Bindings::from_vars(vars);
            let input = tape.constant(x.clone());
            Ok(net
                .loss_on_tape(tape, &bindings, &store, input, &labels, mode)?
                .0)
        },
        &params,
        step,
    )
    .unwrap()
}

/// The seeded toy corpus: 5 classes x 100 images of 64x64.
pub fn toy_dataset(root: &Path) -> (Vec<String>, Vec<LabeledSample>, Vec<LabeledSample>) {
    let index = write_synthetic_dataset(
        root,
        &SyntheticConfig {
            seed: 7,
            ..SyntheticConfig::default()
        },
    )
    .unwrap();
    assert_eq!(index.samples.len(), 500);
    let (train, val) = split(
        &index.samples,
        &SplitConfig {
            seed: 7,
            ..SplitConfig::default()
        },
    )
    .unwrap();
    (index.classes, train, val)
}
