//! Central finite differences against the tape, in f64.
//!
//! First a single MBConv block with respect to its input and all of its
//! parameters, then every parameter of a small desk network through the
//! softmax cross-entropy loss.

use mbclassify::nn::layers::Initializer;
use mbclassify::nn::{
    build_network, Bindings, MbConvBlock, Mode, NetworkSpec, ParamKind, ParameterStore, TapeBackend,
};
use mbclassify::tensor::{finite_diff_check_all, Tape, Var};
use mbclassify::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOLERANCE: f64 = 1e-3;

fn random(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> anyhow::Result<Tensor<f64>> {
    Ok(Tensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))?)
}

/// Move batch-norm affine and running statistics off their initial values.
/// With beta = 0 an all-zero patch lands exactly on a ReLU kink, where
/// finite differences and the subgradient disagree.
fn perturb_batch_norm(store: &mut ParameterStore<f64>, rng: &mut ChaCha8Rng) {
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

pub fn run_example() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let mut store = ParameterStore::<f64>::new();
    let mut init = Initializer::new(3);
    let block = MbConvBlock::new(&mut store, &mut init, "block", 4, 4, 6, 1, 3, 0.25, true)?;
    perturb_batch_norm(&mut store, &mut rng);
    let x = random(vec![2, 5, 5, 4], &mut rng)?;
    let mut inputs = vec![x];
    inputs.extend(store.iter().map(|(_, p)| p.tensor.clone()));
    let weights = random(vec![2 * 5 * 5 * 4], &mut rng)?;

    let err = finite_diff_check_all(
        |tape: &mut Tape<f64>, vars: &[Var]| {
            let bindings = Bindings::from_vars(&vars[1..]);
            let mut b = TapeBackend::new(tape, &bindings, &store);
            let y = block.forward(&mut b, &vars[0], true, 1e-3)?;
            // A weighted sum keeps every output element in play.
            let w = tape.constant(weights.clone().reshape(vec![2, 5, 5, 4])?);
            let y = tape.mul(y, w)?;
            tape.sum(y)
        },
        &inputs,
        STEP,
    )?;
    println!("mbconv block (residual, expansion 6): max relative error {err:.2e}");
    anyhow::ensure!(err <= TOLERANCE, "block gradient check failed");

    let mut spec = NetworkSpec::desk();
    spec.input_size = [16, 16, 3];
    let (net, mut store) = build_network::<f64>(&spec, 5)?;
    perturb_batch_norm(&mut store, &mut rng);
    let x = random(vec![2, 16, 16, 3], &mut rng)?.map(|v| 0.5 + 0.5 * v);
    let labels = [1usize, 3];
    let params: Vec<Tensor<f64>> = store.iter().map(|(_, p)| p.tensor.clone()).collect();
    for mode in [Mode::Train, Mode::Inference] {
        let err = finite_diff_check_all(
            |tape: &mut Tape<f64>, vars: &[Var]| {
                let bindings = Bindings::from_vars(vars);
                let input = tape.constant(x.clone());
                let (loss, _, _) =
                    net.loss_on_tape(tape, &bindings, &store, input, &labels, mode)?;
                Ok(loss)
            },
            &params,
            STEP,
        )?;
        println!(
            "desk network, {} parameters, {mode:?} mode: max relative error {err:.2e}",
            store.counts().total
        );
        anyhow::ensure!(err <= TOLERANCE, "network gradient check failed");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
