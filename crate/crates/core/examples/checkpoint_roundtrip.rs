//! Save a trained-looking network to a checkpoint, reload it and confirm the
//! reloaded copy produces bit-identical probabilities.

use mbclassify::nn::{
    build_network, load_checkpoint, save_checkpoint, NetworkSpec, TrainingMetadata,
};
use mbclassify::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> anyhow::Result<()> {
    let spec = NetworkSpec::desk();
    let (net, mut store) = build_network::<f32>(&spec, 21)?;
    // Nudge the running statistics so the check covers every stored tensor.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.get(id).kind.is_statistic() {
            for v in store.get_mut(id).tensor.data_mut() {
                *v += rng.random_range(0.0..0.5);
            }
        }
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("desk.dsqc");
    let classes: Vec<String> = (0..5).map(|k| format!("class_{k}")).collect();
    let meta = TrainingMetadata {
        epochs_completed: 0,
        ..TrainingMetadata::default()
    };
    save_checkpoint(&path, &net, &store, 21, &classes, &meta)?;
    println!(
        "{} bytes for {} parameters",
        std::fs::metadata(&path)?.len(),
        store.counts().total
    );

    let loaded = load_checkpoint::<f32>(&path)?;
    println!(
        "header: seed {} classes {:?} input {:?}",
        loaded.header.seed, loaded.header.classes, loaded.header.spec.input_size
    );
    anyhow::ensure!(loaded.store == store, "stored tensors differ");

    let [h, w, c] = spec.input_size;
    let x = Tensor::from_fn(vec![10, h, w, c], |_| rng.random_range(0.0f32..1.0))?;
    let before = net.forward(&store, &x)?;
    let after = loaded.network.forward(&loaded.store, &x)?;
    let same = before
        .data()
        .iter()
        .zip(after.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!("forward outputs bit-identical: {same}");
    anyhow::ensure!(same, "round trip changed the outputs");
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
