//! Parameter counts and the shape ladder of every preset.
//!
//! Counting needs no forward pass, so even the 300x300 preset is instant.
//! The shape ladder runs one inference pass through the desk network.

use mbclassify::nn::{build_network, NetworkSpec, PRESET_NAMES};
use mbclassify::Tensor;

pub fn run_example() -> anyhow::Result<()> {
    for name in PRESET_NAMES {
        let spec = NetworkSpec::preset(name)?;
        let (net, store) = build_network::<f32>(&spec, 0)?;
        let counts = store.counts();
        println!(
            "{name:<12} input {:?} total {} trainable {} frozen {}",
            spec.input_size, counts.total, counts.trainable, counts.frozen
        );
        if name == "fidelity-b3" {
            assert_eq!(counts.trainable, 7685);
            let dense = net.layer_table(&store).pop().expect("dense row");
            println!("  {} -> {}", dense.name, dense.output_shape);
        }
    }

    let (net, store) = build_network::<f32>(&NetworkSpec::desk(), 0)?;
    for row in net.layer_table(&store) {
        println!("  {:<10} {:<18} {}", row.name, row.output_shape, row.params);
    }
    let x = Tensor::full(vec![1, 64, 64, 3], 0.5f32)?;
    let (probs, trace) = net.forward_trace(&store, &x)?;
    for t in &trace {
        println!("  {:<10} {:?}", t.name, t.dims);
    }
    let total: f32 = probs.data().iter().sum();
    println!("probabilities {:?} (sum {total:.6})", probs.data());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
