//! Hand-checkable optimizer steps and a hybrid schedule read from TOML.

use mbclassify::optim::{
    adam_update, run_schedule, sgd_update, AdamConfig, Optimizer, Schedule, SegmentSpec, SgdConfig,
};
use serde::Deserialize;

#[derive(Deserialize)]
struct Plan {
    schedule: Vec<SegmentSpec>,
}

pub fn run_example() -> anyhow::Result<()> {
    // One SGD step from psi = 1 with gradient 0.5 and no history.
    let sgd = SgdConfig::default();
    let (mut psi, mut v) = ([1.0f64], [0.0f64]);
    sgd_update(&mut psi, &[0.5], &mut v, &sgd);
    println!("sgd: psi 1 -> {} (velocity {})", psi[0], v[0]);

    // Adam's first step has magnitude lr whatever the gradient scale.
    for g in [2.0f64, 1e-3, 1e3] {
        let (mut psi, mut m, mut v) = ([1.0f64], [0.0f64], [0.0f64]);
        adam_update(&mut psi, &[g], &mut m, &mut v, 1, &AdamConfig::default());
        println!("adam: g = {g:<6} first step {:+.9}", psi[0] - 1.0);
    }

    // Minimize psi^2 / 2, whose gradient is psi, for 100 steps.
    for name in ["sgd", "adam"] {
        let (mut psi, mut m, mut v) = ([3.0f64], [0.0f64], [0.0f64]);
        let mut losses = Vec::new();
        for t in 1..=100 {
            let g = [psi[0]];
            match name {
                "sgd" => sgd_update(&mut psi, &g, &mut m, &SgdConfig::default()),
                _ => adam_update(&mut psi, &g, &mut m, &mut v, t, &AdamConfig::default()),
            }
            losses.push(0.5 * psi[0] * psi[0]);
        }
        println!(
            "{name}: loss after 1, 10, 100 steps = {:.6}, {:.6}, {:.6}",
            losses[0], losses[9], losses[99]
        );
    }

    let plan: Plan = toml::from_str(
        r#"
        [[schedule]]
        optimizer = "adam"
        epochs = 3

        [[schedule]]
        optimizer = "sgd"
        epochs = 2
        learning_rate = 0.005
        "#,
    )?;
    let schedule = Schedule::from_specs(&plan.schedule)?;
    println!(
        "schedule {} ({} epochs)",
        schedule.describe(),
        schedule.total_epochs()
    );
    for slot in run_schedule(&schedule) {
        let note = if slot.starts_segment {
            "  <- fresh optimizer"
        } else {
            ""
        };
        println!("  epoch {} {}{note}", slot.epoch, slot.optimizer);
    }
    let fresh: Optimizer<f32> = Optimizer::new(&schedule.segments()[1].optimizer);
    println!(
        "segment 2 starts with {} steps, fresh = {}",
        fresh.steps(),
        fresh.is_fresh()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
