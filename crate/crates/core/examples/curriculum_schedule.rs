//! Shows what each curriculum preset trains on: iteration sizes and loss
//! weights per main complexity, and the learning-rate schedule.
//!
//!     cargo run --example curriculum_schedule

use std::collections::BTreeMap;

use e2eqr::curriculum::{build_iteration_dataset, loss_weight, lr_at, CurriculumPreset};
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let groups: BTreeMap<usize, Vec<()>> = [(1, vec![(); 400]), (2, vec![(); 300]), (3, vec![(); 200])].into();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for preset in [CurriculumPreset::StepByStep, CurriculumPreset::Cumulative, CurriculumPreset::Adaptive] {
        let cfg = preset.config();
        println!("{preset:?}: γ_low {} γ_high {} ρ {}", cfg.gamma_low, cfg.gamma_high, cfg.rho);
        for main in 1..=3 {
            let items = build_iteration_dataset(&groups, main, cfg.rho, &mut rng)?;
            let mut per_hop = BTreeMap::new();
            for it in &items {
                *per_hop.entry(it.complexity).or_insert(0) += 1;
            }
            let weights: Vec<f64> = (1..=3).map(|h| loss_weight(h, main, cfg.gamma_low, cfg.gamma_high)).collect();
            println!("  H={main}: {} examples {per_hop:?}, weights {weights:?}", items.len());
        }
    }
    let cfg = CurriculumPreset::Adaptive.config();
    let total = 5000;
    for step in [0, 500, 1000, 3000, 4999] {
        println!("lr at step {step:>4}: {:.3e}", lr_at(step, cfg.warmup_steps, total, cfg.lr_alpha)?);
    }
    Ok(())
}
