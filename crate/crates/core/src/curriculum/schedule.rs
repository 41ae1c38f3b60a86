use super::TrainError;

/// Linear warm-up from 0 to `lr_alpha` over `warmup_steps`, then linear
/// decay to 0 at `total_steps`.
pub fn lr_at(step: usize, warmup_steps: usize, total_steps: usize, lr_alpha: f64) -> Result<f64, TrainError> {
    if total_steps <= warmup_steps {
        return Err(TrainError::Contract(format!(
            "total_steps ({total_steps}) must exceed warmup_steps ({warmup_steps})"
        )));
    }
    Ok(if step < warmup_steps {
        lr_alpha * step as f64 / warmup_steps as f64
    } else if step >= total_steps {
        0.0
    } else {
        lr_alpha * (total_steps - step) as f64 / (total_steps - warmup_steps) as f64
    })
}
