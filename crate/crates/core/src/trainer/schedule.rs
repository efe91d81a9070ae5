//! Per-step annealing schedules. `step` is 0-based and runs to `steps - 1`.

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Linear ramp from 0 reaching `max` exactly at the final step.
pub fn linear_ramp(step: usize, steps: usize, max: f64) -> f64 {
    if steps <= 1 {
        return max;
    }
    max * step as f64 / (steps - 1) as f64
}

/// Diffusion timestep `lerp(start, end, step / steps)`.
pub fn timestep(step: usize, steps: usize, start: f64, end: f64) -> f64 {
    lerp(start, end, step as f64 / steps.max(1) as f64)
}

/// Render resolution `lerp(lo, hi, step / steps)` rounded to a multiple of 8.
pub fn resolution(step: usize, steps: usize, lo: u32, hi: u32) -> u32 {
    let r = lerp(f64::from(lo), f64::from(hi), step as f64 / steps.max(1) as f64);
    ((r / 8.0).round() as u32 * 8).max(8)
}

/// Exponential decay from `start` to `end` over `decay_steps`, constant afterwards.
pub fn exp_decay(step: usize, decay_steps: usize, start: f64, end: f64) -> f64 {
    if decay_steps <= 1 {
        return end;
    }
    let t = (step as f64 / (decay_steps - 1) as f64).min(1.0);
    (start.ln() * (1.0 - t) + end.ln() * t).exp()
}
