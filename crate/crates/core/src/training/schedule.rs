/// Step decay: `lr0 · γ^⌊epoch / step_size⌋`.
pub fn step_decay(epoch: usize, lr0: f64, step_size: usize, gamma: f64) -> f64 {
    let k = epoch / step_size.max(1);
    lr0 * gamma.powi(k as i32)
}
