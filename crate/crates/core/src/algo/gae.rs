use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GaeResult {
    pub advantages: Vec<f64>,
    /// `A_t + V_t`.
    pub targets: Vec<f64>,
}

/// Generalized advantage estimation over one segment.
///
/// `values` has one more entry than `rewards`: the last is the bootstrap
/// value of the state after the segment. `dones[t]` marks that step `t`
/// ended an episode, which cuts both the bootstrap and the advantage sum.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<GaeResult> {
    let t_len = rewards.len();
    ensure!(
        values.len() == t_len + 1,
        "gae needs {} values (one bootstrap), got {}",
        t_len + 1,
        values.len()
    );
    ensure!(
        dones.len() == t_len,
        "gae got {} done flags for {t_len} rewards",
        dones.len()
    );
    let mut advantages = vec![0.0; t_len];
    let mut running = 0.0;
    for t in (0..t_len).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        running = delta + gamma * lambda * live * running;
        advantages[t] = running;
    }
    let targets = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(GaeResult {
        advantages,
        targets,
    })
}
