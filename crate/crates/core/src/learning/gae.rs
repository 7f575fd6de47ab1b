use super::RolloutBatch;

/// Generalized advantage estimates for one agent's sequence.
///
/// `values[t]` is `V(s_t)`; `bootstrap` stands in for `V(s_T)`. A `done`
/// step cuts both the bootstrap and the trace.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
        next_value = values[t];
    }
    adv
}

/// Raw advantages and returns in [`RolloutBatch::samples`] order.
pub fn batch_advantages(batch: &RolloutBatch, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let mut adv = Vec::with_capacity(batch.len());
    for traj in &batch.trajectories {
        let t_len = traj.steps.len();
        let n = traj.steps.first().map_or(0, Vec::len);
        let mut per_agent = Vec::with_capacity(n);
        for i in 0..n {
            let r: Vec<f64> = traj.steps.iter().map(|s| s[i].reward).collect();
            let v: Vec<f64> = traj.steps.iter().map(|s| s[i].value).collect();
            let d: Vec<bool> = traj.steps.iter().map(|s| s[i].done).collect();
            let boot = traj.bootstrap.get(i).copied().unwrap_or(0.0);
            per_agent.push(gae(&r, &v, &d, boot, gamma, lambda));
        }
        for t in 0..t_len {
            for a in &per_agent {
                adv.push(a[t]);
            }
        }
    }
    let ret = adv.iter().zip(batch.samples()).map(|(a, s)| a + s.value).collect();
    (adv, ret)
}

/// Shifts to mean 0 and scales to unit standard deviation. Constant inputs
/// are only centered.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs.iter_mut() {
        *x -= mean;
        if std > 1e-8 {
            *x /= std;
        }
    }
}
