use crate::error::{Error, Result};

/// `R_t = sum_{i>=t} gamma^(i-t) r_i`, computed backward.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Generalised advantage estimates. `values` carries one extra bootstrap
/// entry; a terminal step cuts both the bootstrap and the accumulation.
pub fn gae(rewards: &[f64], values: &[f64], terminals: &[bool], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    let n = rewards.len();
    if values.len() != n + 1 || terminals.len() != n {
        return Err(Error::LengthMismatch(format!(
            "gae: {n} rewards, {} values (expected {}), {} terminal flags",
            values.len(),
            n + 1,
            terminals.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let live = if terminals[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        acc = delta + gamma * lambda * live * acc;
        adv[t] = acc;
    }
    Ok(adv)
}

/// Zero mean, unit variance; all zeros when the spread vanishes.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.is_empty() {
        return Vec::new();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; adv.len()];
    }
    adv.iter().map(|a| (a - mean) / std).collect()
}
