use log::{info, warn};
use ndarray::{Array1, ArrayView2, Axis};

use super::{initialize, sgd_train, TrainConfig, TrainLog};
use crate::error::{Error, Result};
use crate::model::{FaComponent, MfaModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HierarchicalConfig {
    pub k_root: usize,
    pub total_components: usize,
    /// A root component never gets more sub-components than
    /// `assigned samples / min_samples_per_component`.
    pub min_samples_per_component: usize,
}

#[derive(Debug, Clone)]
pub struct HierarchicalResult {
    pub root: MfaModel,
    /// Flattened mixture of all sub-components.
    pub model: MfaModel,
    /// Sub-components allocated to each root component.
    pub allocation: Vec<usize>,
    /// Progress of the root training run.
    pub root_logs: Vec<TrainLog>,
}

/// Splits `total` sub-components across groups proportionally to `counts`
/// (largest remainder), at least one each, at most `max(1, count / min_samples)`.
/// The sum can fall short of `total` when the caps bind.
pub fn allocate_subcomponents(counts: &[usize], total: usize, min_samples: usize) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let min_samples = min_samples.max(1);
    let caps: Vec<usize> = counts.iter().map(|&c| (c / min_samples).max(1)).collect();
    let target: Vec<f64> = counts
        .iter()
        .map(|&c| if n == 0 { 0.0 } else { total as f64 * c as f64 / n as f64 })
        .collect();
    let mut alloc: Vec<usize> = target
        .iter()
        .zip(&caps)
        .map(|(&t, &cap)| (t.floor() as usize).clamp(1, cap))
        .collect();
    loop {
        let sum: usize = alloc.iter().sum();
        if sum < total {
            let pick = (0..alloc.len())
                .filter(|&i| alloc[i] < caps[i])
                .max_by(|&a, &b| {
                    (target[a] - alloc[a] as f64)
                        .total_cmp(&(target[b] - alloc[b] as f64))
                        .then(b.cmp(&a))
                });
            match pick {
                Some(i) => alloc[i] += 1,
                None => break,
            }
        } else if sum > total {
            let pick = (0..alloc.len()).filter(|&i| alloc[i] > 1).min_by(|&a, &b| {
                (target[a] - alloc[a] as f64)
                    .total_cmp(&(target[b] - alloc[b] as f64))
                    .then(b.cmp(&a))
            });
            match pick {
                Some(i) => alloc[i] -= 1,
                None => break,
            }
        } else {
            break;
        }
    }
    alloc
}

/// Trains a `k_root` mixture, splits every root component into sub-components
/// trained on the samples it is most responsible for, and flattens the result
/// with `pi = pi_root(i) * pi_sub(i, j)`.
///
/// Root components that receive a single sub-component are kept as trained.
pub fn hierarchical_train(
    x: ArrayView2<f64>,
    cfg: &TrainConfig,
    hcfg: &HierarchicalConfig,
) -> Result<HierarchicalResult> {
    if hcfg.k_root == 0 || hcfg.k_root > hcfg.total_components {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k_root <= total_components (k_root = {}, total = {})",
            hcfg.k_root, hcfg.total_components
        )));
    }
    let root_cfg = TrainConfig {
        k_components: hcfg.k_root,
        ..cfg.clone()
    };
    let init = initialize(x, &root_cfg)?;
    let (root, root_logs) = sgd_train(x, None, &init, &root_cfg)?;
    let labels = root.hard_assign(x)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); root.n_components()];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    let counts: Vec<usize> = members.iter().map(Vec::len).collect();
    let min_samples = hcfg
        .min_samples_per_component
        .max(cfg.latent_dim + 1);
    let allocation = allocate_subcomponents(&counts, hcfg.total_components, min_samples);
    for (i, (&c, &m)) in counts.iter().zip(&allocation).enumerate() {
        if c < hcfg.min_samples_per_component {
            warn!("root component {i} has only {c} samples; keeping it unsplit");
        }
        info!("root component {i}: {c} samples, {m} sub-components");
    }

    let mut comps: Vec<FaComponent> = Vec::new();
    let mut log_w: Vec<f64> = Vec::new();
    for (i, idx) in members.iter().enumerate() {
        let root_lp = root.log_pi()[i];
        if allocation[i] <= 1 {
            comps.push(root.component(i).clone());
            log_w.push(root_lp);
            continue;
        }
        let subset = x.select(Axis(0), idx);
        let sub_cfg = TrainConfig {
            k_components: allocation[i],
            batch_size: cfg.batch_size.min(idx.len()),
            rng_seed: cfg.rng_seed.wrapping_add(1 + i as u64),
            ..cfg.clone()
        };
        let sub_init = initialize(subset.view(), &sub_cfg)?;
        let (sub, _) = sgd_train(subset.view(), None, &sub_init, &sub_cfg)?;
        for (j, c) in sub.components().iter().enumerate() {
            comps.push(c.clone());
            log_w.push(root_lp + sub.log_pi()[j]);
        }
    }
    let model = MfaModel::from_log_weights(comps, Array1::from(log_w))?;
    Ok(HierarchicalResult {
        root,
        model,
        allocation,
        root_logs,
    })
}
