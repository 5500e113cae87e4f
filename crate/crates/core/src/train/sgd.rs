use std::time::Instant;

use log::{debug, warn};
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::grad::{nll_and_grad, FlatParams};
use super::{Adam, TrainConfig, TrainLog};
use crate::error::{ensure_dim, Error, Result};
use crate::model::{check_finite, MfaModel};

/// Minimizes the mean per-sample negative log-likelihood with Adam over
/// shuffled mini-batches, all components and mixing weights jointly.
///
/// Every epoch is a fresh seeded permutation of the rows; a trailing partial
/// batch is dropped. A log record is produced at step 0, every
/// `eval_interval` steps and at the final step.
pub fn sgd_train(
    x: ArrayView2<f64>,
    heldout: Option<ArrayView2<f64>>,
    model: &MfaModel,
    cfg: &TrainConfig,
) -> Result<(MfaModel, Vec<TrainLog>)> {
    let (n, d) = x.dim();
    ensure_dim("training data columns", model.dim(), d)?;
    ensure_dim("latent dimension", cfg.latent_dim, model.latent_dim())?;
    if n == 0 {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    check_finite(x, "training data")?;
    if let Some(h) = heldout {
        ensure_dim("held-out data columns", d, h.ncols())?;
        check_finite(h, "held-out data")?;
    }
    let batch = if cfg.batch_size > n {
        warn!("batch size {} exceeds {n} samples; using {n}", cfg.batch_size);
        n
    } else {
        cfg.batch_size.max(1)
    };

    let started = Instant::now();
    let record = |step: usize, m: &MfaModel| -> Result<TrainLog> {
        let train_nll = -m.log_likelihood(x)?.0 / n as f64;
        let heldout_nll = match heldout {
            Some(h) if h.nrows() > 0 => Some(-m.log_likelihood(h)?.0 / h.nrows() as f64),
            _ => None,
        };
        let log = TrainLog {
            step,
            train_nll,
            heldout_nll,
            wallclock_s: started.elapsed().as_secs_f64(),
        };
        debug!("{}", log.to_tsv());
        Ok(log)
    };

    let mut logs = vec![record(0, model)?];
    if cfg.max_steps == 0 {
        return Ok((model.clone(), logs));
    }

    let mut params = FlatParams::from_model(model);
    let mut adam = Adam::new(params.layout().len(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut buf = Array2::<f64>::zeros((batch, d));

    for step in 1..=cfg.max_steps {
        if cursor + batch > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        for (dst, &src) in buf.axis_iter_mut(Axis(0)).zip(&order[cursor..cursor + batch]) {
            let mut dst = dst;
            dst.assign(&x.row(src));
        }
        cursor += batch;

        let (loss, grad) = nll_and_grad(&params, buf.view()).map_err(|e| match e {
            Error::NotPositiveDefinite { .. } => Error::Diverged { step },
            other => other,
        })?;
        if !loss.is_finite() || !grad.as_slice().iter().all(|g| g.is_finite()) {
            return Err(Error::Diverged { step });
        }
        adam.step(params.as_mut_slice(), grad.as_slice());
        params.clamp_log_noise();

        let at_interval = cfg.eval_interval > 0 && step % cfg.eval_interval == 0;
        if at_interval || step == cfg.max_steps {
            let m = params.to_model().map_err(|_| Error::Diverged { step })?;
            logs.push(record(step, &m)?);
        }
    }
    let trained = params.to_model().map_err(|_| Error::Diverged {
        step: cfg.max_steps,
    })?;
    Ok((trained, logs))
}
