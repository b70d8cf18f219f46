//! Training harness: Adam, mean-squared-error loss, batched evaluation, and
//! an early-stopping training loop with per-epoch CSV logging.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{gather_batch, window_count};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Graph, Param, Real, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl AdamConfig {
    pub fn with_lr(lr: Real) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers are positional: `step` must be
/// called with the same parameter list (same order) every time.
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<Real>>,
    v: Vec<Vec<Real>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::state("optimizer was built for a different parameter list"));
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                let g = p.grad[j];
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.data[j] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Mean squared error over all elements; `target` is a constant.
pub fn mse_loss(g: &Graph, pred: &Tensor, target: &[Real]) -> Result<Tensor> {
    if pred.numel() != target.len() {
        return Err(Error::shape(format!(
            "loss: prediction has {} elements, target has {}",
            pred.numel(),
            target.len()
        )));
    }
    let t = g.leaf(target.to_vec(), pred.shape())?;
    let diff = pred.sub(&t)?;
    Ok(diff.mul(&diff)?.mean())
}

/// Sum-of-errors accumulation so the final metrics are independent of the
/// evaluation batch size.
pub fn evaluate(
    model: &Model,
    split: &[Real],
    split_len: usize,
    batch: usize,
) -> Result<(Real, Real)> {
    let c = model.cfg.channels;
    let (l, h) = (model.cfg.lookback, model.cfg.horizon);
    let n = window_count(split_len, l, h);
    if n == 0 {
        return Err(Error::config("evaluation split has no complete windows"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused: eval mode has no dropout
    let mut sq = 0.0;
    let mut ab = 0.0;
    let mut total = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (x, y) = gather_batch(split, split_len, c, l, h, &idx);
        let g = Graph::new();
        let xt = g.leaf(x, &[idx.len(), c, l])?;
        let pred = model.forward(&g, &xt, false, &mut rng)?;
        for (p, t) in pred.data().iter().zip(&y) {
            let d = p - t;
            sq += d * d;
            ab += d.abs();
        }
        total += y.len();
        start = end;
    }
    Ok((sq / total as Real, ab / total as Real))
}

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub lr: Real,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub eval_batch: usize,
}

impl TrainConfig {
    pub fn base() -> Self {
        TrainConfig { lr: 1e-3, batch: 256, max_epochs: 30, patience: 5, seed: 1, eval_batch: 256 }
    }
}

pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: Real,
    pub val_mse: Real,
    pub val_mae: Real,
    pub seconds: Real,
}

pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: Real,
    pub best_val_mae: Real,
}

/// Trains `model` in place; on return the parameters are those of the best
/// validation epoch. `log` (if given) receives one CSV line per epoch.
pub fn train_run(
    model: &mut Model,
    train: (&[Real], usize),
    val: (&[Real], usize),
    tcfg: TrainConfig,
    mut log: Option<&mut dyn std::io::Write>,
) -> Result<TrainReport> {
    let c = model.cfg.channels;
    let (l, h) = (model.cfg.lookback, model.cfg.horizon);
    let n_train = window_count(train.1, l, h);
    if n_train == 0 {
        return Err(Error::config("training split has no complete windows"));
    }
    if tcfg.batch == 0 {
        return Err(Error::config("batch size must be ≥ 1"));
    }
    let mut opt = Adam::new(AdamConfig::with_lr(tcfg.lr));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(tcfg.seed.wrapping_add(0x9e3779b9));
    let mut indices: Vec<usize> = (0..n_train).collect();
    let mut history = Vec::new();
    let mut best = (0usize, Real::INFINITY, Real::INFINITY);
    let mut best_params: Vec<Vec<Real>> = Vec::new();
    let mut since_best = 0usize;
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "epoch,train_loss,val_mse,val_mae,seconds")?;
    }
    for epoch in 1..=tcfg.max_epochs {
        let start = Instant::now();
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in indices.chunks(tcfg.batch) {
            let (x, y) = gather_batch(train.0, train.1, c, l, h, chunk);
            let g = Graph::new();
            let xt = g.leaf(x, &[chunk.len(), c, l])?;
            let pred = model.forward(&g, &xt, true, &mut dropout_rng)?;
            let loss = mse_loss(&g, &pred, &y)?;
            let lv = loss.data()[0];
            if !lv.is_finite() {
                return Err(Error::numeric(format!(
                    "training aborted: non-finite loss at epoch {epoch}"
                )));
            }
            loss_sum += lv;
            batches += 1;
            g.backward(&loss)?;
            let mut refs = model.params_mut();
            for p in refs.iter_mut() {
                p.zero_grad();
            }
            g.accumulate_param_grads(&mut refs);
            opt.step(&mut refs)?;
        }
        let (val_mse, val_mae) = evaluate(model, val.0, val.1, tcfg.eval_batch)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as Real,
            val_mse,
            val_mae,
            seconds: start.elapsed().as_secs_f64() as Real,
        };
        if let Some(w) = log.as_deref_mut() {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{:.2}",
                rec.epoch, rec.train_loss, rec.val_mse, rec.val_mae, rec.seconds
            )?;
            w.flush()?;
        }
        history.push(rec);
        if val_mse < best.1 {
            best = (epoch, val_mse, val_mae);
            best_params = model.params().iter().map(|p| p.data.clone()).collect();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tcfg.patience {
                break;
            }
        }
    }
    if !best_params.is_empty() {
        for (p, saved) in model.params_mut().into_iter().zip(&best_params) {
            p.data.copy_from_slice(saved);
        }
    }
    Ok(TrainReport {
        history,
        best_epoch: best.0,
        best_val_mse: best.1,
        best_val_mae: best.2,
    })
}
