//! Command implementations behind the CLI: train, eval, forecast, ablate,
//! inspect.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::checkpoint::{self, NamedTensor};
use crate::config::RunConfig;
use crate::data::{load_csv, split_and_standardize, window, window_count, Splits};
use crate::error::{Error, Result};
use crate::model::{build_variant, AblationFlags, Model, ModelConfig};
use crate::svg::{line_plot, Series};
use crate::tensor::{Graph, Real};
use crate::train::{evaluate, train_run};

fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let csv = cfg.data.resolved_csv();
    let ds = load_csv(&csv)?;
    if ds.channels() != cfg.model.channels {
        return Err(Error::config(format!(
            "{} has {} channels but the model is configured for {}",
            csv.display(),
            ds.channels(),
            cfg.model.channels
        )));
    }
    split_and_standardize(&ds, cfg.data.train, cfg.data.val, cfg.data.test)
}

fn stats_tensors(splits: &Splits) -> Vec<NamedTensor> {
    let c = splits.channels;
    vec![
        NamedTensor { name: "data.mean".into(), shape: vec![c], data: splits.stats.mean.clone() },
        NamedTensor { name: "data.std".into(), shape: vec![c], data: splits.stats.std.clone() },
    ]
}

/// Trains a model per config, writing the effective config, per-epoch log,
/// best checkpoint and a training-curve plot into `out_dir`.
pub fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("effective.cfg"), cfg.effective())?;
    let splits = load_splits(cfg)?;
    let mut model = build_variant(cfg.model)?;
    let (params, flops) = model.count_params_flops(1)?;
    println!("parameters: {params}");
    println!("flops/forward (batch 1): {flops}");
    let mut log = BufWriter::new(File::create(out_dir.join("train_log.csv"))?);
    let report = train_run(
        &mut model,
        (&splits.train, splits.train_len),
        (&splits.val, splits.val_len),
        cfg.train,
        Some(&mut log),
    )?;
    drop(log);
    for r in &report.history {
        println!(
            "epoch {:>3}  train_loss {:.6}  val_mse {:.6}  val_mae {:.6}  {:.1}s",
            r.epoch, r.train_loss, r.val_mse, r.val_mae, r.seconds
        );
    }
    println!("best epoch {} (val_mse {:.6})", report.best_epoch, report.best_val_mse);
    let (test_mse, test_mae) = evaluate(&model, &splits.test, splits.test_len, cfg.train.eval_batch)?;
    println!("test_mse {test_mse:.6}");
    println!("test_mae {test_mae:.6}");
    checkpoint::save_model(&out_dir.join("model.ckpt"), &model, &stats_tensors(&splits))?;
    let curves = [
        Series {
            label: "train loss",
            points: report.history.iter().map(|r| (r.epoch as Real, r.train_loss)).collect(),
            dashed: false,
        },
        Series {
            label: "val mse",
            points: report.history.iter().map(|r| (r.epoch as Real, r.val_mse)).collect(),
            dashed: true,
        },
    ];
    line_plot(&out_dir.join("training.svg"), "training curves", &curves)?;
    Ok(())
}

fn load_model(ckpt_path: &Path) -> Result<(Model, checkpoint::Checkpoint)> {
    let ckpt = checkpoint::load(ckpt_path)?;
    let mcfg = ModelConfig::from_lines(&ckpt.config)?;
    let mut model = build_variant(mcfg)?;
    checkpoint::load_into_model(&mut model, &ckpt)?;
    Ok((model, ckpt))
}

/// Evaluates a checkpoint on a named split of the configured dataset.
pub fn cmd_eval(cfg: &RunConfig, ckpt_path: &Path, split_name: &str) -> Result<()> {
    let (model, _) = load_model(ckpt_path)?;
    let splits = load_splits(&RunConfig { model: model.cfg, ..cfg.clone() })?;
    let (data, len) = splits.split(split_name)?;
    let (mse, mae) = evaluate(&model, data, len, cfg.train.eval_batch)?;
    println!("split {split_name}");
    println!("mse {mse:.6}");
    println!("mae {mae:.6}");
    Ok(())
}

/// Forecasts one test window and renders history, prediction and ground
/// truth for a single channel to SVG.
pub fn cmd_forecast(
    cfg: &RunConfig,
    ckpt_path: &Path,
    window_idx: usize,
    channel: usize,
    out_svg: &Path,
) -> Result<()> {
    let (model, _) = load_model(ckpt_path)?;
    let splits = load_splits(&RunConfig { model: model.cfg, ..cfg.clone() })?;
    let (c, l, h) = (model.cfg.channels, model.cfg.lookback, model.cfg.horizon);
    if channel >= c {
        return Err(Error::config(format!("channel {channel} out of range (model has {c})")));
    }
    let n = window_count(splits.test_len, l, h);
    if window_idx >= n {
        return Err(Error::config(format!(
            "window {window_idx} out of range (test split has {n} windows)"
        )));
    }
    let (x, y) = window(&splits.test, splits.test_len, c, l, h, window_idx);
    let g = Graph::new();
    let xt = g.leaf(x.clone(), &[1, c, l])?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let pred = model.forward(&g, &xt, false, &mut rng)?;
    let pv = pred.to_vec();
    // de-standardize for plotting
    let (m, s) = (splits.stats.mean[channel], splits.stats.std[channel]);
    let hist: Vec<(Real, Real)> = (0..l)
        .map(|t| (t as Real, x[channel * l + t] * s + m))
        .collect();
    let truth: Vec<(Real, Real)> = (0..h)
        .map(|t| ((l + t) as Real, y[channel * h + t] * s + m))
        .collect();
    let fc: Vec<(Real, Real)> = (0..h)
        .map(|t| ((l + t) as Real, pv[channel * h + t] * s + m))
        .collect();
    let series = [
        Series { label: "history", points: hist, dashed: false },
        Series { label: "actual", points: truth, dashed: false },
        Series { label: "forecast", points: fc, dashed: true },
    ];
    line_plot(out_svg, &format!("test window {window_idx}, channel {channel}"), &series)?;
    // full forecast in original units, one column per channel
    let csv_path = out_svg.with_extension("csv");
    let mut csv = String::from("step");
    for ch in 0..c {
        csv.push_str(&format!(",ch{ch}"));
    }
    csv.push('\n');
    for t in 0..h {
        csv.push_str(&t.to_string());
        for ch in 0..c {
            let v = pv[ch * h + t] * splits.stats.std[ch] + splits.stats.mean[ch];
            csv.push_str(&format!(",{v:.6}"));
        }
        csv.push('\n');
    }
    std::fs::write(&csv_path, csv)?;
    println!("wrote {}", out_svg.display());
    println!("wrote {}", csv_path.display());
    Ok(())
}

pub const ABLATION_VARIANTS: &[&str] =
    &["full", "no_swt", "fixed_swt", "no_neighboring_mixer", "no_channel_encoder"];

/// Trains each requested variant for each seed under identical data and
/// optimizer settings, prints per-variant seed averages and writes the same
/// table to `out_dir/ablation.csv`.
pub fn cmd_ablate(
    cfg: &RunConfig,
    variants: &[String],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<()> {
    let mut dedup = variants.to_vec();
    dedup.sort();
    dedup.dedup();
    if dedup.len() != variants.len() {
        return Err(Error::config("duplicate variant names"));
    }
    if seeds.is_empty() {
        return Err(Error::config("ablate needs at least one seed"));
    }
    std::fs::create_dir_all(out_dir)?;
    let splits = load_splits(cfg)?;
    let header = format!(
        "{:<22} {:>10} {:>6} {:>10} {:>10}",
        "variant", "params", "seeds", "test_mse", "test_mae"
    );
    println!("{header}");
    let mut table = String::from("variant,params,seeds,test_mse,test_mae\n");
    for name in variants {
        let ablation = AblationFlags::parse_variant(name)?;
        let mut mse_sum = 0.0;
        let mut mae_sum = 0.0;
        let mut params = 0;
        for &seed in seeds {
            let mcfg = ModelConfig { ablation, seed, ..cfg.model };
            let mut model = build_variant(mcfg)?;
            params = model.count_params();
            let mut log =
                BufWriter::new(File::create(out_dir.join(format!("{name}_seed{seed}.csv")))?);
            let tcfg = crate::train::TrainConfig { seed, ..cfg.train };
            train_run(
                &mut model,
                (&splits.train, splits.train_len),
                (&splits.val, splits.val_len),
                tcfg,
                Some(&mut log),
            )?;
            let (mse, mae) =
                evaluate(&model, &splits.test, splits.test_len, cfg.train.eval_batch)?;
            mse_sum += mse;
            mae_sum += mae;
        }
        let n = seeds.len() as Real;
        println!(
            "{:<22} {:>10} {:>6} {:>10.6} {:>10.6}",
            name,
            params,
            seeds.len(),
            mse_sum / n,
            mae_sum / n
        );
        table.push_str(&format!(
            "{name},{params},{},{:.6},{:.6}\n",
            seeds.len(),
            mse_sum / n,
            mae_sum / n
        ));
    }
    std::fs::write(out_dir.join("ablation.csv"), table)?;
    Ok(())
}

/// Prints the effective config, parameter count and per-forward FLOPs,
/// either for a config file or for a saved checkpoint.
pub fn cmd_inspect(cfg: &RunConfig, ckpt_path: Option<&PathBuf>) -> Result<()> {
    let model = match ckpt_path {
        Some(p) => {
            let (model, ckpt) = load_model(p)?;
            println!("checkpoint: {}", p.display());
            for (k, v) in &ckpt.config {
                println!("  {k} = {v}");
            }
            println!("stored tensors: {}", ckpt.tensors.len());
            model
        }
        None => {
            print!("{}", cfg.effective());
            build_variant(cfg.model)?
        }
    };
    let (params, flops) = model.count_params_flops(1)?;
    println!("parameters: {params}");
    println!("flops/forward (batch 1): {flops}");
    Ok(())
}
