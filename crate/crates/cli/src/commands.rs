use std::fmt::Write as _;
use std::path::Path;

use pan_core::analysis::{cost_report, Indivisible};
use pan_core::data::{self, png_files, Dataset};
use pan_core::gradcheck::{gradcheck as run_gradcheck, GradcheckConfig, GradcheckReport};
use pan_core::imaging::{evaluate_pair, ImageBuffer, PairScore};
use pan_core::io::write_atomic;
use pan_core::train::{self, Checkpoint, StepReport, TrainConfig, Trainer};
use pan_core::{BlockType, Error, Model, ModelConfig, Pan};
use thiserror::Error;

use crate::{AnalyzeArgs, DegradeArgs, EvalArgs, GradcheckArgs, InferArgs, TrainArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
}

type Result<T, E = CliError> = std::result::Result<T, E>;

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let config = ModelConfig {
        num_blocks: args.blocks.unwrap_or(args.block_type.default_count()),
        ..ModelConfig::with_blocks(args.scale, args.block_type)
    };
    let model = Pan::build(config)?;
    let report = cost_report(&model, args.hr_res, Indivisible::Crop)?;
    println!(
        "model: x{} {} with {} blocks, nf {}, unf {}",
        model.config.scale,
        model.config.block_type.as_str(),
        model.config.num_blocks,
        model.config.nf,
        model.config.unf
    );
    println!("params: {}", report.total_params);
    let cropped = if report.hr == args.hr_res {
        String::new()
    } else {
        format!(" (cropped from {})", args.hr_res)
    };
    println!(
        "mult-adds: {:.2}G at {}{cropped}",
        report.giga_mult_adds(),
        report.hr
    );
    if let Some(out) = &args.out {
        write_atomic(out, report.to_csv().as_bytes())?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

pub fn degrade(args: &DegradeArgs) -> Result<()> {
    if !args.hr_dir.is_dir() {
        return Err(Error::Data(format!("{}: not a directory", args.hr_dir.display())).into());
    }
    let manifest = data::degrade(&args.hr_dir, args.scale, &args.out_dir)?;
    println!(
        "degraded {} images at x{} into {}",
        manifest.entries.len(),
        args.scale,
        args.out_dir.display()
    );
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let config = args.config.as_deref().map(TrainConfig::load).transpose()?;
    let mut trainer = match (&args.resume, config) {
        (Some(path), config) => {
            let ck = Checkpoint::<f32>::load(path)?;
            let mut trainer = Trainer::from_checkpoint(&ck)?;
            if let Some(config) = config {
                if config.model_config() != trainer.config.model_config()
                    || config.seed != trainer.config.seed
                {
                    return Err(CliError::Usage(format!(
                        "{} disagrees with the checkpoint on the model or seed",
                        args.config.as_ref().unwrap().display()
                    )));
                }
                trainer.adam.config = config.adam;
                trainer.config = config;
            }
            println!(
                "resuming from {} at iteration {}",
                path.display(),
                trainer.iteration()
            );
            trainer
        }
        (None, Some(config)) => Trainer::new(config)?,
        (None, None) => {
            return Err(CliError::Usage(
                "--config is required unless --resume is given".into(),
            ))
        }
    };
    let data = Dataset::load(&args.data)?;
    if data.scale != trainer.config.scale {
        return Err(Error::Config(format!(
            "dataset is x{} but the config trains x{}",
            data.scale, trainer.config.scale
        ))
        .into());
    }
    let eval = data
        .pairs
        .first()
        .filter(|_| trainer.config.eval_every > 0)
        .cloned();
    let log_every = args.log_every;
    let progress = |r: &StepReport| {
        if log_every > 0 && r.iter % log_every == 0 {
            println!("iter {} lr {:.3e} loss {:.6}", r.iter, r.lr, r.loss);
        }
    };
    let outcome = train::run(&mut trainer, &data, eval.as_ref(), &args.out_dir, progress)?;
    if let Some(last) = outcome.last {
        println!("final iter {} loss {:.6}", last.iter, last.loss);
    }
    if let Some((it, s)) = outcome.evals.last() {
        println!("eval at {it}: psnr {} ssim {:.4}", fmt_psnr(s.psnr), s.ssim);
    }
    println!("checkpoint: {}", outcome.final_checkpoint.display());
    Ok(())
}

/// Rebuilds the model a checkpoint was trained with, optionally at a
/// caller-imposed scale so a mismatch surfaces as a weight diff.
fn load_model(path: &Path, scale: Option<usize>) -> Result<Model<f32>> {
    let ck = Checkpoint::<f32>::load(path)?;
    let mut config = TrainConfig::parse(&ck.config)?.model_config();
    if let Some(s) = scale {
        config.scale = s;
    }
    let mut model = Model::zeros(config)?;
    ck.load_weights(&mut model)?;
    Ok(model)
}

pub fn infer(args: &InferArgs) -> Result<()> {
    let model = load_model(&args.ckpt, args.scale)?;
    let lr = ImageBuffer::load_png(&args.input)?.to_f32();
    let sr = Trainer::super_resolve(&model, &lr)?;
    sr.save_png(&args.out)?;
    println!(
        "{}x{} -> {}x{}: wrote {}",
        lr.width,
        lr.height,
        sr.width,
        sr.height,
        args.out.display()
    );
    Ok(())
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let model = args
        .ckpt
        .as_deref()
        .map(|p| load_model(p, None))
        .transpose()?;
    let shave = args
        .shave
        .unwrap_or(model.as_ref().map_or(0, |m| m.config().scale));
    let files = png_files(&args.hr_dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!("no PNG images in {}", args.hr_dir.display())).into());
    }
    let mut scores: Vec<PairScore> = Vec::with_capacity(files.len());
    let mut out = String::from("image\tpsnr\tssim\n");
    for hr_path in &files {
        let name = hr_path.file_name().expect("listed files have names");
        let hr = ImageBuffer::load_png(hr_path)?;
        let other = ImageBuffer::load_png(&args.lr_dir.join(name))?;
        let sr = match &model {
            Some(m) => Trainer::super_resolve(m, &other.to_f32())?.to_u8(),
            None => other,
        };
        let score = evaluate_pair(&sr, &hr, shave)
            .map_err(|e| Error::Data(format!("{}: {e}", name.to_string_lossy())))?;
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}",
            name.to_string_lossy(),
            fmt_psnr(score.psnr),
            score.ssim
        );
        scores.push(score);
    }
    let n = scores.len() as f64;
    let mean_psnr = scores.iter().map(|s| s.psnr).sum::<f64>() / n;
    let mean_ssim = scores.iter().map(|s| s.ssim).sum::<f64>() / n;
    let _ = writeln!(out, "mean\t{}\t{mean_ssim:.6}", fmt_psnr(mean_psnr));
    print!("{out}");
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<()> {
    // Without blocks every block type builds the same network.
    let types = match (args.block_type, args.blocks) {
        (Some(bt), _) => vec![bt],
        (None, 0) => vec![BlockType::Scpa],
        (None, _) => BlockType::ALL.to_vec(),
    };
    let mut failures = Vec::new();
    let mut worst = [0.0f64; 2];
    for bt in types {
        let cfg = GradcheckConfig {
            nf: args.width,
            unf: args.unf,
            num_blocks: args.blocks,
            seed: args.seed,
            samples: args.samples,
            ..GradcheckConfig::tiny(bt)
        };
        let reports: [(&str, GradcheckReport); 2] = [
            ("f32", run_gradcheck::<f32>(&cfg)?),
            ("f64", run_gradcheck::<f64>(&cfg)?),
        ];
        for (i, (precision, r)) in reports.iter().enumerate() {
            println!(
                "{:<6} {precision}: max rel err {:.3e} (threshold {:.0e}), {} checked, {} skipped, worst {}",
                bt.as_str(),
                r.max_rel_err,
                r.threshold,
                r.checked,
                r.skipped,
                r.worst
            );
            worst[i] = worst[i].max(r.max_rel_err);
            if !r.passed() {
                failures.push(format!("{} {precision}", bt.as_str()));
            }
        }
    }
    println!(
        "max relative error: f32 {:.3e}, f64 {:.3e}",
        worst[0], worst[1]
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check above threshold for {}",
            failures.join(", ")
        )))
    }
}
