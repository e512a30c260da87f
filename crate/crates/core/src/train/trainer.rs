use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::data::{sample_batch, BatchConfig, Dataset, ImagePair, PatchOrigin};
use crate::error::{Error, Result};
use crate::exec::Taped;
use crate::imaging::{evaluate_pair, ImageBuffer, PairScore};
use crate::io::write_atomic;
use crate::nn::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::checkpoint::{Checkpoint, RngState};
use super::config::TrainConfig;
use super::optim::{cosine_lr, Adam};

pub const LOSS_LOG: &str = "loss.csv";
pub const LAST_BATCH: &str = "last_batch.txt";

/// Batch sampling draws from its own ChaCha stream so it never aliases the
/// initialisation stream of the same seed.
const SAMPLER_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Iteration just completed (1-based).
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Model, optimiser and sampler state for one run.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: Model<T>,
    pub adam: Adam<T>,
    rng: ChaCha8Rng,
    iteration: u64,
    last_batch: Vec<PatchOrigin>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model_config(), config.seed)?;
        let adam = Adam::new(config.adam, &model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(SAMPLER_STREAM);
        Ok(Trainer {
            config,
            model,
            adam,
            rng,
            iteration: 0,
            last_batch: Vec::new(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let config = TrainConfig::parse(&ck.config)?;
        let mut model = Model::zeros(config.model_config())?;
        ck.load_weights(&mut model)?;
        let mut adam = Adam::new(config.adam, &model.params);
        adam.step = ck.adam_step;
        adam.m = ck.adam_m.clone();
        adam.v = ck.adam_v.clone();
        Ok(Trainer {
            config,
            model,
            adam,
            rng: ck.rng.restore(),
            iteration: ck.iteration,
            last_batch: Vec::new(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            config: self.config.to_text(),
            iteration: self.iteration,
            adam_step: self.adam.step,
            rng: RngState::capture(&self.rng),
            params: self
                .model
                .params
                .iter()
                .map(|p| (p.name.clone(), p.tensor.clone()))
                .collect(),
            adam_m: self.adam.m.clone(),
            adam_v: self.adam.v.clone(),
        }
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Origins of the most recently sampled batch.
    pub fn last_batch(&self) -> &[PatchOrigin] {
        &self.last_batch
    }

    /// L1 loss of the model on `(lr, hr)` and the gradient for every
    /// parameter, in store order.
    pub fn loss_and_grads(
        model: &Model<T>,
        lr: Tensor<T>,
        hr: Tensor<T>,
    ) -> Result<(T, Vec<Tensor<T>>)> {
        let mut tape = Tape::new();
        let mut exec = Taped::bind(&mut tape, &model.params);
        let vars = exec.param_vars().to_vec();
        let x = exec.tape().leaf(lr, false);
        let y = model.arch.forward(&mut exec, &x)?;
        let target = exec.tape().leaf(hr, false);
        let loss = exec.tape().l1_loss(y, target)?;
        let value = exec.tape().value(loss).data()[0];
        let mut grads = tape.backward(loss)?;
        let grads = vars
            .into_iter()
            .map(|v| grads.take(v).expect("bound parameters require grad"))
            .collect();
        Ok((value, grads))
    }

    /// One iteration: sample, forward, L1, backward, Adam at the scheduled
    /// rate.
    pub fn step(&mut self, data: &Dataset) -> Result<StepReport> {
        if data.scale != self.config.scale {
            return Err(Error::Data(format!(
                "dataset scale {} does not match model scale {}",
                data.scale, self.config.scale
            )));
        }
        let cfg = BatchConfig {
            batch: self.config.batch,
            hr_patch: self.config.hr_patch,
            augment: self.config.augment,
        };
        let batch = sample_batch::<T, _>(data, &mut self.rng, &cfg)?;
        self.last_batch = batch.origins;
        let (loss, grads) = Self::loss_and_grads(&self.model, batch.lr, batch.hr)?;
        let loss = loss.to_f64_lossy();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {loss} at iteration {}; last batch: {}",
                self.iteration + 1,
                self.last_batch
                    .iter()
                    .map(|o| o.to_string())
                    .collect::<Vec<_>>()
                    .join("; ")
            )));
        }
        let lr = cosine_lr(self.iteration, &self.config);
        self.adam.update(&mut self.model.params, &grads, lr)?;
        self.iteration += 1;
        Ok(StepReport {
            iter: self.iteration,
            lr,
            loss,
        })
    }

    /// Super-resolves a whole LR image.
    pub fn super_resolve(model: &Model<T>, lr: &ImageBuffer) -> Result<ImageBuffer> {
        let out = model.forward(&lr.to_tensor())?;
        ImageBuffer::from_tensor(&out, 0)
    }

    /// Y-channel PSNR/SSIM of the super-resolved LR against HR, shaving
    /// `scale` pixels.
    pub fn evaluate(&self, pair: &ImagePair) -> Result<PairScore> {
        let sr = Self::super_resolve(&self.model, &pair.lr)?;
        evaluate_pair(&sr, &pair.hr, self.config.scale)
    }
}

/// Loss log rows `iter,lr,loss`, truncated to `keep_through` on resume.
struct LossLog {
    file: fs::File,
    path: PathBuf,
}

impl LossLog {
    fn open(path: &Path, keep_through: u64) -> Result<Self> {
        let mut text = String::from("iter,lr,loss\n");
        if keep_through > 0 {
            if let Ok(old) = fs::read_to_string(path) {
                for line in old.lines().skip(1) {
                    let iter = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
                    if iter.is_some_and(|i| i <= keep_through) {
                        text.push_str(line);
                        text.push('\n');
                    }
                }
            }
        }
        write_atomic(path, text.as_bytes())?;
        let file = fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(LossLog {
            file,
            path: path.to_path_buf(),
        })
    }

    fn append(&mut self, r: &StepReport) -> Result<()> {
        writeln!(self.file, "{},{:e},{}", r.iter, r.lr, r.loss)
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// What a [`run`] produced.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub final_checkpoint: PathBuf,
    pub last: Option<StepReport>,
    /// `(iteration, score)` for each periodic evaluation.
    pub evals: Vec<(u64, PairScore)>,
}

/// Trains until `total_iters`, writing `loss.csv`, `ckpt-<iter>.bin` every
/// `checkpoint_every` iterations and `final.bin`. A non-finite loss halts the
/// run and dumps the offending batch origins to `last_batch.txt`.
pub fn run<T: Scalar>(
    trainer: &mut Trainer<T>,
    data: &Dataset,
    eval: Option<&ImagePair>,
    out_dir: &Path,
    mut on_step: impl FnMut(&StepReport),
) -> Result<RunOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut log = LossLog::open(&out_dir.join(LOSS_LOG), trainer.iteration())?;
    let mut evals = Vec::new();
    let mut eval_lines = String::from("iter,psnr,ssim\n");
    let mut last = None;
    while trainer.iteration() < trainer.config.total_iters {
        let report = match trainer.step(data) {
            Ok(r) => r,
            Err(e @ Error::NonFinite(_)) => {
                let dump: String = trainer
                    .last_batch()
                    .iter()
                    .map(|o| format!("{o}\n"))
                    .collect();
                write_atomic(&out_dir.join(LAST_BATCH), dump.as_bytes())?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        log.append(&report)?;
        on_step(&report);
        let it = report.iter;
        if let Some(pair) =
            eval.filter(|_| trainer.config.eval_every > 0 && it % trainer.config.eval_every == 0)
        {
            let score = trainer.evaluate(pair)?;
            eval_lines.push_str(&format!("{it},{},{}\n", score.psnr, score.ssim));
            write_atomic(&out_dir.join("eval.csv"), eval_lines.as_bytes())?;
            evals.push((it, score));
        }
        if trainer.config.checkpoint_every > 0 && it % trainer.config.checkpoint_every == 0 {
            trainer
                .checkpoint()
                .save(&out_dir.join(format!("ckpt-{it:08}.bin")))?;
        }
        last = Some(report);
    }
    let final_checkpoint = out_dir.join("final.bin");
    trainer.checkpoint().save(&final_checkpoint)?;
    Ok(RunOutcome {
        final_checkpoint,
        last,
        evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Channels;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            scale: 2,
            nf: 8,
            unf: 6,
            num_blocks: 1,
            batch: 2,
            hr_patch: 8,
            total_iters: 6,
            cosine_period: 6,
            seed: 7,
            ..Default::default()
        }
    }

    fn data() -> Dataset {
        let img = |w: usize, h: usize, k: usize| {
            let px = (0..w * h * 3)
                .map(|i| ((i * k + i / 7) % 251) as u8)
                .collect();
            ImageBuffer::from_u8(w, h, Channels::Rgb, px).unwrap()
        };
        Dataset::from_hr_images(
            2,
            vec![("a".into(), img(28, 24, 3)), ("b".into(), img(12, 12, 5))],
        )
        .unwrap()
    }

    #[test]
    fn zero_iterations_checkpoint_is_initialization() {
        let t = Trainer::<f32>::new(tiny_config()).unwrap();
        let init = Model::<f32>::new(tiny_config().model_config(), 7).unwrap();
        let ck = t.checkpoint();
        assert_eq!(ck.iteration, 0);
        for ((name, tensor), p) in ck.params.iter().zip(init.params.iter()) {
            assert_eq!((name, tensor), (&p.name, &p.tensor));
        }
        assert!(ck
            .adam_m
            .iter()
            .chain(&ck.adam_v)
            .all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn resume_reproduces_trajectory_bitwise() {
        let data = data();
        let mut full = Trainer::<f32>::new(tiny_config()).unwrap();
        let losses: Vec<f64> = (0..6).map(|_| full.step(&data).unwrap().loss).collect();

        let mut first = Trainer::<f32>::new(tiny_config()).unwrap();
        for _ in 0..3 {
            first.step(&data).unwrap();
        }
        let bytes = first.checkpoint().to_bytes();
        let mut resumed =
            Trainer::from_checkpoint(&Checkpoint::<f32>::from_bytes(&bytes).unwrap()).unwrap();
        let tail: Vec<f64> = (0..3).map(|_| resumed.step(&data).unwrap().loss).collect();
        assert_eq!(&losses[3..], &tail[..]);
        assert_eq!(
            resumed.checkpoint().to_bytes(),
            full.checkpoint().to_bytes()
        );
    }

    #[test]
    fn run_writes_log_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let data = data();
        let cfg = TrainConfig {
            checkpoint_every: 3,
            eval_every: 2,
            ..tiny_config()
        };
        let mut t = Trainer::<f32>::new(cfg).unwrap();
        let out = run(&mut t, &data, Some(&data.pairs[0]), dir.path(), |_| {}).unwrap();
        let log = fs::read_to_string(dir.path().join(LOSS_LOG)).unwrap();
        assert_eq!(log.lines().count(), 7);
        assert!(log.starts_with("iter,lr,loss\n1,1e-3,"));
        assert!(dir.path().join("ckpt-00000003.bin").exists());
        assert_eq!(out.evals.len(), 3);
        let ck = Checkpoint::<f32>::load(&out.final_checkpoint).unwrap();
        assert_eq!(ck.iteration, 6);
    }

    #[test]
    fn non_finite_loss_halts_and_dumps_batch() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::<f32>::new(tiny_config()).unwrap();
        t.model.params.iter_mut().next().unwrap().tensor.data_mut()[0] = f32::NAN;
        let err = run(&mut t, &data(), None, dir.path(), |_| {}).unwrap_err();
        assert!(
            matches!(err, Error::NonFinite(ref m) if m.contains("image=")),
            "{err}"
        );
        let dump = fs::read_to_string(dir.path().join(LAST_BATCH)).unwrap();
        assert_eq!(dump.lines().count(), 2);
    }

    #[test]
    fn loss_decreases_on_tiny_fixture() {
        let data = data();
        let cfg = TrainConfig {
            total_iters: 60,
            cosine_period: 60,
            augment: false,
            batch: 1,
            ..tiny_config()
        };
        let mut t = Trainer::<f32>::new(cfg).unwrap();
        let first = t.step(&data).unwrap().loss;
        let mut last = first;
        for _ in 1..60 {
            last = t.step(&data).unwrap().loss;
        }
        assert!(last < first, "{first} -> {last}");
    }
}
