//! Central finite-difference checks of the analytic gradients.
//!
//! The reference derivatives are always computed in f64; the analytic side
//! runs in whichever scalar type is under test. The network is only piecewise
//! smooth (ReLU variants, L1, max pooling), so a sample whose difference
//! interval crosses a branch switch is skipped: there the central difference
//! averages two slopes and is not a valid reference.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::exec::Taped;
use crate::nn::{BlockType, Model, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};
use crate::train::Trainer;

/// Outer step of the f64 Richardson difference.
pub const FD_STEP: f64 = 1e-4;
/// Candidates drawn per requested sample.
const MAX_CANDIDATES: usize = 4;
/// Gradients smaller than this are compared in absolute terms.
pub const ABS_FLOOR: f64 = 1e-6;

/// Pass thresholds on the maximum relative error.
pub fn threshold<T: Scalar>() -> f64 {
    if T::BYTES == 4 {
        1e-2
    } else {
        1e-5
    }
}

/// `|a - n| / max(|a|, |n|, ABS_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub block_type: BlockType,
    pub num_blocks: usize,
    pub nf: usize,
    pub unf: usize,
    pub scale: usize,
    pub seed: u64,
    /// Upper bound on sampled scalar parameters.
    pub samples: usize,
    /// LR input side length.
    pub lr_size: usize,
}

impl GradcheckConfig {
    pub fn tiny(block_type: BlockType) -> Self {
        GradcheckConfig {
            block_type,
            num_blocks: 2,
            nf: 8,
            unf: 6,
            scale: 2,
            seed: 0,
            samples: 200,
            lr_size: 6,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            block_type: self.block_type,
            num_blocks: self.num_blocks,
            nf: self.nf,
            unf: self.unf,
            ..ModelConfig::pan(self.scale)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub checked: usize,
    /// Samples whose difference interval crossed a branch switch.
    pub skipped: usize,
    pub max_rel_err: f64,
    /// `name[index]` of the worst parameter.
    pub worst: String,
    pub threshold: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

/// L1 loss and the branch pattern of the recorded forward pass.
fn probe(model: &Model<f64>, x: &Tensor<f64>, target: &Tensor<f64>) -> Result<(f64, Vec<u32>)> {
    let mut tape = Tape::new();
    let mut exec = Taped::bind(&mut tape, &model.params);
    let xv = exec.tape().leaf(x.clone(), false);
    let y = model.arch.forward(&mut exec, &xv)?;
    let t = exec.tape().leaf(target.clone(), false);
    let loss = tape.l1_loss(y, t)?;
    Ok((tape.value(loss).data()[0], tape.branch_pattern()))
}

/// Compares the `T` backward pass of `L1(model(x), target)` with f64 central
/// differences over a random subset of parameters. Biases are randomised so
/// their gradients are exercised away from the zero initialisation.
pub fn gradcheck<T: Scalar>(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::<f64>::new(cfg.model_config(), cfg.seed)?;
    for p in model.params.iter_mut() {
        let noise = Tensor::<f64>::uniform(p.tensor.shape(), -0.05, 0.05, &mut rng);
        p.tensor
            .data_mut()
            .iter_mut()
            .zip(noise.data())
            .for_each(|(w, n)| *w += n);
    }
    let (s, k) = (cfg.lr_size, cfg.scale);
    let x = Tensor::<f64>::uniform(Shape::new(1, 3, s, s), 0.0, 1.0, &mut rng);
    let target = Tensor::<f64>::uniform(Shape::new(1, 3, s * k, s * k), 0.0, 1.0, &mut rng);

    let (_, grads) = Trainer::loss_and_grads(&model.cast::<T>(), x.cast(), target.cast())?;

    // start offset of every parameter tensor in the flattened vector
    let starts: Vec<usize> = model
        .params
        .iter()
        .scan(0, |acc, p| {
            let s = *acc;
            *acc += p.tensor.numel();
            Some(s)
        })
        .collect();
    let total = model.params.count();
    // spare candidates replace samples lost to branch switches
    let picks = sample(&mut rng, total, (MAX_CANDIDATES * cfg.samples).min(total)).into_vec();

    let (_, pattern) = probe(&model, &x, &target)?;
    let mut report = GradcheckReport {
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        worst: String::new(),
        threshold: threshold::<T>(),
    };
    for flat in picks {
        if report.checked == cfg.samples {
            break;
        }
        let param = starts.partition_point(|&s| s <= flat) - 1;
        let i = flat - starts[param];
        let orig = model
            .params
            .iter()
            .nth(param)
            .expect("index in range")
            .tensor
            .data()[i];
        let mut at = |v: f64| -> Result<(f64, Vec<u32>)> {
            model
                .params
                .iter_mut()
                .nth(param)
                .expect("index in range")
                .tensor
                .data_mut()[i] = v;
            probe(&model, &x, &target)
        };
        // Richardson extrapolation of central differences at h and h/2
        // cancels the O(h²) term
        let mut values = [0.0; 4];
        let mut crossed = false;
        for (slot, offset) in [FD_STEP, -FD_STEP, FD_STEP / 2.0, -FD_STEP / 2.0]
            .into_iter()
            .enumerate()
        {
            let (loss, p) = at(orig + offset)?;
            values[slot] = loss;
            crossed |= p != pattern;
        }
        model
            .params
            .iter_mut()
            .nth(param)
            .expect("index in range")
            .tensor
            .data_mut()[i] = orig;
        if crossed {
            report.skipped += 1;
            continue;
        }
        let d_h = (values[0] - values[1]) / (2.0 * FD_STEP);
        let d_half = (values[2] - values[3]) / FD_STEP;
        let numeric = (4.0 * d_half - d_h) / 3.0;
        let analytic = grads[param].data()[i].to_f64_lossy();
        if !analytic.is_finite() {
            return Err(Error::NonFinite(format!(
                "analytic gradient at parameter #{param}[{i}]"
            )));
        }
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = err.max(report.max_rel_err);
            let name = &model.params.iter().nth(param).expect("index in range").name;
            report.worst = format!("{name}[{i}]");
        }
    }
    if report.checked == 0 {
        return Err(Error::Config(
            "every sampled parameter straddled a branch switch".into(),
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Var;
    use crate::ops;

    /// Checks `d sum(f(inputs) ⊙ r) / d inputs` against central differences.
    fn check_op(
        inputs: Vec<Tensor<f64>>,
        f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    ) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let eval = |vals: &[Tensor<f64>]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), true)).collect();
            let out = f(&mut tape, &vars).unwrap();
            (tape, vars, out)
        };
        let (tape, _, out) = eval(&inputs);
        let r = Tensor::uniform(tape.shape(out), -1.0, 1.0, &mut rng);
        let objective = |vals: &[Tensor<f64>]| {
            let (mut tape, _, out) = eval(vals);
            let rv = tape.leaf(r.clone(), false);
            let m = tape.mul(out, rv).unwrap();
            let s = tape.sum(m);
            tape.value(s).data()[0]
        };
        let (mut tape, vars, out) = eval(&inputs);
        let rv = tape.leaf(r.clone(), false);
        let m = tape.mul(out, rv).unwrap();
        let s = tape.sum(m);
        let grads = tape.backward(s).unwrap();

        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for (k, v) in vars.iter().enumerate() {
            let g = grads.get(*v).unwrap();
            for i in 0..inputs[k].numel() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= h;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
                worst = worst.max(relative_error(g.data()[i], numeric));
            }
        }
        worst
    }

    fn rand(shape: Shape, seed: u64) -> Tensor<f64> {
        Tensor::uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Values kept at least 0.05 away from zero so kinks are never straddled.
    fn off_zero(shape: Shape, seed: u64) -> Tensor<f64> {
        rand(shape, seed).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0f64), true);
        let y = tape.sigmoid(x);
        let g = tape.backward(y).unwrap();
        let h = 1e-3f64;
        let fd: f64 = (ops::sigmoid_scalar(h) - ops::sigmoid_scalar(-h)) / (2.0 * h);
        assert!((g.get(x).unwrap().data()[0] - 0.25).abs() < 1e-12);
        assert!((fd - 0.25).abs() < 1e-6);
    }

    #[test]
    fn pointwise_ops() {
        let s = Shape::new(1, 2, 3, 3);
        assert!(check_op(vec![rand(s, 1), rand(s, 2)], |t, v| t.mul(v[0], v[1])) < 1e-6);
        assert!(check_op(vec![rand(s, 1), rand(s, 2)], |t, v| t.add(v[0], v[1])) < 1e-6);
        assert!(check_op(vec![rand(s, 3)], |t, v| Ok(t.sigmoid(v[0]))) < 1e-6);
        assert!(check_op(vec![off_zero(s, 4)], |t, v| Ok(t.leaky_relu(v[0], 0.2))) < 1e-6);
        let s2 = Shape::new(1, 3, 3, 3);
        assert!(
            check_op(vec![rand(s, 5), rand(s2, 6)], |t, v| t
                .concat_channels(v[0], v[1]))
                < 1e-6
        );
    }

    #[test]
    fn concat_gradient_of_sum_is_ones() {
        let mut tape = Tape::new();
        let a = tape.leaf(rand(Shape::new(1, 2, 2, 2), 1), true);
        let b = tape.leaf(rand(Shape::new(1, 1, 2, 2), 2), true);
        let c = tape.concat_channels(a, b).unwrap();
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        assert!(g
            .get(a)
            .unwrap()
            .data()
            .iter()
            .chain(g.get(b).unwrap().data())
            .all(|&v| v == 1.0));
    }

    #[test]
    fn convolutions() {
        for (k, bias) in [(1, true), (3, false), (3, true), (7, true)] {
            let x = rand(Shape::new(1, 3, 4, 5), 7);
            let w = rand(Shape::new(2, 3, k, k), 8);
            let mut inputs = vec![x, w];
            if bias {
                inputs.push(rand(Shape::new(2, 1, 1, 1), 9));
            }
            let err = check_op(inputs, |t, v| t.conv2d(v[0], v[1], v.get(2).copied()));
            assert!(err < 1e-5, "k={k}: {err}");
        }
    }

    #[test]
    fn resizes_and_pools() {
        let x = || rand(Shape::new(2, 2, 3, 4), 10);
        for f in [2, 3] {
            assert!(check_op(vec![x()], |t, v| t.resize_nearest(v[0], f)) < 1e-6);
        }
        for f in [2, 3, 4] {
            assert!(check_op(vec![x()], |t, v| t.resize_bilinear(v[0], f)) < 1e-6);
        }
        assert!(check_op(vec![x()], |t, v| Ok(t.global_avg_pool(v[0]))) < 1e-6);
        // distinct values keep the max away from ties
        assert!(check_op(vec![x()], |t, v| Ok(t.channel_stat_pool(v[0]))) < 1e-6);
    }

    #[test]
    fn nearest_mean_loss_gradient() {
        // mean over the upsampled output: each source cell gets f²/count
        let x = rand(Shape::new(1, 1, 2, 3), 3);
        let mut tape = Tape::new();
        let v = tape.leaf(x, true);
        let up = tape.resize_nearest(v, 2).unwrap();
        let zero = tape.leaf(Tensor::full(Shape::new(1, 1, 4, 6), -5.0), false);
        let loss = tape.l1_loss(up, zero).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g
            .get(v)
            .unwrap()
            .data()
            .iter()
            .all(|&d| (d - 4.0 / 24.0).abs() < 1e-15));
    }

    #[test]
    fn gating_ops() {
        let x = rand(Shape::new(2, 3, 3, 2), 11);
        let cs = rand(Shape::new(2, 3, 1, 1), 12);
        let px = rand(Shape::new(2, 1, 3, 2), 13);
        assert!(check_op(vec![x.clone(), cs], |t, v| t.scale_channels(v[0], v[1])) < 1e-6);
        assert!(check_op(vec![x, px], |t, v| t.scale_pixels(v[0], v[1])) < 1e-6);
    }

    #[test]
    fn l1_loss_off_ties() {
        let pred = rand(Shape::new(1, 3, 4, 4), 14);
        let target = pred.map(|v| v + if v > 0.0 { 0.3 } else { -0.2 });
        let n = pred.numel() as f64;
        let mut tape = Tape::new();
        let p = tape.leaf(pred.clone(), true);
        let t = tape.leaf(target.clone(), false);
        let loss = tape.l1_loss(p, t).unwrap();
        let g = tape.backward(loss).unwrap();
        let h = 1e-6;
        for i in 0..pred.numel() {
            let (mut a, mut b) = (pred.clone(), pred.clone());
            a.data_mut()[i] += h;
            b.data_mut()[i] -= h;
            let l = |x: &Tensor<f64>| ops::l1_loss(x, &target).unwrap().data()[0];
            let fd = (l(&a) - l(&b)) / (2.0 * h);
            assert!((g.get(p).unwrap().data()[i] - fd).abs() < 1e-9);
            assert_eq!(g.get(p).unwrap().data()[i].abs(), 1.0 / n);
        }
    }

    #[test]
    fn tiny_scpa_model_passes_in_both_precisions() {
        let cfg = GradcheckConfig {
            samples: 60,
            ..GradcheckConfig::tiny(BlockType::Scpa)
        };
        let r64 = gradcheck::<f64>(&cfg).unwrap();
        assert!(r64.passed(), "{r64:?}");
        let r32 = gradcheck::<f32>(&cfg).unwrap();
        assert!(r32.passed(), "{r32:?}");
        assert_eq!(r64.checked, 60);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = GradcheckConfig {
            samples: 20,
            num_blocks: 0,
            ..GradcheckConfig::tiny(BlockType::Scpa)
        };
        assert_eq!(
            gradcheck::<f64>(&cfg).unwrap(),
            gradcheck::<f64>(&cfg).unwrap()
        );
    }
}
