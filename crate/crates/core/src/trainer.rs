//! The training loop: noise-prediction objective with a pluggable
//! time-step sampler and weight table.
//!
//! Each step draws, per batch element, a time step from the sampler and a
//! fresh standard normal, forms the perturbed point, and accumulates the
//! weighted squared error `w_t * |eps - eps_hat(x_t, t)|^2`. The batch mean
//! is minimized with one Adam update followed by one EMA update.
//! Everything is driven by caller-seeded generators, so a run is a pure
//! function of its config.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{resolve, RunConfig};
use crate::dataset::{sample_points, Dataset};
use crate::error::{Error, Result};
use crate::eval::{ancestral_sample, energy_distance, PointCloud};
use crate::increment::{Area, IncrementProfile};
use crate::nn::{Adam, Cache, Ema, Grads, Mlp, TimeEmbedTable};
use crate::schedule::{ScheduleSpec, ScheduleTable};
use crate::strategy::{TimeStepSampler, WeightTable};

const INIT_SALT: u64 = 0x696e6974;
const DATA_SALT: u64 = 0x64617461;
const TRAIN_SALT: u64 = 0x74726169;
const EVAL_SALT: u64 = 0x6576616c;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iteration: usize,
    pub energy_distance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetrics {
    pub losses: Vec<f64>,
    pub evals: Vec<EvalPoint>,
    pub wall_secs: f64,
    pub config_hash: String,
}

pub struct TrainOutput {
    pub metrics: RunMetrics,
    pub net: Mlp,
    pub ema: Ema,
    pub opt: Adam,
}

/// Scratch buffers reused across steps.
struct StepScratch {
    cache: Cache,
    grads: Grads,
    input: Vec<f64>,
    noise: Vec<[f64; 2]>,
    weight: Vec<f64>,
    dout: Vec<f64>,
}

impl StepScratch {
    fn new(net: &Mlp, batch: usize) -> Self {
        StepScratch {
            cache: Cache::new(net, batch),
            grads: Grads::zeros_like(net),
            input: vec![0.0; batch * net.input_dim()],
            noise: vec![[0.0; 2]; batch],
            weight: vec![0.0; batch],
            dout: vec![0.0; batch * 2],
        }
    }
}

fn check_components(
    table: &ScheduleTable<f64>,
    sampler: &TimeStepSampler<f64>,
    weights: &WeightTable<f64>,
) -> Result<()> {
    if sampler.t_total() != table.t_total() {
        return Err(Error::ConfigMismatch(format!(
            "sampler covers {} steps, schedule has {}",
            sampler.t_total(),
            table.t_total()
        )));
    }
    if weights.t_total() != table.t_total() {
        return Err(Error::ConfigMismatch(format!(
            "weight table covers {} steps, schedule has {}",
            weights.t_total(),
            table.t_total()
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn step_impl<R: Rng + ?Sized>(
    net: &mut Mlp,
    opt: &mut Adam,
    ema: &mut Ema,
    batch: &[[f64; 2]],
    table: &ScheduleTable<f64>,
    sampler: &TimeStepSampler<f64>,
    weights: &WeightTable<f64>,
    embed: &TimeEmbedTable,
    scratch: &mut StepScratch,
    rng: &mut R,
) -> Result<f64> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let in_dim = net.input_dim();
    if scratch.input.len() < b * in_dim {
        scratch.input.resize(b * in_dim, 0.0);
        scratch.noise.resize(b, [0.0; 2]);
        scratch.weight.resize(b, 0.0);
        scratch.dout.resize(b * 2, 0.0);
    }

    let (sqrt_ab, sqrt_omab) = table.marginal_coeff_slices();
    let w_table = weights.weights();

    for (i, x0) in batch.iter().enumerate() {
        let t = sampler.sample(rng);
        let e0: f64 = StandardNormal.sample(rng);
        let e1: f64 = StandardNormal.sample(rng);
        let a = sqrt_ab[t - 1];
        let s = sqrt_omab[t - 1];
        let row = &mut scratch.input[i * in_dim..(i + 1) * in_dim];
        row[0] = a * x0[0] + s * e0;
        row[1] = a * x0[1] + s * e1;
        row[2..].copy_from_slice(embed.row(t));
        scratch.noise[i] = [e0, e1];
        scratch.weight[i] = w_table[t - 1];
    }

    net.forward_batch(&scratch.input[..b * in_dim], b, &mut scratch.cache)?;
    let out = scratch.cache.output();

    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0f64;
    for i in 0..b {
        let w = scratch.weight[i];
        let eps = scratch.noise[i];
        let d0 = out[i * 2] - eps[0];
        let d1 = out[i * 2 + 1] - eps[1];
        loss += w * (d0 * d0 + d1 * d1);
        scratch.dout[i * 2] = 2.0 * w * d0 * inv_b;
        scratch.dout[i * 2 + 1] = 2.0 * w * d1 * inv_b;
    }
    loss *= inv_b;
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }

    net.backward_batch(&scratch.cache, &scratch.dout[..b * 2], &mut scratch.grads)?;
    opt.step(net, &scratch.grads)?;
    ema.update(net)?;
    Ok(loss)
}

/// One optimization step over a batch; returns the averaged weighted loss.
#[allow(clippy::too_many_arguments)]
pub fn training_step<R: Rng + ?Sized>(
    net: &mut Mlp,
    opt: &mut Adam,
    ema: &mut Ema,
    batch: &[[f64; 2]],
    table: &ScheduleTable<f64>,
    sampler: &TimeStepSampler<f64>,
    weights: &WeightTable<f64>,
    rng: &mut R,
) -> Result<f64> {
    check_components(table, sampler, weights)?;
    let embed = TimeEmbedTable::build(table.t_total(), net.input_dim() - 2)?;
    let mut scratch = StepScratch::new(net, batch.len());
    step_impl(
        net, opt, ema, batch, table, sampler, weights, &embed, &mut scratch, rng,
    )
}

/// Run the full loop described by the config; deterministic per seed.
pub fn train(cfg: &RunConfig) -> Result<TrainOutput> {
    let start = Instant::now();
    let resolved = resolve(cfg)?;
    let table = resolved.table;
    let sampler = resolved.sampler;
    let weights = resolved.weights;
    check_components(&table, &sampler, &weights)?;

    let tp = &cfg.train;
    let dims = tp.layer_dims();
    let mut net = Mlp::init(&dims, tp.activation, cfg.seed ^ INIT_SALT)?;
    let mut opt = Adam::new(&net, tp.lr);
    let mut ema = Ema::new(&net, tp.ema_decay)?;

    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DATA_SALT);
    let data = sample_points(tp.dataset, tp.n_points, &mut data_rng);
    let reference = PointCloud::data(sample_points(tp.dataset, tp.eval_samples, &mut data_rng));

    let embed = TimeEmbedTable::build(table.t_total(), tp.time_embed_dim)?;
    let mut scratch = StepScratch::new(&net, tp.batch_size);
    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_SALT);

    let evaluate = |iteration: usize, ema: &Ema| -> Result<EvalPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            (cfg.seed ^ EVAL_SALT).wrapping_add((iteration as u64).wrapping_mul(0x9E3779B97F4A7C15)),
        );
        let cloud = ancestral_sample(ema.shadow(), &table, tp.eval_samples, &mut rng)?;
        Ok(EvalPoint {
            iteration,
            energy_distance: energy_distance(&cloud, &reference)?,
        })
    };

    let mut losses = Vec::with_capacity(tp.iterations);
    let mut evals = vec![evaluate(0, &ema)?];
    let mut batch = vec![[0.0f64; 2]; tp.batch_size];

    for it in 1..=tp.iterations {
        for slot in batch.iter_mut() {
            *slot = data[train_rng.gen_range(0..data.len())];
        }
        let loss = step_impl(
            &mut net,
            &mut opt,
            &mut ema,
            &batch,
            &table,
            &sampler,
            &weights,
            &embed,
            &mut scratch,
            &mut train_rng,
        )?;
        losses.push(loss);
        if it % tp.eval_every == 0 || it == tp.iterations {
            evals.push(evaluate(it, &ema)?);
        }
    }

    Ok(TrainOutput {
        metrics: RunMetrics {
            losses,
            evals,
            wall_secs: start.elapsed().as_secs_f64(),
            config_hash: cfg.hash(),
        },
        net,
        ema,
        opt,
    })
}

/// Mean unweighted probe loss per area, over fixed `(x0, t, eps)` probes.
#[derive(Clone, Copy, Debug)]
pub struct AreaProbeStats {
    pub acceleration: f64,
    pub deceleration: f64,
    pub convergence: f64,
    pub counts: [usize; 3],
}

pub fn stratified_probe_loss(
    net: &Mlp,
    table: &ScheduleTable<f64>,
    profile: &IncrementProfile<f64>,
    dataset: Dataset,
    n_probes: usize,
    seed: u64,
) -> Result<AreaProbeStats> {
    if n_probes == 0 {
        return Err(Error::InvalidParameter("need at least one probe".into()));
    }
    let t_total = table.t_total();
    let in_dim = net.input_dim();
    let embed = TimeEmbedTable::build(t_total, in_dim - 2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = sample_points(dataset, n_probes, &mut rng);
    let (sqrt_ab, sqrt_omab) = table.marginal_coeff_slices();

    let mut input = vec![0.0f64; n_probes * in_dim];
    let mut noise = vec![[0.0f64; 2]; n_probes];
    let mut steps = vec![0usize; n_probes];
    for i in 0..n_probes {
        let t = rng.gen_range(1..=t_total);
        let e0: f64 = StandardNormal.sample(&mut rng);
        let e1: f64 = StandardNormal.sample(&mut rng);
        let a = sqrt_ab[t - 1];
        let s = sqrt_omab[t - 1];
        let row = &mut input[i * in_dim..(i + 1) * in_dim];
        row[0] = a * points[i][0] + s * e0;
        row[1] = a * points[i][1] + s * e1;
        row[2..].copy_from_slice(embed.row(t));
        noise[i] = [e0, e1];
        steps[i] = t;
    }

    let mut cache = Cache::new(net, n_probes);
    net.forward_batch(&input, n_probes, &mut cache)?;
    let out = cache.output();

    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    for i in 0..n_probes {
        let d0 = out[i * 2] - noise[i][0];
        let d1 = out[i * 2 + 1] - noise[i][1];
        let loss = d0 * d0 + d1 * d1;
        let bucket = match profile.area(steps[i])? {
            Area::Acceleration => 0,
            Area::Deceleration => 1,
            Area::Convergence => 2,
        };
        sums[bucket] += loss;
        counts[bucket] += 1;
    }
    let mean = |i: usize| {
        if counts[i] > 0 {
            sums[i] / counts[i] as f64
        } else {
            f64::NAN
        }
    };
    Ok(AreaProbeStats {
        acceleration: mean(0),
        deceleration: mean(1),
        convergence: mean(2),
        counts,
    })
}

/// Final-state snapshot: everything needed to sample from a trained model
/// and to verify which configuration produced it.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub schedule: ScheduleSpec,
    pub time_embed_dim: usize,
    pub net: Mlp,
    pub ema: Mlp,
    pub opt: Adam,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn from_output(cfg: &RunConfig, out: &TrainOutput) -> Checkpoint {
        Checkpoint {
            version: Self::VERSION,
            config_hash: cfg.hash(),
            schedule: cfg.schedule.clone(),
            time_embed_dim: cfg.train.time_embed_dim,
            net: out.net.clone(),
            ema: out.ema.shadow().clone(),
            opt: out.opt.clone(),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::Config(format!("checkpoint serialization: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if ckpt.version != Self::VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{RunConfig, SamplerConfig, WeightingConfig};
    use crate::strategy::{SamplerKind, WeightKind};

    fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.train.iterations = 20;
        cfg.train.eval_every = 10;
        cfg.train.eval_samples = 16;
        cfg.train.batch_size = 8;
        cfg.train.n_points = 64;
        cfg.train.hidden_dims = vec![16];
        cfg.schedule.t_total = 100;
        cfg.train.time_embed_dim = 8;
        // The 100-step schedule only grows the magnitude to ~2.7.
        cfg.sampler.r = 2.0;
        cfg
    }

    #[test]
    fn zero_iterations_gives_empty_losses_one_eval() {
        let mut cfg = tiny_config();
        cfg.train.iterations = 0;
        let out = train(&cfg).unwrap();
        assert!(out.metrics.losses.is_empty());
        assert_eq!(out.metrics.evals.len(), 1);
        assert_eq!(out.metrics.evals[0].iteration, 0);
    }

    #[test]
    fn same_seed_same_metrics() {
        let cfg = tiny_config();
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.metrics.losses, b.metrics.losses);
        let da: Vec<f64> = a.metrics.evals.iter().map(|e| e.energy_distance).collect();
        let db: Vec<f64> = b.metrics.evals.iter().map(|e| e.energy_distance).collect();
        assert_eq!(da, db);
        assert_eq!(
            a.net.layers[0].weights, b.net.layers[0].weights,
            "parameters must be bit-identical"
        );
    }

    #[test]
    fn losses_finite_and_checkpoints_sorted() {
        let cfg = tiny_config();
        let out = train(&cfg).unwrap();
        assert_eq!(out.metrics.losses.len(), 20);
        assert!(out.metrics.losses.iter().all(|l| l.is_finite()));
        let iters: Vec<usize> = out.metrics.evals.iter().map(|e| e.iteration).collect();
        assert_eq!(iters, vec![0, 10, 20]);
    }

    #[test]
    fn mismatched_components_rejected() {
        let cfg = tiny_config();
        let resolved = crate::config::resolve(&cfg).unwrap();
        let mut net = Mlp::init(&cfg.train.layer_dims(), cfg.train.activation, 0).unwrap();
        let mut opt = Adam::new(&net, 1e-4);
        let mut ema = Ema::new(&net, 0.999).unwrap();
        let wrong_sampler = TimeStepSampler::uniform(50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = training_step(
            &mut net,
            &mut opt,
            &mut ema,
            &[[0.0, 0.0]],
            &resolved.table,
            &wrong_sampler,
            &resolved.weights,
            &mut rng,
        );
        assert!(matches!(err, Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn half_weights_halve_the_loss() {
        // Identical nets, rng streams and batches; only the weight table
        // differs, so the reported loss scales by exactly the weight.
        let cfg = tiny_config();
        let resolved = crate::config::resolve(&cfg).unwrap();
        let dims = cfg.train.layer_dims();
        let run = |c: f64| -> f64 {
            let mut net = Mlp::init(&dims, cfg.train.activation, 7).unwrap();
            let mut opt = Adam::new(&net, 1e-4);
            let mut ema = Ema::new(&net, 0.999).unwrap();
            let weights = WeightTable::constant(resolved.table.t_total(), c).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let batch = [[0.5, -0.5], [1.0, 0.25], [-1.5, 0.75]];
            training_step(
                &mut net,
                &mut opt,
                &mut ema,
                &batch,
                &resolved.table,
                &resolved.sampler,
                &weights,
                &mut rng,
            )
            .unwrap()
        };
        let full = run(1.0);
        let half = run(0.5);
        assert!((half - 0.5 * full).abs() <= 1e-15 * full.abs().max(1.0));
    }

    #[test]
    fn uniform_and_k1_runs_bit_identical() {
        let mut cfg_uniform = tiny_config();
        cfg_uniform.sampler = SamplerConfig {
            kind: SamplerKind::Uniform,
            ..SamplerConfig::default()
        };
        cfg_uniform.weighting = WeightingConfig {
            kind: WeightKind::Constant,
            ..WeightingConfig::default()
        };
        let mut cfg_k1 = cfg_uniform.clone();
        cfg_k1.sampler.kind = SamplerKind::Asymmetric;
        cfg_k1.sampler.k = 1.0;
        cfg_k1.sampler.tau = Some(37);

        let a = train(&cfg_uniform).unwrap();
        let b = train(&cfg_k1).unwrap();
        assert_eq!(a.metrics.losses, b.metrics.losses);
        assert_eq!(a.net.layers[0].weights, b.net.layers[0].weights);
    }

    #[test]
    fn checkpoint_round_trips() {
        let cfg = tiny_config();
        let out = train(&cfg).unwrap();
        let ckpt = Checkpoint::from_output(&cfg, &out);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.net.layers[0].weights, out.net.layers[0].weights);
        assert_eq!(back.ema.layers[0].weights, out.ema.shadow().layers[0].weights);
        assert_eq!(back.config_hash, cfg.hash());
    }
}
