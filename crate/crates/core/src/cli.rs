//! Subcommand implementations and the CSV/JSON emission they share.
//!
//! All tabular output is CSV with floats printed at 17 significant digits,
//! so re-parsing a file recovers the in-memory values bit-exactly. JSON is
//! emitted through serde with sorted keys. Apart from the wall-clock field
//! in `run_info.json`, every byte written is a pure function of the config.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{resolve, RunConfig};
use crate::error::{Error, Result};
use crate::eval::ancestral_sample;
use crate::increment;
use crate::sde::{area_decomposition, linspace, SdeKind, SdeSchedule, VpParams};
use crate::trainer::{train, Checkpoint, TrainOutput};

/// 17 significant digits: enough for f64 round trips.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(content.as_bytes())?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("json serialization: {e}")))?;
    write_file(path, &(text + "\n"))
}

/// Pick `dir`, or `dir-1`, `dir-2`, ... if earlier runs already sit there.
fn unique_dir(base: PathBuf) -> PathBuf {
    if !base.exists() {
        return base;
    }
    for n in 1.. {
        let candidate = base.with_file_name(format!(
            "{}-{n}",
            base.file_name().unwrap().to_string_lossy()
        ));
        if !candidate.exists() {
            return candidate;
        }
    }
    unreachable!()
}

/// Dump the schedule, the bound curves, the sampler/weight tables and a
/// boundary summary; optionally one continuous-schedule grid. Returns the
/// written paths.
pub fn cmd_analyze(cfg: &RunConfig, sde: Option<SdeKind>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let resolved = resolve(cfg)?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let t_total = resolved.table.t_total();

    let mut csv = String::from("t,beta,alpha,alpha_bar\n");
    for t in 1..=t_total {
        csv.push_str(&format!(
            "{t},{},{},{}\n",
            fmt_f64(resolved.table.beta(t)?),
            fmt_f64(resolved.table.alpha(t)?),
            fmt_f64(resolved.table.alpha_bar(t)?),
        ));
    }
    let path = out_dir.join("schedule.csv");
    write_file(&path, &csv)?;
    written.push(path);

    let scale = cfg.analysis.mean_sq_norm;
    let mut csv = String::from("t,phi_hat,psi_hat,dpsi_hat,r_hat,area\n");
    for t in 1..=t_total {
        let i = t - 1;
        csv.push_str(&format!(
            "{t},{},{},{},{},{}\n",
            fmt_f64(resolved.profile.mean_bounds()[i] * scale),
            fmt_f64(resolved.profile.var_bounds()[i]),
            fmt_f64(resolved.profile.var_bound_rates()[i]),
            fmt_f64(resolved.profile.magnitudes()[i]),
            resolved.profile.areas()[i],
        ));
    }
    let path = out_dir.join("profile.csv");
    write_file(&path, &csv)?;
    written.push(path);

    let mut csv = String::from("t,pmf,weight\n");
    for t in 1..=t_total {
        csv.push_str(&format!(
            "{t},{},{}\n",
            fmt_f64(resolved.sampler.pmf(t)?),
            fmt_f64(resolved.weights.weight(t)?),
        ));
    }
    let path = out_dir.join("strategy.csv");
    write_file(&path, &csv)?;
    written.push(path);

    if let Some(kind) = sde {
        let vp = VpParams {
            delta_beta: resolved.table.delta_beta() * t_total as f64,
            beta0: resolved.table.beta0() * t_total as f64,
        };
        let sched: SdeSchedule<f64> = SdeSchedule::preset(kind, Some(vp))?;
        let grid = linspace(0.0, cfg.analysis.sde_t_end, cfg.analysis.sde_points);
        let dt = cfg.analysis.sde_dt.unwrap_or(grid[1] - grid[0]);
        let areas = area_decomposition(&sched, &grid, dt, cfg.sampler.r)?;
        let mut csv = String::from("t,s,sigma2,Delta,Sigma,Delta_dot,Sigma_dot,area\n");
        for (i, &t) in grid.iter().enumerate() {
            let inc = sched.increment(t, dt)?;
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                fmt_f64(t),
                fmt_f64(sched.scale(t)),
                fmt_f64(sched.noise_var(t)),
                fmt_f64(inc.mean_coeff),
                fmt_f64(inc.variance),
                fmt_f64(inc.mean_coeff_rate),
                fmt_f64(inc.variance_rate),
                areas[i],
            ));
        }
        let name = match kind {
            SdeKind::Vp => "sde_vp.csv",
            SdeKind::Ve => "sde_ve.csv",
            SdeKind::Edm => "sde_edm.csv",
            SdeKind::Custom => "sde_custom.csv",
        };
        let path = out_dir.join(name);
        write_file(&path, &csv)?;
        written.push(path);
    }

    let tau_closed = increment::tau_from_magnitude(&resolved.table, cfg.sampler.r)?;
    let summary = json!({
        "t_ad": resolved.profile.t_peak(),
        "t_dc": resolved.profile.t_converged(),
        "tau": resolved.sampler.tau(),
        "tau_closed_form": tau_closed,
        "r": cfg.sampler.r,
        "k": cfg.sampler.k,
        "lambda": cfg.weighting.lambda,
    });
    let path = out_dir.join("summary.json");
    write_json(&path, &summary)?;
    written.push(path);

    Ok(written)
}

fn write_run_artifacts(cfg: &RunConfig, out: &TrainOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;

    write_json(&dir.join("config.json"), cfg)?;

    let mut csv = String::from("iteration,loss\n");
    for (i, loss) in out.metrics.losses.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, fmt_f64(*loss)));
    }
    write_file(&dir.join("metrics.csv"), &csv)?;

    let mut csv = String::from("iteration,energy_distance\n");
    for e in &out.metrics.evals {
        csv.push_str(&format!("{},{}\n", e.iteration, fmt_f64(e.energy_distance)));
    }
    write_file(&dir.join("eval.csv"), &csv)?;

    Checkpoint::from_output(cfg, out).save(&dir.join("checkpoint.json"))?;

    // Wall clock is the one non-reproducible field; keep it in its own file.
    let info = json!({
        "config_hash": out.metrics.config_hash,
        "wall_secs": out.metrics.wall_secs,
    });
    write_json(&dir.join("run_info.json"), &info)?;
    Ok(())
}

/// Train per the config and write the run directory
/// `<out_dir>/<label>-<hash prefix>`; an existing directory gets a numeric
/// suffix instead of being overwritten.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    let out = train(cfg)?;
    let dir = unique_dir(
        cfg.out_dir
            .join(format!("{}-{}", cfg.label, &cfg.hash()[..8])),
    );
    write_run_artifacts(cfg, &out, &dir)?;
    Ok(dir)
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareVerdict {
    pub threshold: f64,
    pub iterations_to_threshold_a: Option<usize>,
    pub iterations_to_threshold_b: Option<usize>,
    pub speedup_ratio: Option<f64>,
}

fn first_at_or_below(
    evals: &[crate::trainer::EvalPoint],
    threshold: f64,
) -> Option<usize> {
    evals
        .iter()
        .find(|e| e.energy_distance <= threshold)
        .map(|e| e.iteration)
}

/// Run both configs, join their metric curves, and judge how much earlier
/// the second run reaches the threshold. Returns the verdict; artifacts go
/// to `out_dir` (per-run directories plus `compare.csv` and `verdict.json`).
pub fn cmd_compare(
    cfg_a: &RunConfig,
    cfg_b: &RunConfig,
    out_dir: &Path,
    threshold_override: Option<f64>,
) -> Result<CompareVerdict> {
    if cfg_a.train.dataset != cfg_b.train.dataset {
        return Err(Error::Config(
            "compared runs must share the dataset".into(),
        ));
    }
    if cfg_a.train.eval_every != cfg_b.train.eval_every
        || cfg_a.train.eval_samples != cfg_b.train.eval_samples
    {
        return Err(Error::Config(
            "compared runs must share eval_every and eval_samples".into(),
        ));
    }

    let out_a = train(cfg_a)?;
    let out_b = train(cfg_b)?;
    fs::create_dir_all(out_dir)?;
    write_run_artifacts(
        cfg_a,
        &out_a,
        &unique_dir(out_dir.join(format!("{}-{}", cfg_a.label, &cfg_a.hash()[..8]))),
    )?;
    write_run_artifacts(
        cfg_b,
        &out_b,
        &unique_dir(out_dir.join(format!("{}-{}", cfg_b.label, &cfg_b.hash()[..8]))),
    )?;

    let threshold = match threshold_override.or(cfg_a.compare.threshold) {
        Some(t) => t,
        None => {
            // The first run's metric at threshold_fraction of its horizon.
            let target = (cfg_a.compare.threshold_fraction * cfg_a.train.iterations as f64)
                .round() as usize;
            out_a
                .metrics
                .evals
                .iter()
                .filter(|e| e.iteration <= target)
                .last()
                .expect("evals always contain iteration 0")
                .energy_distance
        }
    };

    let b_by_iter: BTreeMap<usize, f64> = out_b
        .metrics
        .evals
        .iter()
        .map(|e| (e.iteration, e.energy_distance))
        .collect();
    let mut csv = String::from("iteration,metric_a,metric_b\n");
    for e in &out_a.metrics.evals {
        if let Some(&mb) = b_by_iter.get(&e.iteration) {
            csv.push_str(&format!(
                "{},{},{}\n",
                e.iteration,
                fmt_f64(e.energy_distance),
                fmt_f64(mb)
            ));
        }
    }
    write_file(&out_dir.join("compare.csv"), &csv)?;

    let a_hit = first_at_or_below(&out_a.metrics.evals, threshold);
    let b_hit = first_at_or_below(&out_b.metrics.evals, threshold);
    if a_hit.is_none() {
        eprintln!("warning: run '{}' never reached threshold {threshold}", cfg_a.label);
    }
    if b_hit.is_none() {
        eprintln!("warning: run '{}' never reached threshold {threshold}", cfg_b.label);
    }
    let speedup_ratio = match (a_hit, b_hit) {
        (Some(0), Some(0)) => Some(1.0),
        (Some(a), Some(b)) if b > 0 => Some(a as f64 / b as f64),
        _ => None,
    };

    let verdict = CompareVerdict {
        threshold,
        iterations_to_threshold_a: a_hit,
        iterations_to_threshold_b: b_hit,
        speedup_ratio,
    };
    write_json(&out_dir.join("verdict.json"), &verdict)?;
    Ok(verdict)
}

/// Sample from a checkpoint's EMA parameters and write `x,y` rows.
pub fn cmd_sample(checkpoint: &Path, n: usize, seed: u64, out_csv: &Path) -> Result<PathBuf> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let table: crate::Schedule = crate::schedule::ScheduleTable::build(&ckpt.schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = ancestral_sample(&ckpt.ema, &table, n, &mut rng)?;
    if let Some(parent) = out_csv.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut csv = String::from("x,y\n");
    for p in &cloud.points {
        csv.push_str(&format!("{},{}\n", fmt_f64(p[0]), fmt_f64(p[1])));
    }
    write_file(out_csv, &csv)?;
    Ok(out_csv.to_path_buf())
}
