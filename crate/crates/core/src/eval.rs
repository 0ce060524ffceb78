//! Generation by ancestral sampling and a two-sample distribution metric
//! for 2-D point clouds.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{Cache, Mlp};
use crate::schedule::ScheduleTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudSource {
    Data,
    Generated,
}

#[derive(Clone, Debug)]
pub struct PointCloud {
    pub points: Vec<[f64; 2]>,
    pub source: CloudSource,
}

impl PointCloud {
    pub fn data(points: Vec<[f64; 2]>) -> Self {
        PointCloud {
            points,
            source: CloudSource::Data,
        }
    }

    pub fn generated(points: Vec<[f64; 2]>) -> Self {
        PointCloud {
            points,
            source: CloudSource::Generated,
        }
    }
}

/// Run the full reverse process from standard normal initialization:
/// `x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
///            + sqrt(beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)) * z`,
/// with no noise on the final step. All `T` steps are taken.
pub fn ancestral_sample<R: Rng + ?Sized>(
    net: &Mlp,
    table: &ScheduleTable<f64>,
    n: usize,
    rng: &mut R,
) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "need at least one sample".into(),
        ));
    }
    let t_total = table.t_total();
    let embed_dim = net.input_dim().checked_sub(2).ok_or_else(|| {
        Error::ShapeMismatch("denoiser input must be 2 spatial dims plus embedding".into())
    })?;
    if net.output_dim() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "denoiser output dim must be 2, got {}",
            net.output_dim()
        )));
    }
    let embed = crate::nn::TimeEmbedTable::build(t_total, embed_dim)?;

    let mut x: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ]
        })
        .collect();

    let mut input = vec![0.0f64; n * net.input_dim()];
    let mut cache = Cache::new(net, n);
    let in_dim = net.input_dim();

    for t in (1..=t_total).rev() {
        let beta = table.beta(t)?;
        let alpha = table.alpha(t)?;
        let ab = table.alpha_bar(t)?;
        let ab_prev = if t > 1 { table.alpha_bar(t - 1)? } else { 1.0 };
        let eps_coef = beta / (1.0 - ab).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        let posterior_std = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
        let row = embed.row(t);

        for (i, p) in x.iter().enumerate() {
            let dst = &mut input[i * in_dim..(i + 1) * in_dim];
            dst[0] = p[0];
            dst[1] = p[1];
            dst[2..].copy_from_slice(row);
        }
        net.forward_batch(&input, n, &mut cache)?;
        let eps_hat = cache.output();

        for (i, p) in x.iter_mut().enumerate() {
            for c in 0..2 {
                let mean = (p[c] - eps_coef * eps_hat[i * 2 + c]) * inv_sqrt_alpha;
                p[c] = if t > 1 {
                    let z: f64 = StandardNormal.sample(rng);
                    mean + posterior_std * z
                } else {
                    mean
                };
            }
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::NonFinite(format!(
                    "sample diverged at reverse step t = {t}"
                )));
            }
        }
    }
    Ok(PointCloud::generated(x))
}

/// Energy distance between two clouds:
/// `2 E|a - b| - E|a - a'| - E|b - b'|`, with the within-cloud means taken
/// over all ordered pairs (so identical clouds score exactly zero).
/// Summation order is fixed, so the result is deterministic.
pub fn energy_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.points.is_empty() || b.points.is_empty() {
        return Err(Error::InvalidParameter(
            "energy distance needs non-empty clouds".into(),
        ));
    }
    let cross = mean_pair_distance(&a.points, &b.points);
    let within_a = mean_pair_distance(&a.points, &a.points);
    let within_b = mean_pair_distance(&b.points, &b.points);
    Ok(2.0 * cross - within_a - within_b)
}

fn mean_pair_distance(xs: &[[f64; 2]], ys: &[[f64; 2]]) -> f64 {
    let mut total = 0.0f64;
    for x in xs {
        let mut row = 0.0f64;
        for y in ys {
            let dx = x[0] - y[0];
            let dy = x[1] - y[1];
            row += (dx * dx + dy * dy).sqrt();
        }
        total += row;
    }
    total / (xs.len() as f64 * ys.len() as f64)
}
