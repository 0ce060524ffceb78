//! Toy 2-D target distributions for the trainer.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    /// Eight Gaussians (per-coordinate variance 0.01) equally spaced on a
    /// circle of radius 2; zero-mean by symmetry.
    Ring8,
    /// Two interleaved crescents with noise std 0.05, shifted and scaled to
    /// zero mean and unit root-mean-square norm (population constants).
    TwoMoons,
}

pub fn sample_points<R: Rng + ?Sized>(dataset: Dataset, n: usize, rng: &mut R) -> Vec<[f64; 2]> {
    match dataset {
        Dataset::Ring8 => ring8(n, rng),
        Dataset::TwoMoons => two_moons(n, rng),
    }
}

fn ring8<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let radius = 2.0;
    let std = 0.1;
    (0..n)
        .map(|_| {
            let mode = rng.gen_range(0..8usize);
            let angle = std::f64::consts::TAU * mode as f64 / 8.0;
            let nx: f64 = StandardNormal.sample(rng);
            let ny: f64 = StandardNormal.sample(rng);
            [
                radius * angle.cos() + std * nx,
                radius * angle.sin() + std * ny,
            ]
        })
        .collect()
}

fn two_moons<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let noise_std = 0.05;
    // Population moments of the raw crescents (uniform angle on [0, pi]):
    // mean (0.5, 0.25), squared norm about the mean 1.3125 - 1/pi, plus the
    // isotropic noise variance.
    let mean = [0.5, 0.25];
    let var = 1.3125 - std::f64::consts::FRAC_1_PI + 2.0 * noise_std * noise_std;
    let scale = 1.0 / var.sqrt();

    (0..n)
        .map(|_| {
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let upper = rng.gen_bool(0.5);
            let raw = if upper {
                [theta.cos(), theta.sin()]
            } else {
                [1.0 - theta.cos(), 0.5 - theta.sin()]
            };
            let nx: f64 = StandardNormal.sample(rng);
            let ny: f64 = StandardNormal.sample(rng);
            [
                (raw[0] + noise_std * nx - mean[0]) * scale,
                (raw[1] + noise_std * ny - mean[1]) * scale,
            ]
        })
        .collect()
}
