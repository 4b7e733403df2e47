use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::TrainConfig;

/// Population standard deviation of every column.
pub fn feature_std(x: ArrayView2<'_, f64>) -> Array1<f64> {
    if x.nrows() == 0 {
        return Array1::zeros(x.ncols());
    }
    x.std_axis(Axis(0), 0.0)
}

/// Two stochastic views of one embedding: Gaussian noise with per-feature
/// scale `view_noise_sigma * feature_std`, then each coordinate zeroed with
/// probability `view_dropout_p`. The RNG is advanced by the same amount
/// whatever the configuration.
pub fn make_views<R: Rng>(
    e: ArrayView1<'_, f64>,
    feature_std: ArrayView1<'_, f64>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> (Array1<f64>, Array1<f64>) {
    let mut view = || {
        Array1::from_iter(e.iter().zip(feature_std).map(|(&x, &sd)| {
            let z: f64 = rng.sample(StandardNormal);
            let drop = rng.random::<f64>() < cfg.view_dropout_p;
            if drop {
                0.0
            } else {
                x + cfg.view_noise_sigma * sd * z
            }
        }))
    };
    let v1 = view();
    let v2 = view();
    (v1, v2)
}
