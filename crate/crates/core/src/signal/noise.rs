use rand::Rng;
use rand_distr::StandardNormal;

use super::ReverberantSample;

/// Adds white Gaussian noise at `snr_db` (signal to noise power ratio).
/// `None` passes the sample through unchanged.
pub fn add_noise<R: Rng + ?Sized>(
    y: ReverberantSample,
    snr_db: Option<f64>,
    rng: &mut R,
) -> ReverberantSample {
    let Some(snr) = snr_db.filter(|s| s.is_finite()) else {
        return y;
    };
    let power = y.samples.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / y.samples.len().max(1) as f64;
    let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
    let samples = y
        .samples
        .iter()
        .map(|&v| {
            let n: f64 = rng.sample(StandardNormal);
            (f64::from(v) + sigma * n) as f32
        })
        .collect();
    ReverberantSample {
        samples,
        snr_db: Some(snr),
        ..y
    }
}
