//! Training objectives: the supervised contrastive loss over multiviewed
//! batches, mean squared error and softmax cross-entropy.
//!
//! All losses are evaluated in `f64`. Each loss has a `*_grad` variant that
//! also returns the gradient with respect to its first argument.

use std::collections::HashMap;

use crate::{Error, Result};

/// Tolerance on `| ||z|| - 1 |` accepted by the contrastive loss.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-3;

/// Supervised contrastive loss, summed over anchors.
///
/// `latents` holds `labels.len()` row vectors of length `dim`, each of unit
/// norm. For anchor `i` the positives are the other rows with the same label
/// and the contrast set is every row except `i`.
pub fn supcon_loss(latents: &[f64], dim: usize, labels: &[i64], temperature: f64) -> Result<f64> {
    Ok(supcon(latents, dim, labels, temperature, false)?.0)
}

/// [`supcon_loss`] together with its gradient with respect to `latents`.
pub fn supcon_loss_grad(
    latents: &[f64],
    dim: usize,
    labels: &[i64],
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    supcon(latents, dim, labels, temperature, true)
}

fn validate_supcon(latents: &[f64], dim: usize, labels: &[i64], temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidTemperature(temperature));
    }
    if labels.is_empty() || dim == 0 {
        return Err(Error::EmptyInput);
    }
    if latents.len() != labels.len() * dim {
        return Err(Error::LengthMismatch(latents.len(), labels.len() * dim));
    }
    let mut counts: HashMap<i64, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    if let Some((&l, _)) = counts.iter().filter(|(_, &c)| c < 2).min_by_key(|(l, _)| **l) {
        return Err(Error::EmptyPositiveSet(l));
    }
    for (i, z) in latents.chunks(dim).enumerate() {
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("latent {i}")));
        }
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::Shape(format!("latent {i} has norm {norm}, expected 1")));
        }
    }
    Ok(())
}

fn supcon(
    latents: &[f64],
    dim: usize,
    labels: &[i64],
    temperature: f64,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    validate_supcon(latents, dim, labels, temperature)?;
    let n = labels.len();
    let row = |i: usize| &latents[i * dim..(i + 1) * dim];
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = row(i).iter().zip(row(j)).map(|(a, b)| a * b).sum::<f64>() / temperature;
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }

    let mut loss = 0.0;
    // coeff[i * n + j] = dL / d sim_ij, already divided by the temperature.
    let mut coeff = if want_grad { vec![0.0; n * n] } else { Vec::new() };
    for i in 0..n {
        let s = &sim[i * n..(i + 1) * n];
        let max = (0..n)
            .filter(|&a| a != i)
            .map(|a| s[a])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| (s[a] - max).exp()).sum();
        let log_denom = denom.ln() + max;
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        let inv_p = 1.0 / positives.len() as f64;
        loss += positives
            .iter()
            .map(|&p| positive_term(s, i, p, log_denom))
            .sum::<f64>()
            * inv_p;
        if want_grad {
            let c = &mut coeff[i * n..(i + 1) * n];
            for a in (0..n).filter(|&a| a != i) {
                c[a] = (s[a] - max).exp() / denom / temperature;
            }
            for &p in &positives {
                c[p] -= inv_p / temperature;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("contrastive loss".into()));
    }

    let mut grad = Vec::new();
    if want_grad {
        grad = vec![0.0; n * dim];
        for i in 0..n {
            let g = &mut grad[i * dim..(i + 1) * dim];
            for j in 0..n {
                let w = coeff[i * n + j] + coeff[j * n + i];
                if w != 0.0 {
                    for (gk, zk) in g.iter_mut().zip(row(j)) {
                        *gk += w * zk;
                    }
                }
            }
        }
    }
    Ok((loss, grad))
}

/// `-log(exp(s_p) / sum_a exp(s_a))` for one anchor and one positive.
/// Near-zero terms are evaluated as `ln_1p` of the remaining mass so that
/// small losses keep their relative precision.
fn positive_term(s: &[f64], anchor: usize, positive: usize, log_denom: f64) -> f64 {
    let rest: f64 = (0..s.len())
        .filter(|&a| a != anchor && a != positive)
        .map(|a| (s[a] - s[positive]).exp())
        .sum();
    if rest.is_finite() {
        rest.ln_1p()
    } else {
        log_denom - s[positive]
    }
}

/// Mean squared error.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    Ok(mse_loss_grad(pred, target)?.0)
}

/// [`mse_loss`] and its gradient with respect to `pred`.
pub fn mse_loss_grad(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch(pred.len(), target.len()));
    }
    let n = pred.len() as f64;
    let diff: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.iter().map(|d| 2.0 * d / n).collect();
    Ok((loss, grad))
}

/// Mean cross-entropy of softmax(`logits`) against integer class targets.
///
/// `logits` holds one row of `classes` scores per target. The log-softmax is
/// evaluated in log-sum-exp form, so a vanishing probability at the true
/// class yields a large finite loss rather than `-log(0)`.
pub fn cross_entropy_loss(logits: &[f64], classes: usize, targets: &[usize]) -> Result<f64> {
    Ok(cross_entropy_loss_grad(logits, classes, targets)?.0)
}

/// [`cross_entropy_loss`] and its gradient with respect to `logits`.
pub fn cross_entropy_loss_grad(
    logits: &[f64],
    classes: usize,
    targets: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if targets.is_empty() || classes == 0 {
        return Err(Error::EmptyInput);
    }
    if logits.len() != targets.len() * classes {
        return Err(Error::LengthMismatch(logits.len(), targets.len() * classes));
    }
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for ((row, g), &t) in logits.chunks(classes).zip(grad.chunks_mut(classes)).zip(targets) {
        if t >= classes {
            return Err(Error::TaskMismatch(format!("class index {t} with {classes} classes")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = sum.ln() + max;
        loss += lse - row[t];
        for (gk, v) in g.iter_mut().zip(row) {
            *gk = (v - lse).exp() / n;
        }
        g[t] -= 1.0 / n;
    }
    Ok((loss / n, grad))
}

/// Row-wise softmax.
pub fn softmax(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Eq.-by-definition double loop without stabilization.
    fn naive_supcon(z: &[f64], dim: usize, labels: &[i64], tau: f64) -> f64 {
        let n = labels.len();
        let dot = |i: usize, j: usize| -> f64 {
            (0..dim).map(|k| z[i * dim + k] * z[j * dim + k]).sum()
        };
        let mut total = 0.0;
        for i in 0..n {
            let mut denom = 0.0;
            for a in 0..n {
                if a != i {
                    denom += (dot(i, a) / tau).exp();
                }
            }
            let mut acc = 0.0;
            let mut count = 0;
            for p in 0..n {
                if p != i && labels[p] == labels[i] {
                    acc += -((dot(i, p) / tau).exp() / denom).ln();
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total
    }

    fn random_unit(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f64> {
        let mut z: Vec<f64> = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
        for r in z.chunks_mut(dim) {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter_mut().for_each(|v| *v /= norm);
        }
        z
    }

    fn class_labels(n_classes: usize, views: usize) -> Vec<i64> {
        (0..n_classes).flat_map(|c| std::iter::repeat(c as i64).take(views)).collect()
    }

    #[test]
    fn identical_latents_give_four_ln_three() {
        let z = [0.6, 0.8].repeat(4);
        for tau in [0.01, 0.1, 1.0, 7.0] {
            let l = supcon_loss(&z, 2, &[0, 0, 1, 1], tau).unwrap();
            assert!((l - 4.0 * 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_classes_closed_form() {
        let z = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let l = supcon_loss(&z, 2, &[0, 0, 1, 1], 1.0).unwrap();
        let per_anchor = (1.0 + 2.0 / std::f64::consts::E).ln();
        assert!((l - 4.0 * per_anchor).abs() < 1e-12);
        assert!((l - 2.2059).abs() < 1e-3);
    }

    #[test]
    fn matches_naive_oracle_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.gen_range(2..=4);
            let m = rng.gen_range(2..=3);
            let tau = [0.01, 0.1, 1.0][rng.gen_range(0..3)];
            let z = random_unit(&mut rng, n * m, 16);
            let labels = class_labels(n, m);
            let fast = supcon_loss(&z, 16, &labels, tau).unwrap();
            let slow = naive_supcon(&z, 16, &labels, tau);
            if slow.is_finite() {
                assert!(((fast - slow) / slow).abs() < 1e-6, "{fast} vs {slow}");
            }
        }
    }

    #[test]
    fn singleton_class_is_rejected() {
        let z = [1.0, 0.0].repeat(3);
        assert!(matches!(
            supcon_loss(&z, 2, &[0, 0, 1], 0.1),
            Err(Error::EmptyPositiveSet(1))
        ));
    }

    #[test]
    fn non_positive_temperature_is_rejected() {
        let z = [1.0, 0.0].repeat(2);
        assert!(matches!(supcon_loss(&z, 2, &[0, 0], 0.0), Err(Error::InvalidTemperature(_))));
        assert!(matches!(supcon_loss(&z, 2, &[0, 0], -1.0), Err(Error::InvalidTemperature(_))));
    }

    #[test]
    fn non_unit_latents_are_rejected() {
        let z = [2.0, 0.0].repeat(2);
        assert!(supcon_loss(&z, 2, &[0, 0], 0.1).is_err());
    }

    fn fd_check(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64]) {
        let h = 1e-4;
        for k in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let err = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
            assert!(err < 1e-4, "coordinate {k}: fd {fd} vs analytic {}", grad[k]);
        }
    }

    #[test]
    fn supcon_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for tau in [0.1, 0.5, 1.0] {
            let z = random_unit(&mut rng, 6, 5);
            let labels = class_labels(3, 2);
            let (_, g) = supcon_loss_grad(&z, 5, &labels, tau).unwrap();
            // The perturbed points leave the sphere, so the oracle uses the
            // unvalidated naive loss.
            fd_check(|x| naive_supcon(x, 5, &labels, tau), &z, &g);
        }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[3.0, 4.0, 5.0], &[1.0, 2.0, 3.0]).unwrap(), 4.0);
        assert!(matches!(mse_loss(&[], &[]), Err(Error::EmptyInput)));
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mse_matches_loop_oracle_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p: Vec<f64> = (0..37).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let t: Vec<f64> = (0..37).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut acc = 0.0;
        for i in 0..p.len() {
            acc += (p[i] - t[i]) * (p[i] - t[i]);
        }
        let (l, g) = mse_loss_grad(&p, &t).unwrap();
        assert!((l - acc / 37.0).abs() < 1e-9);
        fd_check(|x| mse_loss(x, &t).unwrap(), &p, &g);
    }

    #[test]
    fn cross_entropy_examples() {
        let perfect = cross_entropy_loss(&[800.0, 0.0, 0.0, 800.0], 2, &[0, 1]).unwrap();
        assert!(perfect.abs() < 1e-12);
        let uniform = cross_entropy_loss(&[0.3, 0.3], 2, &[1]).unwrap();
        assert!((uniform - 2f64.ln()).abs() < 1e-12);
        let hopeless = cross_entropy_loss(&[2000.0, 0.0], 2, &[1]).unwrap();
        assert!(hopeless.is_finite() && (hopeless - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_matches_naive_oracle_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits: Vec<f64> = (0..20).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let targets: Vec<usize> = (0..10).map(|_| rng.gen_range(0..2)).collect();
        let mut naive = 0.0;
        for (row, &t) in logits.chunks(2).zip(&targets) {
            let e: Vec<f64> = row.iter().map(|v| v.exp()).collect();
            naive -= (e[t] / (e[0] + e[1])).ln();
        }
        naive /= 10.0;
        let (l, g) = cross_entropy_loss_grad(&logits, 2, &targets).unwrap();
        assert!((l - naive).abs() < 1e-7);
        fd_check(|x| cross_entropy_loss(x, 2, &targets).unwrap(), &logits, &g);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[1.0, 2.0, -500.0, 500.0], 2);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        assert!((p[2] + p[3] - 1.0).abs() < 1e-12);
    }

    fn orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        let mut q: Vec<Vec<f64>> = Vec::new();
        while q.len() < dim {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            for u in &q {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
            q.push(v);
        }
        q.concat()
    }

    proptest! {
        #[test]
        fn invariant_to_permutation_relabeling_and_rotation(seed in any::<u64>(), n in 2usize..5, m in 2usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = 6;
            let z = random_unit(&mut rng, n * m, dim);
            let labels = class_labels(n, m);
            let base = supcon_loss(&z, dim, &labels, 0.2).unwrap();

            let mut order: Vec<usize> = (0..n * m).collect();
            for i in (1..order.len()).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let zp: Vec<f64> = order.iter().flat_map(|&i| z[i * dim..(i + 1) * dim].to_vec()).collect();
            let lp: Vec<i64> = order.iter().map(|&i| labels[i] * 31 + 1000).collect();
            let permuted = supcon_loss(&zp, dim, &lp, 0.2).unwrap();
            prop_assert!(((permuted - base) / base).abs() < 1e-9);

            let q = orthogonal(&mut rng, dim);
            let zr: Vec<f64> = z
                .chunks(dim)
                .flat_map(|r| (0..dim).map(|a| (0..dim).map(|b| q[a * dim + b] * r[b]).sum::<f64>()).collect::<Vec<_>>())
                .collect();
            let rotated = supcon_loss(&zr, dim, &labels, 0.2).unwrap();
            prop_assert!(((rotated - base) / base).abs() < 1e-9);
        }

        #[test]
        fn stabilized_agrees_with_unstabilized(seed in any::<u64>(), tau_idx in 0usize..2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tau = [0.1, 1.0][tau_idx];
            let z = random_unit(&mut rng, 24 * 3, 16);
            let labels = class_labels(24, 3);
            let fast = supcon_loss(&z, 16, &labels, tau).unwrap();
            let slow = naive_supcon(&z, 16, &labels, tau);
            prop_assert!(((fast - slow) / slow).abs() < 1e-6);
        }
    }
}
