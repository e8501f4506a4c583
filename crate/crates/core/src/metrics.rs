//! Regression and classification metrics, clustering quality of
//! embeddings, and embedding export.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ManifestEntry, Materializer};
use crate::model::{Encoder, Mode};
use crate::signal::FeatureMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub rmse: f64,
    /// Pearson correlation; `None` when either vector has zero variance.
    pub pearson_corr: Option<f64>,
    /// Mean of estimate minus target.
    pub bias: f64,
    pub n: usize,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

pub fn regression_metrics(est: &[f64], target: &[f64]) -> Result<RegressionReport> {
    check_lengths(est.len(), target.len())?;
    if est.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression inputs".into()));
    }
    let n = est.len() as f64;
    let bias = est.iter().zip(target).map(|(e, t)| e - t).sum::<f64>() / n;
    let mse = est.iter().zip(target).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / n;
    Ok(RegressionReport {
        rmse: mse.sqrt(),
        pearson_corr: pearson(est, target),
        bias,
        n: est.len(),
    })
}

/// Pearson correlation of two equally long vectors, `None` if undefined.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // Relative threshold: a vector of identical values can leave rounding
    // residue after mean removal.
    let scale = |m: f64| f64::EPSILON * f64::EPSILON * (m * m * n).max(f64::MIN_POSITIVE);
    if sxx <= scale(mx) || syy <= scale(my) {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    /// Macro average over both classes; a class never predicted counts as 0.
    pub precision: f64,
    /// Macro average over the classes present in the truth.
    pub recall: f64,
    /// `confusion[truth][prediction]`.
    pub confusion: [[usize; 2]; 2],
    pub n: usize,
    /// Classes whose precision was undefined (never predicted).
    pub precision_undefined: Vec<u8>,
    /// Classes whose recall was undefined (absent from the truth).
    pub recall_undefined: Vec<u8>,
}

pub fn classification_metrics(pred: &[u8], truth: &[u8]) -> Result<ClassificationReport> {
    check_lengths(pred.len(), truth.len())?;
    let mut confusion = [[0usize; 2]; 2];
    for (&p, &t) in pred.iter().zip(truth) {
        if p > 1 || t > 1 {
            return Err(Error::TaskMismatch(format!("labels must be binary, got {p} / {t}")));
        }
        confusion[t as usize][p as usize] += 1;
    }
    let n = pred.len();
    let accuracy = (confusion[0][0] + confusion[1][1]) as f64 / n as f64;
    let mut precision_undefined = Vec::new();
    let mut recall_undefined = Vec::new();
    let mut precision = 0.0;
    let mut recall = Vec::new();
    for c in 0..2 {
        let predicted = confusion[0][c] + confusion[1][c];
        let actual = confusion[c][0] + confusion[c][1];
        if predicted == 0 {
            precision_undefined.push(c as u8);
        } else {
            precision += confusion[c][c] as f64 / predicted as f64;
        }
        if actual == 0 {
            recall_undefined.push(c as u8);
        } else {
            recall.push(confusion[c][c] as f64 / actual as f64);
        }
    }
    Ok(ClassificationReport {
        accuracy,
        precision: precision / 2.0,
        recall: recall.iter().sum::<f64>() / recall.len() as f64,
        confusion,
        n,
        precision_undefined,
        recall_undefined,
    })
}

/// Mean Euclidean silhouette of `points` (rows of length `dim`) under
/// `labels`. Points in singleton clusters score 0.
pub fn silhouette(points: &[f32], dim: usize, labels: &[i64]) -> Result<f64> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::Shape(format!("{} values are not rows of {dim}", points.len())));
    }
    let n = points.len() / dim;
    check_lengths(n, labels.len())?;
    let mut clusters: Vec<i64> = labels.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    if clusters.len() < 2 {
        return Err(Error::Config("silhouette needs at least two clusters".into()));
    }
    let cluster_of: Vec<usize> = labels
        .iter()
        .map(|l| clusters.binary_search(l).expect("label collected above"))
        .collect();
    let mut sizes = vec![0usize; clusters.len()];
    for &c in &cluster_of {
        sizes[c] += 1;
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = cluster_of[i];
            if sizes[own] < 2 {
                return 0.0;
            }
            let mut sums = vec![0.0f64; clusters.len()];
            for j in 0..n {
                if j != i {
                    let d: f64 = row(i)
                        .iter()
                        .zip(row(j))
                        .map(|(a, b)| f64::from(a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    sums[cluster_of[j]] += d;
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..clusters.len())
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

/// Noise stream of a manifest entry, stable across runs and orderings.
pub fn entry_noise_key(sample_id: &str) -> u64 {
    sample_id
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Features of manifest entries, materialized in parallel.
pub fn entry_features(entries: &[ManifestEntry], materializer: &Materializer<'_>) -> Result<Vec<FeatureMatrix>> {
    entries
        .par_iter()
        .map(|e| materializer.features(&e.rir_key(), &e.source_id, entry_noise_key(&e.sample_id)))
        .collect()
}

/// Embeddings of `entries` in eval mode, row-major `entries.len() x dim`.
pub fn embed_entries(
    encoder: &mut Encoder<f32>,
    entries: &[ManifestEntry],
    materializer: &Materializer<'_>,
    batch_size: usize,
) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(entries.len() * encoder.config.embedding_dim);
    for chunk in entries.chunks(batch_size.max(1)) {
        let features = entry_features(chunk, materializer)?;
        let refs: Vec<_> = features.iter().collect();
        out.extend_from_slice(encoder.embed(&refs, Mode::Eval)?.data());
    }
    Ok(out)
}

/// Writes one CSV row per entry: identifiers, labels, then `e0..e{dim-1}`.
pub fn write_embeddings_csv(path: &Path, entries: &[ManifestEntry], embeddings: &[f32], dim: usize) -> Result<()> {
    if embeddings.len() != entries.len() * dim {
        return Err(Error::LengthMismatch(embeddings.len(), entries.len() * dim));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["sample_id", "room_id", "rir_id", "rt60_s", "c50_db", "volume_m3"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for (e, v) in entries.iter().zip(embeddings.chunks(dim.max(1))) {
        let mut rec = vec![
            e.sample_id.clone(),
            e.room_id.clone(),
            e.rir_id.to_string(),
            e.rt60_s.to_string(),
            e.c50_db.to_string(),
            e.volume_m3.to_string(),
        ];
        rec.extend(v.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Embeds `entries` with `encoder` and writes them to `path` as CSV.
/// Returns the embeddings.
pub fn export_embeddings(
    encoder: &mut Encoder<f32>,
    entries: &[ManifestEntry],
    materializer: &Materializer<'_>,
    path: &Path,
) -> Result<Vec<f32>> {
    let emb = embed_entries(encoder, entries, materializer, 16)?;
    write_embeddings_csv(path, entries, &emb, encoder.config.embedding_dim)?;
    Ok(emb)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    use super::*;

    fn naive_regression(e: &[f64], t: &[f64]) -> (f64, f64, f64) {
        let n = e.len() as f64;
        let mut se = 0.0;
        let mut sd = 0.0;
        for i in 0..e.len() {
            se += (e[i] - t[i]) * (e[i] - t[i]);
            sd += e[i] - t[i];
        }
        let (mut me, mut mt) = (0.0, 0.0);
        for i in 0..e.len() {
            me += e[i];
            mt += t[i];
        }
        me /= n;
        mt /= n;
        let (mut c, mut ve, mut vt) = (0.0, 0.0, 0.0);
        for i in 0..e.len() {
            c += (e[i] - me) * (t[i] - mt);
            ve += (e[i] - me) * (e[i] - me);
            vt += (t[i] - mt) * (t[i] - mt);
        }
        ((se / n).sqrt(), c / (ve * vt).sqrt(), sd / n)
    }

    #[test]
    fn identical_vectors() {
        let t = [0.3, 0.5, 0.9, 1.2];
        let r = regression_metrics(&t, &t).unwrap();
        assert_eq!(r.rmse, 0.0);
        assert!((r.pearson_corr.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.bias, 0.0);
    }

    #[test]
    fn constant_offset() {
        let t = [0.3, 0.5, 0.9, 1.2];
        let e: Vec<f64> = t.iter().map(|v| v + 0.1).collect();
        let r = regression_metrics(&e, &t).unwrap();
        assert!((r.rmse - 0.1).abs() < 1e-12);
        assert!((r.bias - 0.1).abs() < 1e-12);
        assert!((r.pearson_corr.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_has_no_correlation() {
        let r = regression_metrics(&[0.7, 0.7, 0.7], &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(r.pearson_corr, None);
        assert!(regression_metrics(&[], &[]).is_err());
        assert!(matches!(regression_metrics(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn regression_matches_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(2..60);
            let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let e: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let r = regression_metrics(&e, &t).unwrap();
            let (rmse, corr, bias) = naive_regression(&e, &t);
            assert!((r.rmse - rmse).abs() < 1e-9);
            assert!((r.pearson_corr.unwrap() - corr).abs() < 1e-9);
            assert!((r.bias - bias).abs() < 1e-9);
        }
    }

    #[test]
    fn perfect_classification() {
        let r = classification_metrics(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall), (1.0, 1.0, 1.0));
        assert!(r.precision_undefined.is_empty() && r.recall_undefined.is_empty());
    }

    #[test]
    fn all_one_predictions_on_balanced_truth() {
        // Confusion [[0, 2], [0, 2]]: class 1 precision 2/4, class 0 never
        // predicted, so its precision is undefined and counts as 0.
        let r = classification_metrics(&[1, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
        assert_eq!(r.confusion, [[0, 2], [0, 2]]);
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.precision, 0.25);
        assert_eq!(r.precision_undefined, vec![0]);
        assert_eq!(r.recall, 0.5);
    }

    #[test]
    fn absent_class_recall_is_flagged() {
        let r = classification_metrics(&[0, 1, 1], &[1, 1, 1]).unwrap();
        assert_eq!(r.recall_undefined, vec![0]);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!(classification_metrics(&[2], &[0]).is_err());
    }

    fn brute_force(pred: &[u8], truth: &[u8]) -> (f64, f64, f64) {
        let mut acc = 0.0;
        let mut prec = 0.0;
        let mut recs = Vec::new();
        for i in 0..pred.len() {
            if pred[i] == truth[i] {
                acc += 1.0;
            }
        }
        for c in 0..2u8 {
            let tp = (0..pred.len()).filter(|&i| pred[i] == c && truth[i] == c).count() as f64;
            let pp = pred.iter().filter(|&&p| p == c).count() as f64;
            let ap = truth.iter().filter(|&&t| t == c).count() as f64;
            if pp > 0.0 {
                prec += tp / pp;
            }
            if ap > 0.0 {
                recs.push(tp / ap);
            }
        }
        (acc / pred.len() as f64, prec / 2.0, recs.iter().sum::<f64>() / recs.len() as f64)
    }

    #[test]
    fn silhouette_of_separated_clusters() {
        let pts = [0.0f32, 0.0, 0.1, 0.0, 10.0, 0.0, 10.1, 0.0];
        let s = silhouette(&pts, 2, &[0, 0, 1, 1]).unwrap();
        assert!(s > 0.98, "{s}");
        let mixed = silhouette(&pts, 2, &[0, 1, 0, 1]).unwrap();
        assert!(mixed < 0.0);
        // Hand computation for point 0 of three collinear points 0, 1, 3
        // with labels a, a, b: a = 1, b = 3, s = 2/3; point 1: a = 1,
        // b = 2, s = 1/2; point 2 is a singleton, s = 0.
        let s = silhouette(&[0.0, 1.0, 3.0], 1, &[0, 0, 1]).unwrap();
        assert!((s - (2.0 / 3.0 + 0.5) / 3.0).abs() < 1e-12);
        assert!(silhouette(&[0.0, 1.0], 1, &[0, 0]).is_err());
    }

    #[test]
    fn embedding_csv_layout() {
        use crate::dataset::Split;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let entry = ManifestEntry {
            sample_id: "a".into(),
            split: Split::Test,
            room_id: "r1".into(),
            rir_id: 2,
            source_id: "s".into(),
            rt60_s: 0.5,
            c50_db: 3.0,
            volume_m3: 100.0,
            volume_class: 0,
        };
        write_embeddings_csv(&path, &[entry.clone(), entry], &[0.6, 0.8, 1.0, 0.0], 2).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sample_id,room_id,rir_id,rt60_s,c50_db,volume_m3,e0,e1");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with(",0.6,0.8"));
    }

    proptest! {
        #[test]
        fn classification_matches_brute_force(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..80)) {
            let (pred, truth): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let r = classification_metrics(&pred, &truth).unwrap();
            let (a, p, rc) = brute_force(&pred, &truth);
            prop_assert!((r.accuracy - a).abs() < 1e-12);
            prop_assert!((r.precision - p).abs() < 1e-12);
            prop_assert!((r.recall - rc).abs() < 1e-12);
            prop_assert_eq!(r.confusion.iter().flatten().sum::<usize>(), pred.len());
            for v in [r.accuracy, r.precision, r.recall] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn bias_variance_identity(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..60)) {
            let (e, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let r = regression_metrics(&e, &t).unwrap();
            let d: Vec<f64> = e.iter().zip(&t).map(|(a, b)| a - b).collect();
            let var = d.iter().map(|x| (x - r.bias).powi(2)).sum::<f64>() / d.len() as f64;
            prop_assert!((r.rmse.powi(2) - (r.bias.powi(2) + var)).abs() < 1e-9);
            prop_assert!(r.rmse + 1e-12 >= r.bias.abs());
            if let Some(c) = r.pearson_corr {
                prop_assert!((-1.0..=1.0).contains(&c));
            }
        }

        #[test]
        fn pearson_is_affine_invariant(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..60),
            scale in 0.1f64..10.0,
            shift in -10.0f64..10.0,
        ) {
            let (e, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let moved: Vec<f64> = e.iter().map(|v| scale * v + shift).collect();
            if let (Some(a), Some(b)) = (pearson(&e, &t), pearson(&moved, &t)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn metrics_ignore_sample_order(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (e, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (e2, t2): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
            let a = regression_metrics(&e, &t).unwrap();
            let b = regression_metrics(&e2, &t2).unwrap();
            prop_assert!((a.rmse - b.rmse).abs() < 1e-9);
            prop_assert!((a.bias - b.bias).abs() < 1e-9);
            match (a.pearson_corr, b.pearson_corr) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9),
                (x, y) => prop_assert_eq!(x.is_none(), y.is_none()),
            }
        }
    }
}
