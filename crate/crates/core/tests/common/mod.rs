//! Oracles and synthetic data shared by the integration tests.

#![allow(dead_code)]

use attribench::contrastive::{
    batch_triplet_loss, ntxent_loss, objective, supcon_loss, triplet_loss, Batch, ContrastiveTarget, HeadWeights,
    LossConfig, Triplet,
};
use attribench::protocol::LossSetting;
use attribench::registry::{canonical_manipulation, CatalogRow, DatasetDescriptor, SampleCatalog, Split};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; absolute when both are
/// below `1e-8`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Relative errors of the triplet gradient on `cases` random triples whose
/// hinge argument stays at least 1e-3 away from zero.
pub fn triplet_gradient_errors(cases: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    let mut out = Vec::new();
    while out.len() < cases {
        let d = rng.random_range(2..12);
        let margin = rng.random_range(0.05..2.0);
        let v: Vec<f64> = (0..3 * d).map(|_| rng.sample(StandardNormal)).collect();
        let (a, p, n) = (&v[..d], &v[d..2 * d], &v[2 * d..]);
        let arg = sq_dist(a, p) - sq_dist(a, n) + margin;
        if arg.abs() <= 1e-3 {
            continue;
        }
        let t = triplet_loss(a, p, n, margin).unwrap();
        let analytic = [t.grad_anchor, t.grad_positive, t.grad_negative].concat();
        let numeric = numeric_gradient(&v, |x| {
            triplet_loss(&x[..d], &x[d..2 * d], &x[2 * d..], margin).unwrap().loss
        });
        out.push(relative_error(&analytic, &numeric));
    }
    out
}

fn paired_views(rng: &mut ChaCha8Rng) -> (Array2<f64>, usize) {
    let n = rng.random_range(2..6);
    let p = rng.random_range(2..9);
    (gaussian_matrix(rng, 2 * n, p), n)
}

pub fn twin_map(n: usize) -> Vec<usize> {
    (0..2 * n).map(|i| (i + n) % (2 * n)).collect()
}

/// Loss and gradient of a matrix function checked against finite
/// differences.
fn matrix_check(x: &Array2<f64>, analytic: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> f64 {
    let shape = x.raw_dim();
    let flat = x.iter().copied().collect::<Vec<_>>();
    let numeric = numeric_gradient(&flat, |v| f(&Array2::from_shape_vec(shape, v.to_vec()).unwrap()));
    relative_error(&analytic.iter().copied().collect::<Vec<_>>(), &numeric)
}

pub fn ntxent_gradient_errors(cases: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    (0..cases)
        .map(|_| {
            let (v, n) = paired_views(&mut rng);
            let tau = rng.random_range(0.1..1.0);
            let map = twin_map(n);
            let lg = ntxent_loss(v.view(), &map, tau).unwrap();
            matrix_check(&v, &lg.grad, |x| ntxent_loss(x.view(), &map, tau).unwrap().loss)
        })
        .collect()
}

pub fn supcon_gradient_errors(cases: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    (0..cases)
        .map(|_| {
            let (v, n) = paired_views(&mut rng);
            let tau = rng.random_range(0.1..1.0);
            let classes = rng.random_range(1..=n);
            let half: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let labels = [half.clone(), half].concat();
            let lg = supcon_loss(v.view(), &labels, tau).unwrap();
            matrix_check(&v, &lg.grad, |x| supcon_loss(x.view(), &labels, tau).unwrap().loss)
        })
        .collect()
}

fn random_weights(rng: &mut ChaCha8Rng, dim: usize, classes: usize) -> HeadWeights {
    let mut w = HeadWeights::init(dim, classes, rng);
    let flat: Vec<f64> = w.flatten().iter().map(|&x| x + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    w = HeadWeights::from_flat(dim, classes, w.hidden(), w.proj_dim(), &flat).unwrap();
    w
}

fn adapted(w: &HeadWeights, x: &Array2<f64>) -> Array2<f64> {
    w.features(x.view())
}

fn relu_inputs_clear(w: &HeadWeights, feats: &Array2<f64>) -> bool {
    let pre = feats.dot(&w.proj_w1.t()) + &w.proj_b1;
    pre.iter().all(|v| v.abs() > 1e-3)
}

fn hinges_clear(z: &Array2<f64>, triplets: &[Triplet], margin: f64) -> bool {
    triplets.iter().all(|t| {
        let r = |i: usize| z.row(i).to_vec();
        let arg = sq_dist(&r(t.anchor), &r(t.positive)) - sq_dist(&r(t.anchor), &r(t.negative)) + margin;
        arg.abs() > 1e-3
    })
}

fn projected(w: &HeadWeights, feats: &Array2<f64>) -> Array2<f64> {
    let hidden = (feats.dot(&w.proj_w1.t()) + &w.proj_b1).mapv(|v| v.max(0.0));
    hidden.dot(&w.proj_w2.t()) + &w.proj_b2
}

/// Joint objective gradients over every head parameter, cycling through
/// cross-entropy only, triplets on features, triplets through the
/// projection head, NT-Xent and SupCon. Cases sitting within 1e-3 of a
/// hinge or ReLU kink are redrawn.
pub fn joint_gradient_errors(cases: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = rng(seed);
    let dim = 16;
    let classes = 3;
    let mut out = Vec::new();
    while out.len() < cases {
        let kind = out.len() % 5;
        let n = 6;
        let w = random_weights(&mut rng, dim, classes);
        let x = gaussian_matrix(&mut rng, n, dim);
        let targets: Vec<usize> = vec![0, 0, 1, 1, 2, 2];
        let feats = adapted(&w, &x);
        let (name, setting, contrastive) = match kind {
            0 => ("ce", LossSetting::Baseline, ContrastiveTarget::None),
            1 | 2 => {
                let through = kind == 2;
                let triplets: Vec<Triplet> = (0..n)
                    .map(|a| Triplet { anchor: a, positive: a ^ 1, negative: (a + 2) % n })
                    .collect();
                let z = if through { projected(&w, &feats) } else { feats.clone() };
                if !hinges_clear(&z, &triplets, 0.2) || (through && !relu_inputs_clear(&w, &feats)) {
                    continue;
                }
                let name = if through { "triplet-projected" } else { "triplet" };
                (name, LossSetting::TripletHard, ContrastiveTarget::Triplets { triplets, through_projection: through })
            }
            3 | 4 => {
                let views = gaussian_matrix(&mut rng, 2 * n, dim);
                if !relu_inputs_clear(&w, &adapted(&w, &views)) {
                    continue;
                }
                if kind == 3 {
                    ("ntxent", LossSetting::NtXent, ContrastiveTarget::NtXent { views, pair_map: twin_map(n) })
                } else {
                    let labels = [targets.clone(), targets.clone()].concat();
                    ("supcon", LossSetting::SupCon, ContrastiveTarget::SupCon { views, labels })
                }
            }
            _ => unreachable!(),
        };
        let mut loss = LossConfig::new(setting);
        loss.lambda = rng.random_range(0.5..2.0);
        let batch = Batch { embeddings: x, targets: targets.clone(), contrastive };
        let obj = objective(&w, &batch, &loss).unwrap();
        let (h, p) = (w.hidden(), w.proj_dim());
        let numeric = numeric_gradient(&w.flatten(), |v| {
            let wv = HeadWeights::from_flat(dim, classes, h, p, v).unwrap();
            objective(&wv, &batch, &loss).unwrap().total
        });
        out.push((name, relative_error(&obj.grad.flatten(), &numeric)));
    }
    out
}

/// Mean loss of `batch_triplet_loss` must match the mean of single triples.
pub fn batch_triplet_matches_single(seed: u64) -> bool {
    let mut rng = rng(seed);
    let x = gaussian_matrix(&mut rng, 5, 4);
    let ts = [Triplet { anchor: 0, positive: 1, negative: 2 }, Triplet { anchor: 3, positive: 4, negative: 0 }];
    let lg = batch_triplet_loss(x.view(), &ts, 1.0).unwrap();
    let single: f64 = ts
        .iter()
        .map(|t| {
            let r = |i: usize| x.row(i).to_vec();
            triplet_loss(&r(t.anchor), &r(t.positive), &r(t.negative), 1.0).unwrap().loss
        })
        .sum::<f64>()
        / 2.0;
    (lg.loss - single).abs() < 1e-12
}

/// Pair-counting AUC with half credit for ties.
pub fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut acc, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                acc += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    acc / pairs
}

/// EER by sweeping every distinct score plus a threshold above all of them,
/// counting errors directly at each one, then intersecting `FPR = FNR` on
/// the segment where the sign of `FPR - FNR` first turns non-negative.
pub fn sweep_eer(scores: &[f64], labels: &[u8]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let rates = |t: Option<f64>| -> (f64, f64) {
        let mut fp = 0.0;
        let mut missed = 0.0;
        for (s, l) in scores.iter().zip(labels) {
            let flagged = t.is_some_and(|t| *s >= t);
            if *l == 0 && flagged {
                fp += 1.0;
            }
            if *l == 1 && !flagged {
                missed += 1.0;
            }
        }
        (fp / n_neg, missed / n_pos)
    };
    let mut prev = rates(None);
    for t in thresholds {
        let cur = rates(Some(t));
        if cur.0 - cur.1 >= 0.0 {
            // FPR(l) = f0 + l (f1 - f0), FNR(l) = m0 + l (m1 - m0)
            let (f0, m0) = prev;
            let (f1, m1) = cur;
            let denom = (f1 - f0) - (m1 - m0);
            let l = if denom == 0.0 { 1.0 } else { (m0 - f0) / denom };
            return f0 + l * (f1 - f0);
        }
        prev = cur;
    }
    unreachable!("the lowest threshold flags every sample")
}

/// Random scored instance with `n <= 200`, both classes present and scores
/// drawn from a coarse grid so ties are common.
pub fn tied_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..=200);
    let levels = rng.random_range(2..=20);
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    labels[0] = 0;
    labels[1] = 1;
    let scores = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
    (scores, labels)
}

/// One synthetic dataset: Gaussian class blobs. Class `c` is centred at
/// `separation` on coordinates `d` with `d % classes == c`.
pub struct BlobSpec<'a> {
    pub dataset: &'a str,
    pub labels: &'a [&'a str],
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    /// Applied as `scale * x + shift` to every sample of this dataset.
    pub scale: f64,
    pub shift: Option<Array1<f64>>,
}

/// Appends blob samples to `rows`/`data`, one video per sample.
pub fn push_blobs(spec: &BlobSpec<'_>, rng: &mut ChaCha8Rng, rows: &mut Vec<CatalogRow>, data: &mut Vec<Vec<f32>>) {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let classes = spec.labels.len();
    for (split, per_class) in [(Split::Train, spec.train_per_class), (Split::Test, spec.test_per_class)] {
        for (c, label) in spec.labels.iter().enumerate() {
            for _ in 0..per_class {
                let r = rows.len();
                let v: Vec<f32> = (0..spec.dim)
                    .map(|d| {
                        let centre = if d % classes == c { spec.separation } else { 0.0 };
                        let mut x = centre + noise.sample(rng);
                        x = spec.scale * x + spec.shift.as_ref().map_or(0.0, |s| s[d]);
                        x as f32
                    })
                    .collect();
                data.push(v);
                rows.push(CatalogRow {
                    sample_id: format!("{}-{r}", spec.dataset),
                    dataset: spec.dataset.to_string(),
                    video_id: format!("{}-v{r}", spec.dataset),
                    frame_idx: 0,
                    split,
                    label: canonical_manipulation(label).unwrap(),
                    row_index: r,
                });
            }
        }
    }
}

pub fn to_matrix(data: &[Vec<f32>]) -> Array2<f32> {
    let dim = data.first().map_or(0, Vec::len);
    Array2::from_shape_vec((data.len(), dim), data.concat()).unwrap()
}

/// The standard 4-class blob benchmark: REAL plus three FF++ manipulations.
pub fn four_class_blobs(dim: usize, train_per_class: usize, test_per_class: usize, seed: u64) -> (Array2<f32>, SampleCatalog) {
    let spec = BlobSpec {
        dataset: "FF++",
        labels: &["REAL", "DEEPFAKES", "FACESWAP", "FACE2FACE"],
        dim,
        train_per_class,
        test_per_class,
        separation: 1.5,
        scale: 1.0,
        shift: None,
    };
    let (mut rows, mut data) = (Vec::new(), Vec::new());
    push_blobs(&spec, &mut rng(seed), &mut rows, &mut data);
    let cat = SampleCatalog::new(rows, &attribench::registry::builtin_dataset_descriptors()).unwrap();
    (to_matrix(&data), cat)
}

pub fn descriptors_with(extra: &[DatasetDescriptor]) -> Vec<DatasetDescriptor> {
    let mut all = attribench::registry::builtin_dataset_descriptors();
    all.extend(extra.iter().cloned());
    all
}

/// Random orthogonal matrix by Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, p: usize) -> Array2<f64> {
    let g = gaussian_matrix(rng, p, p);
    let mut q = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        let mut v = g.row(i).to_owned();
        for j in 0..i {
            let qj = q.row(j).to_owned();
            let dot = v.dot(&qj);
            v.scaled_add(-dot, &qj);
        }
        let norm = v.dot(&v).sqrt();
        q.row_mut(i).assign(&(v / norm));
    }
    q
}

/// Largest deviation of NT-Xent and SupCon under a common orthogonal map
/// and a common positive rescale, over `cases` random batches.
pub fn invariance_deviation(cases: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (v, n) = paired_views(&mut rng);
        let tau = rng.random_range(0.05..1.0);
        let map = twin_map(n);
        let half: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let labels = [half.clone(), half].concat();
        let q = random_orthogonal(&mut rng, v.ncols());
        let scale = rng.random_range(0.01..100.0);
        for t in [v.dot(&q.t()), &v * scale] {
            worst = worst.max((ntxent_loss(t.view(), &map, tau).unwrap().loss - ntxent_loss(v.view(), &map, tau).unwrap().loss).abs());
            worst = worst.max((supcon_loss(t.view(), &labels, tau).unwrap().loss - supcon_loss(v.view(), &labels, tau).unwrap().loss).abs());
        }
    }
    worst
}

/// Largest |SupCon - NT-Xent| over batches where every anchor has exactly
/// one positive (its twin).
pub fn supcon_ntxent_deviation(cases: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    (0..cases)
        .map(|_| {
            let (v, n) = paired_views(&mut rng);
            let tau = rng.random_range(0.05..1.0);
            let labels: Vec<usize> = (0..2 * n).map(|i| i % n).collect();
            let a = ntxent_loss(v.view(), &twin_map(n), tau).unwrap().loss;
            let b = supcon_loss(v.view(), &labels, tau).unwrap().loss;
            (a - b).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest |loss - ln 3| for all-identical 2N = 4 batches under NT-Xent and
/// SupCon (two classes of two).
pub fn identical_batch_deviation(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p = rng.random_range(1..8);
        let row = gaussian_matrix(&mut rng, 1, p);
        let v = Array2::from_shape_fn((4, p), |(_, j)| row[[0, j]]);
        let tau = rng.random_range(0.01..10.0);
        let nt = ntxent_loss(v.view(), &twin_map(2), tau).unwrap().loss;
        let sc = supcon_loss(v.view(), &[0, 1, 0, 1], tau).unwrap().loss;
        worst = worst.max((nt - 3f64.ln()).abs()).max((sc - 3f64.ln()).abs());
    }
    worst
}
