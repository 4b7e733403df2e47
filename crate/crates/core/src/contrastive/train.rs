use std::collections::BTreeSet;
use std::time::Instant;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::head::{predict_matrix, HeadParams, HeadWeights};
use super::loss::{batch_triplet_loss, ntxent_loss, softmax_cross_entropy, supcon_loss, LossGrad};
use super::mining::{mine_triplets, MiningStrategy, Triplet};
use super::views::{feature_std, make_views};
use super::{ContrastiveError, EmbeddingSet, LossConfig, TrainConfig};
use crate::binarize::argmax;
use crate::metrics::balanced_accuracy;
use crate::protocol::{LossSetting, Mode};
use crate::registry::{ManipulationId, SampleCatalog, Split};

/// Balanced accuracy within this distance of `1 / classes` marks a run as
/// collapsed.
const COLLAPSE_TOLERANCE: f64 = 0.01;

/// What the contrastive term of one batch is computed on.
#[derive(Debug, Clone, PartialEq)]
pub enum ContrastiveTarget {
    None,
    /// Index triples into the batch rows.
    Triplets { triplets: Vec<Triplet>, through_projection: bool },
    /// `2N` view rows of encoder embeddings, `pair_map[i]` the twin of `i`.
    NtXent { views: Array2<f64>, pair_map: Vec<usize> },
    /// `2N` view rows with their class ids.
    SupCon { views: Array2<f64>, labels: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Encoder embeddings, one row per sample.
    pub embeddings: Array2<f64>,
    /// Class index of each row in the head's label order.
    pub targets: Vec<usize>,
    pub contrastive: ContrastiveTarget,
}

/// Value of `ce + lambda * contrastive` and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub ce: f64,
    pub con: f64,
    /// Number of anchors (or triples) averaged into `con`.
    pub con_terms: usize,
    pub total: f64,
    pub grad: HeadWeights,
}

/// Gradients of the projection MLP given `dL/dZ`; returns `dL/dX`.
fn projection_backward(
    w: &HeadWeights,
    grad: &mut HeadWeights,
    input: ArrayView2<'_, f64>,
    pre: &Array2<f64>,
    d_out: &Array2<f64>,
) -> Array2<f64> {
    let hidden = pre.mapv(|v| v.max(0.0));
    grad.proj_w2 += &d_out.t().dot(&hidden);
    grad.proj_b2 += &d_out.sum_axis(Axis(0));
    let mut d_pre = d_out.dot(&w.proj_w2);
    d_pre.zip_mut_with(pre, |d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    grad.proj_w1 += &d_pre.t().dot(&input);
    grad.proj_b1 += &d_pre.sum_axis(Axis(0));
    d_pre.dot(&w.proj_w1)
}

fn adapter_backward(grad: &mut HeadWeights, input: ArrayView2<'_, f64>, d_feat: &Array2<f64>) {
    grad.adapter_w += &d_feat.t().dot(&input);
    grad.adapter_b += &d_feat.sum_axis(Axis(0));
}

/// Joint objective of one batch. Cross-entropy is taken on the adapted
/// encoder features; the contrastive term on projected views (NT-Xent,
/// SupCon) or on the features themselves (triplets, unless routed through
/// the projection head).
pub fn objective(w: &HeadWeights, batch: &Batch, loss: &LossConfig) -> Result<Objective, ContrastiveError> {
    let x = batch.embeddings.view();
    if x.ncols() != w.dim() {
        return Err(ContrastiveError::DimensionMismatch { expected: w.dim(), got: x.ncols() });
    }
    let mut grad = HeadWeights::zeros(w.dim(), w.n_classes());
    let feats = w.features(x);
    let ce = softmax_cross_entropy(w.logits(feats.view()).view(), &batch.targets)?;
    grad.classifier_w += &ce.grad.t().dot(&feats);
    grad.classifier_b += &ce.grad.sum_axis(Axis(0));
    let mut d_feat = ce.grad.dot(&w.classifier_w);

    let lambda = loss.lambda;
    let mut con: Option<LossGrad> = None;
    if loss.has_contrastive_term() {
        match &batch.contrastive {
            ContrastiveTarget::None => {}
            ContrastiveTarget::Triplets { triplets, through_projection: false } => {
                let lg = batch_triplet_loss(feats.view(), triplets, loss.margin)?;
                d_feat.scaled_add(lambda, &lg.grad);
                con = Some(lg);
            }
            ContrastiveTarget::Triplets { triplets, through_projection: true } => {
                let (pre, z) = w.projection_forward(feats.view());
                let lg = batch_triplet_loss(z.view(), triplets, loss.margin)?;
                let d_z = &lg.grad * lambda;
                d_feat += &projection_backward(w, &mut grad, feats.view(), &pre, &d_z);
                con = Some(lg);
            }
            ContrastiveTarget::NtXent { views, .. } | ContrastiveTarget::SupCon { views, .. } => {
                let v_feats = w.features(views.view());
                let (pre, z) = w.projection_forward(v_feats.view());
                let lg = match &batch.contrastive {
                    ContrastiveTarget::NtXent { pair_map, .. } => ntxent_loss(z.view(), pair_map, loss.temperature)?,
                    ContrastiveTarget::SupCon { labels, .. } => supcon_loss(z.view(), labels, loss.temperature)?,
                    _ => unreachable!(),
                };
                let d_z = &lg.grad * lambda;
                let d_vfeat = projection_backward(w, &mut grad, v_feats.view(), &pre, &d_z);
                adapter_backward(&mut grad, views.view(), &d_vfeat);
                con = Some(lg);
            }
        }
    }
    adapter_backward(&mut grad, x, &d_feat);

    let (con_value, con_terms) = con.map_or((0.0, 0), |c| (c.loss, c.terms));
    Ok(Objective {
        ce: ce.loss,
        con: con_value,
        con_terms,
        total: ce.loss + lambda * con_value,
        grad,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub ce_loss: f64,
    pub con_loss: f64,
    /// Contrastive loss summed over anchors instead of averaged (mean of the
    /// per-batch sums).
    pub con_loss_sum: f64,
    pub total: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub train_balanced_accuracy: f64,
    /// Training balanced accuracy at chance level.
    pub collapsed: bool,
}

impl TrainingLog {
    pub const CSV_HEADER: &'static str = "epoch,ce_loss,con_loss,total,lr,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{:.6}\n",
                e.epoch, e.ce_loss, e.con_loss, e.total, e.lr, e.seconds
            ));
        }
        s
    }
}

/// Class order of a head trained on `catalog`: REAL first, then the fake
/// labels of the training split in canonical order. Binary heads use
/// `[REAL, UNKNOWN_FAKE]`.
pub fn label_order_for(catalog: &SampleCatalog, mode: Mode) -> Vec<ManipulationId> {
    match mode {
        Mode::Binary => vec![ManipulationId::real(), ManipulationId::unknown_fake()],
        Mode::Multiclass => {
            let fakes: BTreeSet<&ManipulationId> = catalog
                .split_rows(Split::Train)
                .map(|r| &r.label)
                .filter(|l| l.is_fake())
                .collect();
            std::iter::once(ManipulationId::real()).chain(fakes.into_iter().cloned()).collect()
        }
    }
}

struct BalancedSampler {
    members: Vec<Vec<usize>>,
}

impl BalancedSampler {
    fn new(targets: &[usize], n_classes: usize) -> Self {
        let mut members = vec![Vec::new(); n_classes];
        for (i, &t) in targets.iter().enumerate() {
            members[t].push(i);
        }
        members.retain(|m| !m.is_empty());
        BalancedSampler { members }
    }

    /// Uniform class, then uniform member.
    fn draw<R: Rng>(&self, size: usize, rng: &mut R) -> Vec<usize> {
        (0..size)
            .map(|_| {
                let class = &self.members[rng.random_range(0..self.members.len())];
                class[rng.random_range(0..class.len())]
            })
            .collect()
    }

    fn n_classes(&self) -> usize {
        self.members.len()
    }
}

fn gather(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// Trains a head on the training split of `catalog`, whose `row_index`
/// values address rows of `emb`.
pub fn train_head(
    emb: &EmbeddingSet,
    catalog: &SampleCatalog,
    mode: Mode,
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<(HeadParams, TrainingLog), ContrastiveError> {
    loss.validate()?;
    cfg.validate(loss.setting)?;
    if mode == Mode::Binary && loss.setting != LossSetting::Baseline {
        return Err(ContrastiveError::InvalidConfig(format!(
            "setting {} applies to multiclass heads only",
            loss.setting
        )));
    }
    if emb.n_rows() != catalog.len() {
        return Err(ContrastiveError::DimensionMismatch { expected: catalog.len(), got: emb.n_rows() });
    }
    let label_order = label_order_for(catalog, mode);
    let class_of = |label: &ManipulationId| -> usize {
        match mode {
            Mode::Binary => usize::from(label.is_fake()),
            Mode::Multiclass => label_order.iter().position(|m| m == label).expect("label in order"),
        }
    };
    let train_rows: Vec<(usize, usize)> = catalog
        .split_rows(Split::Train)
        .map(|r| (r.row_index, class_of(&r.label)))
        .collect();
    if train_rows.is_empty() {
        return Err(ContrastiveError::EmptyTrainSplit);
    }
    let all = emb.to_f64();
    let row_idx: Vec<usize> = train_rows.iter().map(|r| r.0).collect();
    let x = gather(&all, &row_idx);
    let targets: Vec<usize> = train_rows.iter().map(|r| r.1).collect();
    let n_classes = label_order.len();
    let dim = x.ncols();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = HeadWeights::init(dim, n_classes, &mut rng);
    let mut velocity = HeadWeights::zeros(dim, n_classes);
    let sampler = BalancedSampler::new(&targets, n_classes);
    let std = feature_std(x.view());
    let steps = x.nrows().div_ceil(cfg.batch_size);
    let mining = match loss.setting {
        LossSetting::TripletHard => Some(MiningStrategy::Hard),
        LossSetting::TripletSemiHard => Some(MiningStrategy::HardPositiveSemiHardNegative),
        _ => None,
    };

    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.schedule.rate(cfg.learning_rate, epoch, cfg.epochs);
        let (mut ce_acc, mut con_acc, mut con_sum_acc) = (0.0, 0.0, 0.0);
        for step in 0..steps {
            let batch = draw_batch(&x, &targets, &sampler, &weights, &std, loss, cfg, mining, &mut rng)?;
            let obj = objective(&weights, &batch, loss)?;
            if !(obj.ce.is_finite() && obj.con.is_finite()) {
                return Err(ContrastiveError::NonFiniteLoss { epoch: epoch + 1, step, ce: obj.ce, con: obj.con });
            }
            let mut grad = obj.grad;
            if !cfg.train_adapter {
                grad.zero_adapter();
            }
            velocity.scale(cfg.momentum);
            velocity.scaled_add(1.0, &grad);
            weights.scaled_add(-lr, &velocity);
            ce_acc += obj.ce;
            con_acc += obj.con;
            con_sum_acc += obj.con * obj.con_terms as f64;
        }
        let inv = 1.0 / steps as f64;
        let (ce_loss, con_loss) = (ce_acc * inv, con_acc * inv);
        epochs.push(EpochLog {
            epoch: epoch + 1,
            ce_loss,
            con_loss,
            con_loss_sum: con_sum_acc * inv,
            total: ce_loss + loss.lambda * con_loss,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    if !weights.is_finite() {
        let last = epochs.last().expect("at least one epoch");
        return Err(ContrastiveError::NonFiniteLoss {
            epoch: last.epoch,
            step: steps,
            ce: last.ce_loss,
            con: last.con_loss,
        });
    }

    let preds = predict_matrix(x.view(), &weights)?;
    let predicted: Vec<usize> = preds.probs().rows().into_iter().map(|r| argmax(r).0).collect();
    let train_ba = balanced_accuracy(&predicted, &targets).expect("non-empty training split");
    let present = sampler.n_classes();
    let collapsed = present > 1 && train_ba <= 1.0 / present as f64 + COLLAPSE_TOLERANCE;

    Ok((
        HeadParams { mode, label_order, weights },
        TrainingLog { epochs, train_balanced_accuracy: train_ba, collapsed },
    ))
}

#[allow(clippy::too_many_arguments)]
fn draw_batch(
    x: &Array2<f64>,
    targets: &[usize],
    sampler: &BalancedSampler,
    weights: &HeadWeights,
    std: &ndarray::Array1<f64>,
    loss: &LossConfig,
    cfg: &TrainConfig,
    mining: Option<MiningStrategy>,
    rng: &mut ChaCha8Rng,
) -> Result<Batch, ContrastiveError> {
    let active = loss.has_contrastive_term();
    let mut attempts = 0;
    loop {
        let idx = sampler.draw(cfg.batch_size, rng);
        let embeddings = gather(x, &idx);
        let batch_targets: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
        let contrastive = match (active, loss.setting) {
            (false, _) | (true, LossSetting::Baseline) => ContrastiveTarget::None,
            (true, LossSetting::TripletHard | LossSetting::TripletSemiHard) => {
                let feats = weights.features(embeddings.view());
                let space = if loss.triplet_through_projection {
                    weights.projection_forward(feats.view()).1
                } else {
                    feats
                };
                let strategy = mining.expect("triplet setting has a mining strategy");
                match mine_triplets(space.view(), &batch_targets, strategy, loss.margin) {
                    Ok(triplets) => ContrastiveTarget::Triplets {
                        triplets,
                        through_projection: loss.triplet_through_projection,
                    },
                    Err(ContrastiveError::NoValidTriplets) => {
                        attempts += 1;
                        if attempts >= cfg.max_resample {
                            return Err(ContrastiveError::MaxResample(attempts));
                        }
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }
            (true, LossSetting::NtXent | LossSetting::SupCon) => {
                let n = idx.len();
                let mut first = Array2::zeros((n, x.ncols()));
                let mut second = Array2::zeros((n, x.ncols()));
                for (r, row) in embeddings.rows().into_iter().enumerate() {
                    let (a, b) = make_views(row, std.view(), cfg, rng);
                    first.row_mut(r).assign(&a);
                    second.row_mut(r).assign(&b);
                }
                let views = concatenate(Axis(0), &[first.view(), second.view()]).expect("equal widths");
                if loss.setting == LossSetting::NtXent {
                    let pair_map = (0..2 * n).map(|i| (i + n) % (2 * n)).collect();
                    ContrastiveTarget::NtXent { views, pair_map }
                } else {
                    let labels = batch_targets.iter().chain(&batch_targets).copied().collect();
                    ContrastiveTarget::SupCon { views, labels }
                }
            }
        };
        return Ok(Batch { embeddings, targets: batch_targets, contrastive });
    }
}
