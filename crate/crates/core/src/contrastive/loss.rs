use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::mining::Triplet;
use super::ContrastiveError;

/// Loss value with its gradient w.r.t. the input matrix. `terms` is the
/// number of per-anchor (or per-sample) terms averaged into `loss`, so the
/// summed form is `loss * terms`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Array2<f64>,
    pub terms: usize,
}

impl LossGrad {
    pub fn summed(&self) -> f64 {
        self.loss * self.terms as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

/// `max(0, |a - p|^2 - |a - n|^2 + margin)`. At the hinge itself the
/// inactive branch is taken and every gradient is zero.
pub fn triplet_loss(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<TripletLoss, ContrastiveError> {
    let d = anchor.len();
    for v in [positive, negative] {
        if v.len() != d {
            return Err(ContrastiveError::DimensionMismatch { expected: d, got: v.len() });
        }
    }
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let arg = sq(anchor, positive) - sq(anchor, negative) + margin;
    if arg <= 0.0 {
        return Ok(TripletLoss {
            loss: 0.0,
            grad_anchor: vec![0.0; d],
            grad_positive: vec![0.0; d],
            grad_negative: vec![0.0; d],
        });
    }
    let mut out = TripletLoss {
        loss: arg,
        grad_anchor: Vec::with_capacity(d),
        grad_positive: Vec::with_capacity(d),
        grad_negative: Vec::with_capacity(d),
    };
    for k in 0..d {
        let (a, p, n) = (anchor[k], positive[k], negative[k]);
        out.grad_anchor.push(2.0 * (n - p));
        out.grad_positive.push(-2.0 * (a - p));
        out.grad_negative.push(2.0 * (a - n));
    }
    Ok(out)
}

/// Mean triplet loss over index triples into the rows of `feats`.
pub fn batch_triplet_loss(
    feats: ArrayView2<'_, f64>,
    triplets: &[Triplet],
    margin: f64,
) -> Result<LossGrad, ContrastiveError> {
    let mut grad = Array2::zeros(feats.raw_dim());
    if triplets.is_empty() {
        return Err(ContrastiveError::NoValidTriplets);
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut total = 0.0;
    for t in triplets {
        let row = |i: usize| feats.row(i).to_vec();
        let tl = triplet_loss(&row(t.anchor), &row(t.positive), &row(t.negative), margin)?;
        total += tl.loss;
        for (idx, g) in [
            (t.anchor, &tl.grad_anchor),
            (t.positive, &tl.grad_positive),
            (t.negative, &tl.grad_negative),
        ] {
            let mut r = grad.row_mut(idx);
            r.scaled_add(scale, &Array1::from_vec(g.clone()));
        }
    }
    Ok(LossGrad { loss: total * scale, grad, terms: triplets.len() })
}

/// Row-normalises `z`, returning unit rows and the original norms.
fn unit_rows(z: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Vec<f64>), ContrastiveError> {
    let mut u = z.to_owned();
    let mut norms = Vec::with_capacity(z.nrows());
    for (i, mut row) in u.axis_iter_mut(Axis(0)).enumerate() {
        let n = row.dot(&row).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(ContrastiveError::ZeroVector(i));
        }
        row /= n;
        norms.push(n);
    }
    Ok((u, norms))
}

/// Given `dL/dS` for `S = U U^T / tau`, returns `dL/dZ` through the row
/// normalisation `U = Z / |Z|`.
fn backprop_cosine(ds: &Array2<f64>, u: &Array2<f64>, norms: &[f64], tau: f64) -> Array2<f64> {
    let sym = ds + &ds.t();
    let mut du = sym.dot(u) / tau;
    for (i, mut row) in du.axis_iter_mut(Axis(0)).enumerate() {
        let ui = u.row(i);
        let radial = row.dot(&ui);
        row.scaled_add(-radial, &ui);
        row /= norms[i];
    }
    du
}

fn check_temperature(tau: f64) -> Result<(), ContrastiveError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(ContrastiveError::InvalidConfig(format!("temperature must be positive, got {tau}")))
    }
}

/// NT-Xent over `2N` view rows; `pair_map[i]` is the other view of row `i`.
/// Returns the mean over all anchors.
pub fn ntxent_loss(views: ArrayView2<'_, f64>, pair_map: &[usize], tau: f64) -> Result<LossGrad, ContrastiveError> {
    check_temperature(tau)?;
    let n = views.nrows();
    if pair_map.len() != n {
        return Err(ContrastiveError::BadPairMap(format!("{} entries for {n} rows", pair_map.len())));
    }
    if n < 2 {
        return Err(ContrastiveError::BadPairMap("need at least two rows".into()));
    }
    for (i, &j) in pair_map.iter().enumerate() {
        if j >= n || j == i || pair_map[j] != i {
            return Err(ContrastiveError::BadPairMap(format!("row {i} -> {j} is not a perfect matching")));
        }
    }
    let (u, norms) = unit_rows(views)?;
    let sim = u.dot(&u.t()) / tau;
    let inv_n = 1.0 / n as f64;
    let mut ds = Array2::<f64>::zeros((n, n));
    let mut loss = 0.0;
    for i in 0..n {
        let row = sim.row(i);
        let max = (0..n).filter(|&k| k != i).map(|k| row[k]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&k| k != i).map(|k| (row[k] - max).exp()).sum();
        let lse = max + denom.ln();
        let j = pair_map[i];
        loss += lse - row[j];
        for k in (0..n).filter(|&k| k != i) {
            ds[[i, k]] += inv_n * (row[k] - max).exp() / denom;
        }
        ds[[i, j]] -= inv_n;
    }
    let grad = backprop_cosine(&ds, &u, &norms, tau);
    Ok(LossGrad { loss: loss * inv_n, grad, terms: n })
}

/// Supervised contrastive loss over `2N` view rows. Positives of anchor `i`
/// are the other rows sharing its label. Returns the mean over anchors.
pub fn supcon_loss(views: ArrayView2<'_, f64>, labels: &[usize], tau: f64) -> Result<LossGrad, ContrastiveError> {
    check_temperature(tau)?;
    let n = views.nrows();
    if labels.len() != n {
        return Err(ContrastiveError::DimensionMismatch { expected: n, got: labels.len() });
    }
    let positives: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect())
        .collect();
    if let Some(i) = positives.iter().position(Vec::is_empty) {
        return Err(ContrastiveError::AnchorWithoutPositive(i));
    }
    let (u, norms) = unit_rows(views)?;
    let sim = u.dot(&u.t()) / tau;
    let inv_n = 1.0 / n as f64;
    let mut ds = Array2::<f64>::zeros((n, n));
    let mut loss = 0.0;
    for (i, pos) in positives.iter().enumerate() {
        let row = sim.row(i);
        let max = (0..n).filter(|&a| a != i).map(|a| row[a]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| (row[a] - max).exp()).sum();
        let lse = max + denom.ln();
        let inv_p = 1.0 / pos.len() as f64;
        let mean_pos: f64 = pos.iter().map(|&p| row[p]).sum::<f64>() * inv_p;
        loss += lse - mean_pos;
        for a in (0..n).filter(|&a| a != i) {
            ds[[i, a]] += inv_n * (row[a] - max).exp() / denom;
        }
        for &p in pos {
            ds[[i, p]] -= inv_n * inv_p;
        }
    }
    let grad = backprop_cosine(&ds, &u, &norms, tau);
    Ok(LossGrad { loss: loss * inv_n, grad, terms: n })
}

/// Mean softmax cross-entropy of `logits` rows against class `targets`.
pub fn softmax_cross_entropy(logits: ArrayView2<'_, f64>, targets: &[usize]) -> Result<LossGrad, ContrastiveError> {
    let (b, c) = logits.dim();
    if targets.len() != b {
        return Err(ContrastiveError::DimensionMismatch { expected: b, got: targets.len() });
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= c) {
        return Err(ContrastiveError::DimensionMismatch { expected: c, got: t + 1 });
    }
    let mut grad = Array2::zeros((b, c));
    let mut loss = 0.0;
    let inv_b = 1.0 / b.max(1) as f64;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let denom: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        let lse = max + denom.ln();
        loss += lse - row[targets[i]];
        for k in 0..c {
            grad[[i, k]] = inv_b * (row[k] - max).exp() / denom;
        }
        grad[[i, targets[i]]] -= inv_b;
    }
    Ok(LossGrad { loss: loss * inv_b, grad, terms: b })
}
