//! Triplet and InfoNCE objectives over rows of one embedding table.
//! Rows are assumed unit-norm, so `cos(a, b) = a·b` and `d = 1 − cos`.

use std::sync::Arc;

use super::config::LossConfig;
use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor, Var};

/// Index-level description of one contrastive batch.
///
/// Every anchor slot `s` pairs table row `anchors[s]` with `positives[s]`.
/// Negatives are listed as `(slot, source)` where the source is a live table
/// row, a detached table row (value only, no gradient), or a constant vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContrastiveBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub live: Vec<(usize, usize)>,
    pub detached: Vec<(usize, usize)>,
    pub fixed: Vec<(usize, Vec<f64>)>,
}

impl ContrastiveBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn n_negatives(&self) -> usize {
        self.live.len() + self.detached.len() + self.fixed.len()
    }

    /// Opens a new anchor slot and returns its index.
    pub fn push_anchor(&mut self, anchor: usize, positive: usize) -> usize {
        self.anchors.push(anchor);
        self.positives.push(positive);
        self.anchors.len() - 1
    }

    /// Drops the most recent slot if it received no negatives.
    pub fn drop_slot_if_empty(&mut self, slot: usize) -> bool {
        let used = self.live.iter().any(|n| n.0 == slot)
            || self.detached.iter().any(|n| n.0 == slot)
            || self.fixed.iter().any(|n| n.0 == slot);
        if !used && slot + 1 == self.anchors.len() {
            self.anchors.pop();
            self.positives.pop();
            return true;
        }
        false
    }
}

/// Loss nodes on the tape: `loss = α·triplet + β·infonce`.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub loss: Var,
    pub triplet: Var,
    pub infonce: Var,
}

/// Per-anchor InfoNCE from logits: `lse(pos ∪ negs) − pos`. `seg[k]` is
/// the anchor of negative logit `k`.
pub fn infonce_terms(tape: &mut Tape, pos: Var, neg: Var, seg: &[usize]) -> Result<Var> {
    let b = tape.shape(pos).0;
    let all = tape.concat_rows(&[pos, neg])?;
    let groups: Arc<[usize]> = (0..b).chain(seg.iter().copied()).collect();
    let lse = tape.segment_logsumexp(all, groups, b)?;
    tape.sub(lse, pos)
}

/// Batched triplet and InfoNCE losses, each averaged over anchors.
pub fn contrastive_loss(tape: &mut Tape, table: Var, batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<LossParts> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::validation("contrastive batch has no anchors"));
    }
    let (n_rows, dim) = tape.shape(table);
    let check = |r: usize| {
        if r >= n_rows {
            Err(Error::validation(format!("batch row {r} outside table of {n_rows} rows")))
        } else {
            Ok(())
        }
    };
    for &r in batch.anchors.iter().chain(&batch.positives) {
        check(r)?;
    }
    let mut counts = vec![0usize; b];
    let mut seg = Vec::with_capacity(batch.n_negatives());
    let mut parts = Vec::new();
    if !batch.live.is_empty() {
        for &(s, r) in &batch.live {
            check(r)?;
            seg.push(s);
        }
        let rows: Vec<usize> = batch.live.iter().map(|n| n.1).collect();
        parts.push(tape.gather_rows(table, rows)?);
    }
    if !batch.detached.is_empty() {
        for &(s, r) in &batch.detached {
            check(r)?;
            seg.push(s);
        }
        let rows: Vec<usize> = batch.detached.iter().map(|n| n.1).collect();
        let frozen = tape.value(table).select_rows(&rows);
        parts.push(tape.leaf(frozen));
    }
    if !batch.fixed.is_empty() {
        let mut data = Vec::with_capacity(batch.fixed.len() * dim);
        for (s, v) in &batch.fixed {
            if v.len() != dim {
                return Err(Error::Shape {
                    op: "contrastive_loss",
                    left: (1, dim),
                    right: (1, v.len()),
                });
            }
            seg.push(*s);
            data.extend_from_slice(v);
        }
        parts.push(tape.leaf(Tensor::from_vec(batch.fixed.len(), dim, data)?));
    }
    for &s in &seg {
        if s >= b {
            return Err(Error::validation(format!("negative assigned to missing slot {s}")));
        }
        counts[s] += 1;
    }
    if let Some(s) = counts.iter().position(|&c| c == 0) {
        return Err(Error::validation(format!("anchor slot {s} has no negatives")));
    }
    let negs = if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts)? };

    let a = tape.gather_rows(table, batch.anchors.clone())?;
    let p = tape.gather_rows(table, batch.positives.clone())?;
    let ap = tape.hadamard(a, p)?;
    let cos_ap = tape.row_sum(ap)?;
    let seg: Arc<[usize]> = seg.into();
    let a_rep = tape.gather_rows(a, seg.clone())?;
    let an = tape.hadamard(a_rep, negs)?;
    let cos_an = tape.row_sum(an)?;

    // d(a,p) − d(a,n) + m = cos_an − cos_ap + m
    let cos_ap_rep = tape.gather_rows(cos_ap, seg.clone())?;
    let gap = tape.sub(cos_an, cos_ap_rep)?;
    let gap = tape.add_scalar(gap, cfg.margin)?;
    let hinge = tape.relu(gap)?;
    let inv: Arc<[f64]> = seg.iter().map(|&s| 1.0 / counts[s] as f64).collect();
    let per_anchor = tape.scatter_add_rows(hinge, seg.clone(), inv, b)?;
    let triplet = tape.mean_all(per_anchor)?;

    let pos_logit = tape.scale(cos_ap, 1.0 / cfg.temperature)?;
    let neg_logit = tape.scale(cos_an, 1.0 / cfg.temperature)?;
    let nce = infonce_terms(tape, pos_logit, neg_logit, &seg)?;
    let infonce = tape.mean_all(nce)?;

    let t = tape.scale(triplet, cfg.alpha)?;
    let n = tape.scale(infonce, cfg.beta)?;
    let loss = tape.add(t, n)?;
    Ok(LossParts { loss, triplet, infonce })
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!("{what} must be unit-norm, got norm {n}")));
    }
    Ok(())
}

fn single_anchor(a: &[f64], p: &[f64], negatives: &[&[f64]], cfg: &LossConfig) -> Result<(f64, f64)> {
    check_unit(a, "anchor")?;
    check_unit(p, "positive")?;
    for n in negatives {
        check_unit(n, "negative")?;
    }
    let mut rows = vec![a.to_vec(), p.to_vec()];
    rows.extend(negatives.iter().map(|n| n.to_vec()));
    let mut tape = Tape::new();
    let table = tape.leaf(Tensor::from_rows(&rows)?);
    let batch = ContrastiveBatch {
        anchors: vec![0],
        positives: vec![1],
        live: (0..negatives.len()).map(|k| (0, k + 2)).collect(),
        ..ContrastiveBatch::default()
    };
    let parts = contrastive_loss(&mut tape, table, &batch, cfg)?;
    Ok((tape.value(parts.triplet).to_scalar()?, tape.value(parts.infonce).to_scalar()?))
}

/// `mean_n max(0, d(a,p) − d(a,n) + margin)` for one anchor.
pub fn triplet_loss(a: &[f64], p: &[f64], negatives: &[&[f64]], margin: f64) -> Result<f64> {
    let cfg = LossConfig {
        margin,
        ..LossConfig::default()
    };
    Ok(single_anchor(a, p, negatives, &cfg)?.0)
}

/// `−log(exp(cos(a,p)/τ) / (exp(cos(a,p)/τ) + Σ_n exp(cos(a,n)/τ)))` for one anchor.
pub fn infonce_loss(a: &[f64], p: &[f64], negatives: &[&[f64]], temperature: f64) -> Result<f64> {
    let cfg = LossConfig {
        temperature,
        ..LossConfig::default()
    };
    cfg.validate()?;
    Ok(single_anchor(a, p, negatives, &cfg)?.1)
}

/// InfoNCE for one anchor given raw logits.
pub fn infonce_from_logits(pos: f64, negatives: &[f64]) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::validation("infonce needs at least one negative"));
    }
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::scalar(pos)?);
    let n = tape.leaf(Tensor::from_vec(negatives.len(), 1, negatives.to_vec())?);
    let out = infonce_terms(&mut tape, p, n, &vec![0; negatives.len()])?;
    tape.value(out).to_scalar()
}

/// `α·triplet + β·infonce`.
pub fn combined_loss(triplet: f64, infonce: f64, cfg: &LossConfig) -> f64 {
    cfg.alpha * triplet + cfg.beta * infonce
}
