//! Projection heads and contrastive objectives.
//!
//! The cross-view head is shared by both views' embeddings; the two
//! intra-view heads hold disjoint parameters. The InfoNCE form uses cosine
//! similarity and a multi-positive numerator: every node in P_i counts as a
//! positive, all remaining target nodes as negatives.

use std::rc::Rc;
use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{HecoError, Result};
use crate::model::{ModelGraph, ParamStore};
use crate::tensor::{Matrix, TensorId};

pub const HEAD_CROSS: &str = "head/cross";
pub const HEAD_INTRA_SC: &str = "head/intra_sc";
pub const HEAD_INTRA_MP: &str = "head/intra_mp";

/// Temperatures and balance coefficients of the combined objectives.
#[derive(Debug, Clone)]
pub struct LossConfig {
    pub tau: f64,
    pub tau_sc: f64,
    pub tau_mp: f64,
    /// Cross-view balance: L = lambda * L_sc + (1 - lambda) * L_mp.
    pub lambda: f64,
    /// Intra-view weights of the hierarchical objective.
    pub lambda1: f64,
    pub lambda2: f64,
    /// Semi-supervised combination coefficient.
    pub aleph: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.7,
            tau_sc: 0.7,
            tau_mp: 0.7,
            lambda: 0.5,
            lambda1: 0.5,
            lambda2: 0.5,
            aleph: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, tau) in [("tau", self.tau), ("tau_sc", self.tau_sc), ("tau_mp", self.tau_mp)] {
            if tau <= 0.0 {
                return Err(HecoError::Config(format!("{name} must be > 0, got {tau}")));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(HecoError::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        for (name, l) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("aleph", self.aleph),
        ] {
            if l < 0.0 {
                return Err(HecoError::Config(format!("{name} must be >= 0, got {l}")));
            }
        }
        Ok(())
    }
}

/// Register one projection head: `layers` hidden (W, b, ELU) stages followed
/// by a linear output, all d -> d.
pub fn register_head(
    store: &mut ParamStore,
    prefix: &str,
    d: usize,
    layers: usize,
    seed: u64,
) -> Result<()> {
    for k in 0..layers {
        store.register_glorot(&format!("{prefix}/hidden{k}/w"), d, d, seed)?;
        store.register_zeros(&format!("{prefix}/hidden{k}/b"), 1, d)?;
    }
    store.register_glorot(&format!("{prefix}/out/w"), d, d, seed)?;
    store.register_zeros(&format!("{prefix}/out/b"), 1, d)?;
    Ok(())
}

/// z -> W_out ELU(W_{k-1} ... ELU(W_0 z + b_0) ...) + b_out.
pub fn project(mg: &mut ModelGraph, z: TensorId, prefix: &str, layers: usize) -> Result<TensorId> {
    let mut h = z;
    for k in 0..layers {
        let w = mg.param(&format!("{prefix}/hidden{k}/w"))?;
        let b = mg.param(&format!("{prefix}/hidden{k}/b"))?;
        let lin = mg.tape.matmul(h, w)?;
        let lin = mg.tape.add_row_broadcast(lin, b)?;
        h = mg.tape.elu(lin)?;
    }
    let w = mg.param(&format!("{prefix}/out/w"))?;
    let b = mg.param(&format!("{prefix}/out/b"))?;
    let lin = mg.tape.matmul(h, w)?;
    mg.tape.add_row_broadcast(lin, b)
}

/// Extra per-anchor negative candidates appended to the InfoNCE denominator:
/// row r of `embeddings` is one extra candidate for anchor `anchor_of[r]`.
pub struct ExtraNegatives {
    pub anchor_of: Vec<usize>,
    pub embeddings: TensorId,
}

static ZERO_ROW_WARNED: AtomicBool = AtomicBool::new(false);

fn warn_zero_rows(m: &Matrix, role: &str) {
    for r in 0..m.rows() {
        if m.row(r).iter().all(|&v| v == 0.0) {
            if !ZERO_ROW_WARNED.swap(true, Ordering::Relaxed) {
                log::warn!(
                    "{role} row {r} is a zero vector; its cosine similarities are 0 by convention"
                );
            }
            return;
        }
    }
}

/// Per-node InfoNCE loss vector (n x 1):
/// L_i = -log [ sum_{j in P_i} exp(cos(a_i, c_j)/tau) / sum_k exp(cos(a_i, c_k)/tau) ],
/// with the denominator over P_i + N_i = all candidates plus any per-anchor
/// extras. `pos_mask` is the n x n 0/1 matrix of positive pairs.
pub fn info_nce(
    mg: &mut ModelGraph,
    anchors: TensorId,
    candidates: TensorId,
    pos_mask: &Matrix,
    tau: f64,
    extras: Option<&ExtraNegatives>,
) -> Result<TensorId> {
    if tau <= 0.0 {
        return Err(HecoError::Config(format!("tau must be > 0, got {tau}")));
    }
    let n = mg.tape.shape(anchors).0;
    if mg.tape.shape(candidates).0 != pos_mask.cols() || pos_mask.rows() != n {
        return Err(HecoError::Shape {
            op: "info_nce",
            detail: format!(
                "anchors {:?}, candidates {:?}, mask {:?}",
                mg.tape.shape(anchors),
                mg.tape.shape(candidates),
                pos_mask.shape()
            ),
        });
    }
    warn_zero_rows(mg.tape.value(anchors), "anchor");
    warn_zero_rows(mg.tape.value(candidates), "candidate");

    let an = mg.tape.row_l2_normalize(anchors)?;
    let cn = mg.tape.row_l2_normalize(candidates)?;
    let cnt = mg.tape.transpose(cn)?;
    let sims = mg.tape.matmul(an, cnt)?;
    let scaled = mg.tape.scale(sims, 1.0 / tau)?;
    let e = mg.tape.exp(scaled)?;

    let mask = mg.constant(pos_mask.clone())?;
    let pos_terms = mg.tape.mul(e, mask)?;
    let numer = mg.tape.row_sum(pos_terms)?;
    let mut denom = mg.tape.row_sum(e)?;

    if let Some(extra) = extras {
        let en = mg.tape.row_l2_normalize(extra.embeddings)?;
        let idx = Rc::new(extra.anchor_of.clone());
        let a_rows = mg.tape.gather_rows(an, Rc::clone(&idx))?;
        let dots = mg.tape.mul(a_rows, en)?;
        let dots = mg.tape.row_sum(dots)?;
        let scaled = mg.tape.scale(dots, 1.0 / tau)?;
        let ee = mg.tape.exp(scaled)?;
        let extra_den = mg.tape.scatter_add_rows(ee, idx, n)?;
        denom = mg.tape.add(denom, extra_den)?;
    }

    let log_den = mg.tape.log(denom)?;
    let log_num = mg.tape.log(numer)?;
    mg.tape.sub(log_den, log_num)
}

/// Cross-view projections through the shared head.
pub struct CrossProjections {
    pub sc: TensorId,
    pub mp: TensorId,
}

pub fn project_cross(
    mg: &mut ModelGraph,
    z_sc: TensorId,
    z_mp: TensorId,
    layers: usize,
) -> Result<CrossProjections> {
    Ok(CrossProjections {
        sc: project(mg, z_sc, HEAD_CROSS, layers)?,
        mp: project(mg, z_mp, HEAD_CROSS, layers)?,
    })
}

/// The two cross-view loss vectors: sc-anchored (candidates from the
/// meta-path view) and mp-anchored (candidates from the schema view).
pub fn cross_losses(
    mg: &mut ModelGraph,
    proj: &CrossProjections,
    pos_mask: &Matrix,
    tau: f64,
    extra_sc: Option<&ExtraNegatives>,
    extra_mp: Option<&ExtraNegatives>,
) -> Result<(TensorId, TensorId)> {
    let l_sc = info_nce(mg, proj.sc, proj.mp, pos_mask, tau, extra_sc)?;
    let l_mp = info_nce(mg, proj.mp, proj.sc, pos_mask, tau, extra_mp)?;
    Ok((l_sc, l_mp))
}

/// Scalar loss plus the per-term means that feed the loss log.
pub struct ObjectiveOutput {
    pub loss: TensorId,
    pub cross_sc: f64,
    pub cross_mp: f64,
    pub intra_sc: f64,
    pub intra_mp: f64,
    pub semi: f64,
}

fn mean_value(mg: &ModelGraph, v: TensorId) -> f64 {
    let m = mg.tape.value(v);
    m.sum() / m.len() as f64
}

/// L = mean_i [ lambda * L_i^sc + (1 - lambda) * L_i^mp ], both directions
/// through the shared cross head.
pub fn heco_objective(
    mg: &mut ModelGraph,
    z_sc: TensorId,
    z_mp: TensorId,
    pos_mask: &Matrix,
    cfg: &LossConfig,
    layers: usize,
) -> Result<ObjectiveOutput> {
    cfg.validate()?;
    let proj = project_cross(mg, z_sc, z_mp, layers)?;
    let (l_sc, l_mp) = cross_losses(mg, &proj, pos_mask, cfg.tau, None, None)?;
    combine_cross(mg, l_sc, l_mp, cfg)
}

fn combine_cross(
    mg: &mut ModelGraph,
    l_sc: TensorId,
    l_mp: TensorId,
    cfg: &LossConfig,
) -> Result<ObjectiveOutput> {
    let ws = mg.tape.scale(l_sc, cfg.lambda)?;
    let wm = mg.tape.scale(l_mp, 1.0 - cfg.lambda)?;
    let sum = mg.tape.add(ws, wm)?;
    let loss = mg.tape.mean(sum)?;
    Ok(ObjectiveOutput {
        loss,
        cross_sc: mean_value(mg, l_sc),
        cross_mp: mean_value(mg, l_mp),
        intra_sc: 0.0,
        intra_mp: 0.0,
        semi: 0.0,
    })
}

/// J = L + mean_i [ lambda1 * L_i^sc_intra + lambda2 * L_i^mp_intra ].
/// Zero-weight intra terms contribute exactly zero, so they are skipped;
/// with lambda1 = lambda2 = 0 this reproduces the plain objective bitwise.
pub fn hecopp_objective(
    mg: &mut ModelGraph,
    z_sc: TensorId,
    z_mp: TensorId,
    pos_mask: &Matrix,
    cfg: &LossConfig,
    layers: usize,
) -> Result<ObjectiveOutput> {
    cfg.validate()?;
    let proj = project_cross(mg, z_sc, z_mp, layers)?;
    let (l_sc, l_mp) = cross_losses(mg, &proj, pos_mask, cfg.tau, None, None)?;
    let mut out = combine_cross(mg, l_sc, l_mp, cfg)?;
    add_intra_terms(mg, &mut out, z_sc, z_mp, pos_mask, cfg, layers)?;
    Ok(out)
}

/// Add the intra-view terms of the hierarchical objective onto `out.loss`.
pub fn add_intra_terms(
    mg: &mut ModelGraph,
    out: &mut ObjectiveOutput,
    z_sc: TensorId,
    z_mp: TensorId,
    pos_mask: &Matrix,
    cfg: &LossConfig,
    layers: usize,
) -> Result<()> {
    let mut intra_acc: Option<TensorId> = None;
    if cfg.lambda1 != 0.0 {
        let p = project(mg, z_sc, HEAD_INTRA_SC, layers)?;
        let l = info_nce(mg, p, p, pos_mask, cfg.tau_sc, None)?;
        out.intra_sc = mean_value(mg, l);
        let w = mg.tape.scale(l, cfg.lambda1)?;
        intra_acc = Some(w);
    }
    if cfg.lambda2 != 0.0 {
        let p = project(mg, z_mp, HEAD_INTRA_MP, layers)?;
        let l = info_nce(mg, p, p, pos_mask, cfg.tau_mp, None)?;
        out.intra_mp = mean_value(mg, l);
        let w = mg.tape.scale(l, cfg.lambda2)?;
        intra_acc = Some(match intra_acc {
            Some(acc) => mg.tape.add(acc, w)?,
            None => w,
        });
    }
    if let Some(acc) = intra_acc {
        let m = mg.tape.mean(acc)?;
        out.loss = mg.tape.add(out.loss, m)?;
    }
    Ok(())
}

/// Register the single-linear-layer classifier head for the semi-supervised
/// variant.
pub fn register_classifier(store: &mut ParamStore, d: usize, classes: usize, seed: u64) -> Result<()> {
    store.register_glorot("semi/w", d, classes, seed)?;
    store.register_zeros("semi/b", 1, classes)?;
    Ok(())
}

/// Mean cross-entropy of softmax(f(z_mp)) over the labeled node set.
pub fn semi_cross_entropy(
    mg: &mut ModelGraph,
    z_mp: TensorId,
    labels: &[usize],
    labeled: &[usize],
    classes: usize,
) -> Result<TensorId> {
    if labeled.is_empty() {
        return Err(HecoError::Contract(
            "semi-supervised objective needs a non-empty labeled set".into(),
        ));
    }
    let n = mg.tape.shape(z_mp).0;
    let w = mg.param("semi/w")?;
    let b = mg.param("semi/b")?;
    let lin = mg.tape.matmul(z_mp, w)?;
    let logits = mg.tape.add_row_broadcast(lin, b)?;

    // log-softmax via a constant per-row max shift (exact: softmax is
    // shift-invariant) followed by subtracting the log-sum-exp column.
    let vals = mg.tape.value(logits);
    let mut shift = Matrix::zeros(n, classes);
    for r in 0..n {
        let max = vals.row(r).iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        for c in 0..classes {
            shift.set(r, c, -max);
        }
    }
    let shift = mg.constant(shift)?;
    let shifted = mg.tape.add(logits, shift)?;
    let e = mg.tape.exp(shifted)?;
    let se = mg.tape.row_sum(e)?;
    let lse = mg.tape.log(se)?;
    let neg_lse = mg.tape.scale(lse, -1.0)?;
    let log_p = mg.tape.add_col_broadcast(shifted, neg_lse)?;

    let mut y = Matrix::zeros(n, classes);
    for &i in labeled {
        if i >= n {
            return Err(HecoError::Data(format!("labeled node {i} out of range")));
        }
        let c = labels
            .get(i)
            .copied()
            .ok_or_else(|| HecoError::Data(format!("node {i} has no label")))?;
        if c >= classes {
            return Err(HecoError::Data(format!(
                "label {c} of node {i} out of range for {classes} classes"
            )));
        }
        y.set(i, c, 1.0);
    }
    let y = mg.constant(y)?;
    let picked = mg.tape.mul(log_p, y)?;
    let total = mg.tape.sum(picked)?;
    mg.tape.scale(total, -1.0 / labeled.len() as f64)
}

/// J_semi = J + aleph * L_semi.
pub fn semi_objective(
    mg: &mut ModelGraph,
    z_sc: TensorId,
    z_mp: TensorId,
    pos_mask: &Matrix,
    cfg: &LossConfig,
    layers: usize,
    labels: &[usize],
    labeled: &[usize],
    classes: usize,
) -> Result<ObjectiveOutput> {
    let mut out = hecopp_objective(mg, z_sc, z_mp, pos_mask, cfg, layers)?;
    let l_semi = semi_cross_entropy(mg, z_mp, labels, labeled, classes)?;
    out.semi = mg.tape.value(l_semi).get(0, 0);
    let weighted = mg.tape.scale(l_semi, cfg.aleph)?;
    out.loss = mg.tape.add(out.loss, weighted)?;
    Ok(out)
}
