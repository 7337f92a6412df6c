//! Hard-negative augmentation.
//!
//! MixUp-style: mix the top-k hardest negatives of each anchor (highest
//! cosine similarity in the projected contrast space) into k synthetic
//! negatives appended to that anchor's InfoNCE denominator. No learnable
//! parameters.
//!
//! GAN-based: a bilinear discriminator scores candidates against an anchor's
//! other-view embedding, a generator draws Gaussian samples centered on a
//! projected anchor and refines them with a one-layer MLP. D and G train in
//! alternating freeze phases; the trained G then supplies per-anchor fake
//! negatives for further contrastive training.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrast::ExtraNegatives;
use crate::error::{HecoError, Result};
use crate::hin::PosNegSets;
use crate::model::{ModelGraph, ParamStore, Trainable};
use crate::tensor::{AdamState, Matrix, TensorId};

// ---------------------------------------------------------------------------
// MixUp
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct MixupConfig {
    /// Number of hardest negatives mined per anchor; also the number of
    /// synthetic negatives created.
    pub k: usize,
}

/// The random choices behind one epoch's mixtures, kept for testability:
/// `mixture[r] = alphas[r] * candidates[u_idx[r]] + (1 - alphas[r]) * candidates[v_idx[r]]`.
#[derive(Debug, Clone)]
pub struct MixupDraw {
    pub anchor_of: Vec<usize>,
    pub u_idx: Vec<usize>,
    pub v_idx: Vec<usize>,
    pub alphas: Vec<f64>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Rank each anchor's negatives by cosine similarity (computed on current
/// values, outside the tape) and draw the mixture pairs.
pub fn select_mixup(
    anchors: &Matrix,
    candidates: &Matrix,
    sets: &PosNegSets,
    cfg: MixupConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MixupDraw> {
    if cfg.k < 1 {
        return Err(HecoError::Config("mixup k must be >= 1".into()));
    }
    let n = sets.num_targets;
    let mut draw = MixupDraw {
        anchor_of: Vec::with_capacity(n * cfg.k),
        u_idx: Vec::with_capacity(n * cfg.k),
        v_idx: Vec::with_capacity(n * cfg.k),
        alphas: Vec::with_capacity(n * cfg.k),
    };
    for i in 0..n {
        let negs = sets.negatives(i);
        if cfg.k > negs.len() {
            return Err(HecoError::Config(format!(
                "mixup k = {} exceeds |N_{}| = {}",
                cfg.k,
                i,
                negs.len()
            )));
        }
        let mut ranked: Vec<(f64, u32)> = negs
            .iter()
            .map(|&j| (cosine(anchors.row(i), candidates.row(j as usize)), j))
            .collect();
        // Hardest first; ties broken by ascending id for determinism.
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let top: Vec<usize> = ranked[..cfg.k].iter().map(|&(_, j)| j as usize).collect();
        for _ in 0..cfg.k {
            let (u, v) = if cfg.k == 1 {
                // A single hardest negative cannot be mixed with a distinct
                // partner; duplicate it.
                (top[0], top[0])
            } else {
                let u = rng.gen_range(0..cfg.k);
                let mut v = rng.gen_range(0..cfg.k - 1);
                if v >= u {
                    v += 1;
                }
                (top[u], top[v])
            };
            draw.anchor_of.push(i);
            draw.u_idx.push(u);
            draw.v_idx.push(v);
            draw.alphas.push(rng.gen::<f64>());
        }
    }
    Ok(draw)
}

/// Materialize the mixtures on the tape (gradients flow into the mixed
/// candidate rows).
pub fn build_mixup_negatives(
    mg: &mut ModelGraph,
    candidates: TensorId,
    draw: &MixupDraw,
) -> Result<ExtraNegatives> {
    let gu = mg.tape.gather_rows(candidates, Rc::new(draw.u_idx.clone()))?;
    let gv = mg.tape.gather_rows(candidates, Rc::new(draw.v_idx.clone()))?;
    let au = mg.constant(Matrix::column(draw.alphas.clone()))?;
    let av = mg.constant(Matrix::column(draw.alphas.iter().map(|a| 1.0 - a).collect()))?;
    let wu = mg.tape.mul_col_broadcast(gu, au)?;
    let wv = mg.tape.mul_col_broadcast(gv, av)?;
    let mixed = mg.tape.add(wu, wv)?;
    Ok(ExtraNegatives {
        anchor_of: draw.anchor_of.clone(),
        embeddings: mixed,
    })
}

/// Mine and mix in one call: top-k selection on current values, mixtures on
/// the tape. Returns the draw for inspection.
pub fn mixup_hard_negatives(
    mg: &mut ModelGraph,
    anchors: TensorId,
    candidates: TensorId,
    sets: &PosNegSets,
    cfg: MixupConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(ExtraNegatives, MixupDraw)> {
    let a_vals = mg.tape.value(anchors).clone();
    let c_vals = mg.tape.value(candidates).clone();
    let draw = select_mixup(&a_vals, &c_vals, sets, cfg, rng)?;
    let extras = build_mixup_negatives(mg, candidates, &draw)?;
    Ok((extras, draw))
}

// ---------------------------------------------------------------------------
// GAN
// ---------------------------------------------------------------------------

pub const GAN_DISC_SC: &str = "gan/disc/m_sc";
pub const GAN_DISC_MP: &str = "gan/disc/m_mp";
pub const GAN_GEN_SC: &str = "gan/gen/m_sc";
pub const GAN_GEN_MP: &str = "gan/gen/m_mp";
pub const GAN_GEN_W: &str = "gan/gen/w";
pub const GAN_GEN_B: &str = "gan/gen/b";

/// Phase lengths and generator noise of the alternating schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GanScheduleConfig {
    /// Warm-up epochs of plain contrastive training before any GAN phase.
    pub k0: usize,
    /// Epochs per discriminator phase.
    pub k_d: usize,
    /// Epochs per generator phase.
    pub k_g: usize,
    /// D/G alternations per outer round.
    pub i_dg: usize,
    /// Contrastive epochs with augmented negatives per outer round.
    pub k_h: usize,
    /// Generator noise covariance scale (sigma^2 I).
    pub sigma2: f64,
    /// Cap on |p_i|, the positives subset per anchor (and the fake count).
    pub fake_cap: usize,
    /// Outer rounds stop after this many rounds without loss improvement.
    pub outer_patience: usize,
    /// Hard cap on outer rounds.
    pub max_rounds: usize,
    /// Learning rate for D and G phases.
    pub lr: f64,
}

impl Default for GanScheduleConfig {
    fn default() -> Self {
        GanScheduleConfig {
            k0: 50,
            k_d: 20,
            k_g: 20,
            i_dg: 2,
            k_h: 50,
            sigma2: 0.01,
            fake_cap: 4,
            outer_patience: 1,
            max_rounds: 2,
            lr: 1e-3,
        }
    }
}

impl GanScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("K_0", self.k0),
            ("K_D", self.k_d),
            ("K_G", self.k_g),
            ("K_H", self.k_h),
        ] {
            if v < 1 {
                return Err(HecoError::Config(format!("GAN schedule {name} must be >= 1")));
            }
        }
        if self.sigma2 <= 0.0 {
            return Err(HecoError::Config("GAN sigma^2 must be > 0".into()));
        }
        if self.fake_cap < 1 {
            return Err(HecoError::Config("GAN fake cap must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn register_gan_params(store: &mut ParamStore, d: usize, seed: u64) -> Result<()> {
    store.register_glorot(GAN_DISC_SC, d, d, seed)?;
    store.register_glorot(GAN_DISC_MP, d, d, seed)?;
    store.register_glorot(GAN_GEN_SC, d, d, seed)?;
    store.register_glorot(GAN_GEN_MP, d, d, seed)?;
    store.register_glorot(GAN_GEN_W, d, d, seed)?;
    store.register_zeros(GAN_GEN_B, 1, d)?;
    Ok(())
}

pub fn disc_param_names() -> [&'static str; 2] {
    [GAN_DISC_SC, GAN_DISC_MP]
}

pub fn gen_param_names() -> [&'static str; 4] {
    [GAN_GEN_SC, GAN_GEN_MP, GAN_GEN_W, GAN_GEN_B]
}

/// D(candidate | anchor) = sigmoid(anchor^T M candidate).
pub fn discriminator_score(z_anchor: &Matrix, z_candidate: &Matrix, m: &Matrix) -> Result<f64> {
    let proj = z_anchor.matmul(m)?;
    let s: f64 = proj
        .as_slice()
        .iter()
        .zip(z_candidate.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    Ok(sigmoid(s))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard normal via Box-Muller, deterministic under the stream.
fn normal_draw(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// e ~ Normal(center, sigma^2 I), drawn row-major.
pub fn gaussian_sample(center: &Matrix, sigma2: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let sd = sigma2.sqrt();
    let data = center
        .as_slice()
        .iter()
        .map(|&c| c + sd * normal_draw(rng))
        .collect();
    Matrix::from_vec(center.rows(), center.cols(), data).expect("sized")
}

fn elu_matrix(m: &Matrix) -> Matrix {
    m.map(|x| if x > 0.0 { x } else { x.exp() - 1.0 })
}

/// Fake embeddings for a batch of anchors (value level, generator frozen):
/// fake = ELU(W (anchor M_g + sigma xi) + b).
pub fn generate_fakes(
    anchors: &Matrix,
    m_g: &Matrix,
    w: &Matrix,
    b: &Matrix,
    sigma2: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Matrix> {
    let center = anchors.matmul(m_g)?;
    let e = gaussian_sample(&center, sigma2, rng);
    let mut lin = e.matmul(w)?;
    for r in 0..lin.rows() {
        let row = lin.row_mut(r);
        for (c, x) in row.iter_mut().enumerate() {
            *x += b.get(0, c);
        }
    }
    Ok(elu_matrix(&lin))
}

/// One epoch's anchor batch: anchors with a non-empty positive-peer subset
/// p_i (chosen randomly, |p_i| = min(|P_i| - 1, cap)).
#[derive(Debug, Clone)]
pub struct GanBatch {
    /// Anchor node ids in the batch.
    pub anchors: Vec<usize>,
    /// Flattened pair structure: `anchor_rep[r]` is a node id, `seg[r]` its
    /// position in `anchors`, `real_idx[r]` the sampled positive peer.
    pub anchor_rep: Vec<usize>,
    pub seg: Vec<usize>,
    pub real_idx: Vec<usize>,
    /// |p_i| per batch anchor.
    pub counts: Vec<usize>,
}

pub fn draw_gan_batch(sets: &PosNegSets, cap: usize, rng: &mut ChaCha8Rng) -> GanBatch {
    let mut batch = GanBatch {
        anchors: Vec::new(),
        anchor_rep: Vec::new(),
        seg: Vec::new(),
        real_idx: Vec::new(),
        counts: Vec::new(),
    };
    for i in 0..sets.num_targets {
        let mut peers = sets.positive_peers(i);
        if peers.is_empty() {
            continue;
        }
        let take = peers.len().min(cap);
        for k in 0..take {
            let j = rng.gen_range(k..peers.len());
            peers.swap(k, j);
        }
        let pos = batch.anchors.len();
        batch.anchors.push(i);
        batch.counts.push(take);
        for &j in &peers[..take] {
            batch.anchor_rep.push(i);
            batch.seg.push(pos);
            batch.real_idx.push(j as usize);
        }
    }
    batch
}

/// Pairwise bilinear scores s_r = anchor_r^T M cand_r for aligned row lists.
fn pair_scores(
    mg: &mut ModelGraph,
    anchor_matrix: TensorId,
    anchor_rep: &[usize],
    m: TensorId,
    cand_rows: TensorId,
) -> Result<TensorId> {
    let a = mg.tape.gather_rows(anchor_matrix, Rc::new(anchor_rep.to_vec()))?;
    let am = mg.tape.matmul(a, m)?;
    let prod = mg.tape.mul(am, cand_rows)?;
    mg.tape.row_sum(prod)
}

/// Per-anchor mean of per-pair values: scatter-add then divide by counts.
fn per_anchor_mean(
    mg: &mut ModelGraph,
    per_pair: TensorId,
    seg: &[usize],
    counts: &[usize],
) -> Result<TensorId> {
    let sums = mg
        .tape
        .scatter_add_rows(per_pair, Rc::new(seg.to_vec()), counts.len())?;
    let inv = mg.constant(Matrix::column(counts.iter().map(|&c| 1.0 / c as f64).collect()))?;
    mg.tape.mul(sums, inv)
}

/// Telemetry of one D or G epoch.
#[derive(Debug, Clone, Copy)]
pub struct GanEpoch {
    pub loss: f64,
    /// Mean D(fake) across both view directions (G epochs; D epochs report
    /// it on the fakes used for training).
    pub d_fake_mean: f64,
}

/// One discriminator epoch: G frozen (fakes are generated at value level),
/// minimize L_D = mean_i 1/2 (L_i^sc + L_i^mp) where each direction scores
/// real positives against generated fakes. Returns the loss before the step.
pub fn gan_train_d_epoch(
    store: &mut ParamStore,
    adam: &mut AdamState,
    z_sc: &Matrix,
    z_mp: &Matrix,
    batch: &GanBatch,
    sigma2: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GanEpoch> {
    if batch.anchors.is_empty() {
        return Err(HecoError::Contract("GAN batch is empty".into()));
    }
    // Fakes from the frozen generator, one per (anchor, peer) slot.
    let anchor_sc = gather_value_rows(z_sc, &batch.anchor_rep);
    let anchor_mp = gather_value_rows(z_mp, &batch.anchor_rep);
    let fakes_mp = generate_fakes(
        &anchor_sc,
        store.value_by_name(GAN_GEN_MP)?,
        store.value_by_name(GAN_GEN_W)?,
        store.value_by_name(GAN_GEN_B)?,
        sigma2,
        rng,
    )?;
    let fakes_sc = generate_fakes(
        &anchor_mp,
        store.value_by_name(GAN_GEN_SC)?,
        store.value_by_name(GAN_GEN_W)?,
        store.value_by_name(GAN_GEN_B)?,
        sigma2,
        rng,
    )?;

    let trainable = Trainable::subset(store, disc_param_names())?;
    let mut mg = ModelGraph::new(store, trainable);
    let zsc_t = mg.constant(z_sc.clone())?;
    let zmp_t = mg.constant(z_mp.clone())?;

    let build_direction = |mg: &mut ModelGraph,
                           anchor_matrix: TensorId,
                           cand_matrix: TensorId,
                               m_name: &str,
                               fakes: &Matrix|
     -> Result<(TensorId, f64)> {
        let m = mg.param(m_name)?;
        let reals = mg.tape.gather_rows(cand_matrix, Rc::new(batch.real_idx.clone()))?;
        let s_real = pair_scores(mg, anchor_matrix, &batch.anchor_rep, m, reals)?;
        let fk = mg.constant(fakes.clone())?;
        let s_fake = pair_scores(mg, anchor_matrix, &batch.anchor_rep, m, fk)?;
        // -log D(real) = softplus(-s); -log(1 - D(fake)) = softplus(s).
        let neg = mg.tape.scale(s_real, -1.0)?;
        let l_real = mg.tape.softplus(neg)?;
        let l_fake = mg.tape.softplus(s_fake)?;
        let mr = per_anchor_mean(mg, l_real, &batch.seg, &batch.counts)?;
        let mf = per_anchor_mean(mg, l_fake, &batch.seg, &batch.counts)?;
        let sum = mg.tape.add(mr, mf)?;
        let d_fake: f64 = {
            let sv = mg.tape.value(s_fake);
            sv.as_slice().iter().map(|&s| sigmoid(s)).sum::<f64>() / sv.len() as f64
        };
        Ok((sum, d_fake))
    };

    let (l_sc, df1) = build_direction(&mut mg, zsc_t, zmp_t, GAN_DISC_MP, &fakes_mp)?;
    let (l_mp, df2) = build_direction(&mut mg, zmp_t, zsc_t, GAN_DISC_SC, &fakes_sc)?;
    let total = mg.tape.add(l_sc, l_mp)?;
    let half = mg.tape.scale(total, 0.5)?;
    let loss = mg.tape.mean(half)?;
    let loss_value = mg.tape.value(loss).get(0, 0);
    let grads = mg.backward(loss)?;
    drop(mg);
    grads.apply_adam(store, adam)?;
    Ok(GanEpoch {
        loss: loss_value,
        d_fake_mean: 0.5 * (df1 + df2),
    })
}

/// One generator epoch: D frozen, minimize
/// L_G = mean_i 1/2 (L_i^sc + L_i^mp), L_i^dir = -E_fake log D(fake | anchor).
pub fn gan_train_g_epoch(
    store: &mut ParamStore,
    adam: &mut AdamState,
    z_sc: &Matrix,
    z_mp: &Matrix,
    batch: &GanBatch,
    sigma2: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GanEpoch> {
    if batch.anchors.is_empty() {
        return Err(HecoError::Contract("GAN batch is empty".into()));
    }
    // Reparametrized noise drawn up front (sc direction first, then mp).
    let pairs = batch.anchor_rep.len();
    let d = z_sc.cols();
    let sd = sigma2.sqrt();
    let noise = |rng: &mut ChaCha8Rng| {
        Matrix::from_vec(
            pairs,
            d,
            (0..pairs * d).map(|_| sd * normal_draw(rng)).collect(),
        )
        .expect("sized")
    };
    let noise_mp = noise(rng);
    let noise_sc = noise(rng);

    let trainable = Trainable::subset(store, gen_param_names())?;
    let mut mg = ModelGraph::new(store, trainable);
    let zsc_t = mg.constant(z_sc.clone())?;
    let zmp_t = mg.constant(z_mp.clone())?;

    let build_direction = |mg: &mut ModelGraph,
                               anchor_matrix: TensorId,
                               m_g_name: &str,
                               m_d_name: &str,
                               xi: &Matrix|
     -> Result<(TensorId, f64)> {
        let m_g = mg.param(m_g_name)?;
        let w = mg.param(GAN_GEN_W)?;
        let b = mg.param(GAN_GEN_B)?;
        let anchors = mg
            .tape
            .gather_rows(anchor_matrix, Rc::new(batch.anchor_rep.clone()))?;
        let center = mg.tape.matmul(anchors, m_g)?;
        let xi_c = mg.constant(xi.clone())?;
        let e = mg.tape.add(center, xi_c)?;
        let lin = mg.tape.matmul(e, w)?;
        let lin = mg.tape.add_row_broadcast(lin, b)?;
        let fake = mg.tape.elu(lin)?;
        let m_d = mg.param(m_d_name)?;
        let am = mg.tape.matmul(anchors, m_d)?;
        let prod = mg.tape.mul(am, fake)?;
        let s = mg.tape.row_sum(prod)?;
        let neg = mg.tape.scale(s, -1.0)?;
        let l = mg.tape.softplus(neg)?;
        let per_anchor = per_anchor_mean(mg, l, &batch.seg, &batch.counts)?;
        let d_fake: f64 = {
            let sv = mg.tape.value(s);
            sv.as_slice().iter().map(|&v| sigmoid(v)).sum::<f64>() / sv.len() as f64
        };
        Ok((per_anchor, d_fake))
    };

    let (l_sc, df1) = build_direction(&mut mg, zsc_t, GAN_GEN_MP, GAN_DISC_MP, &noise_mp)?;
    let (l_mp, df2) = build_direction(&mut mg, zmp_t, GAN_GEN_SC, GAN_DISC_SC, &noise_sc)?;
    let total = mg.tape.add(l_sc, l_mp)?;
    let half = mg.tape.scale(total, 0.5)?;
    let loss = mg.tape.mean(half)?;
    let loss_value = mg.tape.value(loss).get(0, 0);
    let grads = mg.backward(loss)?;
    drop(mg);
    grads.apply_adam(store, adam)?;
    Ok(GanEpoch {
        loss: loss_value,
        d_fake_mean: 0.5 * (df1 + df2),
    })
}

/// Trained-generator fakes appended to each anchor's negatives for the
/// augmented contrastive phase: fakes for the sc-anchored direction live in
/// meta-path space, and vice versa.
#[derive(Debug, Clone)]
pub struct FakeNegatives {
    pub anchor_of: Vec<usize>,
    pub fakes_mp: Matrix,
    pub fakes_sc: Matrix,
}

pub fn generate_phase3_fakes(
    store: &ParamStore,
    z_sc: &Matrix,
    z_mp: &Matrix,
    sets: &PosNegSets,
    cap: usize,
    sigma2: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FakeNegatives> {
    let mut anchor_of = Vec::new();
    for i in 0..sets.num_targets {
        let peers = sets.positive_peers(i).len();
        for _ in 0..peers.min(cap) {
            anchor_of.push(i);
        }
    }
    let anchors_sc = gather_value_rows(z_sc, &anchor_of);
    let anchors_mp = gather_value_rows(z_mp, &anchor_of);
    let fakes_mp = generate_fakes(
        &anchors_sc,
        store.value_by_name(GAN_GEN_MP)?,
        store.value_by_name(GAN_GEN_W)?,
        store.value_by_name(GAN_GEN_B)?,
        sigma2,
        rng,
    )?;
    let fakes_sc = generate_fakes(
        &anchors_mp,
        store.value_by_name(GAN_GEN_SC)?,
        store.value_by_name(GAN_GEN_W)?,
        store.value_by_name(GAN_GEN_B)?,
        sigma2,
        rng,
    )?;
    Ok(FakeNegatives {
        anchor_of,
        fakes_mp,
        fakes_sc,
    })
}

fn gather_value_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), m.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(i));
    }
    out
}
