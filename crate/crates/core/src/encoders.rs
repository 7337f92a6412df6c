//! The two view-guided encoders.
//!
//! Network-schema view: each target node aggregates sampled one-hop neighbors
//! of every other node type with node-level attention, then fuses the
//! per-type embeddings with type-level attention. The target's own feature
//! enters attention *scores* only, never the aggregated values, which
//! realizes the view mask structurally.
//!
//! Meta-path view: a one-layer GCN per meta-path over the composed adjacency,
//! fused by semantic attention.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HecoError, Result};
use crate::hin::{Features, HeteroGraph, MetaPathAdjacency, SchemaSampleConfig, SchemaSamples};
use crate::model::ModelGraph;
use crate::tensor::{Matrix, SparseMatrix, TensorId};

/// Negative slope of the LeakyReLU used in attention scores.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Graph-derived constants shared by every epoch: schema neighbor types and
/// the normalized GCN adjacency per meta-path.
pub struct EncoderContext<'g> {
    pub graph: &'g HeteroGraph,
    pub dim: usize,
    pub schema_types: Vec<usize>,
    pub metapath_names: Vec<String>,
    gcn: Vec<Rc<SparseMatrix>>,
}

impl<'g> EncoderContext<'g> {
    pub fn new(graph: &'g HeteroGraph, adjacencies: &[MetaPathAdjacency], dim: usize) -> Result<Self> {
        let schema_types: Vec<usize> = graph.schema_neighbors().keys().copied().collect();
        let mut gcn = Vec::with_capacity(adjacencies.len());
        let mut metapath_names = Vec::with_capacity(adjacencies.len());
        for adj in adjacencies {
            gcn.push(Rc::new(normalized_adjacency(adj)?));
            metapath_names.push(adj.name.clone());
        }
        Ok(EncoderContext {
            graph,
            dim,
            schema_types,
            metapath_names,
            gcn,
        })
    }

    /// Register every encoder parameter. Weights are Glorot-initialized from
    /// per-name streams; biases start at zero.
    pub fn register_params(&self, store: &mut crate::model::ParamStore, seed: u64) -> Result<()> {
        let d = self.dim;
        let g = self.graph;
        for (t, name) in g.type_names.iter().enumerate() {
            store.register_glorot(&format!("transform/{name}/w"), g.features[t].dim(), d, seed)?;
            store.register_zeros(&format!("transform/{name}/b"), 1, d)?;
        }
        for &t in &self.schema_types {
            store.register_glorot(
                &format!("schema/node_attn/{}", g.type_names[t]),
                2 * d,
                1,
                seed,
            )?;
        }
        store.register_glorot("schema/type_attn/w", d, d, seed)?;
        store.register_zeros("schema/type_attn/b", 1, d)?;
        store.register_glorot("schema/type_attn/a", d, 1, seed)?;
        store.register_glorot("mp/sem_attn/w", d, d, seed)?;
        store.register_zeros("mp/sem_attn/b", 1, d)?;
        store.register_glorot("mp/sem_attn/a", d, 1, seed)?;
        Ok(())
    }

}

/// Per-type dropout mask for input features.
#[derive(Debug, Clone)]
pub enum FeatMask {
    /// Entrywise mask over a dense feature matrix.
    Dense(Matrix),
    /// Per-node mask column for implicit one-hot features.
    Col(Matrix),
}

/// Everything random about one epoch, drawn up front in a fixed order
/// (neighbor samples, then feature masks by type, then attention masks by
/// type) so a forward pass can be rebuilt bit-identically.
#[derive(Debug, Clone)]
pub struct EpochDraws {
    pub samples: SchemaSamples,
    pub feat_masks: BTreeMap<usize, FeatMask>,
    pub attn_masks: BTreeMap<usize, Matrix>,
}

/// Dropout sites and sampling thresholds for drawing an epoch.
#[derive(Debug, Clone)]
pub struct EncodeSettings {
    pub sample: SchemaSampleConfig,
    pub feat_drop: f64,
    pub attn_drop: f64,
}

impl EncodeSettings {
    pub fn eval() -> Self {
        EncodeSettings {
            sample: SchemaSampleConfig::all(),
            feat_drop: 0.0,
            attn_drop: 0.0,
        }
    }
}

fn dropout_mask(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

/// Draw one epoch's neighbor samples and dropout masks.
pub fn draw_epoch(
    ctx: &EncoderContext,
    settings: &EncodeSettings,
    rng: &mut ChaCha8Rng,
) -> Result<EpochDraws> {
    let samples = crate::hin::sample_schema_neighbors(ctx.graph, &settings.sample, rng)?;
    let mut feat_masks = BTreeMap::new();
    if settings.feat_drop > 0.0 {
        for (t, feats) in ctx.graph.features.iter().enumerate() {
            let mask = match feats {
                Features::Dense(m) => FeatMask::Dense(
                    Matrix::from_vec(
                        m.rows(),
                        m.cols(),
                        dropout_mask(m.len(), settings.feat_drop, rng),
                    )
                    .expect("sized"),
                ),
                Features::OneHot(n) => {
                    FeatMask::Col(Matrix::column(dropout_mask(*n, settings.feat_drop, rng)))
                }
            };
            feat_masks.insert(t, mask);
        }
    }
    let mut attn_masks = BTreeMap::new();
    if settings.attn_drop > 0.0 {
        for (&t, lists) in &samples {
            let flat: usize = lists.iter().map(|l| l.len()).sum();
            attn_masks.insert(
                t,
                Matrix::column(dropout_mask(flat, settings.attn_drop, rng)),
            );
        }
    }
    Ok(EpochDraws {
        samples,
        feat_masks,
        attn_masks,
    })
}

/// Evaluation-time draws: full neighbor lists, no dropout.
pub fn eval_draws(ctx: &EncoderContext) -> Result<EpochDraws> {
    let mut rng = crate::seeding::rng_for(0, "eval-draws-unused");
    draw_epoch(ctx, &EncodeSettings::eval(), &mut rng)
}

/// View embeddings for one forward pass, plus the attention weights used.
pub struct Views {
    pub z_sc: Option<TensorId>,
    pub z_mp: Option<TensorId>,
    /// (type name, beta) for the schema view, this pass.
    pub schema_betas: Vec<(String, f64)>,
    /// (meta-path name, beta) for the meta-path view, this pass.
    pub mp_betas: Vec<(String, f64)>,
}

/// Build both view encoders on the tape. `need_sc` / `need_mp` select which
/// views are constructed (single-view model variants skip the other).
pub fn encode(
    ctx: &EncoderContext,
    mg: &mut ModelGraph,
    draws: &EpochDraws,
    need_sc: bool,
    need_mp: bool,
) -> Result<Views> {
    let mut transformed: HashMap<usize, TensorId> = HashMap::new();
    let mut views = Views {
        z_sc: None,
        z_mp: None,
        schema_betas: Vec::new(),
        mp_betas: Vec::new(),
    };
    if need_sc {
        let (z, betas) = encode_schema(ctx, mg, draws, &mut transformed)?;
        views.z_sc = Some(z);
        views.schema_betas = betas;
    }
    if need_mp {
        let (z, betas) = encode_metapath(ctx, mg, draws, &mut transformed)?;
        views.z_mp = Some(z);
        views.mp_betas = betas;
    }
    Ok(views)
}

/// h_i = ELU(W_t x_i + b_t), with feature dropout applied to x first.
/// One-hot features skip the matmul: the relevant rows of W are used directly.
fn transform_type(
    ctx: &EncoderContext,
    mg: &mut ModelGraph,
    draws: &EpochDraws,
    cache: &mut HashMap<usize, TensorId>,
    type_idx: usize,
) -> Result<TensorId> {
    if let Some(&h) = cache.get(&type_idx) {
        return Ok(h);
    }
    let name = &ctx.graph.type_names[type_idx];
    let w = mg.param(&format!("transform/{name}/w"))?;
    let b = mg.param(&format!("transform/{name}/b"))?;
    let pre = match (&ctx.graph.features[type_idx], draws.feat_masks.get(&type_idx)) {
        (Features::Dense(x), mask) => {
            let x_in = match mask {
                Some(FeatMask::Dense(m)) => x.mul_elem(m)?,
                Some(FeatMask::Col(_)) => {
                    return Err(HecoError::Contract("column mask on dense features".into()))
                }
                None => x.clone(),
            };
            let xc = mg.constant(x_in)?;
            let prod = mg.tape.matmul(xc, w)?;
            mg.tape.add_row_broadcast(prod, b)?
        }
        (Features::OneHot(_), mask) => {
            let base = match mask {
                Some(FeatMask::Col(c)) => {
                    let cc = mg.constant(c.clone())?;
                    mg.tape.mul_col_broadcast(w, cc)?
                }
                Some(FeatMask::Dense(_)) => {
                    return Err(HecoError::Contract("dense mask on one-hot features".into()))
                }
                None => w,
            };
            mg.tape.add_row_broadcast(base, b)?
        }
    };
    let h = mg.tape.elu(pre)?;
    cache.insert(type_idx, h);
    Ok(h)
}

struct TypeAggregate {
    type_idx: usize,
    /// ELU-fused neighbor aggregate, one row per present target node.
    h: TensorId,
    /// Target node ids that have at least one sampled neighbor of this type.
    present: Vec<usize>,
}

fn encode_schema(
    ctx: &EncoderContext,
    mg: &mut ModelGraph,
    draws: &EpochDraws,
    transformed: &mut HashMap<usize, TensorId>,
) -> Result<(TensorId, Vec<(String, f64)>)> {
    if ctx.schema_types.is_empty() {
        return Err(HecoError::Contract(
            "network schema view needs at least one non-target neighbor type".into(),
        ));
    }
    let n_t = ctx.graph.num_targets();
    let d = ctx.dim;
    let h_target = transform_type(ctx, mg, draws, transformed, ctx.graph.target_type)?;

    let mut aggregates: Vec<TypeAggregate> = Vec::new();
    for &m in &ctx.schema_types {
        let lists = draws
            .samples
            .get(&m)
            .ok_or_else(|| HecoError::Contract("missing samples for schema type".into()))?;
        let mut present = Vec::new();
        let mut flat_src: Vec<usize> = Vec::new();
        let mut seg: Vec<usize> = Vec::new();
        let mut anchor_node: Vec<usize> = Vec::new();
        for (i, list) in lists.iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            let pos = present.len();
            present.push(i);
            for &j in list {
                flat_src.push(j as usize);
                seg.push(pos);
                anchor_node.push(i);
            }
        }
        if present.is_empty() {
            continue;
        }
        let h_nbr = transform_type(ctx, mg, draws, transformed, m)?;
        let a = mg.param(&format!("schema/node_attn/{}", ctx.graph.type_names[m]))?;
        let a_self = mg.tape.gather_rows(a, Rc::new((0..d).collect()))?;
        let a_nbr = mg.tape.gather_rows(a, Rc::new((d..2 * d).collect()))?;

        // Scores decompose as a_self . h_i + a_nbr . h_j: the anchor enters
        // weights only, never the aggregated values.
        let u = mg.tape.matmul(h_target, a_self)?;
        let v = mg.tape.matmul(h_nbr, a_nbr)?;
        let u_g = mg.tape.gather_rows(u, Rc::new(anchor_node))?;
        let v_g = mg.tape.gather_rows(v, Rc::new(flat_src.clone()))?;
        let raw = mg.tape.add(u_g, v_g)?;
        let scores = mg.tape.leaky_relu(raw, LEAKY_SLOPE)?;

        let alpha = segment_softmax(mg, scores, &seg, present.len())?;
        let alpha = match draws.attn_masks.get(&m) {
            Some(mask) => {
                let mc = mg.constant(mask.clone())?;
                mg.tape.mul(alpha, mc)?
            }
            None => alpha,
        };
        let nbr_rows = mg.tape.gather_rows(h_nbr, Rc::new(flat_src))?;
        let weighted = mg.tape.mul_col_broadcast(nbr_rows, alpha)?;
        let agg = mg.tape.scatter_add_rows(weighted, Rc::new(seg), present.len())?;
        let h = mg.tape.elu(agg)?;
        aggregates.push(TypeAggregate {
            type_idx: m,
            h,
            present,
        });
    }
    if aggregates.is_empty() {
        return Err(HecoError::Contract(
            "no target node has schema neighbors of any type".into(),
        ));
    }

    let (beta_row, betas) = attention_weights(
        ctx,
        mg,
        "schema/type_attn",
        &aggregates
            .iter()
            .map(|a| (ctx.graph.type_names[a.type_idx].clone(), a.h))
            .collect::<Vec<_>>(),
    )?;

    let full_coverage = aggregates.iter().all(|a| a.present.len() == n_t);
    let z = if full_coverage {
        let mut z: Option<TensorId> = None;
        for (idx, agg) in aggregates.iter().enumerate() {
            let beta = mg.tape.cell(beta_row, 0, idx)?;
            let term = mg.tape.mul_scalar(agg.h, beta)?;
            z = Some(match z {
                Some(acc) => mg.tape.add(acc, term)?,
                None => term,
            });
        }
        z.expect("non-empty aggregates")
    } else {
        // Some nodes miss some types: renormalize beta over the types present
        // per node. Fully isolated nodes keep a zero embedding (denominator 1).
        let mut num: Option<TensorId> = None;
        let mut den: Option<TensorId> = None;
        let mut covered = vec![false; n_t];
        for (idx, agg) in aggregates.iter().enumerate() {
            let beta = mg.tape.cell(beta_row, 0, idx)?;
            let scattered =
                mg.tape
                    .scatter_add_rows(agg.h, Rc::new(agg.present.clone()), n_t)?;
            let term = mg.tape.mul_scalar(scattered, beta)?;
            num = Some(match num {
                Some(acc) => mg.tape.add(acc, term)?,
                None => term,
            });
            let mut indicator = Matrix::zeros(n_t, 1);
            for &i in &agg.present {
                indicator.set(i, 0, 1.0);
                covered[i] = true;
            }
            let ind = mg.constant(indicator)?;
            let dterm = mg.tape.mul_scalar(ind, beta)?;
            den = Some(match den {
                Some(acc) => mg.tape.add(acc, dterm)?,
                None => dterm,
            });
        }
        let base = Matrix::column(
            covered
                .iter()
                .map(|&c| if c { 0.0 } else { 1.0 })
                .collect(),
        );
        let base = mg.constant(base)?;
        let den = mg.tape.add(den.expect("non-empty"), base)?;
        let inv = mg.tape.recip(den)?;
        mg.tape.mul_col_broadcast(num.expect("non-empty"), inv)?
    };
    Ok((z, betas))
}

fn encode_metapath(
    ctx: &EncoderContext,
    mg: &mut ModelGraph,
    draws: &EpochDraws,
    transformed: &mut HashMap<usize, TensorId>,
) -> Result<(TensorId, Vec<(String, f64)>)> {
    if ctx.gcn.is_empty() {
        return Err(HecoError::Contract("meta-path view needs >= 1 meta-path".into()));
    }
    let h_target = transform_type(ctx, mg, draws, transformed, ctx.graph.target_type)?;
    let mut per_path = Vec::with_capacity(ctx.gcn.len());
    for (sp, name) in ctx.gcn.iter().zip(&ctx.metapath_names) {
        let h = mg.tape.sparse_matmul(Rc::clone(sp), h_target)?;
        per_path.push((name.clone(), h));
    }
    let (beta_row, betas) = attention_weights(ctx, mg, "mp/sem_attn", &per_path)?;
    let mut z: Option<TensorId> = None;
    for (idx, (_, h)) in per_path.iter().enumerate() {
        let beta = mg.tape.cell(beta_row, 0, idx)?;
        let term = mg.tape.mul_scalar(*h, beta)?;
        z = Some(match z {
            Some(acc) => mg.tape.add(acc, term)?,
            None => term,
        });
    }
    Ok((z.expect("non-empty"), betas))
}

/// Shared form of type-level and semantic attention: per candidate embedding
/// matrix H, w = mean_i a . tanh(W h_i + b); beta = softmax(w).
fn attention_weights(
    _ctx: &EncoderContext,
    mg: &mut ModelGraph,
    prefix: &str,
    candidates: &[(String, TensorId)],
) -> Result<(TensorId, Vec<(String, f64)>)> {
    let w = mg.param(&format!("{prefix}/w"))?;
    let b = mg.param(&format!("{prefix}/b"))?;
    let a = mg.param(&format!("{prefix}/a"))?;
    let mut cells = Vec::with_capacity(candidates.len());
    for (_, h) in candidates {
        let proj = mg.tape.matmul(*h, w)?;
        let proj = mg.tape.add_row_broadcast(proj, b)?;
        let act = mg.tape.tanh(proj)?;
        let scored = mg.tape.matmul(act, a)?;
        cells.push(mg.tape.mean(scored)?);
    }
    let mut row = cells[0];
    for &c in &cells[1..] {
        row = mg.tape.concat_cols(row, c)?;
    }
    let beta_row = mg.tape.row_softmax(row)?;
    let betas = candidates
        .iter()
        .enumerate()
        .map(|(i, (name, _))| (name.clone(), mg.tape.value(beta_row).get(0, i)))
        .collect();
    Ok((beta_row, betas))
}

/// Softmax over variable-length row segments. The per-segment max is
/// subtracted as a constant shift; softmax is shift-invariant so both the
/// value and the gradient are exact.
fn segment_softmax(
    mg: &mut ModelGraph,
    scores: TensorId,
    seg: &[usize],
    num_segments: usize,
) -> Result<TensorId> {
    let vals = mg.tape.value(scores);
    let mut max_per_seg = vec![f64::NEG_INFINITY; num_segments];
    for (r, &s) in seg.iter().enumerate() {
        max_per_seg[s] = max_per_seg[s].max(vals.get(r, 0));
    }
    let shift = Matrix::column(seg.iter().map(|&s| -max_per_seg[s]).collect());
    let shift = mg.constant(shift)?;
    let shifted = mg.tape.add(scores, shift)?;
    let e = mg.tape.exp(shifted)?;
    let seg_rc = Rc::new(seg.to_vec());
    let denom = mg.tape.scatter_add_rows(e, Rc::clone(&seg_rc), num_segments)?;
    let denom_g = mg.tape.gather_rows(denom, seg_rc)?;
    let inv = mg.tape.recip(denom_g)?;
    mg.tape.mul(e, inv)
}

/// Dense normalized adjacency of Eq. h_i = h_i/(d_i+1) + sum_j h_j/sqrt((d_i+1)(d_j+1)),
/// stored sparse.
fn normalized_adjacency(adj: &MetaPathAdjacency) -> Result<SparseMatrix> {
    let n = adj.neighbors.len();
    let mut triplets = Vec::new();
    for i in 0..n {
        let di = adj.degrees[i] as f64;
        triplets.push((i, i, 1.0 / (di + 1.0)));
        for &j in &adj.neighbors[i] {
            let dj = adj.degrees[j as usize] as f64;
            triplets.push((i, j as usize, 1.0 / ((di + 1.0) * (dj + 1.0)).sqrt()));
        }
    }
    SparseMatrix::from_triplets(n, n, &triplets)
}
