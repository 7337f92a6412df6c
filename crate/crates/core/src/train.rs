//! Training orchestration: the per-epoch pipeline for every model variant,
//! loss/attention logging, early stopping, and the alternating GAN schedule.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::contrast::{
    self, cross_losses, info_nce, project, project_cross, register_classifier, register_head,
    ExtraNegatives, ObjectiveOutput, HEAD_CROSS, HEAD_INTRA_MP, HEAD_INTRA_SC,
};
use crate::encoders::{self, draw_epoch, encode, EncodeSettings, EncoderContext};
use crate::error::{HecoError, Result};
use crate::hin::{build_positive_negative_sets, compose_metapath_adjacency, MetaPathAdjacency, PosNegSets};
use crate::io::bundle::LoadedDataset;
use crate::io::config::{RunConfig, Variant};
use crate::model::{ModelGraph, ParamStore, Trainable};
use crate::negatives::{
    self, draw_gan_batch, gan_train_d_epoch, gan_train_g_epoch, generate_phase3_fakes,
    mixup_hard_negatives, FakeNegatives, MixupConfig,
};
use crate::seeding::{epoch_rng, rng_for};
use crate::tensor::{AdamConfig, AdamState, Matrix};

/// Everything derived once from (dataset, config) and reused every epoch.
pub struct TrainContext<'g> {
    pub data: &'g LoadedDataset,
    pub adjacencies: Vec<MetaPathAdjacency>,
    pub sets: PosNegSets,
    pub pos_mask: Matrix,
    pub encoder: EncoderContext<'g>,
    pub settings: EncodeSettings,
}

impl<'g> TrainContext<'g> {
    pub fn new(data: &'g LoadedDataset, cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let adjacencies = data
            .meta_paths
            .iter()
            .map(|p| compose_metapath_adjacency(&data.graph, p))
            .collect::<Result<Vec<_>>>()?;
        let sets = build_positive_negative_sets(&adjacencies, cfg.t_pos)?;
        let pos_mask = sets.positive_mask();
        let encoder = EncoderContext::new(&data.graph, &adjacencies, cfg.dim)?;
        let settings = EncodeSettings {
            sample: cfg.schema_sample_config(&data.graph)?,
            feat_drop: cfg.feat_drop,
            attn_drop: cfg.attn_drop,
        };
        Ok(TrainContext {
            data,
            adjacencies,
            sets,
            pos_mask,
            encoder,
            settings,
        })
    }

    fn classes(&self) -> usize {
        self.data
            .graph
            .labels
            .as_ref()
            .map(|l| l.iter().max().map_or(0, |&m| m + 1))
            .unwrap_or(0)
    }
}

/// Register every parameter the variant needs.
pub fn register_model_params(ctx: &TrainContext, store: &mut ParamStore, cfg: &RunConfig) -> Result<()> {
    ctx.encoder.register_params(store, cfg.seed)?;
    register_head(store, HEAD_CROSS, cfg.dim, cfg.projection_layers, cfg.seed)?;
    match cfg.variant {
        Variant::Hecopp | Variant::HecoppSemi => {
            register_head(store, HEAD_INTRA_SC, cfg.dim, cfg.projection_layers, cfg.seed)?;
            register_head(store, HEAD_INTRA_MP, cfg.dim, cfg.projection_layers, cfg.seed)?;
        }
        _ => {}
    }
    if cfg.variant == Variant::HecoppSemi {
        let classes = ctx.classes();
        if classes == 0 {
            return Err(HecoError::Data(
                "semi-supervised training needs a labeled dataset".into(),
            ));
        }
        register_classifier(store, cfg.dim, classes, cfg.seed)?;
    }
    if cfg.variant == Variant::HecoGan {
        negatives::register_gan_params(store, cfg.dim, cfg.seed)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub cross_sc: f64,
    pub cross_mp: f64,
    pub intra_sc: f64,
    pub intra_mp: f64,
    pub semi: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnRecord {
    pub epoch: usize,
    pub level: String,
    pub name: String,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanRecord {
    pub phase: String,
    pub epoch: usize,
    pub l_d: Option<f64>,
    pub l_g: Option<f64>,
    pub d_fake_mean: Option<f64>,
    pub l_heco: Option<f64>,
}

pub struct TrainOutput {
    /// Parameters at the best observed loss (final parameters for the GAN
    /// schedule).
    pub store: ParamStore,
    pub history: Vec<EpochRecord>,
    pub attention: Vec<AttnRecord>,
    pub gan_telemetry: Vec<GanRecord>,
    pub epochs_run: usize,
}

fn objective_for_variant(
    ctx: &TrainContext,
    mg: &mut ModelGraph,
    cfg: &RunConfig,
    views: &encoders::Views,
    epoch_stream: &mut rand_chacha::ChaCha8Rng,
    fakes: Option<&FakeNegatives>,
) -> Result<ObjectiveOutput> {
    let loss_cfg = cfg.loss_config();
    match cfg.variant {
        Variant::Heco => contrast::heco_objective(
            mg,
            views.z_sc.expect("sc view"),
            views.z_mp.expect("mp view"),
            &ctx.pos_mask,
            &loss_cfg,
            cfg.projection_layers,
        ),
        Variant::Hecopp => contrast::hecopp_objective(
            mg,
            views.z_sc.expect("sc view"),
            views.z_mp.expect("mp view"),
            &ctx.pos_mask,
            &loss_cfg,
            cfg.projection_layers,
        ),
        Variant::HecoppSemi => {
            let labels = ctx
                .data
                .graph
                .labels
                .as_ref()
                .ok_or_else(|| HecoError::Data("semi variant needs labels".into()))?;
            let split = ctx.data.splits.get(&cfg.semi_label_rate).ok_or_else(|| {
                HecoError::Data(format!(
                    "semi variant needs the splits_{} file",
                    cfg.semi_label_rate
                ))
            })?;
            contrast::semi_objective(
                mg,
                views.z_sc.expect("sc view"),
                views.z_mp.expect("mp view"),
                &ctx.pos_mask,
                &loss_cfg,
                cfg.projection_layers,
                labels,
                &split.train,
                ctx.classes(),
            )
        }
        Variant::HecoSc | Variant::HecoMp => {
            let (z, is_sc) = match cfg.variant {
                Variant::HecoSc => (views.z_sc.expect("sc view"), true),
                _ => (views.z_mp.expect("mp view"), false),
            };
            let p = project(mg, z, HEAD_CROSS, cfg.projection_layers)?;
            let l = info_nce(mg, p, p, &ctx.pos_mask, loss_cfg.tau, None)?;
            let loss = mg.tape.mean(l)?;
            let value = mg.tape.value(loss).get(0, 0);
            Ok(ObjectiveOutput {
                loss,
                cross_sc: if is_sc { value } else { 0.0 },
                cross_mp: if is_sc { 0.0 } else { value },
                intra_sc: 0.0,
                intra_mp: 0.0,
                semi: 0.0,
            })
        }
        Variant::HecoMu => {
            let proj = project_cross(
                mg,
                views.z_sc.expect("sc view"),
                views.z_mp.expect("mp view"),
                cfg.projection_layers,
            )?;
            let mixup = MixupConfig { k: cfg.mixup_k };
            let (extra_sc, _) =
                mixup_hard_negatives(mg, proj.sc, proj.mp, &ctx.sets, mixup, epoch_stream)?;
            let (extra_mp, _) =
                mixup_hard_negatives(mg, proj.mp, proj.sc, &ctx.sets, mixup, epoch_stream)?;
            let (l_sc, l_mp) = cross_losses(
                mg,
                &proj,
                &ctx.pos_mask,
                loss_cfg.tau,
                Some(&extra_sc),
                Some(&extra_mp),
            )?;
            combine(mg, l_sc, l_mp, loss_cfg.lambda)
        }
        Variant::HecoGan => {
            let proj = project_cross(
                mg,
                views.z_sc.expect("sc view"),
                views.z_mp.expect("mp view"),
                cfg.projection_layers,
            )?;
            let (extra_sc, extra_mp) = match fakes {
                Some(f) => {
                    // Fakes are raw view-space vectors; push them through the
                    // shared head so they live in the contrast space.
                    let fm = mg.constant(f.fakes_mp.clone())?;
                    let pm = project(mg, fm, HEAD_CROSS, cfg.projection_layers)?;
                    let fs = mg.constant(f.fakes_sc.clone())?;
                    let ps = project(mg, fs, HEAD_CROSS, cfg.projection_layers)?;
                    (
                        Some(ExtraNegatives {
                            anchor_of: f.anchor_of.clone(),
                            embeddings: pm,
                        }),
                        Some(ExtraNegatives {
                            anchor_of: f.anchor_of.clone(),
                            embeddings: ps,
                        }),
                    )
                }
                None => (None, None),
            };
            let (l_sc, l_mp) = cross_losses(
                mg,
                &proj,
                &ctx.pos_mask,
                loss_cfg.tau,
                extra_sc.as_ref(),
                extra_mp.as_ref(),
            )?;
            combine(mg, l_sc, l_mp, loss_cfg.lambda)
        }
    }
}

fn combine(
    mg: &mut ModelGraph,
    l_sc: crate::tensor::TensorId,
    l_mp: crate::tensor::TensorId,
    lambda: f64,
) -> Result<ObjectiveOutput> {
    let ws = mg.tape.scale(l_sc, lambda)?;
    let wm = mg.tape.scale(l_mp, 1.0 - lambda)?;
    let sum = mg.tape.add(ws, wm)?;
    let loss = mg.tape.mean(sum)?;
    let mean_of = |mg: &ModelGraph, v| {
        let m = mg.tape.value(v);
        m.sum() / m.len() as f64
    };
    Ok(ObjectiveOutput {
        cross_sc: mean_of(mg, l_sc),
        cross_mp: mean_of(mg, l_mp),
        intra_sc: 0.0,
        intra_mp: 0.0,
        semi: 0.0,
        loss,
    })
}

/// Run one full-batch training epoch and apply the optimizer step. Returns
/// the epoch record and the attention weights used.
pub fn run_epoch(
    ctx: &TrainContext,
    store: &mut ParamStore,
    adam: &mut AdamState,
    cfg: &RunConfig,
    epoch: usize,
    fakes: Option<&FakeNegatives>,
) -> Result<(EpochRecord, Vec<AttnRecord>)> {
    let mut stream = epoch_rng(cfg.seed, epoch);
    let draws = draw_epoch(&ctx.encoder, &ctx.settings, &mut stream)?;
    let (need_sc, need_mp) = cfg.variant.needs_views();
    let mut mg = ModelGraph::new(store, Trainable::All);
    let views = encode(&ctx.encoder, &mut mg, &draws, need_sc, need_mp)?;
    let out = objective_for_variant(ctx, &mut mg, cfg, &views, &mut stream, fakes)?;
    let total = mg.tape.value(out.loss).get(0, 0);
    let grads = mg.backward(out.loss)?;
    let mut attn = Vec::new();
    for (name, beta) in &views.schema_betas {
        attn.push(AttnRecord {
            epoch,
            level: "schema".into(),
            name: name.clone(),
            beta: *beta,
        });
    }
    for (name, beta) in &views.mp_betas {
        attn.push(AttnRecord {
            epoch,
            level: "metapath".into(),
            name: name.clone(),
            beta: *beta,
        });
    }
    drop(mg);
    grads.apply_adam(store, adam)?;
    Ok((
        EpochRecord {
            epoch,
            cross_sc: out.cross_sc,
            cross_mp: out.cross_mp,
            intra_sc: out.intra_sc,
            intra_mp: out.intra_mp,
            semi: out.semi,
            total,
        },
        attn,
    ))
}

/// Evaluation-mode view embeddings (full neighbor lists, no dropout).
pub fn eval_views(
    ctx: &TrainContext,
    store: &ParamStore,
    need_sc: bool,
    need_mp: bool,
) -> Result<(Option<Matrix>, Option<Matrix>)> {
    let draws = encoders::eval_draws(&ctx.encoder)?;
    let mut mg = ModelGraph::new(store, Trainable::All);
    let views = encode(&ctx.encoder, &mut mg, &draws, need_sc, need_mp)?;
    let take = |id: Option<crate::tensor::TensorId>| id.map(|i| mg.tape.value(i).clone());
    Ok((take(views.z_sc), take(views.z_mp)))
}

/// The variant's downstream embedding (z_mp, or z_sc for the schema-only
/// variant), evaluation mode.
pub fn compute_embeddings(ctx: &TrainContext, store: &ParamStore, cfg: &RunConfig) -> Result<Matrix> {
    let want_sc = cfg.variant.downstream_view() == "sc";
    let (z_sc, z_mp) = eval_views(ctx, store, want_sc, !want_sc)?;
    let z = if want_sc { z_sc } else { z_mp };
    z.ok_or_else(|| HecoError::Contract("requested view was not computed".into()))
}

/// Train any variant. Plain variants run with early stopping on the total
/// loss (patience from the config) and return the best-loss parameters; the
/// GAN variant runs the alternating schedule and returns the final
/// parameters.
pub fn train(data: &LoadedDataset, cfg: &RunConfig) -> Result<TrainOutput> {
    let ctx = TrainContext::new(data, cfg)?;
    let mut store = ParamStore::new();
    register_model_params(&ctx, &mut store, cfg)?;
    if cfg.variant == Variant::HecoGan {
        return train_gan_schedule(&ctx, store, cfg);
    }
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut history = Vec::new();
    let mut attention = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_store = store.clone();
    let mut since_best = 0usize;
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        let (rec, attn) = run_epoch(&ctx, &mut store, &mut adam, cfg, epoch, None)?;
        attention.extend(attn);
        let total = rec.total;
        history.push(rec);
        epochs_run = epoch + 1;
        if total < best_loss {
            best_loss = total;
            best_store = store.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::info!("early stop at epoch {epoch} (best loss {best_loss:.6})");
                break;
            }
        }
    }
    Ok(TrainOutput {
        store: best_store,
        history,
        attention,
        gan_telemetry: Vec::new(),
        epochs_run,
    })
}

/// The alternating schedule: warm-up, I_DG x (D phase, G phase), then
/// contrastive training with generated negatives; outer rounds repeat the
/// D/G/augmented block until the total loss stops improving (plus a hard
/// round cap). Self-supervised throughout: convergence watches the training
/// loss, never labels.
fn train_gan_schedule(ctx: &TrainContext, mut store: ParamStore, cfg: &RunConfig) -> Result<TrainOutput> {
    let gan_cfg = &cfg.gan;
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut gan_adam = AdamState::new(AdamConfig::with_lr(gan_cfg.lr));
    let mut gan_rng = rng_for(cfg.seed, "gan");
    let mut history = Vec::new();
    let mut attention = Vec::new();
    let mut telemetry = Vec::new();
    let mut heco_epoch = 0usize;

    let run_heco = |store: &mut ParamStore,
                        adam: &mut AdamState,
                        heco_epoch: &mut usize,
                        phase: &str,
                        fakes: Option<&FakeNegatives>,
                        history: &mut Vec<EpochRecord>,
                        attention: &mut Vec<AttnRecord>,
                        telemetry: &mut Vec<GanRecord>|
     -> Result<f64> {
        let (rec, attn) = run_epoch(ctx, store, adam, cfg, *heco_epoch, fakes)?;
        telemetry.push(GanRecord {
            phase: phase.to_string(),
            epoch: *heco_epoch,
            l_d: None,
            l_g: None,
            d_fake_mean: None,
            l_heco: Some(rec.total),
        });
        attention.extend(attn);
        let total = rec.total;
        history.push(rec);
        *heco_epoch += 1;
        Ok(total)
    };

    for _ in 0..gan_cfg.k0 {
        run_heco(
            &mut store,
            &mut adam,
            &mut heco_epoch,
            "warmup",
            None,
            &mut history,
            &mut attention,
            &mut telemetry,
        )?;
    }

    let mut best_round_loss = f64::INFINITY;
    let mut rounds_since_best = 0usize;
    for round in 0..gan_cfg.max_rounds {
        // With no D/G alternations the generator is never trained and the
        // schedule degenerates to plain contrastive epochs.
        if gan_cfg.i_dg == 0 {
            let phase = format!("plain/round{round}");
            let mut round_loss = f64::INFINITY;
            for _ in 0..gan_cfg.k_h {
                round_loss = run_heco(
                    &mut store,
                    &mut adam,
                    &mut heco_epoch,
                    &phase,
                    None,
                    &mut history,
                    &mut attention,
                    &mut telemetry,
                )?;
            }
            if round_loss < best_round_loss {
                best_round_loss = round_loss;
                rounds_since_best = 0;
            } else {
                rounds_since_best += 1;
                if rounds_since_best >= gan_cfg.outer_patience {
                    break;
                }
            }
            continue;
        }
        // Fixed view embeddings for this round's D/G training.
        let (z_sc, z_mp) = eval_views(ctx, &store, true, true)?;
        let (z_sc, z_mp) = (z_sc.expect("sc"), z_mp.expect("mp"));
        for alt in 0..gan_cfg.i_dg {
            for e in 0..gan_cfg.k_d {
                let batch = draw_gan_batch(&ctx.sets, gan_cfg.fake_cap, &mut gan_rng);
                let out = gan_train_d_epoch(
                    &mut store,
                    &mut gan_adam,
                    &z_sc,
                    &z_mp,
                    &batch,
                    gan_cfg.sigma2,
                    &mut gan_rng,
                )?;
                telemetry.push(GanRecord {
                    phase: format!("d/round{round}/alt{alt}"),
                    epoch: e,
                    l_d: Some(out.loss),
                    l_g: None,
                    d_fake_mean: Some(out.d_fake_mean),
                    l_heco: None,
                });
            }
            for e in 0..gan_cfg.k_g {
                let batch = draw_gan_batch(&ctx.sets, gan_cfg.fake_cap, &mut gan_rng);
                let out = gan_train_g_epoch(
                    &mut store,
                    &mut gan_adam,
                    &z_sc,
                    &z_mp,
                    &batch,
                    gan_cfg.sigma2,
                    &mut gan_rng,
                )?;
                telemetry.push(GanRecord {
                    phase: format!("g/round{round}/alt{alt}"),
                    epoch: e,
                    l_d: None,
                    l_g: Some(out.loss),
                    d_fake_mean: Some(out.d_fake_mean),
                    l_heco: None,
                });
            }
        }
        let fakes = generate_phase3_fakes(
            &store,
            &z_sc,
            &z_mp,
            &ctx.sets,
            gan_cfg.fake_cap,
            gan_cfg.sigma2,
            &mut gan_rng,
        )?;
        let phase = format!("augmented/round{round}");
        let mut round_loss = f64::INFINITY;
        for _ in 0..gan_cfg.k_h {
            round_loss = run_heco(
                &mut store,
                &mut adam,
                &mut heco_epoch,
                &phase,
                Some(&fakes),
                &mut history,
                &mut attention,
                &mut telemetry,
            )?;
        }
        if round_loss < best_round_loss {
            best_round_loss = round_loss;
            rounds_since_best = 0;
        } else {
            rounds_since_best += 1;
            if rounds_since_best >= gan_cfg.outer_patience {
                break;
            }
        }
    }
    Ok(TrainOutput {
        store,
        history,
        attention,
        gan_telemetry: telemetry,
        epochs_run: heco_epoch,
    })
}

pub fn write_loss_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,l_cross_sc,l_cross_mp,l_intra_sc,l_intra_mp,l_semi,total\n");
    for r in history {
        writeln!(
            out,
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            r.epoch, r.cross_sc, r.cross_mp, r.intra_sc, r.intra_mp, r.semi, r.total
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| HecoError::io(path.display().to_string(), e))
}

pub fn write_attention_csv(path: &Path, attention: &[AttnRecord]) -> Result<()> {
    let mut out = String::from("epoch,level,name,beta\n");
    for r in attention {
        writeln!(out, "{},{},{},{:.12e}", r.epoch, r.level, r.name, r.beta).unwrap();
    }
    std::fs::write(path, out).map_err(|e| HecoError::io(path.display().to_string(), e))
}

pub fn write_gan_csv(path: &Path, telemetry: &[GanRecord]) -> Result<()> {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
    let mut out = String::from("phase,epoch,l_d,l_g,d_fake_mean,l_heco\n");
    for r in telemetry {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.phase,
            r.epoch,
            fmt(r.l_d),
            fmt(r.l_g),
            fmt(r.d_fake_mean),
            fmt(r.l_heco)
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| HecoError::io(path.display().to_string(), e))
}

/// Aggregate per-epoch means of the schema/meta-path betas, used by tests and
/// the attention-trend checks: each (epoch, level) group must sum to 1.
pub fn beta_group_sums(attention: &[AttnRecord]) -> BTreeMap<(usize, String), f64> {
    let mut sums = BTreeMap::new();
    for r in attention {
        *sums.entry((r.epoch, r.level.clone())).or_insert(0.0) += r.beta;
    }
    sums
}
