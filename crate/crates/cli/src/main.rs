//! `heco`: train, embed and evaluate self-supervised heterogeneous-graph
//! node embeddings; generate synthetic benchmark bundles; sweep configs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use heco_core::eval::{evaluate_embeddings, project_2d, EvalConfig, ProbeConfig};
use heco_core::io::{
    export_coords, export_embeddings, generate_synthetic_hin, load_checkpoint, load_dataset,
    load_embeddings, save_checkpoint, write_bundle, LoadedDataset, RunConfig, SampleSetting,
    SynthSpec, Variant,
};
use heco_core::train::{
    compute_embeddings, train, write_attention_csv, write_gan_csv, write_loss_csv, TrainContext,
};

/// Environment variable consulted for the output directory when --out is
/// not given.
const OUT_ENV: &str = "HECO_OUT_DIR";

#[derive(Parser)]
#[command(name = "heco", version, about = "Cross-view contrastive heterogeneous-graph embeddings")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model on a dataset bundle.
    Train(TrainArgs),
    /// Export downstream embeddings from a checkpoint.
    Embed(EmbedArgs),
    /// Evaluate exported embeddings (probe, clustering, silhouette).
    Evaluate(EvalArgs),
    /// Generate a synthetic planted-partition bundle.
    GenCorpus(GenArgs),
    /// Run a config grid and aggregate the evaluation reports.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset bundle directory.
    #[arg(long)]
    data: PathBuf,
    /// Master seed (all run randomness derives from it).
    #[arg(long)]
    seed: u64,
    /// Base config TOML; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $HECO_OUT_DIR or ./heco_out).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    tau_sc: Option<f64>,
    #[arg(long)]
    tau_mp: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    aleph: Option<f64>,
    #[arg(long)]
    t_pos: Option<usize>,
    #[arg(long)]
    mixup_k: Option<usize>,
    #[arg(long)]
    feat_drop: Option<f64>,
    #[arg(long)]
    attn_drop: Option<f64>,
    #[arg(long)]
    projection_layers: Option<usize>,
    #[arg(long)]
    semi_label_rate: Option<usize>,
    /// Row-L2-normalize dense input features at load time.
    #[arg(long)]
    l2norm_features: bool,
    /// Per-type schema sampling, e.g. "author=7,subject=all".
    #[arg(long)]
    sample: Option<String>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output TSV path (default: `<out dir>/embeddings.tsv`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Embeddings TSV produced by `embed`.
    #[arg(long)]
    embeddings: PathBuf,
    /// Bundle supplying labels and splits.
    #[arg(long)]
    data: PathBuf,
    /// Report CSV path (default: `<out dir>/report.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 10)]
    kmeans_restarts: usize,
    #[arg(long, default_value_t = 500)]
    probe_steps: usize,
    /// Also write mean-centered 2-D PCA coordinates to this path.
    #[arg(long)]
    pca: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Bundle output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// SynthSpec JSON file; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    targets_per_class: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    signal: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// Override every aux type's intra-class edge probability.
    #[arg(long)]
    p_in: Option<f64>,
    /// Override every aux type's cross-class edge probability.
    #[arg(long)]
    p_out: Option<f64>,
    /// Comma-separated label rates to emit split files for (e.g. "5,10").
    #[arg(long)]
    split_rates: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Sweep TOML with a `[base]` config table and a `[grid]` table of arrays.
    #[arg(long)]
    sweep: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    eval_runs: usize,
}

fn out_dir(arg: Option<PathBuf>) -> Result<PathBuf> {
    let dir = arg
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("heco_out"));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn apply_overrides(cfg: &mut RunConfig, args: &TrainArgs) -> Result<()> {
    if let Some(v) = &args.variant {
        cfg.variant = Variant::parse(v)?;
    }
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { cfg.$field = v; })*
        };
    }
    set!(dim, lr, epochs, patience, tau, tau_sc, tau_mp, lambda, lambda1, lambda2, aleph,
         t_pos, mixup_k, feat_drop, attn_drop, projection_layers, semi_label_rate);
    if args.l2norm_features {
        cfg.feature_l2norm = true;
    }
    if let Some(sample) = &args.sample {
        for part in sample.split(',') {
            let (name, value) = part
                .split_once('=')
                .with_context(|| format!("bad --sample entry '{part}', expected name=N or name=all"))?;
            let setting = if value == "all" {
                SampleSetting::Mode("all".into())
            } else {
                SampleSetting::Count(value.parse().with_context(|| format!("bad count '{value}'"))?)
            };
            cfg.schema_sample.insert(name.to_string(), setting);
        }
    }
    Ok(())
}

fn run_training(data: &LoadedDataset, cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    let output = train(data, cfg)?;
    write_loss_csv(&dir.join("loss.csv"), &output.history)?;
    write_attention_csv(&dir.join("attention.csv"), &output.attention)?;
    if cfg.variant == Variant::HecoGan {
        write_gan_csv(&dir.join("gan.csv"), &output.gan_telemetry)?;
    }
    let ckpt = dir.join("checkpoint.json");
    save_checkpoint(&ckpt, &output.store, cfg)?;
    log::info!(
        "trained {} for {} epochs; final loss {:.6}",
        cfg.variant,
        output.epochs_run,
        output.history.last().map(|r| r.total).unwrap_or(f64::NAN)
    );
    Ok(ckpt)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_toml_file(path)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, &args)?;
    cfg.seed = args.seed;
    cfg.validate()?;
    let dir = out_dir(args.out)?;
    let data = load_dataset(&args.data, cfg.feature_l2norm)?;
    let ckpt = run_training(&data, &cfg, &dir)?;
    println!("checkpoint: {}", ckpt.display());
    println!("loss curve: {}", dir.join("loss.csv").display());
    println!("attention:  {}", dir.join("attention.csv").display());
    Ok(())
}

fn cmd_embed(args: EmbedArgs) -> Result<()> {
    let (store, cfg) = load_checkpoint(&args.checkpoint)?;
    let data = load_dataset(&args.data, cfg.feature_l2norm)?;
    let ctx = TrainContext::new(&data, &cfg)?;
    let z = compute_embeddings(&ctx, &store, &cfg)?;
    let path = match args.out {
        Some(p) => p,
        None => out_dir(None)?.join("embeddings.tsv"),
    };
    export_embeddings(&path, &z, cfg.variant.name(), cfg.seed)?;
    println!("embeddings: {} ({} x {})", path.display(), z.rows(), z.cols());
    Ok(())
}

fn cmd_evaluate(args: EvalArgs) -> Result<()> {
    let (z, header) = load_embeddings(&args.embeddings)?;
    let data = load_dataset(&args.data, false)?;
    let labels = data
        .graph
        .labels
        .clone()
        .context("evaluation needs a labeled bundle")?;
    if data.splits.is_empty() {
        bail!("bundle has no splits_<L>.json files");
    }
    let cfg = EvalConfig {
        runs: args.runs,
        kmeans_restarts: args.kmeans_restarts,
        probe: ProbeConfig {
            steps: args.probe_steps,
            ..Default::default()
        },
    };
    let report = evaluate_embeddings(&z, &labels, &data.splits, &cfg, args.seed)?;
    let path = match args.out {
        Some(p) => p,
        None => out_dir(None)?.join("report.csv"),
    };
    std::fs::write(&path, report.to_csv())
        .with_context(|| format!("writing {}", path.display()))?;
    print!("{}", report.to_table());
    println!("report: {}", path.display());
    if let Some(pca_path) = args.pca {
        let coords = project_2d(&z)?;
        export_coords(&pca_path, &coords, &header.variant, header.seed)?;
        println!("pca coords: {}", pca_path.display());
    }
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<SynthSpec>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => SynthSpec::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { spec.$field = v; })*
        };
    }
    set!(classes, targets_per_class, feature_dim, signal, noise);
    if let Some(p) = args.p_in {
        for aux in &mut spec.aux_types {
            aux.p_in = p;
        }
    }
    if let Some(p) = args.p_out {
        for aux in &mut spec.aux_types {
            aux.p_out = p;
        }
    }
    if let Some(rates) = &args.split_rates {
        spec.split_rates = rates
            .split(',')
            .map(|r| r.trim().parse().with_context(|| format!("bad split rate '{r}'")))
            .collect::<Result<Vec<usize>>>()?;
    }
    let data = generate_synthetic_hin(&spec, args.seed)?;
    write_bundle(&args.out, &data)?;
    println!(
        "bundle: {} ({} targets, {} aux types, {} meta-paths)",
        args.out.display(),
        data.graph.num_targets(),
        spec.aux_types.len(),
        data.meta_paths.len()
    );
    Ok(())
}

#[derive(serde::Deserialize)]
struct SweepFile {
    #[serde(default)]
    base: toml::Table,
    grid: BTreeMap<String, Vec<toml::Value>>,
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.sweep)
        .with_context(|| format!("reading {}", args.sweep.display()))?;
    let sweep: SweepFile = toml::from_str(&text).context("parsing sweep file")?;
    if sweep.grid.is_empty() {
        bail!("sweep grid is empty");
    }
    let dir = out_dir(args.out)?;

    // Cartesian product in key order.
    let keys: Vec<&String> = sweep.grid.keys().collect();
    let mut combos: Vec<BTreeMap<String, toml::Value>> = vec![BTreeMap::new()];
    for key in &keys {
        let mut next = Vec::new();
        for combo in &combos {
            for value in &sweep.grid[*key] {
                let mut c = combo.clone();
                c.insert((*key).clone(), value.clone());
                next.push(c);
            }
        }
        combos = next;
    }

    let mut rows = vec!["combo,params,macro_f1,micro_f1,auc,nmi,ari".to_string()];
    for (idx, combo) in combos.iter().enumerate() {
        let mut table = sweep.base.clone();
        for (k, v) in combo {
            table.insert(k.clone(), v.clone());
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .context("sweep combo does not form a valid config")?;
        cfg.seed = args.seed;
        cfg.validate()?;
        let data = load_dataset(&args.data, cfg.feature_l2norm)?;
        let combo_dir = dir.join(format!("combo{idx}"));
        std::fs::create_dir_all(&combo_dir)?;
        run_training(&data, &cfg, &combo_dir)?;

        let ctx = TrainContext::new(&data, &cfg)?;
        let (store, _) = load_checkpoint(&combo_dir.join("checkpoint.json"))?;
        let z = compute_embeddings(&ctx, &store, &cfg)?;
        let labels = data.graph.labels.clone().context("sweep needs labels")?;
        let eval_cfg = EvalConfig {
            runs: args.eval_runs,
            kmeans_restarts: 5,
            probe: ProbeConfig::default(),
        };
        let report = evaluate_embeddings(&z, &labels, &data.splits, &eval_cfg, args.seed)?;
        let first_rate = data.splits.keys().next().copied().unwrap_or(0).to_string();
        let pick = |metric: &str, split: &str| {
            report.get(metric, split).map(|r| r.mean).unwrap_or(f64::NAN)
        };
        let params = combo
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        rows.push(format!(
            "{idx},{params},{:.4},{:.4},{:.4},{:.4},{:.4}",
            pick("macro_f1", &first_rate),
            pick("micro_f1", &first_rate),
            pick("auc", &first_rate),
            pick("nmi", "-"),
            pick("ari", "-"),
        ));
        log::info!("combo {idx} ({params}) done");
    }
    let path = dir.join("sweep_report.csv");
    std::fs::write(&path, rows.join("\n") + "\n")?;
    println!("sweep report: {}", path.display());
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Embed(args) => cmd_embed(args),
        Cmd::Evaluate(args) => cmd_evaluate(args),
        Cmd::GenCorpus(args) => cmd_gen(args),
        Cmd::Sweep(args) => cmd_sweep(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
