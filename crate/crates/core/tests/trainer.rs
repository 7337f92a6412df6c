//! End-to-end training behavior on small synthetic graphs.

use heco_core::eval::{evaluate_embeddings, EvalConfig, ProbeConfig};
use heco_core::io::config::{RunConfig, Variant};
use heco_core::io::synth::{generate_synthetic_hin, AuxTypeSpec, SynthSpec};
use heco_core::io::SampleSetting;
use heco_core::train::{beta_group_sums, train, compute_embeddings, TrainContext};

fn small_spec() -> SynthSpec {
    SynthSpec {
        classes: 3,
        targets_per_class: 20,
        aux_types: vec![
            AuxTypeSpec {
                name: "author".into(),
                count: 90,
                p_in: 0.15,
                p_out: 0.01,
            },
            AuxTypeSpec {
                name: "subject".into(),
                count: 30,
                p_in: 0.2,
                p_out: 0.02,
            },
        ],
        feature_dim: 16,
        signal: 1.0,
        noise: 1.5,
        split_rates: vec![5],
    }
}

fn small_config(variant: Variant, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig {
        variant,
        dim: 16,
        lr: 5e-3,
        epochs,
        patience: 50,
        feat_drop: 0.2,
        attn_drop: 0.3,
        t_pos: 5,
        mixup_k: 2,
        semi_label_rate: 5,
        seed: 17,
        ..Default::default()
    };
    cfg.schema_sample
        .insert("author".into(), SampleSetting::Count(4));
    cfg.schema_sample
        .insert("subject".into(), SampleSetting::Count(2));
    cfg
}

#[test]
fn loss_decreases_and_betas_normalize() {
    let data = generate_synthetic_hin(&small_spec(), 3).unwrap();
    let cfg = small_config(Variant::Heco, 60);
    let out = train(&data, &cfg).unwrap();
    assert_eq!(out.epochs_run, 60);
    let first = out.history.first().unwrap().total;
    let last = out.history.last().unwrap().total;
    assert!(last < first, "loss should fall: {first} -> {last}");
    for ((_epoch, _level), sum) in beta_group_sums(&out.attention) {
        assert!((sum - 1.0).abs() < 1e-9);
    }
}

#[test]
fn hecopp_zero_weights_matches_heco_bitwise_over_epochs() {
    let data = generate_synthetic_hin(&small_spec(), 4).unwrap();
    let heco_cfg = small_config(Variant::Heco, 20);
    let mut pp_cfg = small_config(Variant::Hecopp, 20);
    pp_cfg.lambda1 = 0.0;
    pp_cfg.lambda2 = 0.0;
    let a = train(&data, &heco_cfg).unwrap();
    let b = train(&data, &pp_cfg).unwrap();
    assert_eq!(a.history.len(), b.history.len());
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.total.to_bits(), y.total.to_bits(), "epoch {}", x.epoch);
        assert_eq!(x.cross_sc.to_bits(), y.cross_sc.to_bits());
        assert_eq!(x.cross_mp.to_bits(), y.cross_mp.to_bits());
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let data = generate_synthetic_hin(&small_spec(), 5).unwrap();
    let cfg = small_config(Variant::Hecopp, 10);
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.total.to_bits(), y.total.to_bits());
    }
    let ctx = TrainContext::new(&data, &cfg).unwrap();
    let za = compute_embeddings(&ctx, &a.store, &cfg).unwrap();
    let zb = compute_embeddings(&ctx, &b.store, &cfg).unwrap();
    assert_eq!(za, zb);
}

#[test]
fn single_view_variants_train() {
    let data = generate_synthetic_hin(&small_spec(), 6).unwrap();
    for variant in [Variant::HecoSc, Variant::HecoMp] {
        let cfg = small_config(variant, 15);
        let out = train(&data, &cfg).unwrap();
        let first = out.history.first().unwrap().total;
        let last = out.history.last().unwrap().total;
        assert!(last < first, "{variant}: {first} -> {last}");
        let ctx = TrainContext::new(&data, &cfg).unwrap();
        let z = compute_embeddings(&ctx, &out.store, &cfg).unwrap();
        assert_eq!(z.shape(), (60, 16));
    }
}

#[test]
fn mixup_and_semi_variants_train() {
    let data = generate_synthetic_hin(&small_spec(), 7).unwrap();
    for variant in [Variant::HecoMu, Variant::HecoppSemi] {
        let cfg = small_config(variant, 15);
        let out = train(&data, &cfg).unwrap();
        assert!(out.history.iter().all(|r| r.total.is_finite()));
        if variant == Variant::HecoppSemi {
            assert!(out.history.iter().all(|r| r.semi > 0.0));
        }
    }
}

#[test]
fn gan_schedule_runs_all_phases() {
    let data = generate_synthetic_hin(&small_spec(), 8).unwrap();
    let mut cfg = small_config(Variant::HecoGan, 0);
    cfg.epochs = 1; // unused by the schedule
    cfg.gan.k0 = 8;
    cfg.gan.k_d = 4;
    cfg.gan.k_g = 4;
    cfg.gan.i_dg = 2;
    cfg.gan.k_h = 8;
    cfg.gan.max_rounds = 2;
    let out = train(&data, &cfg).unwrap();
    let phases: Vec<&str> = out
        .gan_telemetry
        .iter()
        .map(|r| r.phase.as_str())
        .collect();
    assert!(phases.contains(&"warmup"));
    assert!(phases.iter().any(|p| p.starts_with("d/round0")));
    assert!(phases.iter().any(|p| p.starts_with("g/round0")));
    assert!(phases.iter().any(|p| p.starts_with("augmented/round0")));
    // Negative-set arithmetic: every anchor with peers got fakes appended;
    // the augmented-phase losses must stay finite and positive.
    assert!(out
        .gan_telemetry
        .iter()
        .filter_map(|r| r.l_heco)
        .all(|l| l.is_finite() && l > 0.0));
}

#[test]
fn no_structure_no_signal() {
    // p_in == p_out: the meta-path graph carries no class signal, so trained
    // embeddings cannot beat chance by much.
    let mut spec = small_spec();
    for aux in &mut spec.aux_types {
        aux.p_in = 0.05;
        aux.p_out = 0.05;
    }
    spec.noise = 50.0; // feature signal drowned too
    let data = generate_synthetic_hin(&spec, 9).unwrap();
    let cfg = small_config(Variant::Heco, 40);
    let out = train(&data, &cfg).unwrap();
    let ctx = TrainContext::new(&data, &cfg).unwrap();
    let z = compute_embeddings(&ctx, &out.store, &cfg).unwrap();
    let labels = data.graph.labels.clone().unwrap();
    let eval_cfg = EvalConfig {
        runs: 3,
        kmeans_restarts: 2,
        probe: ProbeConfig {
            steps: 120,
            ..Default::default()
        },
    };
    let report = evaluate_embeddings(&z, &labels, &data.splits, &eval_cfg, 10).unwrap();
    let acc = report.get("micro_f1", "5").unwrap().mean;
    assert!(
        acc < 0.55,
        "no-signal graph should stay near chance (1/3), got {acc}"
    );
}

#[test]
fn gan_with_no_alternations_is_plain_training() {
    // With I_DG = 0 the generator never trains, no fakes are injected, and
    // the schedule's epochs match plain training epoch for epoch.
    let data = generate_synthetic_hin(&small_spec(), 12).unwrap();
    let mut gan_cfg = small_config(Variant::HecoGan, 1);
    gan_cfg.gan.k0 = 6;
    gan_cfg.gan.i_dg = 0;
    gan_cfg.gan.k_h = 4;
    gan_cfg.gan.max_rounds = 1;
    let gan = train(&data, &gan_cfg).unwrap();

    let mut plain_cfg = small_config(Variant::Heco, 10);
    plain_cfg.gan = gan_cfg.gan.clone();
    let plain = train(&data, &plain_cfg).unwrap();
    assert_eq!(gan.history.len(), 10);
    for (a, b) in gan.history.iter().zip(&plain.history) {
        assert_eq!(a.total.to_bits(), b.total.to_bits(), "epoch {}", a.epoch);
    }
}

#[test]
fn gan_schedule_terminates_in_bounded_epochs() {
    // 100-target graph, generous patience: the outer loop must still stop at
    // the round cap, so the total epoch count is bounded by
    // k0 + max_rounds * k_h.
    let spec = SynthSpec {
        classes: 2,
        targets_per_class: 50,
        aux_types: vec![AuxTypeSpec {
            name: "author".into(),
            count: 60,
            p_in: 0.2,
            p_out: 0.02,
        }],
        feature_dim: 8,
        signal: 1.0,
        noise: 1.0,
        split_rates: vec![5],
    };
    let data = generate_synthetic_hin(&spec, 21).unwrap();
    let mut cfg = small_config(Variant::HecoGan, 1);
    cfg.patience = 20;
    cfg.schema_sample.clear();
    cfg.schema_sample.insert("author".into(), SampleSetting::Count(4));
    cfg.gan.k0 = 5;
    cfg.gan.i_dg = 1;
    cfg.gan.k_d = 3;
    cfg.gan.k_g = 3;
    cfg.gan.k_h = 5;
    cfg.gan.max_rounds = 3;
    cfg.gan.outer_patience = 1;
    let out = train(&data, &cfg).unwrap();
    assert!(out.epochs_run <= 5 + 3 * 5);
    assert!(out.epochs_run >= 5 + 5, "at least one augmented round must run");
}
