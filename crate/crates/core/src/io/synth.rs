//! Planted-partition HIN generator: a verifiable desk-scale benchmark with
//! known classes. Target and auxiliary nodes carry latent classes; edges are
//! drawn with higher probability inside a class than across classes, and
//! target features are noisy class means.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HecoError, Result};
use crate::eval::Split;
use crate::hin::{Features, HeteroGraph, MetaPath, MetaPathStep, Relation};
use crate::io::bundle::LoadedDataset;
use crate::seeding::rng_for;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuxTypeSpec {
    pub name: String,
    pub count: usize,
    /// Edge probability between a target and an aux node of the same class.
    pub p_in: f64,
    /// Edge probability across classes.
    pub p_out: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: usize,
    pub targets_per_class: usize,
    pub aux_types: Vec<AuxTypeSpec>,
    pub feature_dim: usize,
    /// Scale of the class-mean vectors.
    pub signal: f64,
    /// Per-coordinate Gaussian noise added to each target feature.
    pub noise: f64,
    /// Label rates for which split files are generated.
    pub split_rates: Vec<usize>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 3,
            targets_per_class: 100,
            aux_types: vec![
                AuxTypeSpec {
                    name: "author".into(),
                    count: 450,
                    p_in: 0.05,
                    p_out: 0.005,
                },
                AuxTypeSpec {
                    name: "subject".into(),
                    count: 150,
                    p_in: 0.05,
                    p_out: 0.005,
                },
            ],
            feature_dim: 32,
            signal: 1.0,
            noise: 2.5,
            split_rates: vec![20, 40, 60],
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(HecoError::Config("synthetic spec needs >= 2 classes".into()));
        }
        if self.targets_per_class < 2 {
            return Err(HecoError::Config("need >= 2 targets per class".into()));
        }
        if self.aux_types.is_empty() {
            return Err(HecoError::Config("need >= 1 auxiliary type".into()));
        }
        for aux in &self.aux_types {
            for (what, p) in [("p_in", aux.p_in), ("p_out", aux.p_out)] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(HecoError::Config(format!(
                        "{}.{what} must lie in [0, 1], got {p}",
                        aux.name
                    )));
                }
            }
            if aux.count < self.classes {
                return Err(HecoError::Config(format!(
                    "aux type '{}' needs at least one node per class",
                    aux.name
                )));
            }
        }
        if self.feature_dim < 1 {
            return Err(HecoError::Config("feature_dim must be >= 1".into()));
        }
        if self.noise < 0.0 || self.signal < 0.0 {
            return Err(HecoError::Config("signal and noise must be >= 0".into()));
        }
        Ok(())
    }

    pub fn num_targets(&self) -> usize {
        self.classes * self.targets_per_class
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Meta-path names like PAP from type initials; falls back to `via_<aux>`
/// when initials collide.
fn metapath_name(target: &str, aux: &str, taken: &mut Vec<String>) -> String {
    let ti = target.chars().next().unwrap_or('t').to_ascii_uppercase();
    let ai = aux.chars().next().unwrap_or('a').to_ascii_uppercase();
    let name = format!("{ti}{ai}{ti}");
    if taken.contains(&name) {
        let fallback = format!("via_{aux}");
        taken.push(fallback.clone());
        fallback
    } else {
        taken.push(name.clone());
        name
    }
}

/// Generate the full dataset (graph, meta-paths, splits) for a spec. All
/// randomness comes from streams derived from `seed`, so the result is
/// deterministic and `write_bundle` output is byte-stable.
pub fn generate_synthetic_hin(spec: &SynthSpec, seed: u64) -> Result<LoadedDataset> {
    spec.validate()?;
    let n_t = spec.num_targets();
    let classes = spec.classes;
    let target_class = |i: usize| i % classes;

    // Class means and noisy target features.
    let mut rng = rng_for(seed, "synth/features");
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..spec.feature_dim).map(|_| spec.signal * normal(&mut rng)).collect())
        .collect();
    let mut feats = Matrix::zeros(n_t, spec.feature_dim);
    for i in 0..n_t {
        let mu = &means[target_class(i)];
        for c in 0..spec.feature_dim {
            feats.set(i, c, mu[c] + spec.noise * normal(&mut rng));
        }
    }

    let mut type_names = vec!["paper".to_string()];
    let mut type_counts = vec![n_t];
    let mut features = vec![Features::Dense(feats)];
    let mut relations = Vec::new();
    let mut meta_paths = Vec::new();
    let mut taken_names = Vec::new();

    for (a, aux) in spec.aux_types.iter().enumerate() {
        let type_idx = a + 1;
        type_names.push(aux.name.clone());
        type_counts.push(aux.count);
        features.push(Features::OneHot(aux.count));
        let aux_class = |j: usize| j % classes;

        let mut rng = rng_for(seed, &format!("synth/edges/{}", aux.name));
        let mut edges = Vec::new();
        for i in 0..n_t {
            for j in 0..aux.count {
                let p = if target_class(i) == aux_class(j) {
                    aux.p_in
                } else {
                    aux.p_out
                };
                if rng.gen::<f64>() < p {
                    edges.push((i as u32, j as u32));
                }
            }
        }
        let rel_name = format!("paper_{}", aux.name);
        relations.push(Relation {
            name: rel_name,
            src_type: 0,
            dst_type: type_idx,
            edges,
        });
        meta_paths.push(MetaPath {
            name: metapath_name("paper", &aux.name, &mut taken_names),
            steps: vec![
                MetaPathStep {
                    relation: a,
                    reverse: false,
                },
                MetaPathStep {
                    relation: a,
                    reverse: true,
                },
            ],
        });
    }

    let labels: Vec<usize> = (0..n_t).map(target_class).collect();
    let graph = HeteroGraph {
        type_names,
        type_counts,
        target_type: 0,
        features,
        relations,
        labels: Some(labels.clone()),
    };

    let mut splits = BTreeMap::new();
    for &rate in &spec.split_rates {
        splits.insert(rate, make_split(&labels, classes, rate, seed)?);
    }

    Ok(LoadedDataset {
        graph,
        meta_paths,
        splits,
    })
}

/// Label-rate split: `rate` random nodes per class train; the remainder is
/// divided 1000/1000 into val/test when large enough, else half and half.
fn make_split(labels: &[usize], classes: usize, rate: usize, seed: u64) -> Result<Split> {
    let n = labels.len();
    let mut rng = rng_for(seed, &format!("synth/splits/{rate}"));
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for ids in &mut by_class {
        if ids.len() < rate + 2 {
            return Err(HecoError::Config(format!(
                "class too small for {rate} training labels plus val/test"
            )));
        }
        for k in 0..ids.len() {
            let j = rng.gen_range(k..ids.len());
            ids.swap(k, j);
        }
        train.extend_from_slice(&ids[..rate]);
        rest.extend_from_slice(&ids[rate..]);
    }
    train.sort_unstable();
    for k in 0..rest.len() {
        let j = rng.gen_range(k..rest.len());
        rest.swap(k, j);
    }
    let held = if rest.len() >= 2000 { 1000 } else { rest.len() / 2 };
    let mut val = rest[..held].to_vec();
    let mut test = rest[held..held + held.min(rest.len() - held)].to_vec();
    if rest.len() >= 2000 {
        test = rest[1000..2000].to_vec();
    }
    val.sort_unstable();
    test.sort_unstable();
    let split = Split {
        label_rate: rate,
        train,
        val,
        test,
    };
    split.validate(n)?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{kmeans_cluster, nmi};
    use crate::hin::validate_graph;

    #[test]
    fn default_spec_generates_valid_graph() {
        let spec = SynthSpec::default();
        let data = generate_synthetic_hin(&spec, 7).unwrap();
        validate_graph(&data.graph).unwrap();
        assert_eq!(data.graph.num_targets(), 300);
        assert_eq!(data.meta_paths.len(), 2);
        assert_eq!(data.meta_paths[0].name, "PAP");
        assert_eq!(data.meta_paths[1].name, "PSP");
        assert_eq!(data.splits.len(), 3);
        let s20 = &data.splits[&20];
        assert_eq!(s20.train.len(), 60);
        assert_eq!(s20.val.len(), 120);
        assert_eq!(s20.test.len(), 120);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec::default();
        let a = generate_synthetic_hin(&spec, 9).unwrap();
        let b = generate_synthetic_hin(&spec, 9).unwrap();
        assert_eq!(a.graph.relations[0].edges, b.graph.relations[0].edges);
        match (&a.graph.features[0], &b.graph.features[0]) {
            (Features::Dense(x), Features::Dense(y)) => assert_eq!(x, y),
            _ => unreachable!(),
        }
        assert_eq!(a.splits[&20].train, b.splits[&20].train);
        let c = generate_synthetic_hin(&spec, 10).unwrap();
        assert_ne!(a.graph.relations[0].edges, c.graph.relations[0].edges);
    }

    #[test]
    fn edge_counts_track_probabilities() {
        let spec = SynthSpec::default();
        let data = generate_synthetic_hin(&spec, 11).unwrap();
        let rel = &data.graph.relations[0];
        // Expected edges: per class pairing 100 targets x 150 same-class aux at
        // 0.05, plus 100 x 300 cross-class at 0.005, times 3 classes.
        let expect = 3.0 * (100.0 * 150.0 * 0.05 + 100.0 * 300.0 * 0.005);
        let got = rel.edges.len() as f64;
        assert!(
            (got - expect).abs() < expect * 0.15,
            "edges {got} vs expected {expect}"
        );
    }

    #[test]
    fn noiseless_planting_is_perfectly_clusterable() {
        let spec = SynthSpec {
            noise: 0.0,
            targets_per_class: 10,
            aux_types: vec![AuxTypeSpec {
                name: "author".into(),
                count: 30,
                p_in: 0.3,
                p_out: 0.0,
            }],
            split_rates: vec![2],
            ..Default::default()
        };
        let data = generate_synthetic_hin(&spec, 13).unwrap();
        let feats = match &data.graph.features[0] {
            Features::Dense(m) => m.clone(),
            _ => unreachable!(),
        };
        let labels = data.graph.labels.clone().unwrap();
        let mut rng = rng_for(14, "noiseless");
        let report = kmeans_cluster(&feats, 3, &labels, 5, &mut rng).unwrap();
        assert_eq!(report.nmi_mean, 1.0);
        drop(nmi(&labels, &labels));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SynthSpec::default();
        spec.classes = 1;
        assert!(generate_synthetic_hin(&spec, 1).is_err());
        let mut spec = SynthSpec::default();
        spec.aux_types[0].p_in = 1.5;
        assert!(generate_synthetic_hin(&spec, 1).is_err());
    }
}
