//! Downstream evaluation: linear-probe classification at several label
//! rates, k-means clustering scored by NMI/ARI, silhouette, and a 2-D PCA
//! export. All reported metrics are means with stds over seeded runs.

mod cluster;
mod metrics;
mod pca;
mod probe;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use cluster::{ari, kmeans, kmeans_cluster, nmi, silhouette, ClusterReport, KmeansOutcome};
pub use metrics::{classification_metrics, ClassificationMetrics};
pub use pca::project_2d;
pub use probe::{train_linear_probe, ProbeConfig, TrainedProbe};

use crate::error::{HecoError, Result};
use crate::seeding::rng_for;
use crate::tensor::Matrix;

/// Train/val/test node-id lists for one label rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Split {
    /// Labeled nodes per class used for training (20/40/60 in the standard
    /// protocol).
    pub label_rate: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (part, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if ids.is_empty() {
                return Err(HecoError::Data(format!("split part '{part}' is empty")));
            }
            for &i in ids {
                if i >= n {
                    return Err(HecoError::Data(format!(
                        "split part '{part}' references node {i} of {n}"
                    )));
                }
                if seen[i] {
                    return Err(HecoError::Data(format!(
                        "node {i} appears in more than one split part"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    pub split: String,
    pub mean: f64,
    pub std: f64,
}

/// Per-metric mean and std over the evaluation runs, in a fixed row order.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn get(&self, metric: &str, split: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.metric == metric && r.split == split)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,split,mean,std\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.6},{:.6}\n", r.metric, r.split, r.mean, r.std));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<12} {:>6} {:>10} {:>8}\n", "metric", "split", "mean", "std"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>6} {:>10.4} {:>8.4}\n",
                r.metric, r.split, r.mean, r.std
            ));
        }
        out
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub probe: ProbeConfig,
    pub runs: usize,
    pub kmeans_restarts: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            probe: ProbeConfig::default(),
            runs: 10,
            kmeans_restarts: 10,
        }
    }
}

/// The full protocol: per label rate, a probe trained on the split and scored
/// on test; plus k-means NMI/ARI over restarts and the silhouette against the
/// ground-truth classes. Each run re-seeds the probe init and the k-means
/// starts from streams derived from (seed, run).
pub fn evaluate_embeddings(
    embeddings: &Matrix,
    labels: &[usize],
    splits: &BTreeMap<usize, Split>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    if labels.len() != embeddings.rows() {
        return Err(HecoError::Contract("labels misaligned with embeddings".into()));
    }
    if splits.is_empty() {
        return Err(HecoError::Data("no splits provided".into()));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    for split in splits.values() {
        split.validate(embeddings.rows())?;
    }

    let mut report = EvalReport::default();
    let mut probe_rows: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    let mut nmis = Vec::with_capacity(cfg.runs);
    let mut aris = Vec::with_capacity(cfg.runs);

    for run in 0..cfg.runs {
        for (&rate, split) in splits {
            let mut rng = rng_for(seed, &format!("eval/run{run}/probe{rate}"));
            let probe = train_linear_probe(embeddings, labels, split, classes, &cfg.probe, &mut rng)?;
            let truth: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
            let pred = probe.predict(embeddings, &split.test);
            let scores = probe.scores(embeddings, &split.test);
            let m = classification_metrics(&pred, &scores, &truth)?;
            probe_rows.entry(("macro_f1".into(), rate)).or_default().push(m.macro_f1);
            probe_rows.entry(("micro_f1".into(), rate)).or_default().push(m.micro_f1);
            probe_rows.entry(("auc".into(), rate)).or_default().push(m.auc);
        }
        let mut rng = rng_for(seed, &format!("eval/run{run}/kmeans"));
        let cluster = kmeans_cluster(embeddings, classes, labels, cfg.kmeans_restarts, &mut rng)?;
        nmis.push(cluster.nmi_mean);
        aris.push(cluster.ari_mean);
    }

    for metric in ["macro_f1", "micro_f1", "auc"] {
        for &rate in splits.keys() {
            let values = &probe_rows[&(metric.to_string(), rate)];
            let (mean, std) = mean_std(values);
            report.rows.push(ReportRow {
                metric: metric.into(),
                split: rate.to_string(),
                mean,
                std,
            });
        }
    }
    let (nmi_mean, nmi_std) = mean_std(&nmis);
    report.rows.push(ReportRow {
        metric: "nmi".into(),
        split: "-".into(),
        mean: nmi_mean,
        std: nmi_std,
    });
    let (ari_mean, ari_std) = mean_std(&aris);
    report.rows.push(ReportRow {
        metric: "ari".into(),
        split: "-".into(),
        mean: ari_mean,
        std: ari_std,
    });
    let sil = silhouette(embeddings, labels)?;
    report.rows.push(ReportRow {
        metric: "silhouette".into(),
        split: "-".into(),
        mean: sil,
        std: 0.0,
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn clustered_embeddings(n_per: usize, classes: usize, sep: f64) -> (Matrix, Vec<usize>) {
        let mut rng = rng_for(7, "eval-fixture");
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        // Interleave classes so every contiguous split slice is mixed.
        for i in 0..n_per * classes {
            let c = i % classes;
            let mut row = vec![0.0; classes + 1];
            row[c] = sep + rng.gen::<f64>();
            row[classes] = rng.gen::<f64>();
            rows.push(row);
            labels.push(c);
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    fn make_splits(labels: &[usize], rate: usize) -> BTreeMap<usize, Split> {
        let n = labels.len();
        let classes = labels.iter().max().unwrap() + 1;
        let mut train = Vec::new();
        let mut taken = vec![0usize; classes];
        let mut rest = Vec::new();
        for i in 0..n {
            if taken[labels[i]] < rate {
                taken[labels[i]] += 1;
                train.push(i);
            } else {
                rest.push(i);
            }
        }
        let half = rest.len() / 2;
        let split = Split {
            label_rate: rate,
            train,
            val: rest[..half].to_vec(),
            test: rest[half..].to_vec(),
        };
        BTreeMap::from([(rate, split)])
    }

    #[test]
    fn report_has_fixed_row_structure() {
        let (emb, labels) = clustered_embeddings(30, 3, 4.0);
        let splits = make_splits(&labels, 5);
        let cfg = EvalConfig {
            runs: 3,
            kmeans_restarts: 2,
            probe: ProbeConfig {
                steps: 40,
                ..Default::default()
            },
        };
        let report = evaluate_embeddings(&emb, &labels, &splits, &cfg, 11).unwrap();
        let metrics: Vec<&str> = report.rows.iter().map(|r| r.metric.as_str()).collect();
        assert_eq!(
            metrics,
            vec!["macro_f1", "micro_f1", "auc", "nmi", "ari", "silhouette"]
        );
        assert!(report.rows.iter().all(|r| r.std >= 0.0));
        // Well-separated clusters: strong scores.
        assert!(report.get("macro_f1", "5").unwrap().mean > 0.95);
        assert!(report.get("nmi", "-").unwrap().mean > 0.9);
        let csv = report.to_csv();
        assert!(csv.starts_with("metric,split,mean,std\n"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn evaluation_is_deterministic_per_seed() {
        let (emb, labels) = clustered_embeddings(20, 2, 2.0);
        let splits = make_splits(&labels, 4);
        let cfg = EvalConfig {
            runs: 2,
            kmeans_restarts: 2,
            probe: ProbeConfig {
                steps: 20,
                ..Default::default()
            },
        };
        let a = evaluate_embeddings(&emb, &labels, &splits, &cfg, 5).unwrap();
        let b = evaluate_embeddings(&emb, &labels, &splits, &cfg, 5).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn overlapping_split_is_rejected() {
        let (emb, labels) = clustered_embeddings(10, 2, 2.0);
        let mut splits = make_splits(&labels, 2);
        let first_test = splits[&2].test[0];
        splits.get_mut(&2).unwrap().train.push(first_test);
        assert!(evaluate_embeddings(&emb, &labels, &splits, &EvalConfig::default(), 1).is_err());
    }
}
