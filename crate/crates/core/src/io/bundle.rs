//! On-disk dataset bundle: schema.json plus TSV node/feature/edge tables and
//! JSON split files. The writer is canonical, so generate -> load -> rewrite
//! is byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HecoError, Result};
use crate::eval::Split;
use crate::hin::{Features, HeteroGraph, MetaPath, MetaPathStep, Relation};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaFile {
    pub target: String,
    pub types: Vec<String>,
    pub features: BTreeMap<String, FeatureKind>,
    pub relations: Vec<RelationDecl>,
    pub meta_paths: Vec<MetaPathDecl>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    File,
    Onehot,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationDecl {
    pub name: String,
    pub src: String,
    pub dst: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaPathDecl {
    pub name: String,
    pub steps: Vec<StepDecl>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepDecl {
    pub relation: String,
    pub reverse: bool,
}

/// A fully loaded bundle: validated graph, resolved meta-paths, and whatever
/// splits the bundle ships.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub graph: HeteroGraph,
    pub meta_paths: Vec<MetaPath>,
    pub splits: BTreeMap<usize, Split>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| HecoError::io(path.display().to_string(), e))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> HecoError {
    HecoError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Load and validate a bundle directory. `l2norm` row-normalizes dense
/// feature tables at load time.
pub fn load_dataset(dir: &Path, l2norm: bool) -> Result<LoadedDataset> {
    let schema_path = dir.join("schema.json");
    let schema_text = fs::read_to_string(&schema_path)
        .map_err(|e| HecoError::io(schema_path.display().to_string(), e))?;
    let schema: SchemaFile = serde_json::from_str(&schema_text).map_err(|e| HecoError::Parse {
        path: schema_path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;

    let type_index = |name: &str| -> Result<usize> {
        schema
            .types
            .iter()
            .position(|t| t == name)
            .ok_or_else(|| HecoError::Graph(format!("schema.json references unknown type '{name}'")))
    };
    let target_type = type_index(&schema.target)?;

    // Node tables: dense ids, labels on the target type.
    let mut type_counts = Vec::with_capacity(schema.types.len());
    let mut labels: Option<Vec<usize>> = None;
    for (t, name) in schema.types.iter().enumerate() {
        let path = dir.join(format!("nodes_{name}.tsv"));
        let lines = read_lines(&path)?;
        let mut type_labels = Vec::new();
        for (lineno, line) in lines.iter().enumerate() {
            let mut parts = line.split('\t');
            let id: usize = parts
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|_| parse_err(&path, lineno + 1, "bad node id"))?;
            if id != lineno {
                return Err(parse_err(
                    &path,
                    lineno + 1,
                    format!("ids must be dense and ascending, expected {lineno} got {id}"),
                ));
            }
            if let Some(label) = parts.next() {
                let label: usize = label
                    .parse()
                    .map_err(|_| parse_err(&path, lineno + 1, "bad label"))?;
                type_labels.push(label);
            }
        }
        if t == target_type && !type_labels.is_empty() {
            if type_labels.len() != lines.len() {
                return Err(parse_err(&path, 0, "either all target nodes carry labels or none"));
            }
            labels = Some(type_labels);
        }
        type_counts.push(lines.len());
    }

    // Feature tables (or implicit one-hot).
    let mut features = Vec::with_capacity(schema.types.len());
    for (t, name) in schema.types.iter().enumerate() {
        let kind = schema
            .features
            .get(name)
            .copied()
            .ok_or_else(|| HecoError::Graph(format!("schema.json lacks a feature entry for '{name}'")))?;
        match kind {
            FeatureKind::Onehot => features.push(Features::OneHot(type_counts[t])),
            FeatureKind::File => {
                let path = dir.join(format!("features_{name}.tsv"));
                let lines = read_lines(&path)?;
                if lines.len() != type_counts[t] {
                    return Err(parse_err(
                        &path,
                        0,
                        format!("{} feature rows for {} nodes", lines.len(), type_counts[t]),
                    ));
                }
                let mut rows: Vec<Vec<f64>> = Vec::with_capacity(lines.len());
                for (lineno, line) in lines.iter().enumerate() {
                    let mut parts = line.split('\t');
                    let id: usize = parts
                        .next()
                        .unwrap_or_default()
                        .parse()
                        .map_err(|_| parse_err(&path, lineno + 1, "bad feature row id"))?;
                    if id != lineno {
                        return Err(parse_err(&path, lineno + 1, "feature rows must follow node ids"));
                    }
                    let row: Vec<f64> = parts
                        .map(|v| {
                            v.parse::<f64>()
                                .map_err(|_| parse_err(&path, lineno + 1, format!("bad float '{v}'")))
                        })
                        .collect::<Result<_>>()?;
                    if let Some(first) = rows.first() {
                        if row.len() != first.len() {
                            return Err(parse_err(&path, lineno + 1, "inconsistent feature width"));
                        }
                    }
                    rows.push(row);
                }
                let mut m = Matrix::from_rows(&rows)?;
                if l2norm {
                    for r in 0..m.rows() {
                        let norm = m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm > 0.0 {
                            for v in m.row_mut(r) {
                                *v /= norm;
                            }
                        }
                    }
                }
                features.push(Features::Dense(m));
            }
        }
    }

    // Edge tables.
    let mut relations = Vec::with_capacity(schema.relations.len());
    for decl in &schema.relations {
        let path = dir.join(format!("edges_{}.tsv", decl.name));
        if !path.exists() {
            return Err(HecoError::Data(format!(
                "missing edge file for relation '{}' ({})",
                decl.name,
                path.display()
            )));
        }
        let lines = read_lines(&path)?;
        let mut edges = Vec::with_capacity(lines.len());
        for (lineno, line) in lines.iter().enumerate() {
            let mut parts = line.split('\t');
            let s: u32 = parts
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|_| parse_err(&path, lineno + 1, "bad source id"))?;
            let d: u32 = parts
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|_| parse_err(&path, lineno + 1, "bad target id"))?;
            edges.push((s, d));
        }
        relations.push(Relation {
            name: decl.name.clone(),
            src_type: type_index(&decl.src)?,
            dst_type: type_index(&decl.dst)?,
            edges,
        });
    }

    let graph = HeteroGraph {
        type_names: schema.types.clone(),
        type_counts,
        target_type,
        features,
        relations,
        labels,
    };
    let diags = crate::hin::validate_graph(&graph)?;
    for w in &diags.warnings {
        log::warn!("{}: {w}", dir.display());
    }

    let mut meta_paths = Vec::with_capacity(schema.meta_paths.len());
    for decl in &schema.meta_paths {
        let steps = decl
            .steps
            .iter()
            .map(|s| {
                Ok(MetaPathStep {
                    relation: graph.relation_index(&s.relation)?,
                    reverse: s.reverse,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mp = MetaPath {
            name: decl.name.clone(),
            steps,
        };
        mp.validate(&graph)?;
        meta_paths.push(mp);
    }
    if meta_paths.is_empty() {
        return Err(HecoError::Graph("bundle declares no meta-paths".into()));
    }

    let mut splits = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| HecoError::io(dir.display().to_string(), e))?;
    let mut split_paths: Vec<(usize, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| HecoError::io(dir.display().to_string(), e))?;
        let fname = entry.file_name().to_string_lossy().into_owned();
        if let Some(rate) = fname
            .strip_prefix("splits_")
            .and_then(|s| s.strip_suffix(".json"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            split_paths.push((rate, entry.path()));
        }
    }
    split_paths.sort();
    for (rate, path) in split_paths {
        let text = fs::read_to_string(&path).map_err(|e| HecoError::io(path.display().to_string(), e))?;
        let split: Split = serde_json::from_str(&text).map_err(|e| HecoError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        split.validate(graph.num_targets())?;
        splits.insert(rate, split);
    }

    Ok(LoadedDataset {
        graph,
        meta_paths,
        splits,
    })
}

fn fmt_float(v: f64) -> String {
    format!("{v:.9e}")
}

/// Write a bundle in canonical form (fixed float format, declared orders).
pub fn write_bundle(dir: &Path, data: &LoadedDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HecoError::io(dir.display().to_string(), e))?;
    let g = &data.graph;
    let write = |path: PathBuf, content: String| -> Result<()> {
        fs::write(&path, content).map_err(|e| HecoError::io(path.display().to_string(), e))
    };

    let schema = SchemaFile {
        target: g.type_names[g.target_type].clone(),
        types: g.type_names.clone(),
        features: g
            .type_names
            .iter()
            .zip(&g.features)
            .map(|(n, f)| {
                let kind = match f {
                    Features::Dense(_) => FeatureKind::File,
                    Features::OneHot(_) => FeatureKind::Onehot,
                };
                (n.clone(), kind)
            })
            .collect(),
        relations: g
            .relations
            .iter()
            .map(|r| RelationDecl {
                name: r.name.clone(),
                src: g.type_names[r.src_type].clone(),
                dst: g.type_names[r.dst_type].clone(),
            })
            .collect(),
        meta_paths: data
            .meta_paths
            .iter()
            .map(|mp| MetaPathDecl {
                name: mp.name.clone(),
                steps: mp
                    .steps
                    .iter()
                    .map(|s| StepDecl {
                        relation: g.relations[s.relation].name.clone(),
                        reverse: s.reverse,
                    })
                    .collect(),
            })
            .collect(),
    };
    let schema_json = serde_json::to_string_pretty(&schema).expect("schema serializes");
    write(dir.join("schema.json"), schema_json + "\n")?;

    for (t, name) in g.type_names.iter().enumerate() {
        let mut out = String::new();
        for i in 0..g.type_counts[t] {
            if t == g.target_type {
                if let Some(labels) = &g.labels {
                    writeln!(out, "{i}\t{}", labels[i]).unwrap();
                    continue;
                }
            }
            writeln!(out, "{i}").unwrap();
        }
        write(dir.join(format!("nodes_{name}.tsv")), out)?;

        if let Features::Dense(m) = &g.features[t] {
            let mut out = String::new();
            for r in 0..m.rows() {
                write!(out, "{r}").unwrap();
                for v in m.row(r) {
                    write!(out, "\t{}", fmt_float(*v)).unwrap();
                }
                out.push('\n');
            }
            write(dir.join(format!("features_{name}.tsv")), out)?;
        }
    }

    for rel in &g.relations {
        let mut out = String::new();
        for &(s, d) in &rel.edges {
            writeln!(out, "{s}\t{d}").unwrap();
        }
        write(dir.join(format!("edges_{}.tsv", rel.name)), out)?;
    }

    for (rate, split) in &data.splits {
        let json = serde_json::to_string_pretty(split).expect("split serializes");
        write(dir.join(format!("splits_{rate}.json")), json + "\n")?;
    }
    Ok(())
}
