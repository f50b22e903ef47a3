//! Subcommand bodies. Each reads its inputs, writes artifacts under the
//! output directory and prints a short summary to stdout.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sgground_core::audit::{audit_queries, write_scatter_csv};
use sgground_core::dataset::{generate_synthetic, load_dataset, save_dataset, split_dataset};
use sgground_core::relmodel::{load_models, save_models, train_relationship_models};
use sgground_core::retrieval::{
    averaged_curves, evaluate_query, positive_flags, query_curves, score_dataset_baseline, score_dataset_irsg,
    write_per_query_csv, write_ratk_csv, QueryEvaluation,
};
use sgground_core::scenegraph::{normalize_labels, parse_scene_graph};
use sgground_core::{BoundingBox, Dataset, Method, ModelSet, NamedQuery, NodeId};

use crate::config::RunConfig;
use crate::error::CliError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = RunConfig::require(&cfg.paths.out, "output (--out)")?.to_path_buf();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

/// Keeps ids usable as file names.
fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn load_query_file(path: &Path) -> Result<NamedQuery, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let graph = parse_scene_graph(&text)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "query".into());
    Ok(NamedQuery { id, graph })
}

/// A single query file, or every `*.json` file of a directory in name order.
pub fn load_queries(path: &Path) -> Result<Vec<NamedQuery>, CliError> {
    if !path.is_dir() {
        return Ok(vec![load_query_file(path)?]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!("no query files in {}", path.display())));
    }
    files.iter().map(|f| load_query_file(f)).collect()
}

fn dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    Ok(load_dataset(RunConfig::require(&cfg.paths.dataset, "dataset")?)?)
}

fn models(cfg: &RunConfig) -> Result<ModelSet, CliError> {
    Ok(load_models(RunConfig::require(&cfg.paths.models, "models")?)?)
}

fn count_positives(q: &NamedQuery, d: &Dataset) -> Result<usize, CliError> {
    Ok(positive_flags(&q.graph, d)?.into_iter().filter(|p| *p).count())
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg.seed()?;
    let out = out_dir(cfg)?;
    let set = generate_synthetic(&cfg.synth, seed)?;
    let (train, test) = split_dataset(&set.dataset, cfg.split.train_fraction, seed)?;
    save_dataset(&set.dataset, &out.join("dataset.jsonl"))?;
    save_dataset(&train, &out.join("train.jsonl"))?;
    save_dataset(&test, &out.join("test.jsonl"))?;
    let qdir = out.join("queries");
    fs::create_dir_all(&qdir).map_err(io_err(&qdir))?;
    for q in &set.queries {
        let path = qdir.join(format!("{}.json", file_stem_for(&q.id)));
        write_with(&path, |w| writeln!(w, "{}", q.graph.to_json()))?;
    }
    println!(
        "images: {} (train {}, test {})",
        set.dataset.len(),
        train.len(),
        test.len()
    );
    println!("query\tpositives\ttrain\ttest");
    for q in &set.queries {
        println!(
            "{}\t{}\t{}\t{}",
            q.id,
            count_positives(q, &set.dataset)?,
            count_positives(q, &train)?,
            count_positives(q, &test)?
        );
    }
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg.seed()?;
    let out = out_dir(cfg)?;
    let data = dataset(cfg)?;
    let report = train_relationship_models(&data, &cfg.train, seed)?;
    save_models(&report.models, &out.join("models.json"))?;
    println!("predicate\tpositives\tnegatives\ta\tb");
    for (p, pos, neg) in &report.sample_counts {
        if let Some(m) = report.models.get(p) {
            println!("{p}\t{pos}\t{neg}\t{:.4}\t{:.4}", m.platt.a, m.platt.b);
        }
    }
    for s in &report.skipped {
        println!("skipped {} ({} positives): {}", s.predicate, s.positives, s.reason);
    }
    Ok(())
}

#[derive(Serialize)]
struct GroundedNode<'a> {
    node_id: NodeId,
    category: &'a str,
    candidate: usize,
    #[serde(rename = "box")]
    bbox: BoundingBox,
}

#[derive(Serialize)]
struct GroundingFile<'a> {
    query_id: &'a str,
    image_id: &'a str,
    energy: f64,
    converged: bool,
    iterations: usize,
    nodes: Vec<GroundedNode<'a>>,
}

pub fn ground(cfg: &RunConfig, query: &Path) -> Result<(), CliError> {
    let out = out_dir(cfg)?.join("groundings");
    let q = load_query_file(query)?;
    let data = dataset(cfg)?;
    let models = models(cfg)?;
    let scored = score_dataset_irsg(&q.graph, &data, &models, &cfg.bp)?;
    let sg = normalize_labels(&q.graph, &data.synonyms);
    let mut unconverged = 0;
    for (img, (_, g)) in data.images.iter().zip(&scored) {
        if !g.converged {
            unconverged += 1;
        }
        let nodes = sg
            .objects()
            .iter()
            .zip(&g.assignment)
            .map(|(o, &c)| GroundedNode {
                node_id: o.id,
                category: &o.category,
                candidate: c,
                bbox: img.candidates[c].bbox,
            })
            .collect();
        let file = GroundingFile {
            query_id: &q.id,
            image_id: &img.image_id,
            energy: g.energy,
            converged: g.converged,
            iterations: g.iterations,
            nodes,
        };
        write_json(&out.join(format!("{}.json", file_stem_for(&img.image_id))), &file)?;
    }
    println!("grounded {} images for {} ({unconverged} without BP convergence)", scored.len(), q.id);
    Ok(())
}

pub fn retrieve(cfg: &RunConfig, query: &Path, method: Method) -> Result<(), CliError> {
    let out = out_dir(cfg)?;
    let q = load_query_file(query)?;
    let data = dataset(cfg)?;
    let scores: Vec<f64> = match method {
        Method::Irsg => score_dataset_irsg(&q.graph, &data, &models(cfg)?, &cfg.bp)?
            .into_iter()
            .map(|(e, _)| e)
            .collect(),
        Method::Baseline => score_dataset_baseline(&q.graph, &data)?,
    };
    let ids: Vec<String> = data.images.iter().map(|i| i.image_id.clone()).collect();
    let ranked = QueryEvaluation::new(q.id.clone(), method, ids, scores, vec![false; data.len()])?;
    let path = out.join(format!("ranking_{}_{}.csv", file_stem_for(&q.id), method));
    write_with(&path, |w| {
        writeln!(w, "rank,image_id,score")?;
        for (rank, &i) in ranked.ranking().iter().enumerate() {
            writeln!(w, "{},{},{}", rank + 1, ranked.image_ids[i], ranked.scores[i])?;
        }
        Ok(())
    })?;
    println!("ranked {} images for {} by {method}", data.len(), q.id);
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let out = out_dir(cfg)?;
    let data = dataset(cfg)?;
    let queries = load_queries(RunConfig::require(&cfg.paths.queries, "queries")?)?;
    let models = if cfg.eval.methods.contains(&Method::Irsg) {
        Some(models(cfg)?)
    } else {
        None
    };
    let mut evals = Vec::new();
    for q in &queries {
        let e = evaluate_query(q, &data, models.as_ref(), &cfg.eval.methods, &cfg.bp)?;
        let first = &e[0];
        if first.num_positives() == 0 || first.num_negatives() == 0 {
            log::warn!(
                "skipping {}: {} positives, {} negatives",
                q.id,
                first.num_positives(),
                first.num_negatives()
            );
            continue;
        }
        evals.extend(e);
    }
    if evals.is_empty() {
        return Err(CliError::Domain("no query has both positive and negative images".into()));
    }
    let curves = averaged_curves(&evals, cfg.eval.k_max, cfg.eval.ratk_mode)?;
    let per_query = query_curves(&evals, cfg.eval.k_max, cfg.eval.ratk_mode)?;
    let ratk = out.join("ratk.csv");
    write_with(&ratk, |w| write_ratk_csv(&curves, w))?;
    let pq = out.join("per_query.csv");
    write_with(&pq, |w| write_per_query_csv(&per_query, w))?;
    println!("evaluated {} queries on {} images", evals.len() / cfg.eval.methods.len(), data.len());
    println!("method\tR@1\tR@5\tR@10");
    for c in &curves {
        let at = |k: usize| c.recall.get(k - 1).copied().unwrap_or(f64::NAN);
        println!("{}\t{:.4}\t{:.4}\t{:.4}", c.method, at(1), at(5), at(10));
    }
    Ok(())
}

pub fn audit(cfg: &RunConfig) -> Result<(), CliError> {
    let out = out_dir(cfg)?;
    let data = dataset(cfg)?;
    let queries = load_queries(RunConfig::require(&cfg.paths.queries, "queries")?)?;
    let models = match &cfg.paths.models {
        Some(_) => Some(models(cfg)?),
        None => None,
    };
    let (report, linearity) = audit_queries(&queries, &data, models.as_ref(), &cfg.audit_options())?;
    write_json(&out.join("bias_report.json"), &report)?;
    for lin in &linearity {
        let path = out.join(format!("scatter_{}.csv", file_stem_for(&lin.query_id)));
        write_with(&path, |w| write_scatter_csv(&lin.points, w))?;
    }
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    println!("query\tpositives\tsingle_instance\tany_instance\tr_squared");
    for q in &report.queries {
        println!(
            "{}\t{}\t{}\t{}\t{}",
            q.query_id,
            q.positives,
            fmt(q.single_instance_fraction),
            fmt(q.any_instance_fraction),
            fmt(q.linearity.as_ref().map(|l| l.r_squared))
        );
    }
    println!(
        "unique queries: {} of {}; strongly linear fraction: {}",
        report.unique_query_count,
        queries.len(),
        fmt(report.fraction_strongly_linear)
    );
    Ok(())
}
