use std::collections::{BTreeMap, BTreeSet};
use std::error::Error;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::{
    AddArgs, AnalyzeArgs, Cli, Command, EvalArgs, IngestArgs, SampleArgs, SearchArgs, ShapesArgs,
    Split, StoreCommand, TrainArgs,
};
use crate::atomic::write_atomic;
use crate::metrics::{cross_dataset_matrix, ndcg_vs_final_curve, rank_change_stats, RankedList};
use crate::predictor::checkpoint;
use crate::search::{
    fit_predictor, run_search, trace_csv, transfer_predictor, Oracle, SearchConfig,
    SyntheticOracle,
};
use crate::search_space::{sample_unique, ArchJson, ArchSpec, HashId};
use crate::shapes::{infer_shapes, normalize_shapes, ShapeNormalizer};
use crate::store::{
    accuracies_at, holdout, synthetic_log, BenchRecord, BenchmarkStore, DatasetProfile, OracleCurve,
};

type Result<T> = std::result::Result<T, Box<dyn Error + Send + Sync>>;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Sample(a) => sample(a, cli.seed),
        Command::Shapes(a) => shapes(a),
        Command::Store { action } => match action {
            StoreCommand::Init(a) => {
                BenchmarkStore::init(&a.store)?;
                Ok(())
            }
            StoreCommand::Add(a) => store_add(a),
            StoreCommand::Ingest(a) => store_ingest(a),
            StoreCommand::Stats(a) => {
                let stats = BenchmarkStore::open(&a.store)?.stats()?;
                emit(None, &to_json(&stats))
            }
        },
        Command::Train(a) => train(a, cli.seed),
        Command::Eval(a) => eval(a, cli.seed),
        Command::Search(a) => search(a, cli.seed),
        Command::Analyze(a) => analyze(a),
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

/// Writes `bytes` atomically to `path`, or to stdout without a path.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes).map_err(|e| format!("{}: {e}", p.display()).into()),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn profile(name: &str) -> Result<DatasetProfile> {
    DatasetProfile::builtin(name).ok_or_else(|| {
        format!(
            "unknown profile {name:?}; expected one of {}",
            DatasetProfile::BUILTIN.join(", ")
        )
        .into()
    })
}

fn read_arch(path: &Path) -> Result<ArchSpec> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let json: ArchJson = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(ArchSpec::try_from(json).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn json_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| format!("{}: {e}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

fn sample(a: &SampleArgs, seed: u64) -> Result<()> {
    let specs = sample_unique(a.count, seed, a.edge_prob)?;
    fs::create_dir_all(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    for spec in &specs {
        let path = a.out.join(format!("{}.json", spec.hash()));
        write_atomic(&path, &to_json(&ArchJson::from(spec.clone())))?;
    }
    log::info!("wrote {} architectures to {}", specs.len(), a.out.display());
    Ok(())
}

fn shapes(a: &ShapesArgs) -> Result<()> {
    let spec = read_arch(&a.arch)?;
    let vs = infer_shapes(&spec, a.input)?;
    let norm = a.max.map(ShapeNormalizer::from_shape).unwrap_or_default();
    let normalized = normalize_shapes(&vs, &norm)?;
    let out = json!({
        "input": vs.input_shape,
        "max": norm.maxima(),
        "shapes": vs.shapes,
        "normalized": normalized,
    });
    emit(None, &to_json(&out))
}

fn store_add(a: &AddArgs) -> Result<()> {
    let store = BenchmarkStore::init(&a.store.store)?;
    let profiles = a
        .synthetic
        .iter()
        .map(|n| profile(n))
        .collect::<Result<Vec<_>>>()?;
    let specs = json_files(&a.arch)?
        .iter()
        .map(|p| read_arch(p))
        .collect::<Result<Vec<_>>>()?;
    let records = specs
        .into_par_iter()
        .map(|spec| {
            profiles.iter().try_fold(BenchRecord::new(spec.clone()), |r, p| {
                synthetic_log(&spec, p, a.total_epochs).map(|log| r.with_log(log))
            })
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    records
        .par_iter()
        .map(|r| store.save(r))
        .collect::<std::result::Result<Vec<()>, _>>()?;
    log::info!("added {} records", records.len());
    Ok(())
}

fn store_ingest(a: &IngestArgs) -> Result<()> {
    let store = BenchmarkStore::init(&a.store.store)?;
    let report = store.ingest_external(&a.path, a.dataset.as_deref())?;
    for (file, err) in &report.errors {
        log::warn!("{}: {err}", file.display());
    }
    let errors: Vec<_> = report
        .errors
        .iter()
        .map(|(f, e)| json!({"file": f.display().to_string(), "error": e.to_string()}))
        .collect();
    emit(None, &to_json(&json!({"merged": report.merged, "errors": errors})))
}

fn in_split(hash: &HashId, split: Split, seed: u64) -> bool {
    match split {
        Split::All => true,
        Split::Val => holdout(hash, seed),
        Split::Train => !holdout(hash, seed),
    }
}

/// Default maxima covering every record under every input shape it is
/// logged with and under every built-in profile.
fn store_normalizer(records: &[BenchRecord]) -> Result<ShapeNormalizer> {
    let mut inputs: BTreeSet<[usize; 3]> = DatasetProfile::all_builtin()
        .iter()
        .map(|p| p.input_shape.as_array())
        .collect();
    for r in records {
        inputs.extend(r.logs.values().map(|l| l.input_shape.as_array()));
    }
    let mut norm = ShapeNormalizer::default();
    for r in records {
        for input in &inputs {
            norm = norm.covering([&infer_shapes(&r.spec, (*input).try_into()?)?]);
        }
    }
    Ok(norm)
}

fn train(a: &TrainArgs, seed: u64) -> Result<()> {
    let store = BenchmarkStore::open(&a.store.store)?;
    let all = store.load_all()?;
    let normalizer = store_normalizer(&all)?;
    let records: Vec<BenchRecord> = all
        .into_iter()
        .filter(|r| r.log(&a.dataset).is_some() && in_split(&r.hash, Split::Train, seed))
        .collect();
    if records.len() < 2 {
        return Err(format!("need at least two training records with {} logs", a.dataset).into());
    }
    let accs = accuracies_at(&records, &a.dataset, a.label_epoch)?;
    let cfg = a.fit.to_config();
    let encoder = cfg.encoder(normalizer);
    let graphs = records
        .iter()
        .map(|r| encoder.encode_spec(&r.spec, r.log(&a.dataset).expect("filtered").input_shape))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let model = fit_predictor(&graphs, &accs, encoder, &cfg, seed);
    emit(Some(&a.out), &checkpoint::to_bytes(&model))?;
    log::info!("trained on {} records, wrote {}", records.len(), a.out.display());
    Ok(())
}

fn eval(a: &EvalArgs, seed: u64) -> Result<()> {
    let bytes = fs::read(&a.model).map_err(|e| format!("{}: {e}", a.model.display()))?;
    let model = checkpoint::from_bytes(&bytes)?;
    let store = BenchmarkStore::open(&a.store.store)?;
    let records: Vec<BenchRecord> = store
        .load_all()?
        .into_iter()
        .filter(|r| in_split(&r.hash, a.split, seed))
        .collect();
    let report = transfer_predictor(&model, &a.dataset, &records, a.epoch)?;
    emit(a.metrics.as_deref(), &to_json(&report))
}

fn search(a: &SearchArgs, seed: u64) -> Result<()> {
    let prof = profile(&a.profile)?;
    let pool = sample_unique(a.pool, seed, a.edge_prob)?;
    let oracle = SyntheticOracle {
        profile: prof.clone(),
        epoch: a.label_epoch,
        total_epochs: a.total_epochs,
    };
    let truth = pool
        .par_iter()
        .map(|s| OracleCurve::new(s, &prof, a.total_epochs).and_then(|c| c.accuracy(a.total_epochs)))
        .collect::<std::result::Result<Vec<f64>, _>>()?;
    let cfg = SearchConfig {
        iterations: a.iters,
        per_iter: a.per_iter,
        fit: a.fit.to_config(),
        seed,
    };
    let outcome = run_search(&pool, prof.input_shape, &oracle as &dyn Oracle, &cfg, Some(&truth))?;
    for row in &outcome.trace {
        for w in &row.warnings {
            log::warn!("iteration {}: {w}", row.iteration);
        }
    }
    emit(Some(&a.trace), trace_csv(&outcome.trace).as_bytes())?;
    let summary = json!({
        "hash": outcome.best.hash(),
        "accuracy": outcome.best_acc,
        "evaluated": outcome.evaluated.len(),
        "arch": ArchJson::from(outcome.best.clone()),
    });
    emit(a.out.as_deref(), &to_json(&summary))
}

/// Per-epoch rankings over records that log every common epoch.
fn epoch_rankings(records: &[BenchRecord], dataset: &str) -> Result<(Vec<u32>, Vec<RankedList<HashId>>)> {
    let logs: Vec<_> = records.iter().filter_map(|r| r.log(dataset).map(|l| (&r.hash, l))).collect();
    if logs.len() < 2 {
        return Err(format!("need at least two records with {dataset} logs").into());
    }
    let mut common: BTreeSet<u32> = logs[0].1.epochs.iter().map(|e| e.epoch).collect();
    for (_, l) in &logs[1..] {
        let mine: BTreeSet<u32> = l.epochs.iter().map(|e| e.epoch).collect();
        common = common.intersection(&mine).copied().collect();
    }
    let epochs: Vec<u32> = common.into_iter().collect();
    let lists = epochs
        .iter()
        .map(|&e| {
            RankedList::from_scores(
                logs.iter()
                    .map(|(h, l)| ((*h).clone(), l.accuracy_at(e).expect("common epoch"))),
            )
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((epochs, lists))
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    Ok(w.into_inner().map_err(|e| e.to_string())?)
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    if !a.cross.is_empty() {
        return analyze_cross(a);
    }
    let root = a.store.as_ref().ok_or("--store (or GRASP_STORE) is required")?;
    let dataset = a.dataset.as_deref().ok_or("--dataset is required")?;
    let records = BenchmarkStore::open(root)?.load_all()?;
    let (epochs, lists) = epoch_rankings(&records, dataset)?;
    let n = lists[0].len();
    let k = a.k.unwrap_or(10).min(n);
    let at_k = ndcg_vs_final_curve(&lists, k)?;
    let full = ndcg_vs_final_curve(&lists, n)?;
    let rows = epochs
        .iter()
        .zip(at_k.iter().zip(&full))
        .map(|(e, (k, f))| vec![e.to_string(), k.to_string(), f.to_string()]);
    let bytes = csv_bytes(&["epoch", "one_minus_ndcg_at_k", "one_minus_ndcg_full"], rows)?;
    emit(a.out.as_deref(), &bytes)?;
    if let Some(path) = &a.changes {
        let stats = rank_change_stats(&lists)?;
        let rows = epochs.iter().enumerate().map(|(i, e)| {
            let cumulative: u32 = stats.cumulative[i].iter().sum();
            vec![e.to_string(), stats.per_epoch[i].to_string(), cumulative.to_string()]
        });
        emit(Some(path), &csv_bytes(&["epoch", "changed", "cumulative_changes"], rows)?)?;
    }
    Ok(())
}

fn analyze_cross(a: &AnalyzeArgs) -> Result<()> {
    let mut columns: Vec<(String, BTreeMap<HashId, f64>)> = Vec::new();
    for root in &a.cross {
        for r in BenchmarkStore::open(root)?.load_all()? {
            for (name, log) in &r.logs {
                let Some(last) = log.epochs.last() else { continue };
                let label = format!("{}:{name}", root.display());
                match columns.iter_mut().find(|(l, _)| *l == label) {
                    Some((_, m)) => {
                        m.insert(r.hash.clone(), last.val_acc);
                    }
                    None => columns.push((label, [(r.hash.clone(), last.val_acc)].into())),
                }
            }
        }
    }
    if columns.is_empty() {
        return Err("no dataset logs in the given stores".into());
    }
    let names: BTreeSet<&str> = columns.iter().map(|(l, _)| l.rsplit(':').next().unwrap_or(l)).collect();
    let short = names.len() == columns.len();
    let common: BTreeSet<HashId> = columns
        .iter()
        .map(|(_, m)| m.keys().cloned().collect::<BTreeSet<_>>())
        .reduce(|a, b| a.intersection(&b).cloned().collect())
        .unwrap_or_default();
    if common.len() < 2 {
        return Err("fewer than two architectures are shared by every dataset".into());
    }
    let rankings = columns
        .iter()
        .map(|(label, m)| {
            let label = if short {
                label.rsplit(':').next().unwrap_or(label).to_string()
            } else {
                label.clone()
            };
            RankedList::from_scores(common.iter().map(|h| (h.clone(), m[h]))).map(|l| (label, l))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let k = a.k.map(|k| k.min(common.len()));
    let matrix = cross_dataset_matrix(&rankings, k)?;
    emit(a.out.as_deref(), &to_json(&matrix))
}
