//! The pipeline stages behind each subcommand.
//!
//! Stages communicate only through files in the output directory, tracked by
//! the artifact index: later stages refuse to run if an upstream artifact is
//! missing or fails its content hash. The stage pipeline audits the full
//! member/external pools; `sweep` runs the size-pair grid instead.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use gmint::auditor::{predict_membership, train_mint, AuditorConfig, MintAuditor};
use gmint::autodiff::ParameterSet;
use gmint::eval::{
    prepare_pipeline, roc_curve, run_cell, summarize_cells, AuditReport, CellRecord, RocCurve,
};
use gmint::models::{AuditedModel, AuditedModelSpec, EpochStats, TrainConfig};
use gmint::probe::{
    build_mint_dataset, read_features, write_features, GradientFeature, ProbeInput,
};
use gmint::seed;
use gmint::text::Corpus;

use crate::artifacts::ArtifactIndex;
use crate::config::{CorpusSource, ExperimentConfig};
use crate::{classify, log, CliError};

const CORPUS_FILE: &str = "corpus.jsonl";
const MODEL_FILE: &str = "model.gmwt";
const MODEL_META_FILE: &str = "model.json";
const SPLIT_FILE: &str = "split.json";
const FEATURES_FILE: &str = "features.gmnt";
const FEATURES_META_FILE: &str = "features.json";
const AUDITOR_FILE: &str = "auditor.gmwt";
const AUDITOR_META_FILE: &str = "auditor.json";
const REPORT_FILE: &str = "report.json";
const SWEEP_REPORT_FILE: &str = "sweep_report.json";

pub struct Ctx<'a> {
    pub config: &'a ExperimentConfig,
    pub config_dir: &'a Path,
    pub output_dir: &'a Path,
    pub config_hash: String,
}

impl Ctx<'_> {
    fn index(&self) -> Result<ArtifactIndex, CliError> {
        ArtifactIndex::load_or_new(self.output_dir, &self.config_hash)
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<(), CliError> {
        let path = self.output_dir.join(rel);
        let json = serde_json::to_vec_pretty(value)
            .map_err(|e| CliError::Internal(format!("serialize {rel}: {e}")))?;
        std::fs::write(&path, json)
            .map_err(|e| CliError::Internal(format!("write {}: {e}", path.display())))?;
        Ok(())
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, path: &Path) -> Result<T, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Dependency(format!("read {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Dependency(format!("parse {}: {e}", path.display())))
    }
}

// ---------------------------------------------------------------- gen-data

pub fn cmd_gen_data(ctx: &Ctx) -> Result<(), CliError> {
    let CorpusSource::Synthetic { .. } = &ctx.config.corpus else {
        return Err(CliError::Usage(
            "gen-data requires a synthetic corpus spec in the config (corpus.kind = \"synthetic\")"
                .to_string(),
        ));
    };
    let mut index = ctx.index()?;
    let corpus = ctx.config.corpus.load(ctx.config_dir)?;
    export_corpus(ctx, &mut index, &corpus, "corpus", CORPUS_FILE)?;
    for source in &ctx.config.external_corpora {
        if let CorpusSource::Synthetic { name, .. } = source {
            let external = source.load(ctx.config_dir)?;
            let rel = format!("external_{name}.jsonl");
            export_corpus(ctx, &mut index, &external, &format!("external:{name}"), &rel)?;
        }
    }
    index.save(ctx.output_dir)?;
    println!("gen-data: wrote {} samples to {CORPUS_FILE}", corpus.samples.len());
    Ok(())
}

fn export_corpus(
    ctx: &Ctx,
    index: &mut ArtifactIndex,
    corpus: &Corpus,
    role: &str,
    rel: &str,
) -> Result<(), CliError> {
    let path = ctx.output_dir.join(rel);
    gmint::text::export(corpus, &path).map_err(classify::text)?;
    index.record(ctx.output_dir, role, rel)?;
    let meta_rel = format!("{rel}.meta.json");
    index.record(ctx.output_dir, &format!("{role}-meta"), &meta_rel)?;
    log::debug(&format!("exported corpus {role} -> {rel}"));
    Ok(())
}

/// The audited corpus: from the generated artifact when present, otherwise
/// straight from the config source.
fn load_corpus(ctx: &Ctx, index: &ArtifactIndex) -> Result<Corpus, CliError> {
    if index.artifacts.contains_key("corpus") {
        let path = index.require(ctx.output_dir, "corpus")?;
        index.require(ctx.output_dir, "corpus-meta")?;
        let mut corpus = gmint::text::ingest(&path, gmint::text::CorpusFormat::Jsonl)
            .map_err(classify::text)?;
        corpus.name = ctx.config.corpus.name();
        return Ok(corpus);
    }
    ctx.config.corpus.load(ctx.config_dir)
}

fn load_externals(ctx: &Ctx, index: &ArtifactIndex) -> Result<Vec<Corpus>, CliError> {
    let mut out = Vec::new();
    for source in &ctx.config.external_corpora {
        let role = format!("external:{}", source.name());
        if index.artifacts.contains_key(&role) {
            let path = index.require(ctx.output_dir, &role)?;
            let mut corpus = gmint::text::ingest(&path, gmint::text::CorpusFormat::Jsonl)
                .map_err(classify::text)?;
            corpus.name = source.name();
            out.push(corpus);
        } else {
            out.push(source.load(ctx.config_dir)?);
        }
    }
    Ok(out)
}

// ------------------------------------------------------------ train-target

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    schema_version: u32,
    config_hash: String,
    spec: AuditedModelSpec,
    training_config: TrainConfig,
    train_history: Vec<EpochStats>,
    fingerprint: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitMeta {
    schema_version: u32,
    config_hash: String,
    train_ids: Vec<String>,
    test_ids: Vec<String>,
}

pub fn cmd_train_target(ctx: &Ctx) -> Result<(), CliError> {
    let mut index = ctx.index()?;
    let corpus = load_corpus(ctx, &index)?;

    let vocab = gmint::text::build_vocab(&corpus, ctx.config.model_spec.vocab_size)
        .map_err(classify::text)?;
    let corpus_split =
        gmint::text::split(&corpus, 0.65, seed::derive(ctx.config.seed, "target-split"))
            .map_err(classify::text)?;

    let by_id: std::collections::BTreeMap<&str, &gmint::text::Sample> =
        corpus.samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let train_samples: Vec<&gmint::text::Sample> =
        corpus_split.train_d.iter().map(|id| by_id[id.as_str()]).collect();
    let train_encoded = gmint::models::encode_samples(
        train_samples.iter().copied(),
        &vocab,
        ctx.config.model_spec.max_len,
    );

    let mut model = AuditedModel::build(&ctx.config.model_spec).map_err(classify::model)?;
    log::info(&format!(
        "training {:?} on {} samples for {} epochs",
        ctx.config.model_spec.kind,
        train_encoded.len(),
        ctx.config.train_config.epochs
    ));
    gmint::models::train_audited(&mut model, &train_encoded, &ctx.config.train_config)
        .map_err(classify::model)?;
    let accuracy =
        gmint::models::evaluate_accuracy(&model, &train_encoded).map_err(classify::model)?;

    model.params.save(&ctx.output_dir.join(MODEL_FILE)).map_err(classify::autodiff)?;
    ctx.write_json(
        MODEL_META_FILE,
        &ModelMeta {
            schema_version: 1,
            config_hash: ctx.config_hash.clone(),
            spec: model.spec.clone(),
            training_config: ctx.config.train_config.clone(),
            train_history: model.train_history.clone(),
            fingerprint: hex(&model.params.fingerprint()),
        },
    )?;
    ctx.write_json(
        SPLIT_FILE,
        &SplitMeta {
            schema_version: 1,
            config_hash: ctx.config_hash.clone(),
            train_ids: corpus_split.train_d,
            test_ids: corpus_split.test,
        },
    )?;
    index.record(ctx.output_dir, "model", MODEL_FILE)?;
    index.record(ctx.output_dir, "model-meta", MODEL_META_FILE)?;
    index.record(ctx.output_dir, "split", SPLIT_FILE)?;
    index.save(ctx.output_dir)?;
    println!("train-target: final train accuracy {accuracy:.4}");
    Ok(())
}

fn load_model(ctx: &Ctx, index: &ArtifactIndex) -> Result<AuditedModel, CliError> {
    let model_path = index.require(ctx.output_dir, "model")?;
    let meta_path = index.require(ctx.output_dir, "model-meta")?;
    let meta: ModelMeta = ctx.read_json(&meta_path)?;
    let params = ParameterSet::load(&model_path).map_err(classify::autodiff)?;
    if hex(&params.fingerprint()) != meta.fingerprint {
        return Err(CliError::Dependency(format!(
            "model {MODEL_FILE} does not match its recorded fingerprint {}",
            meta.fingerprint
        )));
    }
    Ok(AuditedModel {
        spec: meta.spec,
        params,
        training_config: Some(meta.training_config),
        train_history: meta.train_history,
    })
}

// -------------------------------------------------------- extract-features

#[derive(Debug, Serialize, Deserialize)]
struct FeaturesMeta {
    schema_version: u32,
    config_hash: String,
    rows: usize,
    feature_dim: usize,
    train_count: usize,
    seed: u64,
    model_fingerprint: String,
}

/// Member pool = the model's training split; external pool = the held-out
/// split plus, under the mixed protocol, every external corpus (ids
/// prefixed with the corpus name, labels folded into the model's range).
fn assemble_pools(
    ctx: &Ctx,
    index: &ArtifactIndex,
    model: &AuditedModel,
) -> Result<(Vec<ProbeInput>, Vec<ProbeInput>), CliError> {
    let corpus = load_corpus(ctx, index)?;
    let split_path = index.require(ctx.output_dir, "split")?;
    let split: SplitMeta = ctx.read_json(&split_path)?;
    let vocab = gmint::text::build_vocab(&corpus, model.spec.vocab_size).map_err(classify::text)?;

    let by_id: std::collections::BTreeMap<&str, &gmint::text::Sample> =
        corpus.samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let pool = |ids: &[String]| -> Result<Vec<ProbeInput>, CliError> {
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let s = by_id.get(id.as_str()).ok_or_else(|| {
                CliError::Dependency(format!("split references unknown sample id {id}"))
            })?;
            let encoded = gmint::models::encode_samples([*s], &vocab, model.spec.max_len);
            out.push(ProbeInput {
                sample: encoded.into_iter().next().expect("one sample in, one out"),
                source_corpus: corpus.name.clone(),
            });
        }
        Ok(out)
    };
    let members = pool(&split.train_ids)?;
    let mut externals = pool(&split.test_ids)?;
    if ctx.config.protocol == "mixed" {
        for ext in load_externals(ctx, index)? {
            let encoded = gmint::models::encode_samples(ext.samples.iter(), &vocab, model.spec.max_len);
            for mut sample in encoded {
                sample.label %= model.spec.num_classes;
                sample.id = format!("{}::{}", ext.name, sample.id);
                externals.push(ProbeInput { sample, source_corpus: ext.name.clone() });
            }
        }
    }
    Ok((members, externals))
}

pub fn cmd_extract_features(ctx: &Ctx) -> Result<(), CliError> {
    let mut index = ctx.index()?;
    let model = load_model(ctx, &index)?;
    let (members, externals) = assemble_pools(ctx, &index, &model)?;
    log::info(&format!(
        "probing {} members and {} externals ({})",
        members.len(),
        externals.len(),
        ctx.config.feature_kind
    ));
    let dataset = build_mint_dataset(
        &model,
        &members,
        &externals,
        &ctx.config.parsed_selector(),
        ctx.config.parsed_feature_kind()?,
        seed::derive(ctx.config.seed, "mint-dataset"),
    )
    .map_err(classify::probe)?;
    write_features(&dataset, &ctx.output_dir.join(FEATURES_FILE)).map_err(classify::probe)?;
    ctx.write_json(
        FEATURES_META_FILE,
        &FeaturesMeta {
            schema_version: 1,
            config_hash: ctx.config_hash.clone(),
            rows: dataset.features.len(),
            feature_dim: dataset.feature_dim(),
            train_count: dataset.train_count,
            seed: dataset.seed,
            model_fingerprint: hex(&dataset.model_fingerprint),
        },
    )?;
    index.record(ctx.output_dir, "features", FEATURES_FILE)?;
    index.record(ctx.output_dir, "features-meta", FEATURES_META_FILE)?;
    index.save(ctx.output_dir)?;
    println!(
        "extract-features: {} rows x {} dims -> {FEATURES_FILE}",
        dataset.features.len(),
        dataset.feature_dim()
    );
    Ok(())
}

// ------------------------------------------------------------ train-auditor

#[derive(Debug, Serialize, Deserialize)]
struct AuditorMeta {
    schema_version: u32,
    config_hash: String,
    config: AuditorConfig,
    input_dim: usize,
    normalization: gmint::probe::Normalization,
    train_history: Vec<f64>,
}

fn load_dataset(ctx: &Ctx, index: &ArtifactIndex) -> Result<gmint::probe::MintDataset, CliError> {
    let features_path = index.require(ctx.output_dir, "features")?;
    let meta_path = index.require(ctx.output_dir, "features-meta")?;
    let meta: FeaturesMeta = ctx.read_json(&meta_path)?;
    read_features(&features_path, meta.train_count, meta.seed).map_err(classify::probe)
}

pub fn cmd_train_auditor(ctx: &Ctx) -> Result<(), CliError> {
    let mut index = ctx.index()?;
    let dataset = load_dataset(ctx, &index)?;
    let config = AuditorConfig {
        seed: seed::derive(ctx.config.seed, "auditor"),
        ..ctx.config.auditor_config.clone()
    };
    log::info(&format!(
        "training auditor on {} rows x {} dims for {} epochs",
        dataset.train_rows().len(),
        dataset.feature_dim(),
        config.epochs
    ));
    let auditor = train_mint(&dataset, &config).map_err(classify::auditor)?;
    auditor.params.save(&ctx.output_dir.join(AUDITOR_FILE)).map_err(classify::autodiff)?;
    ctx.write_json(
        AUDITOR_META_FILE,
        &AuditorMeta {
            schema_version: 1,
            config_hash: ctx.config_hash.clone(),
            config: auditor.config.clone(),
            input_dim: auditor.input_dim,
            normalization: auditor.normalization.clone(),
            train_history: auditor.train_history.clone(),
        },
    )?;
    index.record(ctx.output_dir, "auditor", AUDITOR_FILE)?;
    index.record(ctx.output_dir, "auditor-meta", AUDITOR_META_FILE)?;
    index.save(ctx.output_dir)?;
    println!("train-auditor: final training loss {:.6}", auditor.train_history.last().unwrap());
    Ok(())
}

// ----------------------------------------------------------------- evaluate

pub fn cmd_evaluate(ctx: &Ctx) -> Result<(), CliError> {
    let mut index = ctx.index()?;
    let dataset = load_dataset(ctx, &index)?;
    let auditor_path = index.require(ctx.output_dir, "auditor")?;
    let meta_path = index.require(ctx.output_dir, "auditor-meta")?;
    let meta: AuditorMeta = ctx.read_json(&meta_path)?;
    let auditor = MintAuditor {
        config: meta.config,
        params: ParameterSet::load(&auditor_path).map_err(classify::autodiff)?,
        input_dim: meta.input_dim,
        normalization: meta.normalization,
        train_history: meta.train_history,
    };

    let predictions =
        predict_membership(&auditor, dataset.test_rows()).map_err(classify::auditor)?;
    let scores: Vec<f64> = predictions.iter().map(|p| p.score).collect();
    let labels: Vec<u8> = dataset.test_rows().iter().map(|r| r.membership_label).collect();
    let curve = roc_curve(&scores, &labels).map_err(classify::eval)?;
    let auc = curve.area();

    let members = dataset.features.iter().filter(|f| f.membership_label == 1).count();
    let externals = dataset.features.len() - members;
    let roc_rel = "roc_evaluate.csv";
    curve.write_csv(&ctx.output_dir.join(roc_rel)).map_err(classify::eval)?;
    let cell = CellRecord {
        size_d: members,
        size_e: externals,
        repetition: 0,
        cell_seed: dataset.seed,
        auc,
        roc_file: roc_rel.to_string(),
        pool_composition: pool_composition(ctx, &dataset),
        sample_ids_hash: ids_hash(&dataset.features),
    };
    let report = AuditReport {
        schema_version: 1,
        protocol: ctx.config.protocol.clone(),
        model_spec: ctx.config.model_spec.clone(),
        train_config: ctx.config.train_config.clone(),
        auditor_config: ctx.config.auditor_config.clone(),
        selector: ctx.config.selector.clone(),
        feature_kind: ctx.config.parsed_feature_kind()?,
        base_seed: ctx.config.seed,
        config_hash: Some(ctx.config_hash.clone()),
        audited_train_accuracy: f64::NAN,
        audited_test_accuracy: f64::NAN,
        sizes: summarize_cells(&[(members, externals)], std::slice::from_ref(&cell)),
        cells: vec![cell],
        timestamp: now(),
    };
    let report = fill_accuracy_from_model_meta(ctx, &index, report)?;
    ctx.write_json(REPORT_FILE, &report)?;
    index.record(ctx.output_dir, "report", REPORT_FILE)?;
    index.record(ctx.output_dir, "report-roc", roc_rel)?;
    index.save(ctx.output_dir)?;
    println!("evaluate: AUC {auc:.4} over {} test rows -> {REPORT_FILE}", labels.len());
    Ok(())
}

fn pool_composition(
    ctx: &Ctx,
    dataset: &gmint::probe::MintDataset,
) -> Option<std::collections::BTreeMap<String, usize>> {
    if ctx.config.protocol != "mixed" {
        return None;
    }
    let mut composition = std::collections::BTreeMap::new();
    for f in dataset.features.iter().filter(|f| f.membership_label == 0) {
        // Feature files do not persist source corpora; recover the corpus
        // from the id prefix written by the pool assembly.
        let source = f.sample_id.split_once("::").map_or(ctx.config.corpus.name(), |(c, _)| {
            c.to_string()
        });
        *composition.entry(source).or_insert(0) += 1;
    }
    Some(composition)
}

fn fill_accuracy_from_model_meta(
    ctx: &Ctx,
    index: &ArtifactIndex,
    mut report: AuditReport,
) -> Result<AuditReport, CliError> {
    let meta_path = index.require(ctx.output_dir, "model-meta")?;
    let meta: ModelMeta = ctx.read_json(&meta_path)?;
    if let Some(last) = meta.train_history.last() {
        report.audited_train_accuracy = last.train_accuracy;
    }
    report.audited_test_accuracy = -1.0; // not measured by the staged pipeline
    Ok(report)
}

// -------------------------------------------------------------------- sweep

#[derive(Debug, Serialize, Deserialize)]
struct CompletedCell {
    config_hash: String,
    record: CellRecord,
    curve: RocCurve,
}

pub fn cmd_sweep(ctx: &Ctx) -> Result<(), CliError> {
    let mut index = ctx.index()?;
    let corpus = load_corpus(ctx, &index)?;
    let externals_owned =
        if ctx.config.protocol == "mixed" { load_externals(ctx, &index)? } else { Vec::new() };
    let externals: Vec<&Corpus> = externals_owned.iter().collect();

    log::info("sweep: training the audited model");
    let pipeline = prepare_pipeline(
        &corpus,
        &externals,
        &ctx.config.model_spec,
        &ctx.config.train_config,
        ctx.config.seed,
    )
    .map_err(classify::eval)?;

    let plan = ctx
        .config
        .sweep_plan
        .clamped(pipeline.member_pool.len(), pipeline.external_pool.len());
    if plan.size_pairs != ctx.config.sweep_plan.size_pairs {
        log::warn(&format!(
            "sweep plan clamped to available samples ({} members, {} externals): {:?}",
            pipeline.member_pool.len(),
            pipeline.external_pool.len(),
            plan.size_pairs
        ));
    }
    let cells_dir = ctx.output_dir.join("cells");
    std::fs::create_dir_all(&cells_dir)
        .map_err(|e| CliError::Internal(format!("create {}: {e}", cells_dir.display())))?;

    let mut cells = Vec::new();
    let mut curves = Vec::new();
    for &(d, e) in &plan.size_pairs {
        for r in 0..plan.repetitions {
            let cell_seed = seed::derive(ctx.config.seed, &format!("cell:{d}x{e}:rep{r}"));
            let cell_file = cells_dir.join(format!(
                "cell_{}_{d}x{e}_rep{r}.json",
                ctx.config.protocol
            ));
            if let Some(done) = load_completed_cell(ctx, &cell_file) {
                log::info(&format!("sweep: reusing completed cell {d}x{e} rep {r}"));
                curves.push((done.record.roc_file.clone(), done.curve));
                cells.push(done.record);
                continue;
            }
            log::info(&format!("sweep: running cell {d}x{e} rep {r}"));
            let (record, curve) = run_cell(
                &pipeline,
                &ctx.config.parsed_selector(),
                ctx.config.parsed_feature_kind()?,
                &ctx.config.auditor_config,
                d,
                e,
                cell_seed,
                &ctx.config.protocol,
                r,
            )
            .map_err(classify::eval)?;
            let done = CompletedCell {
                config_hash: ctx.config_hash.clone(),
                record: record.clone(),
                curve: curve.clone(),
            };
            let json = serde_json::to_vec_pretty(&done)
                .map_err(|e| CliError::Internal(format!("serialize cell: {e}")))?;
            std::fs::write(&cell_file, json)
                .map_err(|e| CliError::Internal(format!("write {}: {e}", cell_file.display())))?;
            curves.push((record.roc_file.clone(), curve));
            cells.push(record);
        }
    }

    for (rel, curve) in &curves {
        curve.write_csv(&ctx.output_dir.join(rel)).map_err(classify::eval)?;
    }
    let report = AuditReport {
        schema_version: 1,
        protocol: ctx.config.protocol.clone(),
        model_spec: ctx.config.model_spec.clone(),
        train_config: ctx.config.train_config.clone(),
        auditor_config: ctx.config.auditor_config.clone(),
        selector: ctx.config.selector.clone(),
        feature_kind: ctx.config.parsed_feature_kind()?,
        base_seed: ctx.config.seed,
        config_hash: Some(ctx.config_hash.clone()),
        audited_train_accuracy: pipeline.train_accuracy,
        audited_test_accuracy: pipeline.test_accuracy,
        sizes: summarize_cells(&plan.size_pairs, &cells),
        cells,
        timestamp: now(),
    };
    ctx.write_json(SWEEP_REPORT_FILE, &report)?;
    index.record(ctx.output_dir, "sweep-report", SWEEP_REPORT_FILE)?;
    for (rel, _) in &curves {
        index.record(ctx.output_dir, &format!("sweep-roc:{rel}"), rel)?;
    }
    index.save(ctx.output_dir)?;
    for s in &report.sizes {
        println!(
            "sweep: ({}, {}) mean AUC {:.4} (std {:.4}, {} seeds)",
            s.size_d,
            s.size_e,
            s.auc_mean,
            s.auc_std,
            s.aucs.len()
        );
    }
    Ok(())
}

fn load_completed_cell(ctx: &Ctx, path: &Path) -> Option<CompletedCell> {
    let bytes = std::fs::read(path).ok()?;
    let done: CompletedCell = serde_json::from_slice(&bytes).ok()?;
    (done.config_hash == ctx.config_hash).then_some(done)
}

// ------------------------------------------------------------------- verify

pub fn cmd_verify(ctx: &Ctx) -> Result<(), CliError> {
    let index_path = ctx.output_dir.join(crate::artifacts::INDEX_FILE);
    if !index_path.exists() {
        return Err(CliError::Dependency(format!(
            "no artifact index at {}; nothing to verify",
            index_path.display()
        )));
    }
    let index = ctx.index()?;
    if index.artifacts.is_empty() {
        return Err(CliError::Dependency(
            "artifact index is empty or belongs to a different config".to_string(),
        ));
    }
    let n = index.verify_all(ctx.output_dir)?;
    println!("verify: {n} artifacts match their recorded hashes");
    Ok(())
}

// ------------------------------------------------------------------ helpers

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn ids_hash(features: &[GradientFeature]) -> String {
    let mut ids: Vec<&str> = features.iter().map(|f| f.sample_id.as_str()).collect();
    ids.sort_unstable();
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update(id.as_bytes());
        hasher.update(b"\n");
    }
    hex(&hasher.finalize())
}

fn now() -> String {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_default()
}
