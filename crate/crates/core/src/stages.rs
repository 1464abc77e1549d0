//! Pipeline stages over in-memory values and over files.
//!
//! The in-memory functions are what the examples and tests call; the
//! `*_files` wrappers read and write the on-disk formats for the `ocd`
//! command. Every output is a pure function of the inputs and the config,
//! so re-running a stage reproduces its artifacts byte for byte.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::compose::compose_batch;
use crate::encode::{encode, LeaderSet};
use crate::error::{Error, Result};
use crate::eval::{acc, make_synthetic, AccReport, SyntheticData};
use crate::infer::{hash_infer_verdicts, LeaderMemory, MemoryOptions};
use crate::io::{self, Checkpoint, LeaderFile, PipelineConfig, Strategy, VerdictRecord};
use crate::refine::{compute_centers, gamma_table, refine_dataset, score_rows, RefinementConfig};
use crate::train::{train, ModelParams, TrainOutcome};
use crate::types::{LabeledDataset, RngSeed};

/// Seed offsets so the stages draw from unrelated streams of one root seed.
const COMPOSE_CHILD: u64 = 1;
const TRAIN_CHILD: u64 = 2;

/// Support and query sets, synthetic unless the config names files.
/// Synthetic values are rounded to the stored f32 precision so a run from
/// the written files sees exactly the same inputs.
pub fn load_or_synthesize(cfg: &PipelineConfig) -> Result<DataSplit> {
    match (&cfg.support_path, &cfg.query_path) {
        (Some(s), Some(q)) => Ok(DataSplit {
            support: io::read_embeddings(s)?,
            query: io::read_embeddings(q)?,
        }),
        _ => {
            let SyntheticData { support, query, .. } = make_synthetic(&cfg.synthetic_spec())?;
            Ok(DataSplit {
                support: io::storable(&support),
                query: io::storable(&query),
            })
        }
    }
}

/// Labelled support set and the query stream.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub support: LabeledDataset,
    pub query: LabeledDataset,
}

/// Synthetic rows composed from cross-category support pairs, unlabeled,
/// rounded to the stored precision.
pub fn compose_stage(support: &LabeledDataset, cfg: &PipelineConfig) -> Result<LabeledDataset> {
    let batch = compose_batch(support, &cfg.interpolation, RngSeed(cfg.seed).child(COMPOSE_CHILD))?;
    Ok(io::storable(&batch.into_dataset(support)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineSummary {
    pub generated: usize,
    pub retained: usize,
    pub removed: usize,
    /// `(gamma, retained)` over a fixed grid.
    pub table: Vec<(f64, usize)>,
}

pub const GAMMA_GRID: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

pub fn refine_stage(
    support: &LabeledDataset,
    generated: &LabeledDataset,
    cfg: &RefinementConfig,
) -> Result<(LabeledDataset, RefineSummary)> {
    let centers = compute_centers(support)?;
    let refined = refine_dataset(generated, &centers, cfg);
    let table = gamma_table(&score_rows(generated.embeddings(), &centers), &GAMMA_GRID);
    let summary = RefineSummary {
        generated: generated.len(),
        retained: refined.len(),
        removed: generated.len() - refined.len(),
        table,
    };
    Ok((refined, summary))
}

/// Agency set: support plus refined rows, clustered and rectified.
pub fn encode_stage(
    support: &LabeledDataset,
    refined: &LabeledDataset,
    cfg: &PipelineConfig,
) -> Result<LabeledDataset> {
    encode(&support.concat(refined)?, &cfg.train.clustering)
}

pub fn train_stage(agency: &LabeledDataset, cfg: &PipelineConfig) -> Result<TrainOutcome> {
    train(agency, &cfg.train, RngSeed(cfg.seed).child(TRAIN_CHILD))
}

/// Where an OCI run starts from.
#[derive(Debug, Clone)]
pub enum OciStart {
    Fresh(LeaderSet, MemoryOptions),
    Resume { memory: LeaderMemory, processed: usize },
}

#[derive(Debug, Clone)]
pub struct OciRun {
    pub records: Vec<VerdictRecord>,
    pub memory: LeaderMemory,
    /// Stream items consumed in total, including those before a resume.
    pub processed: usize,
}

/// Streams rows `start..min(start + limit, n)` of `stream` through the memory.
pub fn oci_stage(
    params: &ModelParams,
    start: OciStart,
    stream: &LabeledDataset,
    limit: Option<usize>,
) -> Result<OciRun> {
    let (mut memory, offset) = match start {
        OciStart::Fresh(set, opts) => (LeaderMemory::from_leader_set(&set, opts)?, 0),
        OciStart::Resume { memory, processed } => (memory, processed),
    };
    if offset > stream.len() {
        return Err(Error::InvalidConfig(format!(
            "snapshot has processed {offset} items but the stream has {}",
            stream.len()
        )));
    }
    let end = limit.map_or(stream.len(), |l| (offset + l).min(stream.len()));
    let idx: Vec<usize> = (offset..end).collect();
    let features = params.features(&stream.embeddings().select(&idx))?;
    let mut records = Vec::with_capacity(idx.len());
    for (i, f) in idx.iter().zip(features.iter_rows()) {
        let v = memory.step(f)?;
        records.push(VerdictRecord {
            index: *i,
            label: v.assigned_label,
            new: v.is_new_category,
            dist: Some(v.min_sq_distance),
        });
    }
    Ok(OciRun {
        records,
        memory,
        processed: end,
    })
}

pub fn hash_stage(params: &ModelParams, stream: &LabeledDataset) -> Result<Vec<VerdictRecord>> {
    Ok(hash_infer_verdicts(params, stream.embeddings())?
        .into_iter()
        .enumerate()
        .map(|(index, v)| VerdictRecord {
            index,
            label: v.id,
            new: v.is_new,
            dist: None,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub acc: AccReport,
    pub distinct_predicted: usize,
    pub new_category_verdicts: usize,
}

/// Scores verdicts against the truth labels; old classes are the truth's
/// known labels. Verdicts must cover the stream exactly once, in order.
pub fn eval_stage(truth: &LabeledDataset, records: &[VerdictRecord]) -> Result<EvalReport> {
    if records.len() != truth.len() {
        return Err(Error::LengthMismatch(truth.len(), records.len()));
    }
    if let Some((i, r)) = records.iter().enumerate().find(|(i, r)| r.index != *i) {
        return Err(Error::MetadataMismatch(format!(
            "verdict {i} has index {}",
            r.index
        )));
    }
    if let Some(&l) = truth.labels().iter().find(|&&l| l < 0) {
        return Err(Error::InvalidLabelSpace(format!(
            "truth file has unlabeled rows (label {l})"
        )));
    }
    let pred: Vec<i64> = records.iter().map(|r| r.label).collect();
    let acc = acc(truth.labels(), &pred, &truth.label_space().known)?;
    Ok(EvalReport {
        acc,
        distinct_predicted: pred.iter().collect::<BTreeSet<_>>().len(),
        new_category_verdicts: records.iter().filter(|r| r.new).count(),
    })
}

/// OCI and hash-code inference on the same stream, scored side by side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyComparison {
    pub oci: EvalReport,
    pub hash: EvalReport,
    pub hash_bits: usize,
    /// Largest number of distinct hash ids, `2^hash_bits`.
    pub hash_capacity: u128,
}

impl StrategyComparison {
    pub fn to_table(&self) -> String {
        let row = |name: &str, r: &EvalReport| {
            format!(
                "{name:<6} {:>8.4} {:>8.4} {:>8.4} {:>9}\n",
                r.acc.acc_all, r.acc.acc_old, r.acc.acc_new, r.distinct_predicted
            )
        };
        format!(
            "{:<6} {:>8} {:>8} {:>8} {:>9}\n{}{}",
            "method",
            "all",
            "old",
            "new",
            "distinct",
            row("oci", &self.oci),
            row(&format!("hash{}", self.hash_bits), &self.hash)
        )
    }
}

pub fn compare_strategies(
    params: &ModelParams,
    leaders: &LeaderSet,
    opts: MemoryOptions,
    query: &LabeledDataset,
) -> Result<StrategyComparison> {
    let oci = oci_stage(params, OciStart::Fresh(leaders.clone(), opts), query, None)?;
    let hash = hash_stage(params, query)?;
    let hash_bits = params.shape().hash_bits;
    Ok(StrategyComparison {
        oci: eval_stage(query, &oci.records)?,
        hash: eval_stage(query, &hash)?,
        hash_bits,
        hash_capacity: 1u128 << hash_bits,
    })
}

/// Artifacts of a full run, also written to disk by [`pipeline_files`].
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub data: DataSplit,
    pub generated: LabeledDataset,
    pub refined: LabeledDataset,
    pub refine: RefineSummary,
    pub agency: LabeledDataset,
    pub outcome: TrainOutcome,
    pub oci_records: Vec<VerdictRecord>,
    pub hash_records: Vec<VerdictRecord>,
    pub comparison: StrategyComparison,
}

pub fn pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let data = load_or_synthesize(cfg)?;
    let generated = if cfg.enable_generation {
        compose_stage(&data.support, cfg)?
    } else {
        LabeledDataset::unlabeled(
            crate::types::EmbeddingMatrix::empty(data.support.dim()),
            crate::types::SourceTag::Generated,
        )
    };
    let (refined, refine) = refine_stage(&data.support, &generated, &cfg.refinement)?;
    let agency = encode_stage(&data.support, &refined, cfg)?;
    let outcome = train_stage(&agency, cfg)?;
    let oci = oci_stage(
        &outcome.params,
        OciStart::Fresh(outcome.leaders.clone(), cfg.memory),
        &data.query,
        None,
    )?;
    let hash_records = hash_stage(&outcome.params, &data.query)?;
    let hash_bits = outcome.params.shape().hash_bits;
    let comparison = StrategyComparison {
        oci: eval_stage(&data.query, &oci.records)?,
        hash: eval_stage(&data.query, &hash_records)?,
        hash_bits,
        hash_capacity: 1u128 << hash_bits,
    };
    Ok(PipelineRun {
        data,
        generated,
        refined,
        refine,
        agency,
        outcome,
        oci_records: oci.records,
        hash_records,
        comparison,
    })
}

impl PipelineRun {
    /// Deterministic summary: config, stage counts, losses, both strategies,
    /// and the configured strategy's ACC fields at the top level.
    pub fn report(&self, cfg: &PipelineConfig) -> Value {
        let primary = match cfg.strategy {
            Strategy::Oci => &self.comparison.oci,
            Strategy::Hash => &self.comparison.hash,
        };
        let config: serde_json::Map<String, Value> = cfg
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), Value::String(v)))
            .collect();
        let last = self.outcome.history.last().map(|h| {
            json!({
                "sup": h.loss.sup, "reg": h.loss.reg, "sle": h.loss.sle,
                "ce": h.loss.ce, "total": h.loss.total,
            })
        });
        json!({
            "strategy": cfg.strategy.name(),
            "acc_all": primary.acc.acc_all,
            "acc_old": primary.acc.acc_old,
            "acc_new": primary.acc.acc_new,
            "config": config,
            "counts": {
                "support": self.data.support.len(),
                "query": self.data.query.len(),
                "generated": self.refine.generated,
                "retained": self.refine.retained,
                "agency": self.agency.len(),
                "leaders": self.outcome.leaders.len(),
            },
            "training": {
                "epochs": self.outcome.history.len(),
                "delta_max": self.outcome.leaders.delta_max,
                "final_loss": last,
            },
            "comparison": self.comparison,
        })
    }
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    io::write_atomic(path, &bytes)
}

/// Runs [`pipeline`] and persists every stage artifact plus `report.json`.
pub fn pipeline_files(cfg: &PipelineConfig, out_dir: &Path) -> Result<(PipelineRun, Value)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let run = pipeline(cfg)?;
    io::write_embeddings(&run.data.support, &out_dir.join("support.emb"))?;
    io::write_embeddings(&run.data.query, &out_dir.join("query.emb"))?;
    io::write_embeddings(&run.generated, &out_dir.join("generated.emb"))?;
    io::write_embeddings(&run.refined, &out_dir.join("refined.emb"))?;
    io::write_embeddings(&run.agency, &out_dir.join("agency.emb"))?;
    io::write_checkpoint(
        &Checkpoint {
            params: run.outcome.params.clone(),
            config: cfg.train.clone(),
            epoch: run.outcome.history.len(),
        },
        &out_dir.join("model.ckpt"),
    )?;
    io::write_leaders(&LeaderFile::Trained(run.outcome.leaders.clone()), &out_dir.join("leaders.ldr"))?;
    io::write_verdicts(&run.oci_records, &out_dir.join("verdicts_oci.jsonl"))?;
    io::write_verdicts(&run.hash_records, &out_dir.join("verdicts_hash.jsonl"))?;
    let report = run.report(cfg);
    write_json(&report, &out_dir.join("report.json"))?;
    Ok((run, report))
}

pub fn synth_files(cfg: &PipelineConfig, out_dir: &Path) -> Result<DataSplit> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let data = load_or_synthesize(cfg)?;
    io::write_embeddings(&data.support, &out_dir.join("support.emb"))?;
    io::write_embeddings(&data.query, &out_dir.join("query.emb"))?;
    Ok(data)
}

pub fn compose_files(cfg: &PipelineConfig, support: &Path, out: &Path) -> Result<LabeledDataset> {
    let generated = compose_stage(&io::read_embeddings(support)?, cfg)?;
    io::write_embeddings(&generated, out)?;
    Ok(generated)
}

pub fn refine_files(
    support: &Path,
    generated: &Path,
    cfg: &RefinementConfig,
    out: &Path,
) -> Result<RefineSummary> {
    let (refined, summary) =
        refine_stage(&io::read_embeddings(support)?, &io::read_embeddings(generated)?, cfg)?;
    io::write_embeddings(&refined, out)?;
    Ok(summary)
}

pub fn encode_files(
    cfg: &PipelineConfig,
    support: &Path,
    refined: &Path,
    out: &Path,
) -> Result<LabeledDataset> {
    let agency = encode_stage(&io::read_embeddings(support)?, &io::read_embeddings(refined)?, cfg)?;
    io::write_embeddings(&agency, out)?;
    Ok(agency)
}

pub fn train_files(
    cfg: &PipelineConfig,
    agency: &Path,
    model_out: &Path,
    leaders_out: &Path,
) -> Result<TrainOutcome> {
    let outcome = train_stage(&io::read_embeddings(agency)?, cfg)?;
    io::write_checkpoint(
        &Checkpoint {
            params: outcome.params.clone(),
            config: cfg.train.clone(),
            epoch: outcome.history.len(),
        },
        model_out,
    )?;
    io::write_leaders(&LeaderFile::Trained(outcome.leaders.clone()), leaders_out)?;
    Ok(outcome)
}

#[derive(Debug, Clone, Default)]
pub struct InferOptions {
    pub strategy: Option<Strategy>,
    /// Memory snapshot to continue from instead of the trained leaders.
    pub resume: Option<PathBuf>,
    /// Process at most this many stream items.
    pub limit: Option<usize>,
    /// Write the memory state after the run here.
    pub snapshot: Option<PathBuf>,
}

pub fn infer_files(
    cfg: &PipelineConfig,
    model: &Path,
    leaders: Option<&Path>,
    stream: &Path,
    out: &Path,
    opts: &InferOptions,
) -> Result<Vec<VerdictRecord>> {
    let params = io::read_checkpoint(model)?.params;
    let stream = io::read_embeddings(stream)?;
    let strategy = opts.strategy.unwrap_or(cfg.strategy);
    let records = match strategy {
        Strategy::Hash => {
            if opts.resume.is_some() || opts.snapshot.is_some() || opts.limit.is_some() {
                return Err(Error::InvalidConfig(
                    "--resume, --snapshot and --limit apply to the oci strategy only".into(),
                ));
            }
            hash_stage(&params, &stream)?
        }
        Strategy::Oci => {
            let source = opts.resume.as_deref().or(leaders).ok_or_else(|| {
                Error::InvalidConfig("oci needs --leaders or --resume".into())
            })?;
            let start = match io::read_leaders(source)? {
                LeaderFile::Trained(set) => OciStart::Fresh(set, cfg.memory),
                LeaderFile::Memory { memory, processed } => OciStart::Resume { memory, processed },
            };
            let run = oci_stage(&params, start, &stream, opts.limit)?;
            if let Some(path) = &opts.snapshot {
                io::write_leaders(
                    &LeaderFile::Memory {
                        memory: run.memory,
                        processed: run.processed,
                    },
                    path,
                )?;
            }
            run.records
        }
    };
    io::write_verdicts(&records, out)?;
    Ok(records)
}

pub fn eval_files(truth: &Path, verdicts: &Path, out: &Path) -> Result<EvalReport> {
    let report = eval_stage(&io::read_embeddings(truth)?, &io::read_verdicts(verdicts)?)?;
    write_json(&report, out)?;
    Ok(report)
}
