//! The experiment driver: builds the corpus and noise conditions, trains
//! the three systems over several seeds, evaluates every grid cell and
//! emits the two comparison tables with significance marks, the gap-closure
//! summary and the latency comparison.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    attach_nbest, calibrate_channel, generate_corpus, CorpusBundle, NoiseChannel,
    NoiseChannelSpec, CONDITION_CLEAN, CONDITION_ORACLE, CONDITION_SEMI, CONDITION_STD,
    WER_ORACLE, WER_SEMI, WER_STANDARD,
};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::fusion::FusionConfig;
use crate::index::{bm25_search, build_bm25, build_vector_index, InvertedIndex, VectorIndex};
use crate::pipeline::{
    doc_inputs_fused, doc_inputs_hyp, doc_inputs_text, search_dr, search_rerank, train_dr,
    train_reranker, PipelineError, PreparedCorpus, TrainConfig,
};
use crate::Real;

use super::metrics::reciprocal_ranks;
use super::timing::{timing_harness, TimingReport};
use super::ttest::paired_ttest;
use super::{EvalError, RunFile};

/// Whether early-fusion cells re-train the dense retriever on fused
/// document inputs or reuse the 1-best-trained weights for encoding only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EarlyFusionWeights {
    Retrain,
    Reuse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub num_docs: usize,
    pub vocab_size: usize,
    pub corpus_seed: u64,
    pub model_seeds: Vec<u64>,
    /// Transcript conditions evaluated in the first table.
    pub conditions: Vec<String>,
    /// Conditions that carry N-best sets for the fusion table.
    pub table2_conditions: Vec<String>,
    pub table2_systems: Vec<String>,
    pub table2_modes: Vec<String>,
    pub early_fusion: EarlyFusionWeights,
    pub n_sizes: Vec<usize>,
    pub nbest_width: usize,
    pub samples: usize,
    pub calibration_docs: usize,

    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_rate: f64,

    pub epochs_rerank: usize,
    pub epochs_dr: usize,
    pub epochs_ance: usize,
    pub lr_rerank: f64,
    pub lr_dr: f64,
    pub batch_size: usize,
    pub negatives: usize,
    /// Condition the models are trained on (documents side).
    pub train_condition: String,

    /// BM25 candidate depth for the re-rank stage at evaluation time.
    pub rerank_depth: usize,
    /// Run depth for BM25 and dense runs.
    pub run_depth: usize,

    /// Queries used by the latency harness; 0 disables timing.
    pub timing_queries: usize,
    pub timing_depth: usize,

    /// When set, run files and reports are written here.
    pub out_dir: Option<PathBuf>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            num_docs: 2000,
            vocab_size: 2000,
            corpus_seed: 7,
            model_seeds: vec![101, 202, 303, 404, 505],
            conditions: vec![
                CONDITION_CLEAN.into(),
                CONDITION_ORACLE.into(),
                CONDITION_SEMI.into(),
                CONDITION_STD.into(),
            ],
            table2_conditions: vec![CONDITION_STD.into(), CONDITION_SEMI.into()],
            table2_systems: vec!["dr".into(), "dr-ance".into()],
            table2_modes: vec!["early".into(), "late".into()],
            early_fusion: EarlyFusionWeights::Reuse,
            n_sizes: vec![1, 2, 5, 10, 20],
            nbest_width: 20,
            samples: 200,
            calibration_docs: 500,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 96,
            max_len: 32,
            dropout_rate: 0.0,
            epochs_rerank: 3,
            epochs_dr: 3,
            epochs_ance: 3,
            lr_rerank: 1e-3,
            lr_dr: 1e-3,
            batch_size: 16,
            negatives: 20,
            train_condition: CONDITION_CLEAN.into(),
            rerank_depth: 50,
            run_depth: 100,
            timing_queries: 60,
            timing_depth: 100,
            out_dir: None,
        }
    }
}

impl GridConfig {
    fn encoder(&self, vocab_size: usize, seed: u64) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_len: self.max_len,
            vocab_size,
            dropout_rate: self.dropout_rate,
            seed,
        }
    }
}

/// Significance of a cell against its designated baseline.
#[derive(Debug, Clone, Serialize)]
pub struct SigMark {
    pub baseline: String,
    pub t: Option<f64>,
    pub p: Option<f64>,
}

impl SigMark {
    /// `**` for p < 0.01, `*` for p < 0.05, empty otherwise.
    pub fn stars(&self) -> &'static str {
        match self.p {
            Some(p) if p < 0.01 => "**",
            Some(p) if p < 0.05 => "*",
            _ => "",
        }
    }
}

/// One evaluated cell: a system on a condition (optionally fused), with
/// per-seed MRRs and the reciprocal ranks pooled over (seed, query) pairs.
#[derive(Debug, Clone, Serialize)]
pub struct GridCell {
    pub system: String,
    pub condition: String,
    /// (mode, n) for fusion cells.
    pub fusion: Option<(String, usize)>,
    pub mean_mrr: f64,
    pub seed_mrrs: Vec<f64>,
    pub significance: Option<SigMark>,
    /// Relative MRR change against the same system's 1-best cell, percent.
    pub pct_change: Option<f64>,
    #[serde(skip)]
    pub pooled_rr: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub clean_mrr: f64,
    pub one_best_mrr: f64,
    pub best_fused_mrr: f64,
    pub best_fused_cell: String,
    pub gap_one_best: f64,
    pub gap_fused: f64,
    /// 1 − gap_fused / gap_one_best, as a fraction.
    pub relative_reduction: f64,
    /// The reference run closed its gap from 14.32 to 6.58 MRR points.
    pub paper_reference: String,
}

#[derive(Debug, Serialize)]
pub struct GridReport {
    pub config: GridConfig,
    pub table1: Vec<GridCell>,
    pub table2: Vec<GridCell>,
    pub gap: Option<GapReport>,
    pub timing: Vec<TimingReport>,
    /// Cells that could not be computed, with their errors; the run
    /// continues without them.
    pub missing: Vec<String>,
}

impl GridReport {
    pub fn cell<'a>(
        &'a self,
        system: &str,
        condition: &str,
        fusion: Option<(&str, usize)>,
    ) -> Option<&'a GridCell> {
        let table: &[GridCell] = if fusion.is_some() {
            &self.table2
        } else {
            &self.table1
        };
        table.iter().find(|c| {
            c.system == system
                && c.condition == condition
                && c.fusion.as_ref().map(|(m, n)| (m.as_str(), *n)) == fusion
        })
    }

    /// Plain-text tables mirroring the layout of the comparison grids.
    pub fn render_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let conditions: Vec<&str> = self.config.conditions.iter().map(String::as_str).collect();
        writeln!(out, "== MRR by system and transcript condition ==").unwrap();
        write!(out, "{:<10}", "model").unwrap();
        for c in &conditions {
            write!(out, " {c:>12}").unwrap();
        }
        writeln!(out).unwrap();
        for system in ["bm25", "rerank", "dr", "dr-ance"] {
            write!(out, "{system:<10}").unwrap();
            for c in &conditions {
                match self.cell(system, c, None) {
                    Some(cell) => {
                        let stars = cell
                            .significance
                            .as_ref()
                            .map(SigMark::stars)
                            .unwrap_or("");
                        write!(out, " {:>10.2}{stars:<2}", 100.0 * cell.mean_mrr).unwrap();
                    }
                    None => write!(out, " {:>12}", "absent").unwrap(),
                }
            }
            writeln!(out).unwrap();
        }
        writeln!(out).unwrap();
        writeln!(out, "== MRR of dense retrieval with the N-best extension ==").unwrap();
        for condition in &self.config.table2_conditions {
            writeln!(out, "-- {condition} --").unwrap();
            write!(out, "{:<16}", "model").unwrap();
            for n in &self.config.n_sizes {
                write!(out, " {n:>10}").unwrap();
            }
            writeln!(out, " {:>18}", "% change (best)").unwrap();
            for system in &self.config.table2_systems {
                for mode in &self.config.table2_modes {
                    write!(out, "{:<16}", format!("{system}-{mode}")).unwrap();
                    let mut best: Option<(f64, usize)> = None;
                    for n in &self.config.n_sizes {
                        let cell = if *n == 1 {
                            self.cell(system, condition, None)
                        } else {
                            self.cell(system, condition, Some((mode.as_str(), *n)))
                        };
                        match cell {
                            Some(cell) => {
                                let stars = cell
                                    .significance
                                    .as_ref()
                                    .map(SigMark::stars)
                                    .unwrap_or("");
                                write!(out, " {:>8.2}{stars:<2}", 100.0 * cell.mean_mrr)
                                    .unwrap();
                                if let Some(pct) = cell.pct_change {
                                    if best.map(|(b, _)| pct > b).unwrap_or(true) {
                                        best = Some((pct, *n));
                                    }
                                }
                            }
                            None => write!(out, " {:>10}", "absent").unwrap(),
                        }
                    }
                    match best {
                        Some((pct, n)) => writeln!(out, " {pct:>+11.2} ({n}-best)").unwrap(),
                        None => writeln!(out, " {:>18}", "-").unwrap(),
                    }
                }
            }
        }
        if let Some(gap) = &self.gap {
            writeln!(out).unwrap();
            writeln!(out, "== Gap closure (dr-ance) ==").unwrap();
            writeln!(
                out,
                "clean {:.2}  1-best {:.2}  best fused {:.2} [{}]",
                100.0 * gap.clean_mrr,
                100.0 * gap.one_best_mrr,
                100.0 * gap.best_fused_mrr,
                gap.best_fused_cell
            )
            .unwrap();
            writeln!(
                out,
                "gap {:.2} -> {:.2} MRR points, relative reduction {:.1}%  ({})",
                100.0 * gap.gap_one_best,
                100.0 * gap.gap_fused,
                100.0 * gap.relative_reduction,
                gap.paper_reference
            )
            .unwrap();
        }
        if !self.timing.is_empty() {
            writeln!(out).unwrap();
            writeln!(
                out,
                "== Mean per-query latency (depth {}) ==",
                self.config.timing_depth
            )
            .unwrap();
            for t in &self.timing {
                writeln!(
                    out,
                    "{:<10} {:>10.3} ms  (sd {:.3} ms, cov {:.2}, {} queries)",
                    t.system_tag,
                    1e3 * t.mean_secs,
                    1e3 * t.sd_secs,
                    t.cov,
                    t.queries
                )
                .unwrap();
            }
        }
        if !self.missing.is_empty() {
            writeln!(out).unwrap();
            writeln!(out, "== Absent cells ==").unwrap();
            for m in &self.missing {
                writeln!(out, "{m}").unwrap();
            }
        }
        out
    }
}

/// Per-seed artifacts of the three trained systems.
struct SeedModels {
    rerank: EncoderParams<Real>,
    dr: EncoderParams<Real>,
    dr_ance: EncoderParams<Real>,
}

struct GridRuntime<'a> {
    config: &'a GridConfig,
    bundle: CorpusBundle,
    prepared: PreparedCorpus,
    bm25: BTreeMap<String, InvertedIndex>,
    eval_qrels: BTreeMap<String, String>,
}

impl<'a> GridRuntime<'a> {
    fn eval_queries(&self) -> &[String] {
        &self.bundle.split.eval
    }

    /// Builds a run over the eval split from a per-query search closure.
    fn collect_run(
        &self,
        tag: &str,
        mut search: impl FnMut(&str) -> Result<crate::index::RankedList, PipelineError>,
    ) -> Result<RunFile, PipelineError> {
        let mut run = RunFile::new(tag);
        for qid in self.eval_queries() {
            run.insert(qid.clone(), search(qid)?);
        }
        Ok(run)
    }

    fn rr_of(&self, run: &RunFile) -> Result<BTreeMap<String, f64>, PipelineError> {
        Ok(reciprocal_ranks(run, &self.eval_qrels)?)
    }
}

fn wer_target_for(condition: &str) -> Option<f64> {
    match condition {
        CONDITION_STD => Some(WER_STANDARD),
        CONDITION_SEMI => Some(WER_SEMI),
        CONDITION_ORACLE => Some(WER_ORACLE),
        _ => None,
    }
}

/// Generates the corpus and attaches calibrated N-best sets for every
/// noisy condition named in the config.
pub fn build_grid_corpus(config: &GridConfig) -> Result<CorpusBundle, PipelineError> {
    let mut bundle = generate_corpus(config.num_docs, config.vocab_size, config.corpus_seed)?;
    for condition in &config.conditions {
        if condition == CONDITION_CLEAN {
            continue;
        }
        let target = wer_target_for(condition).ok_or_else(|| {
            PipelineError::Config(format!(
                "condition `{condition}` has no WER preset; use clean/oracle/semi/std"
            ))
        })?;
        let spec = NoiseChannelSpec::preset(target, config.corpus_seed);
        let channel = NoiseChannel::from_bundle(&bundle, spec)?;
        let sample = config.calibration_docs.min(bundle.docs.len());
        let calibrated = calibrate_channel(&channel, &bundle.docs[..sample], config.samples)?;
        let channel = NoiseChannel::from_bundle(&bundle, calibrated)?;
        let width = if config.table2_conditions.contains(condition) {
            config.nbest_width
        } else {
            1
        };
        attach_nbest(&mut bundle, &channel, condition, width, config.samples)?;
    }
    Ok(bundle)
}

fn pool_key(seed: u64, query_id: &str) -> String {
    format!("s{seed}:{query_id}")
}

/// Runs the full grid. Cells that fail are recorded in `report.missing`
/// and the run continues.
pub fn run_experiment_grid(
    config: &GridConfig,
    mut progress: impl FnMut(&str),
) -> Result<GridReport, PipelineError> {
    progress("generating corpus and calibrating noise channels");
    let bundle = build_grid_corpus(config)?;
    let prepared = PreparedCorpus::new(&bundle, 1);
    let eval_qrels: BTreeMap<String, String> = bundle
        .split
        .eval
        .iter()
        .map(|q| (q.clone(), bundle.qrels[q].clone()))
        .collect();
    let mut bm25 = BTreeMap::new();
    for condition in &config.conditions {
        let docs = prepared.condition_docs(condition)?;
        bm25.insert(condition.clone(), build_bm25(docs)?);
    }
    let rt = GridRuntime {
        config,
        bundle,
        prepared,
        bm25,
        eval_qrels,
    };

    // Pooled per-(seed, query) reciprocal ranks and per-seed MRRs per cell.
    let mut pooled: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut per_seed_mrr: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut missing: Vec<String> = Vec::new();

    fn record(
        key: String,
        seed: u64,
        rr: BTreeMap<String, f64>,
        pooled: &mut BTreeMap<String, BTreeMap<String, f64>>,
        per_seed_mrr: &mut BTreeMap<String, Vec<f64>>,
    ) {
        let mean = rr.values().sum::<f64>() / rr.len().max(1) as f64;
        per_seed_mrr.entry(key.clone()).or_default().push(mean);
        let entry = pooled.entry(key).or_default();
        for (qid, v) in rr {
            entry.insert(pool_key(seed, &qid), v);
        }
    }

    // BM25 rows are seed-independent; replicate them across seeds so the
    // pooled (seed, query) pairings line up with the model rows.
    progress("evaluating BM25 per condition");
    for condition in &config.conditions {
        let index = &rt.bm25[condition];
        let run = rt.collect_run(&format!("bm25_{condition}"), |qid| {
            let q = rt.prepared.query(qid)?;
            Ok(bm25_search(index, q, config.run_depth))
        })?;
        let rr = rt.rr_of(&run)?;
        for &seed in &config.model_seeds {
            record(
                format!("bm25|{condition}"),
                seed,
                rr.clone(),
                &mut pooled,
                &mut per_seed_mrr,
            );
        }
        maybe_write_run(config, &run, &format!("bm25_{condition}"))?;
    }

    let mut timing: Vec<TimingReport> = Vec::new();

    for (seed_pos, &seed) in config.model_seeds.iter().enumerate() {
        progress(&format!(
            "seed {seed} ({} of {})",
            seed_pos + 1,
            config.model_seeds.len()
        ));
        let models = train_seed_models(&rt, seed, &mut progress)?;

        for condition in &config.conditions {
            let docs = rt.prepared.condition_docs(condition)?.clone();
            let index = &rt.bm25[condition];
            let run = rt.collect_run(&format!("rerank_{condition}_s{seed}"), |qid| {
                let q = rt.prepared.query(qid)?;
                search_rerank(q, index, &docs, &models.rerank, config.rerank_depth)
            })?;
            record(
                format!("rerank|{condition}"),
                seed,
                rt.rr_of(&run)?,
                &mut pooled,
                &mut per_seed_mrr,
            );
            maybe_write_run(config, &run, &format!("rerank_{condition}_s{seed}"))?;

            for (system, params) in [("dr", &models.dr), ("dr-ance", &models.dr_ance)] {
                let inputs = doc_inputs_text(&rt.prepared, condition)?;
                let vindex = build_vector_index(&inputs, params, condition.clone())?;
                let run = rt.collect_run(&format!("{system}_{condition}_s{seed}"), |qid| {
                    let q = rt.prepared.query(qid)?;
                    search_dr(q, &[&vindex], params, None, config.run_depth)
                })?;
                record(
                    format!("{system}|{condition}"),
                    seed,
                    rt.rr_of(&run)?,
                    &mut pooled,
                    &mut per_seed_mrr,
                );
                maybe_write_run(config, &run, &format!("{system}_{condition}_s{seed}"))?;
            }
        }

        run_fusion_cells(
            &rt,
            seed,
            &models,
            &mut pooled,
            &mut per_seed_mrr,
            &mut missing,
        )?;

        if seed_pos == 0 && config.timing_queries > 0 {
            progress("measuring search latency");
            timing = measure_timing(&rt, &models)?;
        }
    }

    progress("assembling tables and significance tests");
    assemble_report(config, pooled, per_seed_mrr, missing, timing)
}

fn run_fusion_cells(
    rt: &GridRuntime<'_>,
    seed: u64,
    models: &SeedModels,
    pooled: &mut BTreeMap<String, BTreeMap<String, f64>>,
    per_seed_mrr: &mut BTreeMap<String, Vec<f64>>,
    missing: &mut Vec<String>,
) -> Result<(), PipelineError> {
    let config = rt.config;

    fn record(
        key: String,
        seed: u64,
        rr: BTreeMap<String, f64>,
        pooled: &mut BTreeMap<String, BTreeMap<String, f64>>,
        per_seed_mrr: &mut BTreeMap<String, Vec<f64>>,
    ) {
        let mean = rr.values().sum::<f64>() / rr.len().max(1) as f64;
        per_seed_mrr.entry(key.clone()).or_default().push(mean);
        let entry = pooled.entry(key).or_default();
        for (qid, v) in rr {
            entry.insert(pool_key(seed, &qid), v);
        }
    }

    for condition in &config.table2_conditions {
        for system in &config.table2_systems {
            let params = match system.as_str() {
                "dr" => &models.dr,
                "dr-ance" => &models.dr_ance,
                other => {
                    missing.push(format!("unknown table2 system `{other}`"));
                    continue;
                }
            };
            for mode in &config.table2_modes {
                match mode.as_str() {
                    "late" => {
                        let max_n = config.n_sizes.iter().copied().max().unwrap_or(1);
                        let mut rank_indexes: Vec<VectorIndex<Real>> = Vec::new();
                        let mut failed = false;
                        for rank in 0..max_n {
                            let built = doc_inputs_hyp(&rt.bundle, &rt.prepared, condition, rank)
                                .and_then(|inputs| {
                                    Ok(build_vector_index(
                                        &inputs,
                                        params,
                                        format!("{condition}:hyp{rank}"),
                                    )?)
                                });
                            match built {
                                Ok(v) => rank_indexes.push(v),
                                Err(e) => {
                                    missing.push(format!(
                                        "{system}-late rank {rank} on {condition} (seed {seed}): {e}"
                                    ));
                                    failed = true;
                                    break;
                                }
                            }
                        }
                        if failed {
                            continue;
                        }
                        for &n in &config.n_sizes {
                            if n == 1 {
                                continue; // the 1-best cell is the first-table run
                            }
                            let slice: Vec<&VectorIndex<Real>> =
                                rank_indexes[..n].iter().collect();
                            let fusion = FusionConfig::late(n);
                            let run = rt.collect_run(
                                &format!("{system}_late{n}_{condition}_s{seed}"),
                                |qid| {
                                    let q = rt.prepared.query(qid)?;
                                    search_dr(q, &slice, params, Some(&fusion), config.run_depth)
                                },
                            )?;
                            record(
                                format!("{system}|{condition}|late|{n}"),
                                seed,
                                rt.rr_of(&run)?,
                                pooled,
                                per_seed_mrr,
                            );
                            maybe_write_run(
                                config,
                                &run,
                                &format!("{system}_late{n}_{condition}_s{seed}"),
                            )?;
                        }
                    }
                    "early" => {
                        for &n in &config.n_sizes {
                            if n == 1 {
                                continue;
                            }
                            let cell = early_fusion_run(rt, seed, system, params, condition, n);
                            match cell {
                                Ok(run) => {
                                    record(
                                        format!("{system}|{condition}|early|{n}"),
                                        seed,
                                        rt.rr_of(&run)?,
                                        pooled,
                                        per_seed_mrr,
                                    );
                                    maybe_write_run(
                                        config,
                                        &run,
                                        &format!("{system}_early{n}_{condition}_s{seed}"),
                                    )?;
                                }
                                Err(e) => missing.push(format!(
                                    "{system}-early n={n} on {condition} (seed {seed}): {e}"
                                )),
                            }
                        }
                    }
                    other => missing.push(format!("unknown fusion mode `{other}`")),
                }
            }
        }
    }
    Ok(())
}

fn early_fusion_run(
    rt: &GridRuntime<'_>,
    seed: u64,
    system: &str,
    params: &EncoderParams<Real>,
    condition: &str,
    n: usize,
) -> Result<RunFile, PipelineError> {
    let config = rt.config;
    // Reuse mode encodes fused documents with the 1-best-trained weights;
    // retrain mode fits a fresh model on fused inputs first.
    let encode_params: EncoderParams<Real> = match config.early_fusion {
        EarlyFusionWeights::Reuse => params.clone(),
        EarlyFusionWeights::Retrain => {
            let enc = config.encoder(rt.prepared.vocab.len(), seed);
            let mut tc = TrainConfig::dr(
                enc,
                config.train_condition.clone(),
                system == "dr-ance",
            );
            tc.epochs = if system == "dr-ance" {
                config.epochs_ance
            } else {
                config.epochs_dr
            };
            tc.learning_rate = config.lr_dr;
            tc.batch_size = config.batch_size;
            tc.negatives = config.negatives;
            tc.fusion_n = Some(n);
            train_dr::<Real>(&rt.bundle, &rt.prepared, &tc, |_| {})?.best_params
        }
    };
    let (inputs, _fell_back) = doc_inputs_fused(&rt.bundle, &rt.prepared, condition, n)?;
    let vindex = build_vector_index(&inputs, &encode_params, format!("{condition}:early@{n}"))?;
    rt.collect_run(&format!("{system}_early{n}_{condition}_s{seed}"), |qid| {
        let q = rt.prepared.query(qid)?;
        search_dr(q, &[&vindex], &encode_params, None, config.run_depth)
    })
}

fn train_seed_models(
    rt: &GridRuntime<'_>,
    seed: u64,
    progress: &mut impl FnMut(&str),
) -> Result<SeedModels, PipelineError> {
    let config = rt.config;
    let enc = config.encoder(rt.prepared.vocab.len(), seed);

    let mut tc = TrainConfig::rerank(enc.clone(), config.train_condition.clone());
    tc.epochs = config.epochs_rerank;
    tc.learning_rate = config.lr_rerank;
    tc.batch_size = config.batch_size;
    tc.negatives = config.negatives;
    progress(&format!("  training re-ranker (seed {seed})"));
    let rerank = train_reranker::<Real>(&rt.bundle, &rt.prepared, &tc, |_| {})?;

    let mut tc = TrainConfig::dr(enc.clone(), config.train_condition.clone(), false);
    tc.epochs = config.epochs_dr;
    tc.learning_rate = config.lr_dr;
    tc.batch_size = config.batch_size;
    tc.negatives = config.negatives;
    progress(&format!("  training dense retriever (seed {seed})"));
    let dr = train_dr::<Real>(&rt.bundle, &rt.prepared, &tc, |_| {})?;

    let mut tc = TrainConfig::dr(enc, config.train_condition.clone(), true);
    tc.epochs = config.epochs_ance;
    tc.learning_rate = config.lr_dr;
    tc.batch_size = config.batch_size;
    tc.negatives = config.negatives;
    progress(&format!("  training dense retriever with ANCE (seed {seed})"));
    let dr_ance = train_dr::<Real>(&rt.bundle, &rt.prepared, &tc, |_| {})?;

    Ok(SeedModels {
        rerank: rerank.best_params,
        dr: dr.best_params,
        dr_ance: dr_ance.best_params,
    })
}

fn measure_timing(
    rt: &GridRuntime<'_>,
    models: &SeedModels,
) -> Result<Vec<TimingReport>, PipelineError> {
    let config = rt.config;
    let condition = config
        .conditions
        .first()
        .cloned()
        .unwrap_or_else(|| CONDITION_CLEAN.to_string());
    let docs = rt.prepared.condition_docs(&condition)?.clone();
    let index = &rt.bm25[&condition];
    let inputs = doc_inputs_text(&rt.prepared, &condition)?;
    let vindex = build_vector_index(&inputs, &models.dr_ance, condition.clone())?;
    let count = config.timing_queries.min(rt.eval_queries().len());
    let queries: Vec<&crate::text::TokenSeq> = rt.eval_queries()[..count]
        .iter()
        .map(|qid| rt.prepared.query(qid))
        .collect::<Result<_, _>>()?;
    let depth = config.timing_depth;

    let bm25_t = timing_harness(
        "bm25",
        |q: &&crate::text::TokenSeq, k| {
            std::hint::black_box(bm25_search(index, q, k));
        },
        &queries,
        depth,
    )?;
    let rerank_t = timing_harness(
        "rerank",
        |q: &&crate::text::TokenSeq, k| {
            std::hint::black_box(
                search_rerank(q, index, &docs, &models.rerank, k).expect("rerank search"),
            );
        },
        &queries,
        depth,
    )?;
    let dr_t = timing_harness(
        "dr",
        |q: &&crate::text::TokenSeq, k| {
            std::hint::black_box(
                search_dr(q, &[&vindex], &models.dr_ance, None, k).expect("dense search"),
            );
        },
        &queries,
        depth,
    )?;
    Ok(vec![bm25_t, rerank_t, dr_t])
}

fn maybe_write_run(config: &GridConfig, run: &RunFile, name: &str) -> Result<(), PipelineError> {
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir).map_err(EvalError::Io)?;
        super::runfile::write_run(run, &dir.join(format!("{name}.trec")))?;
    }
    Ok(())
}

fn assemble_report(
    config: &GridConfig,
    pooled: BTreeMap<String, BTreeMap<String, f64>>,
    per_seed_mrr: BTreeMap<String, Vec<f64>>,
    missing: Vec<String>,
    timing: Vec<TimingReport>,
) -> Result<GridReport, PipelineError> {
    let mean = |key: &str| -> Option<f64> {
        per_seed_mrr
            .get(key)
            .map(|v| v.iter().sum::<f64>() / v.len().max(1) as f64)
    };
    let make_cell = |system: &str,
                     condition: &str,
                     fusion: Option<(&str, usize)>,
                     baseline: Option<(&str, String)>|
     -> Option<GridCell> {
        let key = match fusion {
            None => format!("{system}|{condition}"),
            Some((mode, n)) => format!("{system}|{condition}|{mode}|{n}"),
        };
        let rr = pooled.get(&key)?;
        let seed_mrrs = per_seed_mrr.get(&key)?.clone();
        let mean_mrr = mean(&key)?;
        let significance = baseline.and_then(|(label, bkey)| {
            let base = pooled.get(&bkey)?;
            let test = paired_ttest(rr, base).ok()?;
            Some(SigMark {
                baseline: label.to_string(),
                t: test.t,
                p: test.p,
            })
        });
        let pct_change = fusion.and_then(|_| {
            let base = mean(&format!("{system}|{condition}"))?;
            (base > 0.0).then(|| 100.0 * (mean_mrr - base) / base)
        });
        Some(GridCell {
            system: system.to_string(),
            condition: condition.to_string(),
            fusion: fusion.map(|(m, n)| (m.to_string(), n)),
            mean_mrr,
            seed_mrrs,
            significance,
            pct_change,
            pooled_rr: rr.clone(),
        })
    };

    let mut table1 = Vec::new();
    for condition in &config.conditions {
        for system in ["bm25", "rerank", "dr", "dr-ance"] {
            let baseline = (system != "bm25").then(|| ("bm25", format!("bm25|{condition}")));
            if let Some(cell) = make_cell(system, condition, None, baseline) {
                table1.push(cell);
            }
        }
    }

    let mut table2 = Vec::new();
    for condition in &config.table2_conditions {
        for system in &config.table2_systems {
            for mode in &config.table2_modes {
                for &n in &config.n_sizes {
                    if n == 1 {
                        continue;
                    }
                    let baseline = Some(("1-best", format!("{system}|{condition}")));
                    if let Some(cell) =
                        make_cell(system, condition, Some((mode.as_str(), n)), baseline)
                    {
                        table2.push(cell);
                    }
                }
            }
        }
    }

    // Gap closure for dr-ance: clean vs std 1-best vs the best fused cell.
    let gap = (|| -> Option<GapReport> {
        let clean_mrr = mean("dr-ance|clean")?;
        let one_best_mrr = mean(&format!("dr-ance|{CONDITION_STD}"))?;
        let mut best: Option<(f64, String)> = None;
        for cell in &table2 {
            if cell.system != "dr-ance" {
                continue;
            }
            let (mode, n) = cell.fusion.as_ref()?;
            let label = format!("{} {mode} {n}-best", cell.condition);
            if best.as_ref().map(|(b, _)| cell.mean_mrr > *b).unwrap_or(true) {
                best = Some((cell.mean_mrr, label));
            }
        }
        let (best_fused_mrr, best_fused_cell) = best?;
        let gap_one_best = clean_mrr - one_best_mrr;
        let gap_fused = clean_mrr - best_fused_mrr;
        Some(GapReport {
            clean_mrr,
            one_best_mrr,
            best_fused_mrr,
            best_fused_cell,
            gap_one_best,
            gap_fused,
            relative_reduction: if gap_one_best > 0.0 {
                1.0 - gap_fused / gap_one_best
            } else {
                0.0
            },
            paper_reference: "reference run: 14.32 -> 6.58 points".to_string(),
        })
    })();

    let report = GridReport {
        config: config.clone(),
        table1,
        table2,
        gap,
        timing,
        missing,
    };
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir).map_err(EvalError::Io)?;
        std::fs::write(dir.join("report.txt"), report.render_text()).map_err(EvalError::Io)?;
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| PipelineError::Config(format!("report serialization: {e}")))?;
        std::fs::write(dir.join("report.json"), json).map_err(EvalError::Io)?;
    }
    Ok(report)
}
