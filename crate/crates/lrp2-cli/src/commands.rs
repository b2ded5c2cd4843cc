//! Subcommand implementations (everything except `report`).

use std::path::{Path, PathBuf};

use serde::Serialize;

use lrp2::data_io;
use lrp2::engine::{init_random, save_weights, Hook, Mode, Model};
use lrp2::error::{Error, Result};
use lrp2::geometry::{layerwise_cosine, probe_parallel_pairs, ConfigTag, SpaceDistanceCurve};
use lrp2::intervention::{validate_spec, InterventionSpec, SpecCheck};
use lrp2::langvec::{language_vectors, save_language_vectors_with_meta};
use lrp2::metrics::{accuracy, transferability, EvaluationSets, ResourceThresholds};
use lrp2::neurons::{
    overlap_report, relation_neuron_sets, AttributionConfig, KnowledgeNeuronSet, OverlapFormula,
};
use lrp2::probing::{group_by_relation, probe_language, ProbeQuery};
use lrp2::provenance::RunMeta;
use lrp2::sweep::{gap_curve, run_sweep, select_best, Criterion, SweepContext};
use lrp2::trainer::world::{generate_world, reference_world_spec, ReferenceWorldOptions};
use lrp2::trainer::{train, Objective, TrainConfig};

use crate::util;
use crate::CommonProbeArgs;

pub fn world_spec(out: &Path, opts: ReferenceWorldOptions) -> Result<()> {
    let spec = reference_world_spec(&opts);
    spec.validate()?;
    data_io::save_world_spec(out, &spec)?;
    println!(
        "world spec: {} facts, {} relations, {} languages -> {}",
        spec.facts.len(),
        spec.num_relations,
        spec.languages.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
pub struct TrainToyArgs {
    pub spec: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mode: String,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub mask_fraction: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    schema: String,
    version: u32,
    seed: u64,
    config_hash: String,
    tool_version: String,
    epochs: usize,
    first_epoch_loss: Option<f64>,
    final_epoch_loss: Option<f64>,
    epoch_losses: Vec<f64>,
}

#[derive(Serialize)]
struct TrainEffectiveConfig<'a> {
    command: &'static str,
    seed: u64,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    mode: &'a str,
    layers: usize,
    hidden: usize,
    heads: usize,
    ffn: usize,
    mask_fraction: f64,
    spec: &'a lrp2::trainer::world::FactWorldSpec,
}

pub fn train_toy(args: TrainToyArgs) -> Result<()> {
    let spec = data_io::load_world_spec(&args.spec)?;
    let run = RunMeta::new(
        args.seed,
        &TrainEffectiveConfig {
            command: "train-toy",
            seed: args.seed,
            epochs: args.epochs,
            batch_size: args.batch_size,
            learning_rate: args.learning_rate,
            mode: &args.mode,
            layers: args.layers,
            hidden: args.hidden,
            heads: args.heads,
            ffn: args.ffn,
            mask_fraction: args.mask_fraction,
            spec: &spec,
        },
    )?;
    let mode = util::parse_mode(&args.mode)?;
    let world = generate_world(&spec, args.seed)?;

    let config = world.model_config(mode, args.layers, args.hidden, args.heads, args.ffn);
    config.validate()?;
    let vocab = world.vocab(&config)?;
    let mut model = init_random(&config, args.seed)?;
    model.vocab = Some(vocab);

    let train_config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        seed: args.seed,
        objective: match mode {
            Mode::Masked => Objective::MaskedLm,
            Mode::Causal => Objective::CausalLm,
        },
        mask_fraction: args.mask_fraction,
    };
    let corpus = world.train_corpus();
    let outcome = train(&model, &corpus, &train_config)?;

    util::ensure_dir(&args.out)?;
    save_weights(&outcome.model, &args.out.join("model.lrpw"))?;

    let probes_path = args.out.join("probes.jsonl");
    data_io::save_probe_dataset(&probes_path, &world.probes, &run)?;
    let (_, manifest) = data_io::load_probe_dataset(&probes_path)?;
    std::fs::write(args.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    for (lang, sentences) in &world.corpora {
        data_io::save_corpus(&args.out.join(format!("corpus.{lang}.jsonl")), sentences, &run)?;
    }
    for (lang, texts) in &world.parallel_texts {
        std::fs::write(args.out.join(format!("parallel.{lang}.txt")), texts.join("\n") + "\n")?;
    }
    data_io::save_language_meta(
        &args.out.join("meta.languages.jsonl"),
        &world.metas,
        &ResourceThresholds::default(),
    )?;
    data_io::save_world_spec(&args.out.join("world.json"), &spec)?;

    let summary = TrainSummary {
        schema: "train-summary".into(),
        version: run.version,
        seed: run.seed,
        config_hash: run.config_hash.clone(),
        tool_version: run.tool_version.clone(),
        epochs: args.epochs,
        first_epoch_loss: outcome.epoch_losses.first().copied(),
        final_epoch_loss: outcome.epoch_losses.last().copied(),
        epoch_losses: outcome.epoch_losses.clone(),
    };
    std::fs::write(args.out.join("train.json"), serde_json::to_string_pretty(&summary)?)?;

    println!(
        "trained {} sentences for {} epochs: loss {:.4} -> {:.4}",
        corpus.len(),
        args.epochs,
        summary.first_epoch_loss.unwrap_or(f64::NAN),
        summary.final_epoch_loss.unwrap_or(f64::NAN),
    );
    println!("model: {}", args.out.join("model.lrpw").display());
    Ok(())
}

pub fn extract_vectors(model_path: &Path, corpus_path: &Path, lang: &str, out: &Path) -> Result<()> {
    let model = util::load_model(model_path)?;
    let records = data_io::load_corpus(corpus_path)?;
    let sentences: Vec<Vec<u32>> = records
        .iter()
        .filter(|r| r.lang == lang)
        .map(|r| r.token_ids.clone())
        .collect();
    if sentences.is_empty() {
        return Err(Error::Input(format!(
            "{} holds no sentences for language {lang}",
            corpus_path.display()
        )));
    }
    let set = language_vectors(&model, &sentences, lang)?;
    #[derive(Serialize)]
    struct VectorArgs<'a> {
        command: &'static str,
        lang: &'a str,
        num_sentences: usize,
        model_config: &'a lrp2::engine::ModelConfig,
    }
    let run = RunMeta::new(
        0,
        &VectorArgs {
            command: "extract-vectors",
            lang,
            num_sentences: sentences.len(),
            model_config: &model.config,
        },
    )?;
    save_language_vectors_with_meta(&set, out, Some(&run))?;
    println!(
        "language {lang}: {} sentences -> {} ({} x {})",
        set.num_sentences,
        out.display(),
        set.num_layers(),
        set.hidden_dim()
    );
    Ok(())
}

/// Load vectors and build hooks for an explicit layer pair.
fn build_hooks(
    model: &Model,
    vectors_dir: &Path,
    lang: &str,
    pivot: &str,
    pair: (usize, usize),
) -> Result<(Vec<Hook>, InterventionSpec)> {
    if let SpecCheck::Violation(v) = validate_spec(pair.0, pair.1, &model.config) {
        return Err(Error::Config(v));
    }
    let lang_vectors = util::load_vectors(vectors_dir, lang)?;
    let pivot_vectors = util::load_vectors(vectors_dir, pivot)?;
    let spec = InterventionSpec::new(lang_vectors, pivot_vectors, pair.0, pair.1)?;
    spec.validate_against(&model.config)?;
    let (lirp, lsrp) = spec.hooks()?;
    Ok((vec![lirp, lsrp], spec))
}

fn split_queries(queries: &[ProbeQuery], lang: &str, pivot: &str) -> Result<(Vec<ProbeQuery>, Vec<ProbeQuery>)> {
    let target: Vec<ProbeQuery> = queries.iter().filter(|q| q.lang == lang).cloned().collect();
    let pivot_q: Vec<ProbeQuery> = queries.iter().filter(|q| q.lang == pivot).cloned().collect();
    if target.is_empty() {
        return Err(Error::Input(format!("dataset holds no queries for language {lang}")));
    }
    if pivot_q.is_empty() {
        return Err(Error::Input(format!("dataset holds no queries for pivot {pivot}")));
    }
    Ok((target, pivot_q))
}

#[derive(Serialize)]
struct ProbeEffectiveConfig<'a> {
    command: &'static str,
    lang: &'a str,
    pivot: &'a str,
    pool_cap: Option<usize>,
    pair: Option<(usize, usize)>,
    seed: u64,
    model_config: &'a lrp2::engine::ModelConfig,
}

pub fn probe(common: CommonProbeArgs, mode: &str, pair: Option<(usize, usize)>, out: &Path) -> Result<()> {
    util::configure_jobs(common.jobs);
    let seed = util::resolve_seed(common.seed);
    let model = util::load_model(&common.model)?;
    let expected_mode = util::parse_mode(mode)?;
    if model.config.mode != expected_mode {
        return Err(Error::Config(format!(
            "--mode {expected_mode} given but the model runs in {} mode",
            model.config.mode
        )));
    }

    let (queries, manifest) = data_io::load_probe_dataset(&common.dataset)?;
    let (target, pivot_q) = split_queries(&queries, &common.lang, &common.pivot)?;

    let (hooks, tag) = match pair {
        None => (Vec::new(), ConfigTag::Baseline),
        Some(pair) => {
            let (hooks, _) = build_hooks(&model, &common.vectors, &common.lang, &common.pivot, pair)?;
            (hooks, ConfigTag::Pair { lirp: pair.0, lsrp: pair.1 })
        }
    };

    let run = RunMeta::new(
        seed,
        &ProbeEffectiveConfig {
            command: "probe",
            lang: &common.lang,
            pivot: &common.pivot,
            pool_cap: common.pool_cap,
            pair,
            seed,
            model_config: &model.config,
        },
    )?;

    let target_results = probe_language(&model, &target, common.pool_cap, seed, &hooks)?;
    let pivot_results = probe_language(&model, &pivot_q, common.pool_cap, seed, &[])?;
    let sets = EvaluationSets::from_results(common.lang.clone(), &target_results, &pivot_results)?;
    let acc = accuracy(&sets)?;
    let trans = transferability(&sets);

    util::ensure_dir(out)?;
    let label = util::config_label(tag);
    data_io::save_probe_results(
        &out.join(format!("results.{}.{label}.jsonl", common.lang)),
        &target_results,
        &common.lang,
        &common.pivot,
        tag,
        &run,
    )?;
    data_io::save_probe_results(
        &out.join(format!("results.{}.baseline.jsonl", common.pivot)),
        &pivot_results,
        &common.pivot,
        &common.pivot,
        ConfigTag::Baseline,
        &run,
    )?;
    let (lirp, lsrp) = match tag {
        ConfigTag::Baseline => (None, None),
        ConfigTag::Pair { lirp, lsrp } => (Some(lirp), Some(lsrp)),
    };
    data_io::save_metrics(
        &out.join(format!("metrics.{}.{label}.json", common.lang)),
        &data_io::MetricsReport {
            schema: "metrics".into(),
            version: run.version,
            seed: run.seed,
            config_hash: run.config_hash.clone(),
            tool_version: run.tool_version.clone(),
            lang: common.lang.clone(),
            pivot: common.pivot.clone(),
            lirp,
            lsrp,
            accuracy: acc,
            transferability: trans,
            probed: sets.probed.len(),
            correct: sets.correct.len(),
        },
    )?;
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    println!(
        "lang={} config={label} accuracy={acc:.2} transferability={trans:.2} ({} of {} correct)",
        common.lang,
        sets.correct.len(),
        sets.probed.len()
    );
    Ok(())
}

pub fn sweep(common: CommonProbeArgs, grid: Option<&str>, resume: bool, out: &Path) -> Result<()> {
    util::configure_jobs(common.jobs);
    let seed = util::resolve_seed(common.seed);
    let model = util::load_model(&common.model)?;
    let (queries, _) = data_io::load_probe_dataset(&common.dataset)?;
    let (target, pivot_q) = split_queries(&queries, &common.lang, &common.pivot)?;
    let lang_vectors = util::load_vectors(&common.vectors, &common.lang)?;
    let pivot_vectors = util::load_vectors(&common.vectors, &common.pivot)?;

    let grid_pairs = grid.map(util::parse_grid).transpose()?;
    let run = RunMeta::new(
        seed,
        &ProbeEffectiveConfig {
            command: "sweep",
            lang: &common.lang,
            pivot: &common.pivot,
            pool_cap: common.pool_cap,
            pair: None,
            seed,
            model_config: &model.config,
        },
    )?;

    util::ensure_dir(out)?;
    let cache_path = out.join(format!("sweep.{}.cache.jsonl", common.lang));
    let ctx = SweepContext {
        model: &model,
        target_queries: &target,
        pivot_queries: &pivot_q,
        lang_vectors: &lang_vectors,
        pivot_vectors: &pivot_vectors,
        pool_cap: common.pool_cap,
        seed,
    };
    let result = run_sweep(&ctx, grid_pairs.as_deref(), resume.then_some(cache_path.as_path()))?;

    data_io::save_sweep(&out.join(format!("sweep.{}.jsonl", common.lang)), &result, &run)?;
    let mut best_rows = Vec::new();
    let mut gap_curves = Vec::new();
    for (criterion, name) in [(Criterion::Accuracy, "accuracy"), (Criterion::Transferability, "transferability")] {
        let (tag, value) = select_best(&result, criterion);
        best_rows.push((common.lang.clone(), name.to_string(), tag, value));
        gap_curves.push((name.to_string(), gap_curve(&result, criterion)));
        println!(
            "best by {name}: {} = {value:.2} (baseline {:.2})",
            util::config_label(tag),
            result.baseline_value(criterion)
        );
    }
    data_io::save_best_config_csv(&out.join(format!("best.{}.csv", common.lang)), &best_rows, &run)?;
    data_io::save_gap_curve_csv(&out.join(format!("gap.{}.csv", common.lang)), &gap_curves, &run)?;
    println!("{} grid points evaluated", result.entries.len());
    Ok(())
}

pub fn analyze_space(common: CommonProbeArgs, pair: Option<(usize, usize)>, out: &Path) -> Result<()> {
    util::configure_jobs(common.jobs);
    let seed = util::resolve_seed(common.seed);
    let model = util::load_model(&common.model)?;
    let (queries, _) = data_io::load_probe_dataset(&common.dataset)?;
    let (target, pivot_q) = split_queries(&queries, &common.lang, &common.pivot)?;
    let pairs = probe_parallel_pairs(&model, &target, &pivot_q)?;

    let run = RunMeta::new(
        seed,
        &ProbeEffectiveConfig {
            command: "analyze-space",
            lang: &common.lang,
            pivot: &common.pivot,
            pool_cap: None,
            pair,
            seed,
            model_config: &model.config,
        },
    )?;

    let mut curves = vec![SpaceDistanceCurve {
        lang_pair: (common.lang.clone(), common.pivot.clone()),
        values: layerwise_cosine(&model, &pairs, &[], &[])?,
        config: ConfigTag::Baseline,
    }];
    if let Some(pair) = pair {
        let (hooks, _) = build_hooks(&model, &common.vectors, &common.lang, &common.pivot, pair)?;
        curves.push(SpaceDistanceCurve {
            lang_pair: (common.lang.clone(), common.pivot.clone()),
            values: layerwise_cosine(&model, &pairs, &hooks, &[])?,
            config: ConfigTag::Pair { lirp: pair.0, lsrp: pair.1 },
        });
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            util::ensure_dir(parent)?;
        }
    }
    data_io::save_curves_csv(out, &curves, &run)?;
    for curve in &curves {
        println!(
            "{}: [{}]",
            curve.config,
            curve.values.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")
        );
    }
    println!("curves: {} ({} pairs)", out.display(), pairs.len());
    Ok(())
}

pub struct NeuronArgs {
    pub common: CommonProbeArgs,
    pub pair: Option<(usize, usize)>,
    pub top_k: usize,
    pub riemann_steps: usize,
    pub gradient_step: f64,
    pub overlap_formula: String,
    pub out: PathBuf,
}

pub fn analyze_neurons(args: NeuronArgs) -> Result<()> {
    util::configure_jobs(args.common.jobs);
    let seed = util::resolve_seed(args.common.seed);
    let model = util::load_model(&args.common.model)?;
    let (queries, _) = data_io::load_probe_dataset(&args.common.dataset)?;
    let (target, pivot_q) = split_queries(&queries, &args.common.lang, &args.common.pivot)?;

    let formula = match args.overlap_formula.as_str() {
        "intersection-over-union" | "iou" => OverlapFormula::IntersectionOverUnion,
        "intersection-over-k" | "iok" => OverlapFormula::IntersectionOverK,
        other => return Err(Error::Config(format!("unknown overlap formula {other:?}"))),
    };
    let cfg = AttributionConfig {
        riemann_steps: args.riemann_steps,
        gradient_step: args.gradient_step,
        k: args.top_k,
    };
    cfg.validate()?;

    let hooks = match args.pair {
        None => None,
        Some(pair) => Some(
            build_hooks(&model, &args.common.vectors, &args.common.lang, &args.common.pivot, pair)?.0,
        ),
    };

    #[derive(Serialize)]
    struct NeuronEffectiveConfig<'a> {
        command: &'static str,
        lang: &'a str,
        pivot: &'a str,
        pair: Option<(usize, usize)>,
        cfg: &'a AttributionConfig,
        formula: &'a str,
        seed: u64,
        model_config: &'a lrp2::engine::ModelConfig,
    }
    let run = RunMeta::new(
        seed,
        &NeuronEffectiveConfig {
            command: "analyze-neurons",
            lang: &args.common.lang,
            pivot: &args.common.pivot,
            pair: args.pair,
            cfg: &cfg,
            formula: &args.overlap_formula,
            seed,
            model_config: &model.config,
        },
    )?;

    util::ensure_dir(&args.out)?;
    let target_groups = group_by_relation(&target);
    let pivot_groups = group_by_relation(&pivot_q);

    let mut pivot_sets: Vec<KnowledgeNeuronSet> = Vec::new();
    let mut base_sets: Vec<KnowledgeNeuronSet> = Vec::new();
    let mut proj_sets: Vec<KnowledgeNeuronSet> = Vec::new();
    for (relation, group) in &target_groups {
        let Some(pivot_group) = pivot_groups.get(relation) else { continue };
        let pivot_set =
            relation_neuron_sets(&model, pivot_group, &args.common.pivot, relation, &cfg, &[])?;
        let base_set = relation_neuron_sets(&model, group, &args.common.lang, relation, &cfg, &[])?;
        data_io::save_neuron_set(
            &args.out.join(format!("neurons.{}.{relation}.baseline.json", args.common.pivot)),
            &pivot_set,
            ConfigTag::Baseline,
            &run,
        )?;
        data_io::save_neuron_set(
            &args.out.join(format!("neurons.{}.{relation}.baseline.json", args.common.lang)),
            &base_set,
            ConfigTag::Baseline,
            &run,
        )?;
        if let (Some(hooks), Some((i, j))) = (&hooks, args.pair) {
            let proj_set =
                relation_neuron_sets(&model, group, &args.common.lang, relation, &cfg, hooks)?;
            data_io::save_neuron_set(
                &args.out.join(format!(
                    "neurons.{}.{relation}.{}.json",
                    args.common.lang,
                    util::config_label(ConfigTag::Pair { lirp: i, lsrp: j })
                )),
                &proj_set,
                ConfigTag::Pair { lirp: i, lsrp: j },
                &run,
            )?;
            proj_sets.push(proj_set);
        }
        pivot_sets.push(pivot_set);
        base_sets.push(base_set);
    }
    if pivot_sets.is_empty() {
        return Err(Error::Input("no relation is shared between the two languages".into()));
    }

    let num_layers = model.config.num_layers;
    let mut blocks = vec![(
        "baseline".to_string(),
        overlap_report(&base_sets, &pivot_sets, num_layers, formula)?,
    )];
    if let Some((i, j)) = args.pair {
        blocks.push((
            util::config_label(ConfigTag::Pair { lirp: i, lsrp: j }),
            overlap_report(&proj_sets, &pivot_sets, num_layers, formula)?,
        ));
    }
    data_io::save_overlap_csv(&args.out.join("overlap.csv"), &blocks, &run)?;
    for (label, report) in &blocks {
        println!(
            "{label}: same={} different={} avg={:.2}",
            report.same.map(|v| format!("{v:.2}")).unwrap_or_else(|| "n/a".into()),
            report.different.map(|v| format!("{v:.2}")).unwrap_or_else(|| "n/a".into()),
            report.avg
        );
    }
    Ok(())
}
