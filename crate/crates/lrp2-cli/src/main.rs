//! `lrp2` — drive the cross-lingual projection pipeline end to end.
//!
//! Every stage is a subcommand: train a toy bilingual model, extract
//! language vectors, probe with or without the projection pair installed,
//! sweep layer pairs, and analyze representation geometry and knowledge
//! neurons. All outputs embed `{seed, config hash, tool version}`; reruns
//! with an equal config hash are byte-identical.
//!
//! Exit codes: 0 success, 2 usage/config error, 1 runtime error.

mod commands;
mod report_cmd;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "lrp2", version, about = "Cross-lingual representation projection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonProbeArgs {
    /// LRPW model file.
    #[arg(long)]
    model: PathBuf,
    /// Probe dataset (JSONL).
    #[arg(long)]
    dataset: PathBuf,
    /// Language to evaluate.
    #[arg(long)]
    lang: String,
    /// Pivot (source) language.
    #[arg(long, default_value = "en")]
    pivot: String,
    /// Directory holding `<lang>.lrpw` language-vector files.
    #[arg(long)]
    vectors: PathBuf,
    /// Candidate-pool cap (causal protocol).
    #[arg(long)]
    pool_cap: Option<usize>,
    /// Run seed; the LRP2_SEED environment variable overrides it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for probing/sweeps/attribution.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a reference fact-world specification.
    WorldSpec {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        relations: usize,
        #[arg(long, default_value_t = 10)]
        facts_per_relation: usize,
        #[arg(long, default_value_t = 16)]
        subject_entities: usize,
        #[arg(long, default_value_t = 8)]
        object_entities: usize,
        #[arg(long, default_value_t = 4)]
        objects_per_relation: usize,
        /// Fact exposure of the low-resource target language.
        #[arg(long, default_value_t = 0.3)]
        target_exposure: f64,
        /// Fraction of entity surfaces shared with the pivot.
        #[arg(long, default_value_t = 0.75)]
        shared_fraction: f64,
    },

    /// Generate a fact world and train a toy model on it.
    TrainToy {
        /// Fact-world specification (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Output directory (model, corpora, probes, parallel texts, meta).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        /// Model/objective mode.
        #[arg(long, default_value = "masked")]
        mode: String,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 64)]
        ffn: usize,
        #[arg(long, default_value_t = 0.5)]
        mask_fraction: f64,
    },

    /// Compute per-layer language vectors from a corpus.
    ExtractVectors {
        #[arg(long)]
        model: PathBuf,
        /// Corpus JSONL ({"lang","text","token_ids"}).
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lang: String,
        /// Output LRPW path.
        #[arg(long)]
        out: PathBuf,
    },

    /// Probe one language, baseline or under a LIRP/LSRP pair.
    Probe {
        #[command(flatten)]
        common: CommonProbeArgs,
        /// Expected model mode (checked against the weight file).
        #[arg(long)]
        mode: String,
        /// LIRP layer i (requires --lsrp-layer).
        #[arg(long, requires = "lsrp_layer")]
        lirp_layer: Option<usize>,
        /// LSRP layer j (requires --lirp-layer).
        #[arg(long, requires = "lirp_layer")]
        lsrp_layer: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },

    /// Evaluate every admissible layer pair for a language.
    Sweep {
        #[command(flatten)]
        common: CommonProbeArgs,
        /// Restrict the grid to specific pairs, e.g. "1:3,2:4".
        #[arg(long)]
        grid: Option<String>,
        /// Resume from (and append to) a per-pair cache in the output dir.
        #[arg(long, default_value_t = false)]
        resume: bool,
        #[arg(long)]
        out: PathBuf,
    },

    /// Layer-wise cosine similarity between a language pair.
    AnalyzeSpace {
        #[command(flatten)]
        common: CommonProbeArgs,
        #[arg(long, requires = "lsrp_layer")]
        lirp_layer: Option<usize>,
        #[arg(long, requires = "lirp_layer")]
        lsrp_layer: Option<usize>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },

    /// Knowledge-neuron identification and cross-lingual overlap.
    AnalyzeNeurons {
        #[command(flatten)]
        common: CommonProbeArgs,
        #[arg(long, requires = "lsrp_layer")]
        lirp_layer: Option<usize>,
        #[arg(long, requires = "lirp_layer")]
        lsrp_layer: Option<usize>,
        /// Top-k neurons per layer.
        #[arg(long, default_value_t = 20)]
        top_k: usize,
        /// Riemann steps of the attribution quadrature.
        #[arg(long, default_value_t = 20)]
        riemann_steps: usize,
        /// Relative central-difference step.
        #[arg(long, default_value_t = 1e-3)]
        gradient_step: f64,
        /// Overlap denominator: intersection-over-union or intersection-over-k.
        #[arg(long, default_value = "intersection-over-union")]
        overlap_formula: String,
        #[arg(long)]
        out: PathBuf,
    },

    /// Merge per-language probe results into grouped and per-relation tables.
    Report {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory of probe-results JSONL files.
        #[arg(long)]
        results: PathBuf,
        /// Language meta JSONL.
        #[arg(long)]
        meta: PathBuf,
        #[arg(long, default_value = "en")]
        pivot: String,
        /// Model label for the report rows.
        #[arg(long, default_value = "toy")]
        model_name: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::WorldSpec {
            out,
            seed,
            relations,
            facts_per_relation,
            subject_entities,
            object_entities,
            objects_per_relation,
            target_exposure,
            shared_fraction,
        } => commands::world_spec(
            &out,
            lrp2::trainer::world::ReferenceWorldOptions {
                seed,
                num_relations: relations,
                facts_per_relation,
                num_subject_entities: subject_entities,
                num_object_entities: object_entities,
                objects_per_relation,
                target_exposure,
                shared_surface_fraction: shared_fraction,
            },
        ),
        Command::TrainToy {
            spec,
            out,
            seed,
            epochs,
            batch_size,
            lr,
            mode,
            layers,
            hidden,
            heads,
            ffn,
            mask_fraction,
        } => commands::train_toy(commands::TrainToyArgs {
            spec,
            out,
            seed: util::resolve_seed(seed),
            epochs,
            batch_size,
            learning_rate: lr,
            mode,
            layers,
            hidden,
            heads,
            ffn,
            mask_fraction,
        }),
        Command::ExtractVectors { model, corpus, lang, out } => {
            commands::extract_vectors(&model, &corpus, &lang, &out)
        }
        Command::Probe { common, mode, lirp_layer, lsrp_layer, out } => {
            commands::probe(common, &mode, lirp_layer.zip(lsrp_layer), &out)
        }
        Command::Sweep { common, grid, resume, out } => {
            commands::sweep(common, grid.as_deref(), resume, &out)
        }
        Command::AnalyzeSpace { common, lirp_layer, lsrp_layer, out } => {
            commands::analyze_space(common, lirp_layer.zip(lsrp_layer), &out)
        }
        Command::AnalyzeNeurons {
            common,
            lirp_layer,
            lsrp_layer,
            top_k,
            riemann_steps,
            gradient_step,
            overlap_formula,
            out,
        } => commands::analyze_neurons(commands::NeuronArgs {
            common,
            pair: lirp_layer.zip(lsrp_layer),
            top_k,
            riemann_steps,
            gradient_step,
            overlap_formula,
            out,
        }),
        Command::Report { dataset, results, meta, pivot, model_name, out } => {
            report_cmd::report(&dataset, &results, &meta, &pivot, &model_name, &out)
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
