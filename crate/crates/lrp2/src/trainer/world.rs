//! Synthetic bilingual fact worlds.
//!
//! A fact world is a set of `(subject, relation, object)` triples plus,
//! per language, entity surface forms and relation templates. Generating
//! a world yields training sentences (each language covers a seeded
//! fraction of the facts — its exposure), the full probe dataset over
//! every fact in every language, and fact-aligned parallel texts for
//! language-vector and geometry work.
//!
//! Entity surfaces may be shared across languages (proper nouns usually
//! are); relation templates never are — each language renders a fact with
//! its own function words and word order. The knowledge gap between a
//! fully exposed pivot and a partially exposed target is what the
//! projection pipeline is then measured against.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Mode, ModelConfig};
use crate::error::{Error, Result};
use crate::metrics::{Family, LanguageMeta, ResourceThresholds};
use crate::probing::ProbeQuery;
use crate::tokenizer::{Vocab, BOS_SURFACE, MASK_SURFACE, PAD_SURFACE};

/// One `(subject, relation, object)` triple over entity/relation indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

/// A language's surface material and its fact exposure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageWorld {
    pub id: String,
    /// Fraction of facts realized as training sentences, in `[0, 1]`.
    pub exposure: f64,
    pub family: Family,
    pub wiki_articles: u64,
    /// Surface form per entity index.
    pub entity_surfaces: Vec<String>,
    /// Template per relation index, each with one `[X]` and one `[Y]`.
    pub relation_templates: Vec<String>,
}

/// The full world specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactWorldSpec {
    pub num_entities: usize,
    pub num_relations: usize,
    pub facts: Vec<Fact>,
    pub languages: Vec<LanguageWorld>,
}

impl FactWorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.facts.is_empty() {
            return Err(Error::Config("fact world has an empty fact list".into()));
        }
        if self.languages.is_empty() {
            return Err(Error::Config("fact world declares no languages".into()));
        }
        let mut seen_pairs = BTreeSet::new();
        for (idx, fact) in self.facts.iter().enumerate() {
            if fact.subject >= self.num_entities || fact.object >= self.num_entities {
                return Err(Error::Config(format!("fact {idx} references an undeclared entity")));
            }
            if fact.relation >= self.num_relations {
                return Err(Error::Config(format!("fact {idx} references an undeclared relation")));
            }
            if !seen_pairs.insert((fact.subject, fact.relation)) {
                return Err(Error::Config(format!(
                    "facts assign multiple objects to subject {} under relation {}",
                    fact.subject, fact.relation
                )));
            }
        }
        let mut ids = BTreeSet::new();
        for lang in &self.languages {
            if !ids.insert(lang.id.as_str()) {
                return Err(Error::Config(format!("duplicate language id {}", lang.id)));
            }
            if !(0.0..=1.0).contains(&lang.exposure) {
                return Err(Error::Config(format!(
                    "language {} exposure {} outside [0, 1]",
                    lang.id, lang.exposure
                )));
            }
            if lang.entity_surfaces.len() != self.num_entities {
                return Err(Error::Config(format!(
                    "language {} declares {} entity surfaces for {} entities",
                    lang.id,
                    lang.entity_surfaces.len(),
                    self.num_entities
                )));
            }
            if lang.relation_templates.len() != self.num_relations {
                return Err(Error::Config(format!(
                    "language {} declares {} templates for {} relations",
                    lang.id,
                    lang.relation_templates.len(),
                    self.num_relations
                )));
            }
            if lang.entity_surfaces.iter().any(|s| s.trim().is_empty()) {
                return Err(Error::Config(format!("language {} has an empty entity surface", lang.id)));
            }
            for (r, template) in lang.relation_templates.iter().enumerate() {
                for placeholder in ["[X]", "[Y]"] {
                    if template.matches(placeholder).count() != 1 {
                        return Err(Error::Config(format!(
                            "language {} template {r} must contain exactly one {placeholder}",
                            lang.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn relation_id(&self, relation: usize) -> String {
        format!("P{:02}", relation + 1)
    }
}

/// One training sentence with its object-token span marked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainSentence {
    pub lang: String,
    pub text: String,
    pub token_ids: Vec<u32>,
    /// Positions of the object's tokens within `token_ids`.
    pub object_positions: Vec<usize>,
}

/// A generated world: vocabulary, corpora, probes, and parallel texts.
#[derive(Debug, Clone)]
pub struct World {
    pub spec: FactWorldSpec,
    /// Id-ordered surface table (specials at ids 0..3).
    pub surfaces: Vec<String>,
    /// Per-language training sentences (covered facts only).
    pub corpora: BTreeMap<String, Vec<TrainSentence>>,
    /// The full probe dataset: every fact in every language.
    pub probes: Vec<ProbeQuery>,
    /// Per-language declarative renderings of every fact, fact-aligned
    /// across languages.
    pub parallel_texts: BTreeMap<String, Vec<String>>,
    pub metas: Vec<LanguageMeta>,
    /// Longest sentence in tokens, BOS excluded.
    pub max_sentence_tokens: usize,
}

impl World {
    /// A model configuration sized for this world.
    pub fn model_config(&self, mode: Mode, num_layers: usize, hidden_dim: usize, num_heads: usize, ffn_dim: usize) -> ModelConfig {
        ModelConfig {
            num_layers,
            hidden_dim,
            num_heads,
            ffn_dim,
            vocab_size: self.surfaces.len(),
            max_seq_len: self.max_sentence_tokens + 2,
            mode,
            mask_token_id: 0,
            pad_token_id: 1,
            bos_token_id: 2,
        }
    }

    pub fn vocab(&self, config: &ModelConfig) -> Result<Vocab> {
        Vocab::from_surfaces(self.surfaces.clone(), config)
    }

    /// All languages' training sentences, language-sorted.
    pub fn train_corpus(&self) -> Vec<TrainSentence> {
        self.corpora.values().flatten().cloned().collect()
    }

    /// Probe queries of one language.
    pub fn probes_for(&self, lang: &str) -> Vec<ProbeQuery> {
        self.probes.iter().filter(|q| q.lang == lang).cloned().collect()
    }
}

fn render_with_span(template: &str, subject: &str, object: &str, token_of: &BTreeMap<&str, u32>) -> Result<(String, Vec<u32>, Vec<usize>)> {
    let with_subject = template.replacen("[X]", subject, 1);
    let (pre, post) = with_subject
        .split_once("[Y]")
        .ok_or_else(|| Error::Config(format!("template {template:?} lacks [Y]")))?;
    let text = format!("{pre}{object}{post}").split_whitespace().collect::<Vec<_>>().join(" ");
    let lookup = |word: &str| -> Result<u32> {
        token_of
            .get(word)
            .copied()
            .ok_or_else(|| Error::Config(format!("word {word:?} missing from the world vocabulary")))
    };
    let pre_tokens: Vec<u32> = pre.split_whitespace().map(&lookup).collect::<Result<_>>()?;
    let object_tokens: Vec<u32> = object.split_whitespace().map(&lookup).collect::<Result<_>>()?;
    let post_tokens: Vec<u32> = post.split_whitespace().map(&lookup).collect::<Result<_>>()?;
    let mut ids = pre_tokens;
    let start = ids.len();
    ids.extend(&object_tokens);
    let object_positions: Vec<usize> = (start..ids.len()).collect();
    ids.extend(&post_tokens);
    Ok((text, ids, object_positions))
}

/// Generate corpora, probes, and parallel texts from a spec.
///
/// Coverage per language is a seeded sample of `round(exposure * |facts|)`
/// facts; the probe dataset always spans every fact. Identical
/// `(spec, seed)` inputs produce byte-identical worlds.
pub fn generate_world(spec: &FactWorldSpec, seed: u64) -> Result<World> {
    spec.validate()?;

    // Vocabulary: specials, then every word used anywhere, sorted.
    let mut words = BTreeSet::new();
    for lang in &spec.languages {
        for surface in &lang.entity_surfaces {
            for word in surface.split_whitespace() {
                words.insert(word.to_string());
            }
        }
        for template in &lang.relation_templates {
            for word in template.split_whitespace() {
                if word != "[X]" && word != "[Y]" {
                    words.insert(word.to_string());
                }
            }
        }
    }
    let mut surfaces = vec![MASK_SURFACE.to_string(), PAD_SURFACE.to_string(), BOS_SURFACE.to_string()];
    surfaces.extend(words);
    let token_of: BTreeMap<&str, u32> =
        surfaces.iter().enumerate().map(|(id, s)| (s.as_str(), id as u32)).collect();

    let mut corpora = BTreeMap::new();
    let mut probes = Vec::new();
    let mut parallel_texts: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut metas = Vec::new();
    let mut max_sentence_tokens = 0usize;
    let thresholds = ResourceThresholds::default();

    for (lang_idx, lang) in spec.languages.iter().enumerate() {
        // Deterministic coverage sample for this language.
        let covered_count = (lang.exposure * spec.facts.len() as f64).round() as usize;
        let mut order: Vec<usize> = (0..spec.facts.len()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ ((lang_idx as u64 + 1) << 32));
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let covered: BTreeSet<usize> = order.into_iter().take(covered_count).collect();

        let mut sentences = Vec::new();
        let mut texts = Vec::with_capacity(spec.facts.len());
        for (fact_idx, fact) in spec.facts.iter().enumerate() {
            let subject = &lang.entity_surfaces[fact.subject];
            let object = &lang.entity_surfaces[fact.object];
            let template = &lang.relation_templates[fact.relation];
            let (text, token_ids, object_positions) =
                render_with_span(template, subject, object, &token_of)?;
            max_sentence_tokens = max_sentence_tokens.max(token_ids.len());
            texts.push(text.clone());
            if covered.contains(&fact_idx) {
                sentences.push(TrainSentence {
                    lang: lang.id.clone(),
                    text,
                    token_ids,
                    object_positions,
                });
            }
            probes.push(ProbeQuery {
                lang: lang.id.clone(),
                relation: spec.relation_id(fact.relation),
                template: template.clone(),
                subject: subject.clone(),
                object: object.clone(),
                uuid: format!("{}:s{:03}:o{:03}", spec.relation_id(fact.relation), fact.subject, fact.object),
            });
        }
        corpora.insert(lang.id.clone(), sentences);
        parallel_texts.insert(lang.id.clone(), texts);
        metas.push(LanguageMeta {
            lang: lang.id.clone(),
            family: lang.family,
            resource: thresholds.tier(lang.wiki_articles),
            wiki_articles: lang.wiki_articles,
        });
    }

    for probe in &probes {
        probe.validate().map_err(|e| Error::Config(format!("generated probe invalid: {e}")))?;
    }

    Ok(World {
        spec: spec.clone(),
        surfaces,
        corpora,
        probes,
        parallel_texts,
        metas,
        max_sentence_tokens,
    })
}

/// Knobs for the built-in reference world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceWorldOptions {
    pub seed: u64,
    pub num_relations: usize,
    pub facts_per_relation: usize,
    pub num_subject_entities: usize,
    pub num_object_entities: usize,
    pub objects_per_relation: usize,
    /// Exposure of the low-resource target language.
    pub target_exposure: f64,
    /// Probability that an entity's target surface equals the pivot's
    /// (proper nouns travel across languages; function words never do).
    pub shared_surface_fraction: f64,
}

impl Default for ReferenceWorldOptions {
    fn default() -> Self {
        ReferenceWorldOptions {
            seed: 0,
            num_relations: 4,
            facts_per_relation: 10,
            num_subject_entities: 16,
            num_object_entities: 8,
            objects_per_relation: 4,
            target_exposure: 0.3,
            shared_surface_fraction: 0.75,
        }
    }
}

const PIVOT_SYLLABLES: [&str; 14] =
    ["ba", "dor", "ki", "lun", "mer", "na", "pol", "ras", "tu", "vel", "zor", "fi", "gar", "sel"];
const TARGET_SYLLABLES: [&str; 10] = ["ga", "je", "ul", "vo", "sha", "ri", "mek", "ny", "tsa", "bor"];

fn pseudoword(rng: &mut ChaCha20Rng, syllables: &[&str], parts: usize) -> String {
    (0..parts).map(|_| syllables[rng.random_range(0..syllables.len())]).collect()
}

/// The two-language reference world: a fully exposed pivot (`en`-like,
/// high resource) and a partially exposed target (`zz`, low resource)
/// with overlapping entity names but disjoint function words and
/// different word orders.
pub fn reference_world_spec(opts: &ReferenceWorldOptions) -> FactWorldSpec {
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed.wrapping_add(0x0FAC_7531));
    let num_entities = opts.num_subject_entities + opts.num_object_entities;

    // Pivot entity surfaces: distinct pseudowords.
    let mut pivot_surfaces = Vec::with_capacity(num_entities);
    let mut taken = BTreeSet::new();
    while pivot_surfaces.len() < num_entities {
        let w = pseudoword(&mut rng, &PIVOT_SYLLABLES, 2);
        if taken.insert(w.clone()) {
            pivot_surfaces.push(w);
        }
    }

    // Target surfaces: shared or language-specific.
    let mut target_surfaces = Vec::with_capacity(num_entities);
    for surface in &pivot_surfaces {
        if rng.random::<f64>() < opts.shared_surface_fraction {
            target_surfaces.push(surface.clone());
        } else {
            loop {
                let w = pseudoword(&mut rng, &TARGET_SYLLABLES, 2);
                if taken.insert(w.clone()) {
                    target_surfaces.push(w);
                    break;
                }
            }
        }
    }

    // Relation words, one per relation per language.
    let mut pivot_templates = Vec::with_capacity(opts.num_relations);
    let mut target_templates = Vec::with_capacity(opts.num_relations);
    for r in 0..opts.num_relations {
        let rw_pivot = loop {
            let w = pseudoword(&mut rng, &PIVOT_SYLLABLES, 3);
            if taken.insert(w.clone()) {
                break w;
            }
        };
        let rw_target = loop {
            let w = pseudoword(&mut rng, &TARGET_SYLLABLES, 3);
            if taken.insert(w.clone()) {
                break w;
            }
        };
        pivot_templates.push(format!("the {rw_pivot} of [X] is [Y] ."));
        target_templates.push(match r % 4 {
            0 => format!("[X] {rw_target} [Y] tol ."),
            1 => format!("{rw_target} [X] [Y] tol ."),
            2 => format!("[Y] {rw_target} [X] tol ."),
            _ => format!("[X] tol {rw_target} [Y] ."),
        });
    }

    // Facts: per relation, distinct subjects mapped into a small object pool.
    let mut facts = Vec::with_capacity(opts.num_relations * opts.facts_per_relation);
    for r in 0..opts.num_relations {
        let mut object_pool: Vec<usize> =
            (opts.num_subject_entities..num_entities).collect();
        for i in (1..object_pool.len()).rev() {
            let j = rng.random_range(0..=i);
            object_pool.swap(i, j);
        }
        object_pool.truncate(opts.objects_per_relation);

        let mut subjects: Vec<usize> = (0..opts.num_subject_entities).collect();
        for i in (1..subjects.len()).rev() {
            let j = rng.random_range(0..=i);
            subjects.swap(i, j);
        }
        subjects.truncate(opts.facts_per_relation);
        subjects.sort_unstable();
        for subject in subjects {
            let object = object_pool[rng.random_range(0..object_pool.len())];
            facts.push(Fact { subject, relation: r, object });
        }
    }

    FactWorldSpec {
        num_entities,
        num_relations: opts.num_relations,
        facts,
        languages: vec![
            LanguageWorld {
                id: "en".into(),
                exposure: 1.0,
                family: Family::IndoEuropean,
                wiki_articles: 6_000_000,
                entity_surfaces: pivot_surfaces,
                relation_templates: pivot_templates,
            },
            LanguageWorld {
                id: "zz".into(),
                exposure: opts.target_exposure,
                family: Family::NonIndoEuropean,
                wiki_articles: 50_000,
                entity_surfaces: target_surfaces,
                relation_templates: target_templates,
            },
        ],
    }
}
