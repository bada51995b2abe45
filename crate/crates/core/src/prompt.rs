//! Prompt construction and keyword post-processing.
//!
//! Prompts follow a fixed chat layout (`### Principle:` / `### Human:` /
//! `### Assistant:`) with named slots. Replies are expected in the
//! numbered-list keyword format; [`parse_keywords`] accepts the inline
//! semicolon form, the newline form and the bare space-separated form.

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::behavior::SummarizedBehavior;
use crate::error::{Error, Result};
use crate::llm::TextGenerate;

/// Application scene; drives wording and attribute defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scene {
    Costume,
    Movie,
    Emoticon,
}

impl Scene {
    /// (article, singular, plural, past-tense verb) used in prompt bodies.
    fn words(self) -> (&'static str, &'static str, &'static str, &'static str) {
        match self {
            Scene::Movie => ("A", "movie", "movies", "watched"),
            Scene::Costume => ("A", "clothes", "clothes", "bought"),
            Scene::Emoticon => ("An", "emoticon", "emoticons", "used"),
        }
    }

    pub fn default_attributes(self) -> Vec<String> {
        let attrs: &[&str] = match self {
            Scene::Costume => &["color", "material", "season", "style", "elements"],
            Scene::Movie => &["genre", "director", "origin"],
            Scene::Emoticon => &["character", "mood", "activity"],
        };
        attrs.iter().map(|s| s.to_string()).collect()
    }
}

impl std::str::FromStr for Scene {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "costume" => Ok(Scene::Costume),
            "movie" => Ok(Scene::Movie),
            "emoticon" => Ok(Scene::Emoticon),
            other => Err(Error::InvalidArgument(format!("unknown scene {other:?}"))),
        }
    }
}

/// Scene prompt template: instruction principle, per-scene attributes and
/// the output-format exemplar. Serializable so deployments can override the
/// defaults from config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub principle: String,
    pub attributes: Vec<String>,
    pub examples: String,
    pub scene: Scene,
}

impl PromptTemplate {
    pub fn for_scene(scene: Scene) -> Self {
        let (_, noun, _, _) = scene.words();
        PromptTemplate {
            principle: format!(
                "The assistant is helping the human to generate keywords of a {noun} lover's interests."
            ),
            attributes: scene.default_attributes(),
            examples: "The example of output is \"The keywords are: 1. Keyword 1; 2. Keyword 2; ...\"."
                .to_string(),
            scene,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.principle.is_empty() {
            return Err(Error::InvalidArgument("template principle is empty".into()));
        }
        if self.attributes.is_empty() {
            return Err(Error::InvalidArgument("template attributes are empty".into()));
        }
        if !self.examples.contains("The keywords are:") {
            return Err(Error::InvalidArgument(
                "template examples must contain the literal phrase \"The keywords are:\"".into(),
            ));
        }
        Ok(())
    }
}

fn join_history(sb: &SummarizedBehavior) -> String {
    if sb.item_summaries.is_empty() {
        return "(none)".into();
    }
    sb.item_summaries
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s))
        .collect::<Vec<_>>()
        .join(" ")
}

fn join_conversations(sb: &SummarizedBehavior) -> String {
    if sb.conversation_summaries.is_empty() {
        return "(none)".into();
    }
    sb.conversation_summaries
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Preference-extraction prompt for one attribute.
pub fn build_preference_prompt(
    template: &PromptTemplate,
    attribute: &str,
    sb: &SummarizedBehavior,
) -> String {
    let (article, noun, plural, past) = template.scene.words();
    format!(
        "### Principle: {principle}\n\
         ### Human: {article} {noun} lover {past} some {plural}. Please provide 10 keywords \
         to describe his {noun} interests especially on {attribute}. {examples} \
         His historical conversations are: {conversations}. \
         The {plural} he {past} are: {history}.\n\
         ### Assistant: The keywords are:",
        principle = template.principle,
        examples = template.examples,
        conversations = join_conversations(sb),
        history = join_history(sb),
    )
}

/// Target-item prompt. For the emoticon scene the "target" is the current
/// conversation and the keywords asked for are its moods.
pub fn build_target_prompt(template: &PromptTemplate, target_summary: &str) -> Result<String> {
    if target_summary.trim().is_empty() {
        return Err(Error::InvalidArgument("target summary is empty".into()));
    }
    let (_, noun, _, _) = template.scene.words();
    let prompt = match template.scene {
        Scene::Emoticon => format!(
            "### Human: Here is a conversation: \"{target_summary}\". Please describe the moods \
             reflected in the conversation with 5 keywords and corresponding expressions or actions.\n\
             ### Assistant: The 5 keywords are:"
        ),
        _ => format!(
            "### Human: Here is a {noun}: \"{target_summary}\". Please describe this {noun} \
             with 5 keywords. Keywords can be related to its {hint}.\n\
             ### Assistant: The 5 keywords are:",
            hint = template.attributes.join(", "),
        ),
    };
    Ok(prompt)
}

/// Behavior-only prompt (principle + summaries, no attributes or examples);
/// the input for soft-embedding extraction and training.
pub fn build_behavior_prompt(template: &PromptTemplate, sb: &SummarizedBehavior) -> String {
    let (article, noun, plural, past) = template.scene.words();
    format!(
        "### Principle: {principle}\n\
         ### Human: {article} {noun} lover {past} some {plural}. \
         His historical conversations are: {conversations}. \
         The {plural} he {past} are: {history}.\n\
         ### Assistant:",
        principle = template.principle,
        conversations = join_conversations(sb),
        history = join_history(sb),
    )
}

/// Summarization prompt for one item's text feature.
pub fn build_item_summary_prompt(scene: Scene, title: &str, text: &str, tags: &[String]) -> String {
    let (article, noun, _, _) = scene.words();
    let noun_cap = {
        let mut c = noun.chars();
        match c.next() {
            Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
            None => String::new(),
        }
    };
    format!(
        "### Human: Here is {art} {noun}. {noun_cap} title \"{title}\". \
         {noun_cap} introduction \"{text}\". {noun_cap} tags: \"{tags}\". \
         Please summarize this {noun} using one sentence within 30 words.\n\
         ### Assistant: This {noun}",
        art = article.to_lowercase(),
        tags = tags.join(", "),
    )
}

/// Summarization prompt for one conversation turn.
pub fn build_conversation_summary_prompt(_scene: Scene, text: &str) -> String {
    format!(
        "### Human: Here is a conversation: \"{text}\". Please summarize this conversation \
         using one sentence within 30 words.\n\
         ### Assistant: This conversation"
    )
}

// ---------------------------------------------------------------------------
// Keyword sets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeywordKind {
    Preference,
    Target,
}

/// Ordered, deduplicated keyword list with attribute provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub kind: KeywordKind,
    pub keywords: Vec<String>,
    pub provenance: BTreeMap<String, Vec<String>>,
}

impl KeywordSet {
    pub fn validate(&self, cap: usize) -> Result<()> {
        if self.keywords.len() > cap {
            return Err(Error::InvalidArgument(format!(
                "keyword set exceeds cap: {} > {cap}",
                self.keywords.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for k in &self.keywords {
            if k.trim().is_empty() {
                return Err(Error::InvalidArgument("empty keyword".into()));
            }
            if !seen.insert(k.to_lowercase()) {
                return Err(Error::InvalidArgument(format!("duplicate keyword {k:?}")));
            }
        }
        let prov_keys: Vec<&String> = self.provenance.keys().collect();
        let mut sorted_kw: Vec<&String> = self.keywords.iter().collect();
        sorted_kw.sort();
        if prov_keys != sorted_kw {
            return Err(Error::InvalidArgument(
                "provenance keys do not match the keyword list".into(),
            ));
        }
        Ok(())
    }
}

/// Lowercase, trim, collapse inner whitespace, strip edge punctuation.
pub fn normalize_keyword(raw: &str) -> String {
    let trimmed = raw
        .trim()
        .trim_matches(|c: char| c.is_ascii_punctuation() && c != '-')
        .trim();
    trimmed
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Canonical reply rendering: `The keywords are: 1. a; 2. b; 3. c`.
pub fn render_keywords(keywords: &[String]) -> String {
    let body = keywords
        .iter()
        .enumerate()
        .map(|(i, k)| format!("{}. {}", i + 1, k))
        .collect::<Vec<_>>()
        .join("; ");
    format!("The keywords are: {body}")
}

static MARKER: OnceLock<Regex> = OnceLock::new();

/// Extract keywords from a numbered-list reply. Accepts `1. a; 2. b`,
/// `1. a\n2. b` and `1. a  2. b` forms; strips numbering and punctuation,
/// lowercases, preserves order.
pub fn parse_keywords(reply: &str) -> Result<Vec<String>> {
    let marker = MARKER.get_or_init(|| Regex::new(r"\d+\s*\.\s*").unwrap());
    let matches: Vec<_> = marker.find_iter(reply).collect();
    let mut keywords = Vec::new();
    for (i, m) in matches.iter().enumerate() {
        let end = matches
            .get(i + 1)
            .map(|next| next.start())
            .unwrap_or(reply.len());
        let segment = &reply[m.end()..end];
        let cut = segment
            .find(|c| c == ';' || c == '\n')
            .map(|p| &segment[..p])
            .unwrap_or(segment);
        let keyword = normalize_keyword(cut);
        if !keyword.is_empty() {
            keywords.push(keyword);
        }
    }
    if keywords.is_empty() {
        return Err(Error::UnparseableReply {
            reply: reply.to_string(),
        });
    }
    Ok(keywords)
}

/// Merge per-attribute keyword lists: case-insensitive dedup keeping the
/// first occurrence; when the union exceeds `cap`, select by descending
/// occurrence count, tie-broken by round-robin over attributes in template
/// order, then by first-seen order.
pub fn merge_keywords(per_attribute: &[(String, Vec<String>)], cap: usize) -> Result<KeywordSet> {
    if cap < 1 {
        return Err(Error::InvalidArgument("cap must be at least 1".into()));
    }

    struct Candidate {
        keyword: String,
        count: usize,
        attributes: Vec<String>,
    }

    let mut order: Vec<Candidate> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    // per-attribute deduped keyword queues, in first-seen order
    let mut per_attr_queue: Vec<(String, Vec<String>)> = Vec::new();

    for (attribute, list) in per_attribute {
        let mut queue = Vec::new();
        for raw in list {
            let keyword = normalize_keyword(raw);
            if keyword.is_empty() {
                continue;
            }
            match index.get(&keyword) {
                Some(&i) => {
                    let cand = &mut order[i];
                    cand.count += 1;
                    if !cand.attributes.contains(attribute) {
                        cand.attributes.push(attribute.clone());
                    }
                }
                None => {
                    index.insert(keyword.clone(), order.len());
                    order.push(Candidate {
                        keyword: keyword.clone(),
                        count: 1,
                        attributes: vec![attribute.clone()],
                    });
                }
            }
            if !queue.contains(&keyword) {
                queue.push(keyword);
            }
        }
        per_attr_queue.push((attribute.clone(), queue));
    }

    if order.is_empty() {
        return Err(Error::NoKeywords);
    }

    let selected: Vec<String> = if order.len() <= cap {
        order.iter().map(|c| c.keyword.clone()).collect()
    } else {
        let mut counts: Vec<usize> = order.iter().map(|c| c.count).collect();
        counts.sort_unstable_by(|a, b| b.cmp(a));
        counts.dedup();

        let mut picked: Vec<String> = Vec::with_capacity(cap);
        'outer: for &count in &counts {
            loop {
                let mut advanced = false;
                for (_, queue) in &per_attr_queue {
                    if let Some(kw) = queue.iter().find(|k| {
                        !picked.contains(k) && order[index[k.as_str()]].count == count
                    }) {
                        picked.push(kw.clone());
                        advanced = true;
                        if picked.len() == cap {
                            break 'outer;
                        }
                    }
                }
                if !advanced {
                    break;
                }
            }
        }
        picked
    };

    let mut provenance = BTreeMap::new();
    for keyword in &selected {
        let cand = &order[index[keyword.as_str()]];
        provenance.insert(keyword.clone(), cand.attributes.clone());
    }
    Ok(KeywordSet {
        kind: KeywordKind::Preference,
        keywords: selected,
        provenance,
    })
}

/// Run preference extraction over every template attribute and merge.
pub fn extract_all(
    template: &PromptTemplate,
    sb: &SummarizedBehavior,
    llm: &dyn TextGenerate,
    cap: usize,
) -> Result<KeywordSet> {
    template.validate()?;
    let mut per_attribute = Vec::with_capacity(template.attributes.len());
    for attribute in &template.attributes {
        let prompt = build_preference_prompt(template, attribute, sb);
        let reply = llm.generate(&prompt).map_err(|e| Error::AttributeExtraction {
            attribute: attribute.clone(),
            source: Box::new(e),
        })?;
        let keywords = parse_keywords(&reply).map_err(|e| Error::AttributeExtraction {
            attribute: attribute.clone(),
            source: Box::new(e),
        })?;
        per_attribute.push((attribute.clone(), keywords));
    }
    merge_keywords(&per_attribute, cap)
}

/// Extract target-item keywords with the single overall attribute.
pub fn extract_target(
    template: &PromptTemplate,
    target_summary: &str,
    llm: &dyn TextGenerate,
    cap: usize,
) -> Result<KeywordSet> {
    let prompt = build_target_prompt(template, target_summary)?;
    let reply = llm.generate(&prompt)?;
    let parsed = parse_keywords(&reply)?;
    let mut keywords: Vec<String> = Vec::new();
    for k in parsed {
        if !keywords.contains(&k) {
            keywords.push(k);
        }
        if keywords.len() == cap {
            break;
        }
    }
    let provenance = keywords
        .iter()
        .map(|k| (k.clone(), vec!["overall".to_string()]))
        .collect();
    Ok(KeywordSet {
        kind: KeywordKind::Target,
        keywords,
        provenance,
    })
}
