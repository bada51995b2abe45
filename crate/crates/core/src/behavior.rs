//! User behavior domain model and summarization preprocessing.
//!
//! A [`BehaviorRecord`] holds a user's click history and conversations with
//! whatever multimodal features each item carries. [`summarize`] reduces the
//! features of each item and conversation to one short text line through a
//! language-model backend plus an image captioner, so downstream prompts fit
//! the generator's token budget.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::TextGenerate;
use crate::prompt::{build_conversation_summary_prompt, build_item_summary_prompt, Scene};

/// One clicked item and its features. At least one of `text`, `image_ref`,
/// `tags` must be present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFeatures {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

impl ItemFeatures {
    pub fn validate(&self) -> Result<()> {
        if self.item_id.is_empty() {
            return Err(Error::InvalidArgument("item_id must be non-empty".into()));
        }
        if self.text.is_none() && self.image_ref.is_none() && self.tags.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "item {} has no features (text, image_ref or tags required)",
                self.item_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationTurn {
    pub speaker: Speaker,
    pub text: String,
}

/// A user's historical clicks (oldest first) and conversations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorRecord {
    pub user_id: String,
    pub history: Vec<ItemFeatures>,
    #[serde(default)]
    pub conversations: Vec<ConversationTurn>,
}

/// Short text summaries of a truncated behavior record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummarizedBehavior {
    pub item_summaries: Vec<String>,
    pub conversation_summaries: Vec<String>,
}

/// Image caption backend. The mock joins the item's tags; the HTTP adapter
/// calls a captioning endpoint.
pub trait CaptionBackend {
    fn caption(&self, image_ref: &Path, tags: &[String]) -> Result<String>;
}

/// Deterministic caption stand-in for hermetic runs.
#[derive(Debug, Default, Clone)]
pub struct MockCaptioner;

impl CaptionBackend for MockCaptioner {
    fn caption(&self, image_ref: &Path, tags: &[String]) -> Result<String> {
        if tags.is_empty() {
            let stem = image_ref
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "unknown".into());
            Ok(format!("image of {stem}"))
        } else {
            Ok(tags.join(", "))
        }
    }
}

/// Keep the `n` most recent history items and `m` most recent conversations.
pub fn truncate_behavior(record: &BehaviorRecord, n: usize, m: usize) -> Result<BehaviorRecord> {
    if n < 1 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if record.history.is_empty() {
        return Err(Error::NoBehaviorSignal {
            user_id: record.user_id.clone(),
        });
    }
    let h_start = record.history.len().saturating_sub(n);
    let c_start = record.conversations.len().saturating_sub(m);
    Ok(BehaviorRecord {
        user_id: record.user_id.clone(),
        history: record.history[h_start..].to_vec(),
        conversations: record.conversations[c_start..].to_vec(),
    })
}

/// Truncate a string to at most `max_tokens` whitespace tokens.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() <= max_tokens {
        tokens.join(" ")
    } else {
        tokens[..max_tokens].join(" ")
    }
}

/// Summarize one item: the text feature goes through the LLM summary prompt,
/// the image (if any) through the captioner, caption appended after "; ".
pub fn summarize_item(
    item: &ItemFeatures,
    scene: Scene,
    llm: &dyn TextGenerate,
    captioner: &dyn CaptionBackend,
    max_summary_tokens: usize,
) -> Result<String> {
    item.validate()?;
    let mut parts: Vec<String> = Vec::new();
    if let Some(text) = &item.text {
        let prompt = build_item_summary_prompt(scene, &item.item_id, text, &item.tags);
        let reply = llm
            .generate(&prompt)
            .map_err(|e| Error::SummarizeBackend {
                item_id: item.item_id.clone(),
                source: Box::new(e),
            })?;
        parts.push(reply.trim().to_string());
    }
    if let Some(image_ref) = &item.image_ref {
        let caption = captioner
            .caption(image_ref, &item.tags)
            .map_err(|e| Error::SummarizeBackend {
                item_id: item.item_id.clone(),
                source: Box::new(e),
            })?;
        parts.push(caption.trim().to_string());
    }
    if parts.is_empty() {
        // tags-only item: the caption backend still produces a line
        let caption = captioner
            .caption(Path::new(""), &item.tags)
            .map_err(|e| Error::SummarizeBackend {
                item_id: item.item_id.clone(),
                source: Box::new(e),
            })?;
        parts.push(caption.trim().to_string());
    }
    Ok(truncate_tokens(&parts.join("; "), max_summary_tokens))
}

/// Summarize a (already truncated) behavior record.
pub fn summarize(
    record: &BehaviorRecord,
    scene: Scene,
    llm: &dyn TextGenerate,
    captioner: &dyn CaptionBackend,
    max_summary_tokens: usize,
) -> Result<SummarizedBehavior> {
    let mut item_summaries = Vec::with_capacity(record.history.len());
    for item in &record.history {
        item_summaries.push(summarize_item(item, scene, llm, captioner, max_summary_tokens)?);
    }
    let mut conversation_summaries = Vec::with_capacity(record.conversations.len());
    for (i, turn) in record.conversations.iter().enumerate() {
        let prompt = build_conversation_summary_prompt(scene, &turn.text);
        let reply = llm
            .generate(&prompt)
            .map_err(|e| Error::SummarizeBackend {
                item_id: format!("{}#conversation-{i}", record.user_id),
                source: Box::new(e),
            })?;
        conversation_summaries.push(truncate_tokens(reply.trim(), max_summary_tokens));
    }
    Ok(SummarizedBehavior {
        item_summaries,
        conversation_summaries,
    })
}

// ---------------------------------------------------------------------------
// Loaders

/// MovieLens-shaped record: ratings joined with movie metadata.
#[derive(Debug, Deserialize)]
struct MovieLensRecord {
    #[serde(rename = "userId")]
    user_id: serde_json::Value,
    movies: Vec<MovieLensMovie>,
}

#[derive(Debug, Deserialize)]
struct MovieLensMovie {
    #[serde(rename = "movieId")]
    movie_id: serde_json::Value,
    title: String,
    #[serde(default)]
    genres: String,
    #[serde(default)]
    overview: Option<String>,
}

/// POG-shaped record: outfit click sequences with item descriptions.
#[derive(Debug, Deserialize)]
struct PogRecord {
    uid: serde_json::Value,
    items: Vec<PogItem>,
}

#[derive(Debug, Deserialize)]
struct PogItem {
    iid: serde_json::Value,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    desc: Option<String>,
    #[serde(default)]
    image: Option<PathBuf>,
    #[serde(default)]
    tags: Vec<String>,
}

fn value_to_id(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parse one JSON line in the native schema, falling back to the
/// MovieLens- and POG-shaped schemas.
pub fn parse_behavior_line(line: &str) -> Result<BehaviorRecord> {
    if let Ok(record) = serde_json::from_str::<BehaviorRecord>(line) {
        if !record.user_id.is_empty() {
            return Ok(record);
        }
    }
    if let Ok(ml) = serde_json::from_str::<MovieLensRecord>(line) {
        return Ok(BehaviorRecord {
            user_id: value_to_id(&ml.user_id),
            history: ml
                .movies
                .into_iter()
                .map(|m| ItemFeatures {
                    item_id: value_to_id(&m.movie_id),
                    text: Some(match &m.overview {
                        Some(o) => format!("{} — {}", m.title, o),
                        None => m.title.clone(),
                    }),
                    image_ref: None,
                    tags: m
                        .genres
                        .split('|')
                        .filter(|g| !g.is_empty())
                        .map(|g| g.to_lowercase())
                        .collect(),
                })
                .collect(),
            conversations: Vec::new(),
        });
    }
    if let Ok(pog) = serde_json::from_str::<PogRecord>(line) {
        return Ok(BehaviorRecord {
            user_id: value_to_id(&pog.uid),
            history: pog
                .items
                .into_iter()
                .map(|i| ItemFeatures {
                    item_id: value_to_id(&i.iid),
                    text: match (i.title, i.desc) {
                        (Some(t), Some(d)) => Some(format!("{t} — {d}")),
                        (Some(t), None) => Some(t),
                        (None, Some(d)) => Some(d),
                        (None, None) => None,
                    },
                    image_ref: i.image,
                    tags: i.tags,
                })
                .collect(),
            conversations: Vec::new(),
        });
    }
    Err(Error::InvalidArgument(format!(
        "unrecognized behavior record: {}",
        truncate_tokens(line, 12)
    )))
}

/// Load a JSON-lines behavior file (one record per line, blank lines skipped).
pub fn load_behaviors(path: &Path) -> Result<Vec<BehaviorRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_behavior_line(&line)?);
    }
    Ok(records)
}

pub fn save_behaviors(path: &Path, records: &[BehaviorRecord]) -> Result<()> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, text: &str) -> ItemFeatures {
        ItemFeatures {
            item_id: id.into(),
            text: Some(text.into()),
            image_ref: None,
            tags: vec![],
        }
    }

    fn record(n_items: usize) -> BehaviorRecord {
        BehaviorRecord {
            user_id: "u1".into(),
            history: (0..n_items)
                .map(|i| item(&format!("i{i}"), &format!("item number {i}")))
                .collect(),
            conversations: vec![ConversationTurn {
                speaker: Speaker::User,
                text: "I like blue stripes".into(),
            }],
        }
    }

    #[test]
    fn truncate_keeps_most_recent_in_order() {
        let r = record(12);
        let t = truncate_behavior(&r, 10, 1).unwrap();
        assert_eq!(t.history.len(), 10);
        assert_eq!(t.history[0].item_id, "i2");
        assert_eq!(t.history[9].item_id, "i11");
    }

    #[test]
    fn truncate_is_noop_for_short_history() {
        let r = record(3);
        let t = truncate_behavior(&r, 10, 1).unwrap();
        assert_eq!(t.history.len(), 3);
        assert_eq!(t.history[0].item_id, "i0");
    }

    #[test]
    fn truncate_rejects_empty_history() {
        let r = BehaviorRecord {
            user_id: "u1".into(),
            history: vec![],
            conversations: vec![],
        };
        assert!(matches!(
            truncate_behavior(&r, 10, 1),
            Err(Error::NoBehaviorSignal { .. })
        ));
    }

    #[test]
    fn truncate_tokens_caps_word_count() {
        let long = (0..60).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let cut = truncate_tokens(&long, 40);
        assert_eq!(cut.split_whitespace().count(), 40);
        assert!(cut.starts_with("w0 w1"));
    }

    #[test]
    fn movielens_shape_maps_to_native_schema() {
        let line = r#"{"userId": 42, "movies": [{"movieId": 7, "title": "Alien", "genres": "Horror|Sci-Fi"}]}"#;
        let rec = parse_behavior_line(line).unwrap();
        assert_eq!(rec.user_id, "42");
        assert_eq!(rec.history[0].item_id, "7");
        assert_eq!(rec.history[0].tags, vec!["horror", "sci-fi"]);
    }

    #[test]
    fn pog_shape_maps_to_native_schema() {
        let line = r#"{"uid": "u9", "items": [{"iid": "a1", "title": "Black tee", "tags": ["black", "cotton"]}]}"#;
        let rec = parse_behavior_line(line).unwrap();
        assert_eq!(rec.user_id, "u9");
        assert_eq!(rec.history[0].text.as_deref(), Some("Black tee"));
        assert_eq!(rec.history[0].tags.len(), 2);
    }

    #[test]
    fn garbage_line_is_rejected() {
        assert!(parse_behavior_line("{\"foo\": 1}").is_err());
    }
}
