//! Deterministic rule-table backend for hermetic runs.
//!
//! Replies are pure functions of the prompt text: summaries restate the
//! parsed fields, keyword replies scan the behavior section of the prompt
//! for words in a per-attribute lexicon and always use the canonical
//! numbered-list format.

use crate::error::{Error, Result};
use crate::llm::toy::{ToyLm, ToyLmConfig};
use crate::llm::{ForwardOutput, LlmBackend, MultimodalTokens, PrefixEmbeddings, TextGenerate, TokenId};
use crate::prompt::{render_keywords, Scene};

/// Per-scene attribute lexicons. Keyword extraction keeps prompt words that
/// appear in the lexicon of the asked attribute, in order of appearance.
fn attribute_lexicon(scene: Scene, attribute: &str) -> Option<&'static [&'static str]> {
    let table: &[(&str, &[&str])] = match scene {
        Scene::Costume => &[
            (
                "color",
                &[
                    "black", "white", "blue", "red", "green", "colorful", "crimson", "azure",
                    "emerald", "golden", "yellow", "purple", "pink", "gray",
                ],
            ),
            (
                "material",
                &["fabric", "cotton", "denim", "wool", "silk", "leather", "linen"],
            ),
            ("season", &["summer", "winter", "spring", "autumn"]),
            (
                "style",
                &[
                    "cartoon", "kid", "youth", "student", "minimalist", "casual", "formal",
                    "vintage", "sporty", "bold", "breezy", "cozy",
                ],
            ),
            (
                "elements",
                &[
                    "bear", "animal", "student", "t-shirt", "party", "stars", "girl", "figure",
                    "flowers", "stripes", "dots", "checks", "waves", "moons", "hearts", "clouds",
                    "anchors", "leaves",
                ],
            ),
        ],
        Scene::Movie => &[
            (
                "genre",
                &[
                    "action", "comedy", "drama", "romance", "thriller", "horror", "sci-fi",
                    "documentary", "disaster", "crime", "animation", "fantasy", "war", "western",
                ],
            ),
            (
                "director",
                &["auteur", "blockbuster", "indie", "classic", "arthouse"],
            ),
            (
                "origin",
                &["american", "french", "japanese", "korean", "british", "italian"],
            ),
        ],
        Scene::Emoticon => &[
            (
                "character",
                &["cat", "dog", "bear", "boy", "girl", "football", "rabbit", "panda"],
            ),
            (
                "mood",
                &["happy", "sad", "tired", "angry", "excited", "sleepy", "bored"],
            ),
            (
                "activity",
                &["crying", "laughing", "sleeping", "playing", "dancing", "running"],
            ),
        ],
    };
    table
        .iter()
        .find(|(a, _)| *a == attribute)
        .map(|(_, words)| *words)
}

fn union_lexicon(scene: Scene) -> Vec<&'static str> {
    let attrs: Vec<String> = scene.default_attributes();
    let mut out = Vec::new();
    for a in &attrs {
        if let Some(words) = attribute_lexicon(scene, a) {
            for w in words {
                if !out.contains(w) {
                    out.push(*w);
                }
            }
        }
    }
    out
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let s = text.find(start)? + start.len();
    let rel = text[s..].find(end)?;
    Some(&text[s..s + rel])
}

fn words_of(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

fn first_words(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

/// Rule-table text generation plus a toy model for the forward pass.
pub struct MockLlm {
    scene: Scene,
    toy: ToyLm,
}

impl MockLlm {
    pub fn new(scene: Scene, seed: u64) -> Self {
        MockLlm {
            scene,
            toy: ToyLm::new(&ToyLmConfig::default(), seed),
        }
    }

    pub fn with_toy_config(scene: Scene, seed: u64, cfg: &ToyLmConfig) -> Self {
        MockLlm {
            scene,
            toy: ToyLm::new(cfg, seed),
        }
    }

    fn summary_reply(&self, prompt: &str) -> Result<String> {
        let title = between(prompt, "title \"", "\"").unwrap_or("untitled");
        let intro = between(prompt, "introduction \"", "\"").unwrap_or("");
        let tags = between(prompt, "tags: \"", "\"").unwrap_or("");
        let lead = first_words(intro, 10);
        let mut out = if lead.is_empty() {
            title.to_string()
        } else {
            format!("{title}: {lead}")
        };
        if !tags.is_empty() {
            out.push_str(&format!(" ({tags})"));
        }
        Ok(out)
    }

    fn conversation_reply(&self, prompt: &str) -> Result<String> {
        let text = between(prompt, "conversation: \"", "\"").unwrap_or("");
        Ok(format!("mentions {}", first_words(text, 12)))
    }

    fn preference_reply(&self, prompt: &str) -> Result<String> {
        let attribute = between(prompt, "especially on ", ".")
            .map(str::trim)
            .ok_or_else(|| Error::MockRule("missing attribute clause".into()))?;
        let lexicon = attribute_lexicon(self.scene, attribute).ok_or_else(|| {
            Error::MockRule(format!(
                "no lexicon for attribute {attribute:?} in scene {:?}",
                self.scene
            ))
        })?;
        // scan only the behavior sections (conversations then history), not
        // the instruction wording that precedes them
        let region = prompt
            .split("His historical conversations are:")
            .nth(1)
            .unwrap_or(prompt);
        let mut found: Vec<String> = Vec::new();
        for w in words_of(region) {
            if lexicon.contains(&w.as_str()) && !found.contains(&w) {
                found.push(w);
                if found.len() == 10 {
                    break;
                }
            }
        }
        if found.is_empty() {
            found.push("general".to_string());
        }
        Ok(render_keywords(&found))
    }

    fn target_reply(&self, prompt: &str) -> Result<String> {
        let summary = between(prompt, ": \"", "\"")
            .ok_or_else(|| Error::MockRule("missing target summary".into()))?;
        let lexicon = union_lexicon(self.scene);
        let mut found: Vec<String> = Vec::new();
        for w in words_of(summary) {
            if lexicon.contains(&w.as_str()) && !found.contains(&w) {
                found.push(w);
                if found.len() == 5 {
                    break;
                }
            }
        }
        if found.is_empty() {
            found.push("general".to_string());
        }
        Ok(render_keywords(&found))
    }
}

impl TextGenerate for MockLlm {
    fn generate(&self, prompt: &str) -> Result<String> {
        if prompt.contains("Please summarize this conversation") {
            self.conversation_reply(prompt)
        } else if prompt.contains("Please summarize this") {
            self.summary_reply(prompt)
        } else if prompt.contains("especially on ") {
            self.preference_reply(prompt)
        } else if prompt.contains("with 5 keywords") {
            self.target_reply(prompt)
        } else {
            Err(Error::MockRule(format!(
                "unrecognized prompt shape: {}",
                first_words(prompt, 8)
            )))
        }
    }
}

impl LlmBackend for MockLlm {
    fn tokenize(&self, prompt: &str) -> Vec<TokenId> {
        self.toy.tokenize(prompt)
    }

    fn embedding_dim(&self) -> usize {
        self.toy.embedding_dim()
    }

    fn context_limit(&self) -> usize {
        self.toy.context_limit()
    }

    fn num_layers(&self) -> usize {
        self.toy.num_layers()
    }

    fn forward(
        &self,
        prefixes: &PrefixEmbeddings,
        prompt_tokens: &[TokenId],
        mm_tokens: &MultimodalTokens,
    ) -> Result<ForwardOutput> {
        self.toy.forward(prefixes, prompt_tokens, mm_tokens)
    }

    fn as_toy(&self) -> Option<&ToyLm> {
        Some(&self.toy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::SummarizedBehavior;
    use crate::prompt::{build_item_summary_prompt, build_preference_prompt, PromptTemplate};

    #[test]
    fn summary_reply_restates_title_lead_and_tags() {
        let mock = MockLlm::new(Scene::Movie, 1);
        let prompt = build_item_summary_prompt(
            Scene::Movie,
            "Titanic",
            "A seventeen-year-old aristocrat falls in love with a kind but poor artist aboard the luxurious, ill-fated R.M.S. Titanic.",
            &["romance".into(), "disaster".into()],
        );
        let reply = mock.generate(&prompt).unwrap();
        assert_eq!(
            reply,
            "Titanic: A seventeen-year-old aristocrat falls in love with a kind but (romance, disaster)"
        );
    }

    #[test]
    fn preference_reply_scans_history_for_lexicon_words() {
        let mock = MockLlm::new(Scene::Costume, 1);
        let sb = SummarizedBehavior {
            item_summaries: vec![
                "Black T-shirt with cartoon animal party, short sleeves, fabric".into(),
                "White T-shirt with minimalist cartoon bear, summer, comfortable".into(),
            ],
            conversation_summaries: vec![],
        };
        let template = PromptTemplate::for_scene(Scene::Costume);
        let prompt = build_preference_prompt(&template, "color", &sb);
        let reply = mock.generate(&prompt).unwrap();
        assert_eq!(reply, "The keywords are: 1. black; 2. white");
        let style = mock
            .generate(&build_preference_prompt(&template, "style", &sb))
            .unwrap();
        assert_eq!(style, "The keywords are: 1. cartoon; 2. minimalist");
    }

    #[test]
    fn unknown_attribute_is_a_rule_error() {
        let mock = MockLlm::new(Scene::Costume, 1);
        let sb = SummarizedBehavior {
            item_summaries: vec!["anything".into()],
            conversation_summaries: vec![],
        };
        let mut template = PromptTemplate::for_scene(Scene::Costume);
        template.attributes = vec!["texture".into()];
        let prompt = build_preference_prompt(&template, "texture", &sb);
        assert!(matches!(mock.generate(&prompt), Err(Error::MockRule(_))));
    }

    #[test]
    fn unrecognized_prompt_shape_is_a_rule_error() {
        let mock = MockLlm::new(Scene::Costume, 1);
        assert!(matches!(
            mock.generate("tell me a joke"),
            Err(Error::MockRule(_))
        ));
    }

    #[test]
    fn target_reply_caps_at_five() {
        let mock = MockLlm::new(Scene::Costume, 1);
        let template = PromptTemplate::for_scene(Scene::Costume);
        let prompt = crate::prompt::build_target_prompt(
            &template,
            "black shirt with stripes, summer, cotton, minimalist, bold, crimson accents",
        )
        .unwrap();
        let reply = mock.generate(&prompt).unwrap();
        let parsed = crate::prompt::parse_keywords(&reply).unwrap();
        assert_eq!(parsed.len(), 5);
        assert_eq!(parsed[0], "black");
    }
}
