//! Property tests for keyword parsing and merging.

use proptest::prelude::*;
use std::collections::BTreeSet;

use prefgen_core::prompt::{merge_keywords, normalize_keyword, parse_keywords, render_keywords};

/// Keywords as they appear after normalization: lowercase words, possibly
/// multi-word, hyphens allowed, no digits (digits would collide with the
/// numbering grammar).
fn keyword_strategy() -> impl Strategy<Value = String> {
    proptest::collection::vec("[a-z][a-z-]{0,8}", 1..=3).prop_map(|words| words.join(" "))
}

fn keyword_list(max: usize) -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(keyword_strategy(), 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn render_then_parse_round_trips(words in keyword_list(12)) {
        // render/parse agree on normalized, deduplicated lists
        let mut unique: Vec<String> = Vec::new();
        for w in &words {
            let n = normalize_keyword(w);
            if !n.is_empty() && !unique.contains(&n) {
                unique.push(n);
            }
        }
        prop_assume!(!unique.is_empty());
        let parsed = parse_keywords(&render_keywords(&unique)).unwrap();
        prop_assert_eq!(parsed, unique);
    }

    #[test]
    fn merge_respects_cap_dedup_subset_and_provenance(
        lists in proptest::collection::vec((keyword_strategy(), keyword_list(8)), 1..=5),
        cap in 1usize..=10,
    ) {
        let input: Vec<(String, Vec<String>)> = lists
            .iter()
            .enumerate()
            .map(|(i, (attr, kws))| (format!("{attr}_{i}"), kws.clone()))
            .collect();
        let merged = match merge_keywords(&input, cap) {
            Ok(m) => m,
            Err(_) => return Ok(()), // all-empty inputs
        };

        prop_assert!(merged.keywords.len() <= cap, "cap violated");

        let mut seen = BTreeSet::new();
        for k in &merged.keywords {
            prop_assert!(seen.insert(k.to_lowercase()), "duplicate {k}");
        }

        let union: BTreeSet<String> = input
            .iter()
            .flat_map(|(_, l)| l.iter().map(|k| normalize_keyword(k)))
            .filter(|k| !k.is_empty())
            .collect();
        for k in &merged.keywords {
            prop_assert!(union.contains(k), "{k} not from the inputs");
        }

        let prov: BTreeSet<&String> = merged.provenance.keys().collect();
        let kws: BTreeSet<&String> = merged.keywords.iter().collect();
        prop_assert_eq!(prov, kws, "provenance keys differ from keywords");
    }

    #[test]
    fn parse_never_panics_on_arbitrary_text(text in ".{0,200}") {
        let _ = parse_keywords(&text);
    }
}
