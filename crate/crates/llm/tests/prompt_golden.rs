use lmd_core::dsl::{parse_layout, serialize_layout};
use lmd_core::Canvas;
use lmd_llm::prompt::{completion_text, skier_example};
use lmd_llm::{build_prompt, PromptTemplate};

const LISTING: &str = include_str!("fixtures/default_prompt.txt");

/// The listing with its placeholders filled: no extra examples, the caption
/// at the user slot, and the file's final newline dropped.
fn expected(caption: &str) -> String {
    LISTING
        .strip_suffix('\n')
        .unwrap()
        .replace("[Additional Examples]\n\n", "")
        .replace("[User Prompt]", caption)
}

#[test]
fn default_prompt_matches_listing_byte_for_byte() {
    for caption in ["A dog on a bench", "two pandas in a forest"] {
        let got = build_prompt(&PromptTemplate::default(), caption).unwrap();
        assert_eq!(got, expected(caption));
    }
}

#[test]
fn skier_example_round_trips() {
    let ex = skier_example();
    let text = serialize_layout(&ex.layout);
    let back = parse_layout(&text.as_str().into(), Canvas::default()).unwrap();
    assert_eq!(back, ex.layout);
    assert!(LISTING.contains(&completion_text(&ex.layout)));
}
