//! Canned completions behind the offline demo backend.

use crate::backend::MockLlm;
use crate::prompt::{completion_text, panda_example, skier_example};

/// Panda layout plus a dog in the lower right.
pub const PANDA_WITH_DOG: &str = "[('a panda eating bambooo', [30, 133, 212, 226]), ('a panda eating bambooo', [262, 137, 222, 221]), ('a dog', [330, 380, 170, 120])]\nBackground prompt: A watercolor painting of a forest";

/// Answer for captions no rule knows about.
pub const FALLBACK: &str =
    "[('a red circle', [64, 176, 160, 160]), ('a blue square', [288, 176, 160, 160])]\nBackground prompt: a white room";

/// Offline backend used by `--mock` and `"backend": "mock"`: pandas,
/// skiers, the "add a dog" follow-up, and [`FALLBACK`] for anything else.
pub fn demo_mock() -> MockLlm {
    MockLlm::new()
        .rule(r"(?i)\badd\b.*\bdog\b", PANDA_WITH_DOG)
        .and_then(|m| m.rule(r"(?i)panda", completion_text(&panda_example().layout)))
        .and_then(|m| m.rule(r"(?i)skier", completion_text(&skier_example().layout)))
        .expect("static patterns")
        .fallback(FALLBACK)
}
