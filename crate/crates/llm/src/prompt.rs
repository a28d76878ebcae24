//! In-context prompt for text-to-layout completion.

use lmd_core::dsl::serialize_objects;
use lmd_core::{BoundingBox, Layout, ObjectSpec};
use serde::{Deserialize, Serialize};

use crate::LlmError;

pub const TASK_SPECIFICATION: &str = "You are an intelligent bounding box generator. I will provide you with a caption for a photo, image, or painting. Your task is to generate the bounding boxes for the objects mentioned in the caption, along with a background prompt describing the scene.";

pub const SUPPORTING_DETAILS: &str = "The images are of size 512x512, and the bounding boxes should not overlap or go beyond the image boundaries. Each bounding box should be in the format of (object name, [top-left x coordinate, top-left y coordinate, box width, box height]) and include exactly one object. Do not put objects that are already provided in the bounding boxes into the background prompt.";

pub const GUESSING_ATTITUDE: &str = "If needed, you can make reasonable guesses. Please refer to the example below for the desired format.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub caption: String,
    pub layout: Layout,
}

impl Example {
    /// `Caption: ...\nObjects: ...\nBackground prompt: ...`
    pub fn render(&self) -> String {
        format!(
            "Caption: {}\nObjects: {}",
            self.caption,
            completion_text(&self.layout)
        )
    }
}

/// What the model is expected to emit after the `Objects: ` cue.
pub fn completion_text(layout: &Layout) -> String {
    format!(
        "{}\nBackground prompt: {}",
        serialize_objects(&layout.objects),
        layout.background_prompt
    )
}

fn example(caption: &str, objects: &[(&str, [i64; 4])], background: &str) -> Example {
    let objects = objects
        .iter()
        .map(|(d, b)| {
            ObjectSpec::new(*d, BoundingBox::try_from(*b).expect("example box"))
                .expect("example description")
        })
        .collect();
    Example {
        caption: caption.into(),
        layout: Layout::new(objects, background).expect("example layout"),
    }
}

pub fn skier_example() -> Example {
    example(
        "A realistic image of four skiers standing in a line on the snow near a palm tree",
        &[
            ("a skier", [5, 152, 139, 168]),
            ("a skier", [278, 192, 121, 158]),
            ("a skier", [148, 173, 124, 155]),
            ("a palm tree", [404, 180, 103, 180]),
        ],
        "A realistic image of an outdoor scene with snow",
    )
}

pub fn panda_example() -> Example {
    example(
        "A watercolor painting of two pandas eating bamboo  in a forest",
        &[
            ("a panda eating bambooo", [30, 133, 212, 226]),
            ("a panda eating bambooo", [262, 137, 222, 221]),
        ],
        "A watercolor painting of a forest",
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate")]
pub struct PromptTemplate {
    pub task_specification: String,
    pub supporting_details: String,
    pub guessing_attitude: String,
    examples: Vec<Example>,
}

#[derive(Deserialize)]
struct RawTemplate {
    task_specification: String,
    supporting_details: String,
    guessing_attitude: String,
    examples: Vec<Example>,
}

impl TryFrom<RawTemplate> for PromptTemplate {
    type Error = LlmError;

    fn try_from(raw: RawTemplate) -> Result<Self, Self::Error> {
        Self::new(
            raw.task_specification,
            raw.supporting_details,
            raw.guessing_attitude,
            raw.examples,
        )
    }
}

impl Default for PromptTemplate {
    /// The shipped instructions with the skier example.
    fn default() -> Self {
        Self::new(
            TASK_SPECIFICATION,
            SUPPORTING_DETAILS,
            GUESSING_ATTITUDE,
            vec![skier_example()],
        )
        .expect("default template has an example")
    }
}

impl PromptTemplate {
    pub fn new(
        task_specification: impl Into<String>,
        supporting_details: impl Into<String>,
        guessing_attitude: impl Into<String>,
        examples: Vec<Example>,
    ) -> Result<Self, LlmError> {
        if examples.is_empty() {
            return Err(LlmError::Template(
                "a template needs at least one example".into(),
            ));
        }
        Ok(Self {
            task_specification: task_specification.into(),
            supporting_details: supporting_details.into(),
            guessing_attitude: guessing_attitude.into(),
            examples,
        })
    }

    /// Default instructions with both shipped examples (skier, then panda).
    pub fn with_panda() -> Self {
        Self::default().with_extra_examples(vec![panda_example()])
    }

    /// Appends user-supplied examples after the existing ones.
    pub fn with_extra_examples(mut self, extra: Vec<Example>) -> Self {
        self.examples.extend(extra);
        self
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    /// Instructions plus examples, without the completion cue.
    pub fn preamble(&self) -> String {
        let mut out = format!(
            "{} {} {}",
            self.task_specification, self.supporting_details, self.guessing_attitude
        );
        for ex in &self.examples {
            out.push_str("\n\n");
            out.push_str(&ex.render());
        }
        out
    }
}

/// `Caption: {caption}\nObjects: `
pub fn completion_cue(caption: &str) -> String {
    format!("Caption: {caption}\nObjects: ")
}

pub fn build_prompt(template: &PromptTemplate, caption: &str) -> Result<String, LlmError> {
    if caption.trim().is_empty() {
        return Err(LlmError::Precondition("caption must be non-empty".into()));
    }
    Ok(format!(
        "{}\n\n{}",
        template.preamble(),
        completion_cue(caption)
    ))
}

/// Same template with the last example's caption swapped for a translation;
/// every layout stays as it was.
pub fn make_multilingual_template(
    template: &PromptTemplate,
    translated_last_caption: &str,
) -> PromptTemplate {
    let mut out = template.clone();
    if let Some(last) = out.examples.last_mut() {
        last.caption = translated_last_caption.to_string();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ends_with_cue() {
        let p = build_prompt(&PromptTemplate::default(), "A dog on a bench").unwrap();
        assert!(p.ends_with("\n\nCaption: A dog on a bench\nObjects: "));
        assert!(p.starts_with("You are an intelligent bounding box generator."));
    }

    #[test]
    fn empty_examples_rejected() {
        assert!(PromptTemplate::new("a", "b", "c", vec![]).is_err());
        let json = r#"{"task_specification":"a","supporting_details":"b","guessing_attitude":"c","examples":[]}"#;
        assert!(serde_json::from_str::<PromptTemplate>(json).is_err());
        assert!(build_prompt(&PromptTemplate::default(), "  ").is_err());
    }

    #[test]
    fn multilingual_keeps_layouts() {
        let t = PromptTemplate::with_panda();
        let zh = make_multilingual_template(&t, "一幅水彩画，两只熊猫在森林里吃竹子");
        assert_eq!(zh.examples()[0], t.examples()[0]);
        assert_eq!(zh.examples()[1].layout, t.examples()[1].layout);
        assert_eq!(
            zh.examples()[1].caption,
            "一幅水彩画，两只熊猫在森林里吃竹子"
        );
        let same = make_multilingual_template(&t, &t.examples()[1].caption);
        assert_eq!(same, t);
    }

    #[test]
    fn panda_completion_text() {
        assert_eq!(
            completion_text(&panda_example().layout),
            "[('a panda eating bambooo', [30, 133, 212, 226]), ('a panda eating bambooo', [262, 137, 222, 221])]\nBackground prompt: A watercolor painting of a forest"
        );
    }
}
