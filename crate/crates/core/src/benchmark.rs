//! Reasoning benchmarks over generated layouts: prompt sets, checkers and
//! accuracy reports.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::stream_rng;
use crate::layout::{BoundingBox, Layout, ObjectSpec};

pub const OBJECT_NAMES: [&str; 10] = [
    "backpack", "book", "bottle", "bowl", "car", "cat", "chair", "cup", "dog", "laptop",
];

pub const COLORS: [&str; 11] = [
    "red", "orange", "yellow", "green", "blue", "purple", "pink", "brown", "black", "white", "gray",
];

pub const PROMPT_PREFIX: &str = "A realistic photo of a scene";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Negation,
    Numeracy,
    AttributeAssignment,
    SpatialRelationship,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Negation,
        TaskKind::Numeracy,
        TaskKind::AttributeAssignment,
        TaskKind::SpatialRelationship,
    ];

    /// Row label in the accuracy table.
    pub fn label(self) -> &'static str {
        match self {
            TaskKind::Negation => "Negation",
            TaskKind::Numeracy => "Generative Numeracy",
            TaskKind::AttributeAssignment => "Attribute Assignment",
            TaskKind::SpatialRelationship => "Spatial Relationships",
        }
    }

    fn stream(self) -> u64 {
        match self {
            TaskKind::Negation => 1,
            TaskKind::Numeracy => 2,
            TaskKind::AttributeAssignment => 3,
            TaskKind::SpatialRelationship => 4,
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "negation" => Ok(TaskKind::Negation),
            "numeracy" | "generative_numeracy" => Ok(TaskKind::Numeracy),
            "attribute" | "attribute_assignment" => Ok(TaskKind::AttributeAssignment),
            "spatial" | "spatial_relationship" | "spatial_relationships" => {
                Ok(TaskKind::SpatialRelationship)
            }
            other => Err(format!("unknown benchmark kind {other:?}")),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Left,
    Right,
    Top,
    Bottom,
}

impl Location {
    pub const ALL: [Location; 4] = [
        Location::Left,
        Location::Right,
        Location::Top,
        Location::Bottom,
    ];

    pub fn opposite(self) -> Self {
        match self {
            Location::Left => Location::Right,
            Location::Right => Location::Left,
            Location::Top => Location::Bottom,
            Location::Bottom => Location::Top,
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            Location::Left => "left",
            Location::Right => "right",
            Location::Top => "top",
            Location::Bottom => "bottom",
        }
    }
}

/// What a layout must satisfy for one task.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Expectation {
    Absent {
        object: String,
    },
    Count {
        object: String,
        count: usize,
    },
    Attributes {
        pairs: [(String, String); 2],
    },
    Locations {
        first: (String, Location),
        second: (String, Location),
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BenchmarkTask {
    pub kind: TaskKind,
    pub prompt: String,
    pub expected: Expectation,
}

fn article(word: &str) -> &'static str {
    match word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn with_article(phrase: &str) -> String {
    format!("{} {phrase}", article(phrase))
}

pub fn plural(name: &str) -> String {
    format!("{name}s")
}

fn counted(name: &str, count: usize) -> String {
    if count == 1 {
        format!("1 {name}")
    } else {
        format!("{count} {}", plural(name))
    }
}

impl BenchmarkTask {
    pub fn negation(object: &str) -> Self {
        Self {
            kind: TaskKind::Negation,
            prompt: format!("{PROMPT_PREFIX} without {}", with_article(object)),
            expected: Expectation::Absent {
                object: object.into(),
            },
        }
    }

    pub fn numeracy(object: &str, count: usize) -> Self {
        Self {
            kind: TaskKind::Numeracy,
            prompt: format!("{PROMPT_PREFIX} with {}", counted(object, count)),
            expected: Expectation::Count {
                object: object.into(),
                count,
            },
        }
    }

    pub fn attribute(pairs: [(&str, &str); 2]) -> Self {
        let [(m1, o1), (m2, o2)] = pairs;
        Self {
            kind: TaskKind::AttributeAssignment,
            prompt: format!(
                "{PROMPT_PREFIX} with {} and {}",
                with_article(&format!("{m1} {o1}")),
                with_article(&format!("{m2} {o2}"))
            ),
            expected: Expectation::Attributes {
                pairs: [(m1.into(), o1.into()), (m2.into(), o2.into())],
            },
        }
    }

    pub fn spatial(first: (&str, Location), second: (&str, Location)) -> Self {
        Self {
            kind: TaskKind::SpatialRelationship,
            prompt: format!(
                "{PROMPT_PREFIX} with {} on the {} and {} on the {}",
                with_article(first.0),
                first.1.word(),
                with_article(second.0),
                second.1.word()
            ),
            expected: Expectation::Locations {
                first: (first.0.into(), first.1),
                second: (second.0.into(), second.1),
            },
        }
    }
}

/// `n` tasks of one kind, sampled uniformly with replacement from a
/// stream derived from `seed`.
pub fn generate_tasks(kind: TaskKind, n: usize, seed: u64) -> Vec<BenchmarkTask> {
    let mut rng = stream_rng(seed, 1000 + kind.stream());
    let pick_two = |pool: &[&'static str], rng: &mut rand_chacha::ChaCha8Rng| {
        let two: Vec<&str> = pool.choose_multiple(rng, 2).copied().collect();
        (two[0], two[1])
    };
    (0..n)
        .map(|_| match kind {
            TaskKind::Negation => BenchmarkTask::negation(OBJECT_NAMES.choose(&mut rng).unwrap()),
            TaskKind::Numeracy => {
                let object = OBJECT_NAMES.choose(&mut rng).unwrap();
                BenchmarkTask::numeracy(object, rng.random_range(1..=5))
            }
            TaskKind::AttributeAssignment => {
                let (o1, o2) = pick_two(&OBJECT_NAMES, &mut rng);
                let (c1, c2) = pick_two(&COLORS, &mut rng);
                BenchmarkTask::attribute([(c1, o1), (c2, o2)])
            }
            TaskKind::SpatialRelationship => {
                let (o1, o2) = pick_two(&OBJECT_NAMES, &mut rng);
                let loc = *Location::ALL.choose(&mut rng).unwrap();
                BenchmarkTask::spatial((o1, loc), (o2, loc.opposite()))
            }
        })
        .collect()
}

fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn mentions(description: &str, word: &str) -> bool {
    normalize(description).contains(&normalize(word))
}

/// Boxes whose description contains `object_name` (case-insensitive
/// substring after whitespace normalization).
pub fn count_matching(layout: &Layout, object_name: &str) -> usize {
    layout
        .objects
        .iter()
        .filter(|o| mentions(&o.description, object_name))
        .count()
}

pub fn check_negation(layout: &Layout, object_name: &str) -> bool {
    count_matching(layout, object_name) == 0
}

pub fn check_numeracy(layout: &Layout, object_name: &str, n: usize) -> bool {
    count_matching(layout, object_name) == n
}

/// Each `(modifier, object)` pair has a box naming both, and no box pairs
/// an object with the other pair's modifier.
pub fn check_attribute(layout: &Layout, pairs: &[(String, String); 2]) -> bool {
    let has = |m: &str, o: &str| {
        layout
            .objects
            .iter()
            .any(|b| mentions(&b.description, m) && mentions(&b.description, o))
    };
    let [(m1, o1), (m2, o2)] = pairs;
    has(m1, o1) && has(m2, o2) && !has(m2, o1) && !has(m1, o2)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpatialFailure {
    Missing(String),
    Ambiguous(String),
    Misplaced(String),
}

impl fmt::Display for SpatialFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpatialFailure::Missing(o) => write!(f, "no box for {o:?}"),
            SpatialFailure::Ambiguous(_) => f.write_str("ambiguous match"),
            SpatialFailure::Misplaced(o) => write!(f, "{o:?} is in the wrong half-plane"),
        }
    }
}

fn in_half_plane(layout: &Layout, b: &BoundingBox, loc: Location) -> bool {
    let (cx, cy) = b.center();
    let (w, h) = (layout.canvas.width as f64, layout.canvas.height as f64);
    match loc {
        Location::Left => cx < w / 2.0,
        Location::Right => cx > w / 2.0,
        Location::Top => cy < h / 2.0,
        Location::Bottom => cy > h / 2.0,
    }
}

/// Strict half-plane test on box centres; each object needs exactly one
/// matching box.
pub fn check_spatial_detailed(
    layout: &Layout,
    first: (&str, Location),
    second: (&str, Location),
) -> Result<(), SpatialFailure> {
    let find = |name: &str| {
        let matches: Vec<&ObjectSpec> = layout
            .objects
            .iter()
            .filter(|o| mentions(&o.description, name))
            .collect();
        match matches.as_slice() {
            [] => Err(SpatialFailure::Missing(name.into())),
            [one] => Ok(*one),
            _ => Err(SpatialFailure::Ambiguous(name.into())),
        }
    };
    let (a, b) = (find(first.0)?, find(second.0)?);
    for ((name, loc), spec) in [(first, a), (second, b)] {
        if !in_half_plane(layout, &spec.bbox, loc) {
            return Err(SpatialFailure::Misplaced(name.into()));
        }
    }
    Ok(())
}

pub fn check_spatial(
    layout: &Layout,
    obj1: &str,
    loc1: Location,
    obj2: &str,
    loc2: Location,
) -> bool {
    check_spatial_detailed(layout, (obj1, loc1), (obj2, loc2)).is_ok()
}

/// Checks a layout against a task, returning the failure reason if any.
pub fn check_task(task: &BenchmarkTask, layout: &Layout) -> Result<(), String> {
    match &task.expected {
        Expectation::Absent { object } => check_negation(layout, object)
            .then_some(())
            .ok_or_else(|| format!("layout contains {object:?}")),
        Expectation::Count { object, count } => {
            let got = count_matching(layout, object);
            (got == *count)
                .then_some(())
                .ok_or_else(|| format!("expected {count} {object:?} boxes, found {got}"))
        }
        Expectation::Attributes { pairs } => check_attribute(layout, pairs)
            .then_some(())
            .ok_or_else(|| "attributes missing or assigned to the wrong objects".to_string()),
        Expectation::Locations { first, second } => {
            check_spatial_detailed(layout, (&first.0, first.1), (&second.0, second.1))
                .map_err(|e| e.to_string())
        }
    }
}

fn bx(x: i64, y: i64, w: i64, h: i64) -> BoundingBox {
    BoundingBox::new(x, y, w, h).expect("fixture box")
}

fn location_box(loc: Location) -> BoundingBox {
    match loc {
        Location::Left => bx(40, 176, 160, 160),
        Location::Right => bx(312, 176, 160, 160),
        Location::Top => bx(176, 40, 160, 160),
        Location::Bottom => bx(176, 312, 160, 160),
    }
}

fn object(description: String, b: BoundingBox) -> ObjectSpec {
    ObjectSpec::new(description, b).expect("fixture description")
}

/// A layout that passes `task`, on the default canvas.
pub fn reference_layout(task: &BenchmarkTask) -> Layout {
    let background = "A realistic photo of a scene";
    let objects = match &task.expected {
        Expectation::Absent { .. } => Vec::new(),
        Expectation::Count {
            object: name,
            count,
        } => (0..*count)
            .map(|i| object(with_article(name), bx(12 + 100 * i as i64, 196, 88, 120)))
            .collect(),
        Expectation::Attributes { pairs } => pairs
            .iter()
            .zip([Location::Left, Location::Right])
            .map(|((m, o), loc)| object(with_article(&format!("{m} {o}")), location_box(loc)))
            .collect(),
        Expectation::Locations { first, second } => [first, second]
            .into_iter()
            .map(|(o, loc)| object(with_article(o), location_box(*loc)))
            .collect(),
    };
    Layout::new(objects, background).expect("fixture layout")
}

/// A numeracy failure: one box captioned with the plural object name.
pub fn plural_collapse_layout(task: &BenchmarkTask) -> Option<Layout> {
    match &task.expected {
        Expectation::Count {
            object: name,
            count,
        } if *count >= 2 => Some(
            Layout::new(
                vec![object(plural(name), bx(56, 136, 400, 240))],
                "A realistic photo of a scene",
            )
            .expect("fixture layout"),
        ),
        _ => None,
    }
}

/// A spatial failure: both objects at the swapped locations.
pub fn flipped_spatial_layout(task: &BenchmarkTask) -> Option<Layout> {
    match &task.expected {
        Expectation::Locations { first, second } => {
            let flipped = BenchmarkTask::spatial((&first.0, second.1), (&second.0, first.1));
            Some(reference_layout(&flipped))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: BenchmarkTask,
    pub layout: Option<Layout>,
    pub passed: bool,
    pub failure_reason: Option<String>,
}

impl TaskResult {
    pub fn checked(task: BenchmarkTask, layout: Layout) -> Self {
        match check_task(&task, &layout) {
            Ok(()) => Self {
                task,
                layout: Some(layout),
                passed: true,
                failure_reason: None,
            },
            Err(reason) => Self {
                task,
                layout: Some(layout),
                passed: false,
                failure_reason: Some(reason),
            },
        }
    }

    pub fn failed(task: BenchmarkTask, reason: impl Into<String>) -> Self {
        Self {
            task,
            layout: None,
            passed: false,
            failure_reason: Some(reason.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub per_task: Vec<TaskResult>,
    pub accuracy_by_kind: BTreeMap<TaskKind, f64>,
    pub n_per_kind: usize,
}

impl BenchmarkReport {
    pub fn from_results(per_task: Vec<TaskResult>, n_per_kind: usize) -> Self {
        let mut tally: BTreeMap<TaskKind, (usize, usize)> = BTreeMap::new();
        for r in &per_task {
            let e = tally.entry(r.task.kind).or_default();
            e.0 += r.passed as usize;
            e.1 += 1;
        }
        let accuracy_by_kind = tally
            .into_iter()
            .map(|(k, (pass, total))| (k, pass as f64 / total as f64))
            .collect();
        Self {
            per_task,
            accuracy_by_kind,
            n_per_kind,
        }
    }

    /// Accuracy as a whole percentage, rounded half up.
    pub fn percent(&self, kind: TaskKind) -> Option<u32> {
        self.accuracy_by_kind
            .get(&kind)
            .map(|a| (a * 100.0 + 0.5 + 1e-9).floor() as u32)
    }

    /// Two-column accuracy table, one row per benchmark kind present.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<24}{}\n", "Benchmarks", "Accuracy (%)");
        for kind in TaskKind::ALL {
            if let Some(p) = self.percent(kind) {
                out.push_str(&format!("{:<24}{p}%\n", kind.label()));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
