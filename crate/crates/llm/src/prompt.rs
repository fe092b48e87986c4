//! Prompt templates for context-only estimation and the salience-adjusted
//! visual reasoning prompt.

use std::fmt::Write as _;

use cuefuse_core::{JointOutcome, Task};
use serde::{Deserialize, Serialize};

use crate::LlmError;

/// Bumped whenever the wording of either template changes.
pub const PROMPT_TEMPLATE_VERSION: &str = "cuefuse-prompts/1";

/// Game rules used when the caller does not supply their own.
pub const DEFAULT_GAME_DESCRIPTION: &str = "Two players on a televised game show must each \
decide, without talking to each other, whether to split or steal a cash jackpot. If both \
split, each player takes home half. If one steals while the other splits, the stealer takes \
the whole jackpot and the splitter leaves with nothing. If both steal, neither player gets \
any money. Splitting is cooperating (C) and stealing is defecting (D).";

/// Likert anchors for the five valence bins, lowest first.
pub const VALENCE_ANCHORS: [&str; 5] = [
    "very unpleasant",
    "somewhat unpleasant",
    "neither pleasant nor unpleasant",
    "somewhat pleasant",
    "very pleasant",
];

pub const DEFAULT_SAMPLES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    #[default]
    Mock,
}

/// One context-only query: which outcome, which label space, how many samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextQuerySpec {
    pub outcome: JointOutcome,
    pub game_description: String,
    pub task: Task,
    pub n_samples: usize,
    pub backend: BackendKind,
}

impl ContextQuerySpec {
    pub fn new(outcome: JointOutcome, task: Task) -> Self {
        ContextQuerySpec {
            outcome,
            game_description: DEFAULT_GAME_DESCRIPTION.to_string(),
            task,
            n_samples: DEFAULT_SAMPLES,
            backend: BackendKind::Mock,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.n_samples == 0 {
            return Err(LlmError::InvalidSpec("n_samples must be at least 1".into()));
        }
        if self.game_description.trim().is_empty() {
            return Err(LlmError::InvalidSpec("game description is empty".into()));
        }
        Ok(())
    }
}

fn choice(cooperated: bool) -> &'static str {
    if cooperated {
        "split (C)"
    } else {
        "steal (D)"
    }
}

/// The outcome as seen by the target player, e.g. for `CD`: the player split
/// and the opponent stole.
pub fn outcome_sentence(outcome: JointOutcome) -> String {
    let payoff = match outcome {
        JointOutcome::CC => "Each player takes home half of the jackpot.",
        JointOutcome::CD => "The target player leaves with nothing while the opponent takes the whole jackpot.",
        JointOutcome::DC => "The target player takes the whole jackpot while the opponent leaves with nothing.",
        JointOutcome::DD => "Neither player gets any money.",
    };
    format!(
        "Outcome {outcome}: the target player chose to {} and the opponent chose to {}. {payoff}",
        choice(outcome.player_cooperated()),
        choice(outcome.partner_cooperated()),
    )
}

/// Text prompt asking for a single emotion label given only the game outcome.
pub fn build_context_prompt(spec: &ContextQuerySpec) -> String {
    let space = spec.task.space();
    let labels = space.labels().join(", ");
    let mut p = String::new();
    writeln!(p, "{}", spec.game_description.trim()).unwrap();
    writeln!(p).unwrap();
    writeln!(p, "{}", outcome_sentence(spec.outcome)).unwrap();
    writeln!(p).unwrap();
    match spec.task {
        Task::BasicEmotion => {
            writeln!(
                p,
                "Which emotion did the target player most likely feel when the choices were revealed?"
            )
            .unwrap();
            writeln!(p, "Labels: {labels}").unwrap();
        }
        Task::Valence => {
            writeln!(
                p,
                "How pleasant was the feeling of the target player when the choices were revealed?"
            )
            .unwrap();
            writeln!(p, "Labels: {labels}").unwrap();
            for (label, anchor) in space.labels().iter().zip(VALENCE_ANCHORS) {
                writeln!(p, "{label} = {anchor}").unwrap();
            }
        }
    }
    writeln!(p).unwrap();
    write!(
        p,
        "Answer with exactly one label from the list above and nothing else."
    )
    .unwrap();
    p
}

/// Three-step prompt for a multimodal model: face only, context only, then
/// their combination with the face weighted by `w`. Frames appear as
/// `[image k]` placeholders to be replaced by the caller.
pub fn build_salience_vlm_prompt(
    outcome: JointOutcome,
    w: f64,
    frame_count: usize,
) -> Result<String, LlmError> {
    if !(0.5..=1.0).contains(&w) {
        return Err(LlmError::WeightOutOfRange(w));
    }
    if frame_count == 0 {
        return Err(LlmError::InvalidSpec("frame_count must be at least 1".into()));
    }
    let labels = Task::BasicEmotion.space().labels().join(", ");
    let mut p = String::new();
    writeln!(
        p,
        "You are given {frame_count} frames of a player's face, recorded while the result of a split-or-steal game was revealed."
    )
    .unwrap();
    for k in 1..=frame_count {
        writeln!(p, "[image {k}]").unwrap();
    }
    writeln!(p).unwrap();
    writeln!(p, "Step 1 - Face-only emotion recognition").unwrap();
    writeln!(
        p,
        "Looking only at the frames, give a probability for each label: {labels}."
    )
    .unwrap();
    writeln!(p).unwrap();
    writeln!(p, "Step 2 - Context-only emotion recognition").unwrap();
    writeln!(p, "{DEFAULT_GAME_DESCRIPTION}").unwrap();
    writeln!(p, "{}", outcome_sentence(outcome)).unwrap();
    writeln!(
        p,
        "Ignoring the frames, give a probability for each label: {labels}."
    )
    .unwrap();
    writeln!(p).unwrap();
    writeln!(p, "Step 3 - Face and context integration").unwrap();
    writeln!(
        p,
        "W = {w:.2}. Combine the two answers, giving the face answer weight W and the context answer weight 1 - W = {:.2}.",
        1.0 - w
    )
    .unwrap();
    writeln!(
        p,
        "The larger W is, the more the facial evidence should count."
    )
    .unwrap();
    write!(
        p,
        "Report the combined probability for each label: {labels}."
    )
    .unwrap();
    Ok(p)
}

/// Maps a raw completion to a label index: lowercase, trim, exact match.
pub fn parse_label(raw: &str, task: Task) -> Option<usize> {
    let cleaned = raw.trim().to_lowercase();
    task.space().index_of(&cleaned)
}
