//! Experiment schedule and the live session state machine.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const TRIAL_TYPES: usize = 9;
pub const BLOCK_SIZE: usize = 5;
pub const BLOCKS_PER_TYPE: usize = 3;
pub const BLOCKS: usize = TRIAL_TYPES * BLOCKS_PER_TYPE;
pub const EXPERIMENT_TRIALS: usize = BLOCKS * BLOCK_SIZE;
pub const BREAK_MS: f64 = 15_000.0;
pub const TUTORIAL_WINDOW: usize = 8;
pub const TUTORIAL_MAX_TRIALS: usize = 30;
pub const TUTORIAL_MAX_CV: f64 = 0.15;
pub const TUTORIAL_MAX_MEAN_EXITS: f64 = 2.0;

/// Trial-type order of the tutorial, as indices into the trial set. Shared
/// by every participant; cycles if the tutorial runs past nine trials, with
/// the orientation alternating per cycle.
pub const TUTORIAL_ORDER: [usize; TRIAL_TYPES] = [4, 0, 8, 2, 6, 1, 7, 3, 5];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedTrial {
    pub trial_id: String,
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub participant_id: String,
    pub seed: u64,
    pub order_reversed: bool,
    pub trial_ids: Vec<String>,
    pub queue: Vec<PlannedTrial>,
}

/// 27 homogeneous blocks of 5 in seeded random order, three per trial type,
/// with pre-drawn orientation flips. The reversed plan is the exact reversal
/// of the forward plan with the same seed.
pub fn make_plan(participant_id: &str, trial_ids: &[String], seed: u64, reversed: bool) -> Result<SessionPlan> {
    if trial_ids.len() != TRIAL_TYPES {
        return Err(Error::Plan(format!(
            "a plan needs {TRIAL_TYPES} trial types, got {}",
            trial_ids.len()
        )));
    }
    for (i, id) in trial_ids.iter().enumerate() {
        if trial_ids[..i].contains(id) {
            return Err(Error::Plan(format!("duplicate trial id {id}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks: Vec<usize> = (0..TRIAL_TYPES)
        .flat_map(|t| std::iter::repeat_n(t, BLOCKS_PER_TYPE))
        .collect();
    blocks.shuffle(&mut rng);
    let mut queue: Vec<PlannedTrial> = blocks
        .iter()
        .flat_map(|&t| std::iter::repeat_n(t, BLOCK_SIZE))
        .map(|t| PlannedTrial {
            trial_id: trial_ids[t].clone(),
            flipped: false,
        })
        .collect();
    for entry in &mut queue {
        entry.flipped = rng.random();
    }
    if reversed {
        queue.reverse();
    }
    Ok(SessionPlan {
        participant_id: participant_id.to_string(),
        seed,
        order_reversed: reversed,
        trial_ids: trial_ids.to_vec(),
        queue,
    })
}

impl SessionPlan {
    pub fn block_of(&self, index: usize) -> usize {
        index / BLOCK_SIZE
    }

    /// 0-based count of earlier queue entries with the same trial type.
    pub fn repetition_of(&self, index: usize) -> usize {
        let id = &self.queue[index].trial_id;
        self.queue[..index].iter().filter(|e| &e.trial_id == id).count()
    }

    pub fn tutorial_trial(&self, index: usize) -> PlannedTrial {
        PlannedTrial {
            trial_id: self.trial_ids[TUTORIAL_ORDER[index % TRIAL_TYPES]].clone(),
            flipped: (index / TRIAL_TYPES) % 2 == 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Tutorial,
    Break,
    Experiment,
    Done,
    FailedTutorial,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Tutorial => "tutorial",
            Phase::Break => "break",
            Phase::Experiment => "experiment",
            Phase::Done => "done",
            Phase::FailedTutorial => "failed_tutorial",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TutorialDecision {
    Continue,
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionEvent {
    TrialCompleted { v_avg: f64, exits: usize, at_ms: f64 },
    Resume { at_ms: f64 },
}

impl SessionEvent {
    fn at_ms(&self) -> f64 {
        match *self {
            SessionEvent::TrialCompleted { at_ms, .. } | SessionEvent::Resume { at_ms } => at_ms,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            SessionEvent::TrialCompleted { .. } => "trial_completed",
            SessionEvent::Resume { .. } => "resume",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub phase: Phase,
    /// Last eight tutorial trials as (average speed, exits).
    pub tutorial_window: VecDeque<(f64, usize)>,
    pub tutorial_completed: usize,
    pub experiment_completed: usize,
    pub total_trials: usize,
    pub break_started_ms: Option<f64>,
    pub last_event_ms: Option<f64>,
}

impl Default for SessionState {
    fn default() -> Self {
        Self::new(EXPERIMENT_TRIALS)
    }
}

/// Window verdict: pass when the speed coefficient of variation (sample sd
/// over mean) is below 0.15 and mean exits are below 2.
pub fn tutorial_criteria_met(window: &VecDeque<(f64, usize)>) -> bool {
    if window.len() < TUTORIAL_WINDOW {
        return false;
    }
    let n = window.len() as f64;
    let mean = window.iter().map(|w| w.0).sum::<f64>() / n;
    let sd = (window.iter().map(|w| (w.0 - mean) * (w.0 - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let mean_exits = window.iter().map(|w| w.1 as f64).sum::<f64>() / n;
    mean > 0.0 && sd / mean < TUTORIAL_MAX_CV && mean_exits < TUTORIAL_MAX_MEAN_EXITS
}

impl SessionState {
    pub fn new(total_trials: usize) -> Self {
        Self {
            phase: Phase::Tutorial,
            tutorial_window: VecDeque::with_capacity(TUTORIAL_WINDOW),
            tutorial_completed: 0,
            experiment_completed: 0,
            total_trials,
            break_started_ms: None,
            last_event_ms: None,
        }
    }

    /// Records one tutorial trial and decides whether the tutorial is over.
    pub fn tutorial_step(&mut self, v_avg: f64, exits: usize) -> TutorialDecision {
        if self.tutorial_window.len() == TUTORIAL_WINDOW {
            self.tutorial_window.pop_front();
        }
        self.tutorial_window.push_back((v_avg, exits));
        self.tutorial_completed += 1;
        if tutorial_criteria_met(&self.tutorial_window) {
            TutorialDecision::Pass
        } else if self.tutorial_completed >= TUTORIAL_MAX_TRIALS {
            TutorialDecision::Fail
        } else {
            TutorialDecision::Continue
        }
    }

    /// Applies one event. Returns the tutorial decision for tutorial trials.
    /// Events that the current phase does not accept, timestamps that go
    /// backwards, and resuming before the break has lasted 15 s are
    /// protocol errors and leave the state unchanged.
    pub fn advance(&mut self, event: SessionEvent) -> Result<Option<TutorialDecision>> {
        let reject = |phase: Phase, why: &str| Error::Protocol {
            phase: phase.to_string(),
            event: format!("{} ({why})", event.name()),
        };
        let at = event.at_ms();
        if !at.is_finite() || self.last_event_ms.is_some_and(|last| at < last) {
            return Err(reject(self.phase, "timestamp goes backwards"));
        }
        let decision = match (self.phase, event) {
            (Phase::Tutorial, SessionEvent::TrialCompleted { v_avg, exits, .. }) => {
                let d = self.tutorial_step(v_avg, exits);
                match d {
                    TutorialDecision::Pass => self.phase = Phase::Experiment,
                    TutorialDecision::Fail => self.phase = Phase::FailedTutorial,
                    TutorialDecision::Continue => {}
                }
                Some(d)
            }
            (Phase::Experiment, SessionEvent::TrialCompleted { .. }) => {
                self.experiment_completed += 1;
                if self.experiment_completed >= self.total_trials {
                    self.phase = Phase::Done;
                } else if self.experiment_completed % BLOCK_SIZE == 0 {
                    self.phase = Phase::Break;
                    self.break_started_ms = Some(at);
                }
                None
            }
            (Phase::Break, SessionEvent::Resume { at_ms }) => {
                let since = self.break_started_ms.unwrap_or(at_ms);
                if at_ms - since < BREAK_MS {
                    return Err(reject(self.phase, "break shorter than 15 s"));
                }
                self.phase = Phase::Experiment;
                self.break_started_ms = None;
                None
            }
            (phase, _) => return Err(reject(phase, "not accepted in this phase")),
        };
        self.last_event_ms = Some(at);
        Ok(decision)
    }

    /// Remaining break time at `now_ms`, if on a break.
    pub fn break_remaining_ms(&self, now_ms: f64) -> Option<f64> {
        match (self.phase, self.break_started_ms) {
            (Phase::Break, Some(since)) => Some((BREAK_MS - (now_ms - since)).max(0.0)),
            _ => None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.phase, Phase::Done | Phase::FailedTutorial)
    }
}

/// What the runner should show next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextStep {
    pub phase: Phase,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trial: Option<PlannedTrial>,
    /// Position in the experiment queue, or in the tutorial sequence.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub block: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub repetition: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub break_remaining_ms: Option<f64>,
}

/// A plan together with its progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub plan: SessionPlan,
    pub state: SessionState,
}

impl Session {
    pub fn new(plan: SessionPlan) -> Self {
        let total = plan.queue.len();
        Self {
            plan,
            state: SessionState::new(total),
        }
    }

    pub fn next(&self, now_ms: f64) -> NextStep {
        let mut step = NextStep {
            phase: self.state.phase,
            trial: None,
            index: None,
            block: None,
            repetition: None,
            break_remaining_ms: self.state.break_remaining_ms(now_ms),
        };
        match self.state.phase {
            Phase::Tutorial => {
                let i = self.state.tutorial_completed;
                step.trial = Some(self.plan.tutorial_trial(i));
                step.index = Some(i);
            }
            Phase::Experiment | Phase::Break => {
                let i = self.state.experiment_completed;
                step.trial = Some(self.plan.queue[i].clone());
                step.index = Some(i);
                step.block = Some(self.plan.block_of(i));
                step.repetition = Some(self.plan.repetition_of(i));
            }
            Phase::Done | Phase::FailedTutorial => {}
        }
        step
    }

    pub fn advance(&mut self, event: SessionEvent) -> Result<Option<TutorialDecision>> {
        self.state.advance(event)
    }
}
