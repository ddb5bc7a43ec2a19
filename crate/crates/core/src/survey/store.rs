use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::hash::Hasher;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use siphasher::sip::SipHasher13;

use super::config::{ParticipantInfo, SurveyConfig, TechniqueAssignment};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::eval::{ForwardSimSession, UtilityResponse};
use crate::explain::{Explanation, Technique};

pub const EXPORT_SCHEMA_VERSION: u32 = 1;

/// Protocol phases in the only order they may be visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Learning,
    Pre,
    LearningExplained,
    Post,
    Utility,
    Done,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Learning => "learning",
            Phase::Pre => "pre",
            Phase::LearningExplained => "learning_explained",
            Phase::Post => "post",
            Phase::Utility => "utility",
            Phase::Done => "done",
        }
    }

    fn next(self) -> Phase {
        match self {
            Phase::Learning => Phase::Pre,
            Phase::Pre => Phase::LearningExplained,
            Phase::LearningExplained => Phase::Post,
            Phase::Post => Phase::Utility,
            Phase::Utility | Phase::Done => Phase::Done,
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub review_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSubmission {
    /// Phase the client believes it answers; defaults to the current phase.
    #[serde(default)]
    pub phase: Option<Phase>,
    pub answers: Vec<Answer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtilitySubmission {
    pub review_id: String,
    pub ranks: BTreeMap<Technique, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub participant: ParticipantInfo,
    pub technique: Technique,
    pub phase: Phase,
    pub pre_answers: Option<Vec<Answer>>,
    pub post_answers: Option<Vec<Answer>>,
    pub utility: Vec<UtilitySubmission>,
}

/// One line of the append-only log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        session_id: String,
        participant: ParticipantInfo,
        technique: Technique,
    },
    Advanced {
        session_id: String,
        from: Phase,
        to: Phase,
    },
    PredictionsSubmitted {
        session_id: String,
        phase: Phase,
        answers: Vec<Answer>,
    },
    UtilityRanked {
        session_id: String,
        review_id: String,
        ranks: BTreeMap<Technique, u32>,
    },
}

impl Event {
    fn session_id(&self) -> &str {
        match self {
            Event::SessionCreated { session_id, .. }
            | Event::Advanced { session_id, .. }
            | Event::PredictionsSubmitted { session_id, .. }
            | Event::UtilityRanked { session_id, .. } => session_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledItem {
    pub review_id: String,
    pub product: String,
    pub text: String,
    pub model_label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainedItem {
    pub review_id: String,
    pub product: String,
    pub text: String,
    pub model_label: Label,
    pub explanation: Explanation,
}

/// A prediction-phase item: no label, no explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptItem {
    pub review_id: String,
    pub product: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityPrompt {
    pub review_id: String,
    pub product: String,
    pub text: String,
    pub model_label: Label,
    pub explanations: Vec<Explanation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Step {
    Learning {
        items: Vec<LabelledItem>,
    },
    Pre {
        items: Vec<PromptItem>,
    },
    LearningExplained {
        items: Vec<ExplainedItem>,
    },
    Post {
        items: Vec<PromptItem>,
    },
    Utility {
        item: UtilityPrompt,
        completed: usize,
        total: usize,
    },
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub session_id: String,
    pub technique: Technique,
    #[serde(flatten)]
    pub step: Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletedSession {
    pub session_id: String,
    pub participant: ParticipantInfo,
    pub technique: Technique,
    pub forward: ForwardSimSession,
    pub utility: Vec<UtilityResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyExport {
    pub schema_version: u32,
    pub sessions: Vec<CompletedSession>,
}

impl SurveyExport {
    pub fn forward_sessions(&self) -> Vec<ForwardSimSession> {
        self.sessions.iter().map(|s| s.forward.clone()).collect()
    }

    pub fn utility_responses(&self) -> Vec<UtilityResponse> {
        self.sessions
            .iter()
            .flat_map(|s| s.utility.iter().cloned())
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let e: SurveyExport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if e.schema_version != EXPORT_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "survey export schema version {} (supported: {EXPORT_SCHEMA_VERSION})",
                e.schema_version
            )));
        }
        Ok(e)
    }
}

struct Inner {
    sessions: BTreeMap<String, SessionState>,
    created: usize,
    log: Option<File>,
}

/// Session store backed by an append-only JSONL event log.
///
/// Every mutation is validated, appended to the log and only then applied, all
/// under one lock; replaying the log through the same transition function
/// reproduces the in-memory state.
pub struct SurveyStore {
    config: SurveyConfig,
    log_path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl SurveyStore {
    pub fn in_memory(config: SurveyConfig) -> Result<Self> {
        config.validate()?;
        Ok(SurveyStore {
            config,
            log_path: None,
            inner: Mutex::new(Inner {
                sessions: BTreeMap::new(),
                created: 0,
                log: None,
            }),
        })
    }

    /// Replays `log_path` if it exists, then appends to it.
    pub fn open(config: SurveyConfig, log_path: impl AsRef<Path>) -> Result<Self> {
        let store = Self::in_memory(config)?;
        let path = log_path.as_ref().to_path_buf();
        {
            let mut inner = store.inner.lock().expect("store lock");
            if path.exists() {
                let reader = BufReader::new(File::open(&path)?);
                for (i, line) in reader.lines().enumerate() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let corrupt = |m: String| {
                        Error::Corruption(format!("{} line {}: {m}", path.display(), i + 1))
                    };
                    let event: Event =
                        serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
                    store
                        .apply(&mut inner, &event)
                        .map_err(|e| corrupt(e.to_string()))?;
                }
            }
            inner.log = Some(OpenOptions::new().create(true).append(true).open(&path)?);
        }
        Ok(SurveyStore {
            log_path: Some(path),
            ..store
        })
    }

    pub fn config(&self) -> &SurveyConfig {
        &self.config
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log_path.as_deref()
    }

    fn session_seed(&self, session_id: &str) -> u64 {
        let mut h = SipHasher13::new_with_keys(self.config.seed, 0x7375_7276_6579);
        h.write(session_id.as_bytes());
        h.finish()
    }

    fn order(&self, session_id: &str, stream: u64, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.session_seed(session_id));
        rng.set_stream(stream);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx
    }

    fn transition(&self, inner: &Inner, event: &Event) -> Result<SessionState> {
        if let Event::SessionCreated {
            session_id,
            participant,
            technique,
        } = event
        {
            if inner.sessions.contains_key(session_id) {
                return Err(Error::Conflict(format!(
                    "session `{session_id}` already exists"
                )));
            }
            if let Some(item) = self
                .config
                .learning_items
                .iter()
                .find(|i| !i.explanations.contains_key(technique))
            {
                return Err(Error::validation(format!(
                    "learning item `{}` has no {technique} explanation",
                    item.review_id
                )));
            }
            return Ok(SessionState {
                session_id: session_id.clone(),
                participant: participant.clone(),
                technique: *technique,
                phase: Phase::Learning,
                pre_answers: None,
                post_answers: None,
                utility: Vec::new(),
            });
        }

        let id = event.session_id();
        let mut s = inner
            .sessions
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session `{id}`")))?;
        match event {
            Event::SessionCreated { .. } => unreachable!("handled above"),
            Event::Advanced { from, to, .. } => {
                if *from != s.phase {
                    return Err(if *from < s.phase {
                        Error::Conflict(format!("session already left phase {from}"))
                    } else {
                        Error::Protocol(format!("session is in phase {}, not {from}", s.phase))
                    });
                }
                if !matches!(s.phase, Phase::Learning | Phase::LearningExplained)
                    || *to != s.phase.next()
                {
                    return Err(Error::Protocol(format!(
                        "phase {} cannot be advanced without submitting answers",
                        s.phase
                    )));
                }
                s.phase = *to;
            }
            Event::PredictionsSubmitted { phase, answers, .. } => {
                if !matches!(phase, Phase::Pre | Phase::Post) {
                    return Err(Error::Protocol(format!(
                        "phase {phase} takes no predictions"
                    )));
                }
                if *phase < s.phase {
                    return Err(Error::Conflict(format!(
                        "{phase} predictions were already submitted"
                    )));
                }
                if *phase != s.phase {
                    return Err(Error::Protocol(format!(
                        "session is in phase {}, predictions are not accepted",
                        s.phase
                    )));
                }
                self.check_answers(answers)?;
                if *phase == Phase::Pre {
                    s.pre_answers = Some(answers.clone());
                } else {
                    s.post_answers = Some(answers.clone());
                }
                s.phase = s.phase.next();
            }
            Event::UtilityRanked {
                review_id, ranks, ..
            } => {
                if s.phase == Phase::Done {
                    return Err(Error::Conflict(
                        "all utility rankings were already submitted".into(),
                    ));
                }
                if s.phase != Phase::Utility {
                    return Err(Error::Protocol(format!(
                        "session is in phase {}, rankings are not accepted",
                        s.phase
                    )));
                }
                if !self
                    .config
                    .utility_items
                    .iter()
                    .any(|u| &u.review_id == review_id)
                {
                    return Err(Error::validation(format!(
                        "`{review_id}` is not a utility item"
                    )));
                }
                if s.utility.iter().any(|u| &u.review_id == review_id) {
                    return Err(Error::Conflict(format!("`{review_id}` was already ranked")));
                }
                UtilityResponse {
                    participant_id: s.session_id.clone(),
                    review_id: review_id.clone(),
                    ranks: ranks.clone(),
                }
                .validate()?;
                s.utility.push(UtilitySubmission {
                    review_id: review_id.clone(),
                    ranks: ranks.clone(),
                });
                if s.utility.len() == self.config.utility_items.len() {
                    s.phase = Phase::Done;
                }
            }
        }
        Ok(s)
    }

    fn check_answers(&self, answers: &[Answer]) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for a in answers {
            if !seen.insert(a.review_id.as_str()) {
                return Err(Error::validation(format!(
                    "item `{}` answered twice",
                    a.review_id
                )));
            }
            if !self
                .config
                .prediction_items
                .iter()
                .any(|p| p.review_id == a.review_id)
            {
                return Err(Error::validation(format!(
                    "`{}` is not a prediction item",
                    a.review_id
                )));
            }
        }
        let missing: Vec<String> = self
            .config
            .prediction_items
            .iter()
            .filter(|p| !seen.contains(p.review_id.as_str()))
            .map(|p| p.review_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::IncompleteAnswers { missing });
        }
        Ok(())
    }

    fn apply(&self, inner: &mut Inner, event: &Event) -> Result<()> {
        let next = self.transition(inner, event)?;
        if matches!(event, Event::SessionCreated { .. }) {
            inner.created += 1;
        }
        inner.sessions.insert(next.session_id.clone(), next);
        Ok(())
    }

    fn record(&self, event: Event) -> Result<SessionState> {
        self.record_with(|_| event)
    }

    fn record_with(&self, build: impl FnOnce(&Inner) -> Event) -> Result<SessionState> {
        let mut inner = self.inner.lock().expect("store lock");
        let event = build(&inner);
        let next = self.transition(&inner, &event)?;
        if let Some(log) = inner.log.as_mut() {
            let mut line = serde_json::to_string(&event)?;
            line.push('\n');
            log.write_all(line.as_bytes())?;
            log.flush()?;
        }
        if matches!(event, Event::SessionCreated { .. }) {
            inner.created += 1;
        }
        inner.sessions.insert(next.session_id.clone(), next.clone());
        Ok(next)
    }

    /// Explicit `technique` wins; otherwise the configured assignment applies,
    /// rotating through all techniques by creation order for round-robin.
    pub fn create_session(
        &self,
        participant: ParticipantInfo,
        technique: Option<Technique>,
    ) -> Result<SessionState> {
        self.record_with(|inner| Event::SessionCreated {
            session_id: uuid::Uuid::new_v4().to_string(),
            participant,
            technique: technique.unwrap_or(match self.config.technique_assignment {
                TechniqueAssignment::Fixed(t) => t,
                TechniqueAssignment::RoundRobin => {
                    Technique::ALL[inner.created % Technique::ALL.len()]
                }
            }),
        })
    }

    pub fn session(&self, session_id: &str) -> Result<SessionState> {
        self.inner
            .lock()
            .expect("store lock")
            .sessions
            .get(session_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session `{session_id}`")))
    }

    pub fn session_count(&self) -> usize {
        self.inner.lock().expect("store lock").sessions.len()
    }

    /// Leaves a learning phase; `from` guards against stale clients.
    pub fn advance(&self, session_id: &str, from: Option<Phase>) -> Result<StepResponse> {
        let current = self.session(session_id)?.phase;
        let from = from.unwrap_or(current);
        self.record(Event::Advanced {
            session_id: session_id.to_string(),
            from,
            to: from.next(),
        })?;
        self.step(session_id)
    }

    pub fn submit_predictions(
        &self,
        session_id: &str,
        submission: PredictionSubmission,
    ) -> Result<SessionState> {
        let phase = match submission.phase {
            Some(p) => p,
            None => self.session(session_id)?.phase,
        };
        self.record(Event::PredictionsSubmitted {
            session_id: session_id.to_string(),
            phase,
            answers: submission.answers,
        })
    }

    pub fn submit_utility(
        &self,
        session_id: &str,
        submission: UtilitySubmission,
    ) -> Result<SessionState> {
        self.record(Event::UtilityRanked {
            session_id: session_id.to_string(),
            review_id: submission.review_id,
            ranks: submission.ranks,
        })
    }

    pub fn step(&self, session_id: &str) -> Result<StepResponse> {
        let s = self.session(session_id)?;
        let cfg = &self.config;
        let prompts = |stream| {
            self.order(&s.session_id, stream, cfg.prediction_items.len())
                .into_iter()
                .map(|i| {
                    let p = &cfg.prediction_items[i];
                    PromptItem {
                        review_id: p.review_id.clone(),
                        product: p.product.clone(),
                        text: p.text.clone(),
                    }
                })
                .collect()
        };
        let learning_order = self.order(&s.session_id, 3, cfg.learning_items.len());
        let step = match s.phase {
            Phase::Learning => Step::Learning {
                items: learning_order
                    .iter()
                    .map(|&i| {
                        let l = &cfg.learning_items[i];
                        LabelledItem {
                            review_id: l.review_id.clone(),
                            product: l.product.clone(),
                            text: l.text.clone(),
                            model_label: l.model_label,
                        }
                    })
                    .collect(),
            },
            Phase::Pre => Step::Pre { items: prompts(1) },
            Phase::LearningExplained => Step::LearningExplained {
                items: learning_order
                    .iter()
                    .map(|&i| {
                        let l = &cfg.learning_items[i];
                        ExplainedItem {
                            review_id: l.review_id.clone(),
                            product: l.product.clone(),
                            text: l.text.clone(),
                            model_label: l.model_label,
                            explanation: l.explanations[&s.technique].clone(),
                        }
                    })
                    .collect(),
            },
            Phase::Post => Step::Post { items: prompts(2) },
            Phase::Utility => {
                let next = self
                    .order(&s.session_id, 4, cfg.utility_items.len())
                    .into_iter()
                    .map(|i| &cfg.utility_items[i])
                    .find(|u| !s.utility.iter().any(|d| d.review_id == u.review_id))
                    .expect("utility phase has a pending item");
                Step::Utility {
                    item: UtilityPrompt {
                        review_id: next.review_id.clone(),
                        product: next.product.clone(),
                        text: next.text.clone(),
                        model_label: next.model_label,
                        explanations: next.explanations.values().cloned().collect(),
                    },
                    completed: s.utility.len(),
                    total: cfg.utility_items.len(),
                }
            }
            Phase::Done => Step::Done,
        };
        Ok(StepResponse {
            session_id: s.session_id,
            technique: s.technique,
            step,
        })
    }

    /// Completed sessions ordered by id; in-progress sessions are left out.
    pub fn export(&self) -> SurveyExport {
        let inner = self.inner.lock().expect("store lock");
        let model_labels = self.config.prediction_labels();
        let pairs = |a: &Option<Vec<Answer>>| -> Vec<(String, Label)> {
            a.iter()
                .flatten()
                .map(|x| (x.review_id.clone(), x.label))
                .collect()
        };
        let sessions = inner
            .sessions
            .values()
            .filter(|s| s.phase == Phase::Done)
            .map(|s| CompletedSession {
                session_id: s.session_id.clone(),
                participant: s.participant.clone(),
                technique: s.technique,
                forward: ForwardSimSession {
                    participant_id: s.session_id.clone(),
                    technique: s.technique,
                    pre_answers: pairs(&s.pre_answers),
                    post_answers: pairs(&s.post_answers),
                    model_labels: model_labels.clone(),
                },
                utility: s
                    .utility
                    .iter()
                    .map(|u| UtilityResponse {
                        participant_id: s.session_id.clone(),
                        review_id: u.review_id.clone(),
                        ranks: u.ranks.clone(),
                    })
                    .collect(),
            })
            .collect();
        SurveyExport {
            schema_version: EXPORT_SCHEMA_VERSION,
            sessions,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{aggregate_rankings, explanation_effect};
    use crate::survey::{demo_config, KnowledgeArea};

    fn participant() -> ParticipantInfo {
        ParticipantInfo {
            knowledge_area: KnowledgeArea::NaturalSciences,
        }
    }

    fn answers(store: &SurveyStore, flip: usize) -> Vec<Answer> {
        store
            .config()
            .prediction_items
            .iter()
            .enumerate()
            .map(|(i, p)| Answer {
                review_id: p.review_id.clone(),
                label: match (i < flip, p.model_label) {
                    (false, l) => l,
                    (true, Label::Normal) => Label::Anomalous,
                    (true, Label::Anomalous) => Label::Normal,
                },
            })
            .collect()
    }

    fn ranks(ft: u32, occ: u32, llm: u32) -> BTreeMap<Technique, u32> {
        [
            (Technique::FrequentTerms, ft),
            (Technique::Occlusion, occ),
            (Technique::Llm, llm),
        ]
        .into_iter()
        .collect()
    }

    fn complete(store: &SurveyStore, id: &str) {
        store.advance(id, Some(Phase::Learning)).unwrap();
        store
            .submit_predictions(
                id,
                PredictionSubmission {
                    phase: Some(Phase::Pre),
                    answers: answers(store, 3),
                },
            )
            .unwrap();
        store.advance(id, None).unwrap();
        store
            .submit_predictions(
                id,
                PredictionSubmission {
                    phase: None,
                    answers: answers(store, 2),
                },
            )
            .unwrap();
        for _ in 0..store.config().utility_items.len() {
            let Step::Utility { item, .. } = store.step(id).unwrap().step else {
                panic!("not utility")
            };
            store
                .submit_utility(
                    id,
                    UtilitySubmission {
                        review_id: item.review_id,
                        ranks: ranks(1, 2, 1),
                    },
                )
                .unwrap();
        }
    }

    fn leaks(step: &StepResponse, cfg: &SurveyConfig) -> Vec<String> {
        let json = serde_json::to_string(step).unwrap();
        let mut found = Vec::new();
        for key in [
            "model_label",
            "\"label\"",
            "explanation",
            "evidence",
            "verdict",
        ] {
            if json.contains(key) {
                found.push(key.to_string());
            }
        }
        for item in cfg
            .learning_items
            .iter()
            .map(|i| &i.explanations)
            .chain(cfg.utility_items.iter().map(|u| &u.explanations))
        {
            for e in item.values() {
                if let Evidence::Prose { text }
                | Evidence::NonOccurrence {
                    statement: text, ..
                } = &e.evidence
                {
                    if json.contains(text.as_str()) {
                        found.push(text.clone());
                    }
                }
            }
        }
        found
    }

    use crate::explain::Evidence;

    #[test]
    fn full_protocol_and_export() {
        let store = SurveyStore::in_memory(demo_config(1)).unwrap();
        let s = store.create_session(participant(), None).unwrap();
        let id = s.session_id.as_str();

        let Step::Learning { items } = store.step(id).unwrap().step else {
            panic!()
        };
        assert_eq!(items.len(), 20);
        let json = serde_json::to_string(&store.step(id).unwrap()).unwrap();
        assert!(!json.contains("explanation"));

        store.advance(id, None).unwrap();
        let pre = store.step(id).unwrap();
        assert!(
            leaks(&pre, store.config()).is_empty(),
            "{:?}",
            leaks(&pre, store.config())
        );
        let Step::Pre { items: pre_items } = pre.step else {
            panic!()
        };
        assert_eq!(pre_items.len(), 10);

        let st = store
            .submit_predictions(
                id,
                PredictionSubmission {
                    phase: Some(Phase::Pre),
                    answers: answers(&store, 3),
                },
            )
            .unwrap();
        assert_eq!(st.phase, Phase::LearningExplained);
        let Step::LearningExplained { items } = store.step(id).unwrap().step else {
            panic!()
        };
        assert!(
            items
                .iter()
                .all(|i| i.explanation.method == s.technique
                    && i.explanation.verdict == i.model_label)
        );

        store.advance(id, Some(Phase::LearningExplained)).unwrap();
        let post = store.step(id).unwrap();
        assert!(leaks(&post, store.config()).is_empty());
        let Step::Post { items: post_items } = post.step else {
            panic!()
        };
        let mut a: Vec<_> = pre_items.iter().map(|i| i.review_id.clone()).collect();
        let mut b: Vec<_> = post_items.iter().map(|i| i.review_id.clone()).collect();
        assert_ne!(a, b, "post order is reshuffled");
        a.sort();
        b.sort();
        assert_eq!(a, b);

        store
            .submit_predictions(
                id,
                PredictionSubmission {
                    phase: None,
                    answers: answers(&store, 2),
                },
            )
            .unwrap();
        assert!(
            store.export().sessions.is_empty(),
            "in-progress sessions are not exported"
        );
        for n in 0..8 {
            let Step::Utility {
                item,
                completed,
                total,
            } = store.step(id).unwrap().step
            else {
                panic!()
            };
            assert_eq!((completed, total), (n, 8));
            assert_eq!(item.explanations.len(), 3);
            let st = store
                .submit_utility(
                    id,
                    UtilitySubmission {
                        review_id: item.review_id,
                        ranks: ranks(1, 2, 1),
                    },
                )
                .unwrap();
            assert_eq!(st.phase == Phase::Done, n == 7);
        }
        assert_eq!(store.step(id).unwrap().step, Step::Done);

        let export = store.export();
        assert_eq!(export.sessions.len(), 1);
        let e = explanation_effect(&export.sessions[0].forward).unwrap();
        assert!((e.pre_accuracy - 0.7).abs() < 1e-12 && (e.post_accuracy - 0.8).abs() < 1e-12);
        let agg = aggregate_rankings(&export.utility_responses()).unwrap();
        assert_eq!(agg[&Technique::Occlusion].mean, 3.0);
    }

    #[test]
    fn round_robin_and_explicit_assignment() {
        let store = SurveyStore::in_memory(demo_config(1)).unwrap();
        let got: Vec<Technique> = (0..4)
            .map(|_| store.create_session(participant(), None).unwrap().technique)
            .collect();
        assert_eq!(
            got,
            [
                Technique::FrequentTerms,
                Technique::Occlusion,
                Technique::Llm,
                Technique::FrequentTerms
            ]
        );
        let s = store
            .create_session(participant(), Some(Technique::Llm))
            .unwrap();
        assert_eq!(s.technique, Technique::Llm);
    }

    #[test]
    fn protocol_errors() {
        let store = SurveyStore::in_memory(demo_config(1)).unwrap();
        let id = store
            .create_session(participant(), None)
            .unwrap()
            .session_id;
        let sub = |phase, answers| PredictionSubmission { phase, answers };

        assert!(matches!(
            store.submit_predictions(&id, sub(None, answers(&store, 0))),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            store.submit_predictions(&id, sub(Some(Phase::Pre), answers(&store, 0))),
            Err(Error::Protocol(_))
        ));
        store.advance(&id, None).unwrap();
        assert!(matches!(store.advance(&id, None), Err(Error::Protocol(_))));
        assert!(matches!(
            store.advance(&id, Some(Phase::Learning)),
            Err(Error::Conflict(_))
        ));

        let mut dup = answers(&store, 0);
        dup[1] = dup[0].clone();
        assert!(matches!(
            store.submit_predictions(&id, sub(None, dup)),
            Err(Error::Validation(_))
        ));
        let mut short = answers(&store, 0);
        let gone = short.pop().unwrap().review_id;
        match store.submit_predictions(&id, sub(None, short)) {
            Err(Error::IncompleteAnswers { missing }) => assert_eq!(missing, [gone]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            store.submit_utility(
                &id,
                UtilitySubmission {
                    review_id: "x".into(),
                    ranks: ranks(1, 2, 3)
                }
            ),
            Err(Error::Protocol(_))
        ));

        store
            .submit_predictions(&id, sub(None, answers(&store, 0)))
            .unwrap();
        assert!(matches!(
            store.submit_predictions(&id, sub(Some(Phase::Pre), answers(&store, 1))),
            Err(Error::Conflict(_))
        ));
        assert_eq!(
            store.session(&id).unwrap().pre_answers.unwrap(),
            answers(&store, 0)
        );
        assert!(matches!(store.step("nope"), Err(Error::NotFound(_))));
    }

    #[test]
    fn utility_validation() {
        let store = SurveyStore::in_memory(demo_config(1)).unwrap();
        let id = store
            .create_session(participant(), None)
            .unwrap()
            .session_id;
        store.advance(&id, None).unwrap();
        store
            .submit_predictions(
                &id,
                PredictionSubmission {
                    phase: None,
                    answers: answers(&store, 0),
                },
            )
            .unwrap();
        store.advance(&id, None).unwrap();
        store
            .submit_predictions(
                &id,
                PredictionSubmission {
                    phase: None,
                    answers: answers(&store, 0),
                },
            )
            .unwrap();
        let rid = store.config().utility_items[0].review_id.clone();
        let mut two = ranks(1, 2, 3);
        two.remove(&Technique::Llm);
        assert!(store
            .submit_utility(
                &id,
                UtilitySubmission {
                    review_id: rid.clone(),
                    ranks: two
                }
            )
            .is_err());
        assert!(store
            .submit_utility(
                &id,
                UtilitySubmission {
                    review_id: rid.clone(),
                    ranks: ranks(1, 4, 2)
                }
            )
            .is_err());
        assert!(store
            .submit_utility(
                &id,
                UtilitySubmission {
                    review_id: "n00".into(),
                    ranks: ranks(1, 2, 3)
                }
            )
            .is_err());
        store
            .submit_utility(
                &id,
                UtilitySubmission {
                    review_id: rid.clone(),
                    ranks: ranks(2, 2, 2),
                },
            )
            .unwrap();
        assert!(matches!(
            store.submit_utility(
                &id,
                UtilitySubmission {
                    review_id: rid,
                    ranks: ranks(1, 2, 3)
                }
            ),
            Err(Error::Conflict(_))
        ));
    }

    #[test]
    fn log_replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("events.jsonl");
        let (done, partial) = {
            let store = SurveyStore::open(demo_config(4), &log).unwrap();
            let a = store
                .create_session(participant(), None)
                .unwrap()
                .session_id;
            complete(&store, &a);
            let b = store
                .create_session(participant(), None)
                .unwrap()
                .session_id;
            store.advance(&b, None).unwrap();
            (a, b)
        };
        let before = std::fs::read_to_string(&log).unwrap();
        let store = SurveyStore::open(demo_config(4), &log).unwrap();
        assert_eq!(store.session(&done).unwrap().phase, Phase::Done);
        assert_eq!(store.session(&partial).unwrap().phase, Phase::Pre);
        assert_eq!(store.export().sessions.len(), 1);
        // Rotation continues after replay.
        assert_eq!(
            store.create_session(participant(), None).unwrap().technique,
            Technique::Llm
        );
        let after = std::fs::read_to_string(&log).unwrap();
        assert!(after.starts_with(&before), "log is append-only");

        std::fs::write(&log, format!("{before}{{not json\n")).unwrap();
        assert!(matches!(
            SurveyStore::open(demo_config(4), &log),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn export_round_trip_and_order() {
        let store = SurveyStore::in_memory(demo_config(9)).unwrap();
        assert!(store.export().sessions.is_empty());
        for _ in 0..3 {
            let id = store
                .create_session(participant(), None)
                .unwrap()
                .session_id;
            complete(&store, &id);
        }
        let export = store.export();
        let ids: Vec<&str> = export
            .sessions
            .iter()
            .map(|s| s.session_id.as_str())
            .collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("export.json");
        export.save(&p).unwrap();
        assert_eq!(SurveyExport::load(&p).unwrap(), export);
    }

    #[test]
    fn config_validation() {
        let mut c = demo_config(1);
        c.prediction_items[0].review_id = c.learning_items[0].review_id.clone();
        assert!(SurveyStore::in_memory(c).is_err());
        let mut c = demo_config(1);
        c.prediction_items[0].model_label = Label::Anomalous;
        assert!(c.validate().unwrap_err().to_string().contains("balanced"));
        let mut c = demo_config(1);
        c.learning_items.pop();
        assert!(c.validate().is_err());
        let mut c = demo_config(1);
        c.learning_items[0].explanations.remove(&Technique::Llm);
        assert!(c.validate().is_err());
        c.technique_assignment = TechniqueAssignment::Fixed(Technique::Occlusion);
        c.validate().unwrap();
        let store = SurveyStore::in_memory(c).unwrap();
        assert!(store
            .create_session(participant(), Some(Technique::Llm))
            .is_err());
    }
}
