//! Forward-simulation and personal-utility survey protocol.
//!
//! Phases run learning, pre, learning_explained, post, utility, done, and
//! only ever forward. Prediction phases never expose model labels or
//! explanations. State lives in an append-only event log.

mod config;
mod demo;
mod store;

pub use config::{
    KnowledgeArea, LearningItem, ParticipantInfo, PredictionItem, SurveyConfig, SurveySizes,
    TechniqueAssignment, UtilityItem,
};
pub use demo::demo_config;
pub use store::{
    Answer, CompletedSession, Event, ExplainedItem, LabelledItem, Phase, PredictionSubmission,
    PromptItem, SessionState, Step, StepResponse, SurveyExport, SurveyStore, UtilityPrompt,
    UtilitySubmission, EXPORT_SCHEMA_VERSION,
};
