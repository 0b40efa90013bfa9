//! Urban street-graph navigation toolkit.
//!
//! The crate models an agent walking a directed panorama graph, turns each
//! step's observations into text, asks a policy to score the five action
//! literals, and measures how well the agent followed its instructions.
//!
//! - [`nav_graph`]: graph and instance model, loaders, shortest paths, gold
//!   action derivation and the synthetic world generator.
//! - [`environment`]: agent state, actions and the two transition functions
//!   (`Original` auto-rotating semantics and the `Modified` intersection
//!   semantics), plus the episode runner and its log format.
//! - [`landmarks`]: landmark-extraction prompts and response parsing, score
//!   tables, standardized scores and visibility classification.
//! - [`verbalizer`]: observation templates and step-by-step prompt assembly.
//! - [`policy`]: action decoding and the oracle, scripted, toy-trainable and
//!   external text-completion policies.
//! - [`metrics`]: task completion, shortest-path distance and key point
//!   accuracy.
//! - [`rbl`]: the response-based training loop mixing teacher forcing with
//!   student rollouts corrected by a stepwise oracle.
//! - [`cli`]: the `urbannav` command line front end.
//!
//! Runnable walkthroughs of each capability live in `examples/`.

pub mod cli;
pub mod environment;
pub mod landmarks;
pub mod metrics;
pub mod nav_graph;
pub mod policy;
pub mod rbl;
pub mod verbalizer;

pub use environment::{
    run_episode, signed_delta, step_modified, step_original, Action, AgentState, EnvConfig,
    EpisodeLog, EpisodeRunner, Semantics, StepNote, StepOutcome,
};
pub use landmarks::{LandmarkSet, ScoreTable, Sighting};
pub use nav_graph::{NavGraph, NavInstance, NodeIdx};
pub use policy::{decode_action, LiteralScores, Policy};
