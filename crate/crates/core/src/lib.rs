//! Runtime and toolkit for small multimodal GUI agents.
//!
//! - [`action`]: the PyAutoGUI-style tool-call language and action spaces.
//! - [`structured`]: parsers for every tagged / JSON format the roles emit.
//! - [`rewards`]: rule-based rewards and group-relative advantages.
//! - [`pwce`]: the perplexity-weighted cross-entropy kernel.
//! - [`ilg`]: intricate-layout grounding augmentation.
//! - [`synthesis`]: role-oriented teacher prompts and output validation.
//! - [`runtime`]: model endpoint clients and the environment contract.
//! - [`orchestrator`]: end-to-end, multi-agent and planner/executor loops.

pub mod action;
pub mod ilg;
pub mod orchestrator;
pub mod pwce;
pub mod rewards;
pub mod runtime;
pub mod structured;
pub mod synthesis;
