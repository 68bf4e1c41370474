//! Fix loop: generation, verification and critic-driven revision of robot
//! programs, backed by an interaction memory.

mod embed;
mod fixloop;
mod llm;
mod memory;
mod prompt;

use thiserror::Error;

use crate::critics::CriticError;

pub use embed::{cosine, default_embed, Embedder, HashEmbedder, EMBED_DIM};
pub use fixloop::{
    apply_fix, fix_loop, generate_program, verify_program, Attempt, Env, LoopMode, LoopOptions,
    LoopResult, Revision, Termination, Verification, INTERPRETER,
};
pub use llm::{
    LlmAdapter, LlmError, LlmRequest, LlmResponse, Message, MockAdapter, RemoteAdapter,
    RemoteEmbedder, ENV_EMBED_URL, ENV_LLM_KEY, ENV_LLM_URL,
};
pub use memory::{InteractionRecord, MemoryError, MemoryStore};
pub use prompt::{
    api_listing, build_request, extract_program, normalize_program, PromptParts, CRITIC_RULES,
    SYSTEM_PROMPT,
};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("generation failure: {0}")]
    GenerationFailure(String),
    #[error("report from `{0}` has no violation to fix")]
    NoViolation(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
