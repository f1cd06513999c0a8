//! Mutation engines for policy evolution.
//!
//! [`MockEngine`] mutates elite programs offline with seeded AST edits and is
//! fully deterministic. [`RemoteEngine`] asks an OpenAI-compatible
//! chat-completions endpoint for candidates and extracts fenced code blocks
//! from the replies.

mod extract;
mod mock;
mod remote;
mod settings;

pub use extract::extract_fenced_blocks;
pub use mock::{critique_counts, MockEngine};
pub use remote::{
    FixtureExchange, FixtureTransport, HttpRequest, HttpResponse, RemoteEngine, ReqwestTransport, Transport,
    SYSTEM_PROMPT,
};
pub use settings::{EngineError, EngineKind, EngineSettings};
