//! HTTP service wrapping the lab: experiments run as background jobs, plus
//! synchronous checkpoint evaluation and report merging.

pub mod api;
pub mod jobs;
pub mod routes;

pub use routes::router;
