//! Acceptance criteria A1–A9. Each test prints one `A<n> PASS|FAIL` line to
//! standard error (uncaptured) before asserting.

mod contract;
mod oracles;
mod pipeline;
mod support;
