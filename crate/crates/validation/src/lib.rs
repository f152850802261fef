//! Acceptance suite; everything lives in `tests/acceptance.rs`.
