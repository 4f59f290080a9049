//! Holds the acceptance suite (`tests/acceptance.rs`); no library code.
