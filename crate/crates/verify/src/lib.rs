//! Acceptance checks live in `tests/acceptance.rs`; run them with
//! `cargo test -p mgcast-verify --test acceptance` (add `-- --slow` for the
//! long benchmark-dataset runs).
