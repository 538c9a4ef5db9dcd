//! Holds the `acceptance` test binary; see `tests/acceptance.rs`.
