//! Holds the `acceptance` test target, which runs last in a workspace test
//! run: `cargo test -p dcffnet-acceptance`.
