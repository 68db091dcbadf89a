//! Holds the `acceptance` test target; run it with
//! `cargo test -p selcrypt-suite --test acceptance`.
