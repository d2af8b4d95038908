//! Shared test support: independent oracles and synthetic fixtures.
//!
//! The oracles here are deliberately written against plain nested `Vec`
//! buffers with naive full convolutions, so they share no code path with the
//! library implementations they check.

#![allow(dead_code)]

pub mod fixtures;
pub mod oracle_edit_distance;
pub mod reference_canny;
