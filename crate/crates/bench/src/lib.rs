// SPDX-License-Identifier: Apache-2.0

//! Criterion benchmarks for the hot paths of `speaking_images`; see
//! `benches/pipeline.rs`.
