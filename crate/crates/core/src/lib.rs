//! Effective Darcy description of micropolar flow through a periodic thin
//! porous medium: cell problems on the reference cell, effective
//! permeabilities, the two-dimensional macroscopic Darcy problem, and
//! resolved-slab runs for validating the homogenized model.

pub mod app;
pub mod cell;
pub mod config;
pub mod darcy;
pub mod error;
pub mod export;
pub mod geometry;
pub mod krylov;
pub mod operators;
pub mod report;
pub mod resolved;
pub mod solver;
pub mod sparse;
pub mod unfolding;
