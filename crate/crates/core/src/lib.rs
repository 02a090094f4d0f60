//! Gaussian free fields and random-walk loop soups on the cable graphs of
//! lattice boxes: exact Green's-function formulas, two coupled cluster
//! samplers, union-find cluster statistics, and a config-driven experiment
//! runner that checks the exact connection laws against simulation.

pub mod clusters;
pub mod estimators;
pub mod experiment;
pub mod gff;
pub mod green;
pub mod lattice;
pub mod loopsoup;
pub mod numeric;
pub mod rng;

pub use lattice::{BoxSpec, LatticeDomain, Neighbor, Rect};
