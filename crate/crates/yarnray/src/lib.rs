//! A standalone path tracer and scattering library for cloth modeled as yarn
//! curves.
//!
//! Yarns are the only explicit geometry: B-spline centerlines swept by a
//! radius. Ply and fiber detail is reconstructed implicitly at shading time —
//! plies as helices intersected with the elliptical cross-section cut by the
//! incident ray, fibers as precomputed 1D texture maps around the ply
//! circumference. Shading uses an aggregated four-lobe yarn scattering
//! function (reflected/transmitted specular and body components with
//! Beer–Lambert inter-ply attenuation and precomputed self-shadowing), with a
//! pixel-coverage-driven multi-scale mode that blends between near-field and
//! far-field evaluation.
//!
//! The [`oracle`] module realizes the same ply layouts as explicit swept
//! curves and brute-force traces them, providing ground truth for the
//! implicit geometry.

pub mod bysdf;
pub mod curve;
pub mod error;
pub mod fit;
pub mod image;
pub mod math;
pub mod multiscale;
pub mod oracle;
pub mod ply;
pub mod render;
pub mod scene;
pub mod texture;
pub mod validate;

pub use error::{Error, Result};
