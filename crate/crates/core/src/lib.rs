//! Partial label learning with contrastive label disambiguation.
//!
//! The crate covers data synthesis for standard and noisy partial labels,
//! an MLP encoder/classifier pair trained with PiCO and PiCO+, checks of
//! the clustering view of the contrastive alignment term, and the run
//! harness behind the `pll` command line tool.

pub mod datagen;
pub mod error;
pub mod harness;
pub mod networks;
pub mod numerics;
pub mod pico;
pub mod picoplus;
pub mod theory;

pub use error::{PllError, Result};
