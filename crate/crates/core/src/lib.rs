//! Profile-adapted publicity recommendations over a social interaction graph.
//!
//! The engine matches user profiles against fixed association rules, ranks
//! the matched recommendation types with recent viewing context, shapes the
//! result for the caller's access device, and spreads accepted
//! recommendations to friends hop by hop. [`store::Store`] owns persistence
//! and [`api`] exposes everything over HTTP to thin clients.

pub mod adapt;
pub mod api;
pub mod config;
pub mod diffusion;
pub mod graph;
pub mod ids;
pub mod profile;
pub mod rules;
pub mod sim;
pub mod store;
