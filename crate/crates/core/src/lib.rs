//! Conversation support for a parent and a minimally verbal child: guidance
//! for the parent's turn, picture-card decks for the child's turn, session
//! orchestration and usage analytics.

pub mod analytics;
pub mod app;
pub mod cards;
pub mod config;
pub mod domain;
pub mod guide;
pub mod provider;
pub mod session;
pub mod similarity;
pub mod store;
