pub mod backend;
pub mod decoder;
pub mod option_module;
pub mod options;
pub mod prompt;
pub mod session;
pub mod store;
pub mod chat;
pub mod engine;
pub mod events;
pub mod harness;
pub mod service;
