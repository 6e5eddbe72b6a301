pub mod creagentive;
pub mod dnf;
pub mod engine;
pub mod operators;
pub mod registry;
pub mod resources;
pub mod workflow;
