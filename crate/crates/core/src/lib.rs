pub mod analyzer;
pub mod behaviors;
pub mod engine;
pub mod llmio;
pub mod membank;
pub mod metrics;
pub mod scene;
pub mod synth;
