//! Workflow engine for chains of image tools: a lenient workflow reader,
//! a declarative tool registry, static validation, a deterministic executor,
//! layered graph matching, reward math and a small policy-gradient trainer.

pub mod chains;
pub mod critic;
pub mod exec;
pub mod fixtures;
pub mod graph_match;
pub mod hungarian;
pub mod lenient;
pub mod mock;
pub mod prompt;
pub mod raster;
pub mod registry;
pub mod rewards;
pub mod toy;
pub mod validate;
pub mod workflow;

pub use exec::{execute_workflow, Backend, Bindings, ExecutionResult, Status, Value};
pub use graph_match::{match_workflows, similarity_reward};
pub use mock::MockBackend;
pub use registry::{load_registry, Registry, ToolSpec};
pub use validate::{validate_workflow, ValidationReport};
pub use workflow::{parse_workflow, serialize_workflow, Workflow};
