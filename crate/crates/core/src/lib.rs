//! Repository-level merged code property graphs for C patches and a
//! dual-branch (graph attention + sequence) security patch classifier.

pub mod cfrontend;
pub mod cpg;
pub mod document;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod merge;
pub mod oracle;
pub mod pipeline;
pub mod repodep;
pub mod slice;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{CpgEdge, CpgNode, EdgeType, Graph, NodeId, NodeKind, Version};
pub use ingest::{ChangeSet, FileChange, LineDiff, RepoSnapshot, Side};
