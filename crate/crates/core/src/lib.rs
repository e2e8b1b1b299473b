//! Comment generation for legacy MUMPS and mainframe assembler code, and the
//! metrics used to judge the generated documentation.

pub mod chunker;
pub mod complexity;
pub mod corpus;
pub mod docmetrics;
pub mod genclient;
pub mod lang;
pub mod masking;
pub mod painpoints;
pub mod review;
pub mod stats;

pub use chunker::{Chunk, ChunkPlan, Segment, TokenBudget};
pub use corpus::{CommentKind, CommentRecord, CorpusStats, LanguageId, SourceFile, SourceLine};
pub use genclient::{GenerationBatchResult, ModelProfile, Provider};
pub use masking::{DiffVerdict, MaskedFile, PlaceholderId};
pub use review::{Assignment, Category, ReviewItem, ReviewRecord};
pub use stats::{CorrelationResult, CorrelationTable, IccResult};
