//! Memory-constant channel planning, per-layer peak-memory profiling and
//! constrained evolutionary search for mobile inverted bottleneck supernets.

pub mod error;
pub mod memory;
pub mod planner;
pub mod predictor;
pub mod search;
pub mod space;

pub use error::{PlanError, PredictorError, SearchError, ShapeError, SpaceError, Violation};
pub use memory::{
    DominantLayer, ExpandRatio, LayerMemory, MBBlockShape, MemoryProfile, NetworkSkeleton, Precision,
};
pub use planner::{ChannelSchedule, PlanMode, PlanReport, ReferenceConfig};
pub use predictor::{Dataset, DatasetRow, FeatureVector, PredictorModel, ScorePredictor, SyntheticOracle};
pub use search::{SearchConstraint, SearchParams, SearchResult};
pub use space::{StageGenes, SubnetConfig, SupernetSpace};
