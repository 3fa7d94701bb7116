//! Facet manifests and their composition into a composite model.

mod compose;
mod manifest;
mod resolve;

pub use compose::{
    compose, AgentTypeSchema, AgentTypeSpec, BehaviourSpec, CompositeModelSpec, VarSpec, BASE_FACET,
    TICK_VAR,
};
pub(crate) use compose::{check_actions, type_diag};
pub use manifest::{
    is_identifier, parse_manifest, Action, AgentTypeDelta, BehaviourDef, FacetManifest, MatchAction,
    UpdateOp, VarDecl,
};
pub(crate) use manifest::parse_at;
pub use resolve::{resolve_dependencies, ResolveError};
