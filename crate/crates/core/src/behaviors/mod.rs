//! Behaviour library: intent labels, the endpoint-rule language, the builtin behaviours
//! and endpoint inference.

mod dsl;
mod endpoint;
mod label;
mod library;

use thiserror::Error;

pub use dsl::{eval_expr, parse_rule, BinOp, Env, EvalError, Expr, Func, ParseError, Var};
pub use endpoint::{build_env, endpoint_from_env, infer_endpoint, infer_endpoint_local, path_crossing, LANE_WIDTH};
pub use label::{canonicalize, similarity, IntentLabel};
pub use library::{
    builtin, builtin_library, canonical_env, Applicability, BehaviorSpec, EndpointRule, SpecSource, AGGRESSIVE_CUT_IN,
    BUILTIN_NAMES, CLOSE_CAR_FOLLOWING, EMERGENCY_BRAKING, OPPOSITE_DIRECTION_INTRUSION, RULE_FIELDS,
    RUSH_THROUGH_GO_STRAIGHT, RUSH_THROUGH_TURN_LEFT, STRAIGHT_LANE_SHIFT,
};

use crate::scene::{RoadKind, SceneError};

#[derive(Debug, Error)]
pub enum BehaviorError {
    #[error("rule `{field}` (`{text}`): {source}")]
    Parse {
        field: &'static str,
        text: String,
        #[source]
        source: ParseError,
    },
    #[error("rule `{field}` (`{text}`): {source}")]
    Eval {
        field: &'static str,
        text: String,
        #[source]
        source: EvalError,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("behaviour `{label}` does not apply to {road:?} roads")]
    NotApplicable { label: String, road: RoadKind },
    #[error("invalid behaviour spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}
