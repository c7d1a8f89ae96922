//! Stochastic model predictive control for distributed parameter systems.
//!
//! The pipeline samples control schedules, propagates parametric uncertainty
//! through a plant simulator with polynomial chaos, compresses the resulting
//! statistics with proper orthogonal decomposition, fits a ReLU recurrent
//! surrogate and then solves the control problem as a mixed-integer linear
//! program.

pub mod error;
pub mod seed;
pub mod uq;
pub mod sampling;
pub mod field;
pub mod pce;
pub mod pod;
pub mod plant;
pub mod rnn;
pub mod milp;
pub mod nmpc;

pub use error::{Error, Result};
pub use field::{relative_l2, FieldArray, FieldShape};
pub use pce::{fit_pce, surrogate_stats, MultiIndexSet, PceBasis, PceSurrogate, StatFields};
pub use plant::{simulate, ControlSchedule, PlantConfig, PlantKind, PlantSession, TrajectorySet};
pub use pod::{compute_pod_basis, PodBasis, SnapshotMatrix};
pub use rnn::{rnn_forward, train_rnn, validate_model, HiddenState, RnnModel, Sequence, TrainConfig, TrainReport, ValidationReport};
pub use sampling::{lhc_sample, quadrature_rule, Family, LhcDesign, QuadratureRule};
pub use uq::{Distribution, ParameterDraw, UncertainParameter, UncertaintySpec};
