//! Ledger, consensus and enforcement.

pub mod enforcement;
pub mod ledger;
pub mod pbft;

pub use enforcement::{
    apply_committed, cross_validate, enforce_transition, EnforcementAction, EnforcementState,
    TransitionInput,
};
pub use ledger::{
    export_jsonl, verify_chain, verify_export, ExportVerdict, Hash32, LedgerBlock, SecurityEvent,
    TrustCommit,
};
pub use pbft::{Consortium, Fault, PbftParams, RoundOutcome, ValidatorSet};
