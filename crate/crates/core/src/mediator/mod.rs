//! The mediator: composition plans, the generalization protocols and plan
//! execution. It only ever handles ciphertext identifiers.

mod exec;
mod generalize;
mod plan;
mod session;

pub use exec::{execute_plan, ExecOptions, Execution, Mode, ResultTable, ServiceHandle, Services};
pub use generalize::{
    alpha_for, dataset_generalize, domain_generalize, hybrid_generalize, invoke_protected, invoke_range, GenCache,
    Generalized, HybridOutcome, Invocation,
};
pub use plan::{CompositionPlan, InputBinding, PlanNode};
pub use session::{Endpoint, Metrics, Session};

#[cfg(test)]
mod tests;
