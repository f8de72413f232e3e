//! Executable checks of the joint-validity theory for multiple conditional
//! randomization tests on finite assignment spaces.
//!
//! A space lists its elements with exact probabilities. Each test
//! conditions on one cell of a partition of the space; the checks here
//! verify that the partitions are nested, build the Hasse diagram of their
//! cells, and compute exact p-values to test the joint dominance bound
//! `P{P1 <= a1, ..., PK <= aK} <= a1 * ... * aK`.

mod dominance;
mod hasse;
mod scenario;
mod space;

pub use dominance::{
    cond_indep_check, exact_pvalues, joint_dominance_check, CondIndepReport, DominanceCell, DominanceMode,
    DominanceReport, PotentialOutcomeTable, TabulatedStatistic, ValidationStatistic, DEFAULT_EXACT_LIMIT,
    INDEPENDENCE_TOL,
};
pub use hasse::{build_hasse, HasseDiagram, HasseNode};
pub use scenario::{
    builtin_scenario, decimal_rational, Checks, SteppedWedgeTest, mcrt_family, naive_family, parse_scenario, run_scenario, stepped_wedge_space,
    CheckOutcome, FamilyKind, Scenario, ScenarioReport, SteppedWedgeScenario, BUILTIN_SCENARIOS,
};
pub use space::{
    all_pairs_nested, cells_in_union, is_partition, pairwise_nested_check, FiniteAssignmentSpace, NestedCheck,
    Partition, PartitionCheck, PartitionFamily,
};
