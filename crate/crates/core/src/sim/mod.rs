//! Deterministic executor of the asynchronous message-passing model.

pub mod fuzz;
pub mod generate;
pub mod run;
pub mod scheduler;
pub mod trace;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use fuzz::fuzz_case;
pub use generate::{generate_initial_state, EdgeModel, GenerateError, IdAssignment, InitialStateSpec};
pub use run::{run, LeaveAt, RunConfig, SearchWorkload, SimError, Simulator, StopCondition};
pub use scheduler::{FairnessReport, SchedulerKind, SchedulerSpec, ScriptStep};
pub use trace::{
    replay, state_at, Event, EventKind, ExitRecord, ModeChange, Observation, ReplayError, RunEnd, SearchOutcome,
    SearchRecord, Trace,
};

/// Independent random streams derived from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Generator = 0,
    Scheduler = 1,
    Workload = 2,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
