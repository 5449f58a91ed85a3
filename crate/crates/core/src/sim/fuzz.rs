//! Random run setups for fuzz campaigns.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{NodeId, SystemState};
use crate::protocol::{Protocol, ProtocolConfig};
use crate::sim::scheduler::default_fairness_bound;
use crate::sim::{
    generate_initial_state, stream, GenerateError, InitialStateSpec, LeaveAt, RunConfig, SchedulerSpec, StopCondition,
    Stream,
};

/// Steps the fixed point must hold before a fuzz run stops.
pub const CLOSURE_STEPS: u64 = 1000;

/// A fuzzed initial state and the run that goes with it.
///
/// For Build-List* a `leaving_fraction` share of the nodes leaves: half of
/// them from the start, the rest at random steps below 300. The step budget
/// is `10·B·n` plus the closure window, `B` being the fairness bound.
pub fn fuzz_case(
    n: usize,
    protocol: ProtocolConfig,
    leaving_fraction: f64,
    seed: u64,
) -> Result<(SystemState, RunConfig), GenerateError> {
    let mut rng = stream(seed, Stream::Workload);
    let leaving = match protocol.protocol {
        Protocol::Plus => 0,
        Protocol::Star if n < 2 || leaving_fraction <= 0.0 => 0,
        Protocol::Star => ((n as f64 * leaving_fraction).round() as usize).clamp(1, n - 1),
    };
    let at_start = leaving.div_ceil(2);
    let mut spec = InitialStateSpec::fuzz(n, protocol.protocol, seed);
    spec.leaving = at_start;
    let s = generate_initial_state(&spec)?;
    let staying: Vec<NodeId> = s.present().filter(|x| x.is_staying()).map(|x| x.id).collect();
    let mut leaves: Vec<LeaveAt> = staying
        .choose_multiple(&mut rng, leaving - at_start)
        .map(|&node| LeaveAt { step: rng.gen_range(1..300), node })
        .collect();
    leaves.sort();
    let b = default_fairness_bound(&s);
    let cfg = RunConfig {
        protocol,
        scheduler: SchedulerSpec::random(),
        seed,
        max_steps: 10 * b * n as u64 + CLOSURE_STEPS,
        stop: StopCondition::Converged { closure_steps: CLOSURE_STEPS },
        leaves,
        ..RunConfig::default()
    };
    Ok((s, cfg))
}
