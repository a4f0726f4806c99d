//! Fixtures shared by the benchmarks.

use ltest_core::simlab::{gen_replicate, ScenarioConfig};
use ltest_core::{sufficient_state, ModelContext, SufficientState};
use nalgebra::DVector;

pub struct Fixture {
    pub ctx: ModelContext,
    pub y: DVector<f64>,
    pub state: SufficientState,
}

/// One replicate of the default simulation regime (`n = 100, d = 50, k = 10`)
/// with a moderate tested signal.
pub fn fixture(seed: u64) -> Fixture {
    let cfg = ScenarioConfig {
        amp: 0.4,
        k1: 10,
        seed,
        ..ScenarioConfig::default()
    };
    let mut rng = ltest_core::ltest::sample_rng(seed, 0);
    let rep = gen_replicate(&cfg, &mut rng).expect("default regime is valid");
    let state = sufficient_state(&rep.ctx, &rep.y).expect("residual is nondegenerate");
    Fixture {
        ctx: rep.ctx,
        y: rep.y,
        state,
    }
}
