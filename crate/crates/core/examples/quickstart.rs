//! Train the three spectral learners on a small synthetic problem and print
//! their parameter and policy gaps.

use spectral_q_core::env::{Behavior, EnvSpec, SyntheticEnv};
use spectral_q_core::learner::{train, AdaptiveConfig};
use spectral_q_core::policy::{evaluate, RewardSource};
use spectral_q_core::spectral::{FilterKind, FilterSpec};

fn main() -> Result<(), spectral_q_core::Error> {
    let env = SyntheticEnv::new(EnvSpec::a2(), 1)?;
    let (train_set, truth) = env.generate_trajectories(400, Behavior::UniformRandom, 2)?;
    let (test_set, _) = env.generate_trajectories(200, Behavior::UniformRandom, 3)?;
    for kind in FilterKind::ALL {
        let (model, _) = train(&train_set, &FilterSpec::new(kind), &AdaptiveConfig::for_filter(kind))?;
        let m = evaluate(&model, &truth, &test_set, RewardSource::DirectValue)?;
        println!("{:<17} parameter gap {:.4}  policy gap {:.4}", kind.name(), m.parameter_gap, m.policy_gap);
    }
    Ok(())
}
