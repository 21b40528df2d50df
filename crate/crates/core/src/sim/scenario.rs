//! Preset configurations for the reference experiments.

use super::NoiseSpec;
use crate::config::RunConfig;

/// Two noiseless laps past twelve objects.
///
/// The sonar is idealized so that range quantization does not limit accuracy:
/// nanometer bins and narrow beams, with echoes confined to the beam that
/// contains each object's center.
pub fn zero_noise(seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.sim.noise = NoiseSpec::zero();
    cfg.sim.object_radius = 0.0;
    cfg.sonar.num_beams = 4096;
    cfg.sonar.range_resolution = 1e-9;
    cfg.sonar.num_bins = 10_000_000_000;
    cfg
}

/// Odometry with a heading bias large enough that dead reckoning ends well
/// over a meter from the truth after two laps; other sensors mildly noisy.
pub fn drift(seed: u64) -> RunConfig {
    let mut cfg = moderate(seed);
    cfg.sim.noise.odometry_sigma = [0.01, 0.002];
    cfg.sim.noise.odometry_bias = [0.0, 0.0, 0.0, 0.0, 0.0, 0.003];
    cfg.sim.noise.multipath_probability = 0.0;
    cfg.noise_model.odometry = [0.02, 0.006];
    cfg
}

/// Moderate camera, sonar and embedding noise with occasional multipath.
pub fn moderate(seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    let n = &mut cfg.sim.noise;
    n.pixel_sigma = 2.0;
    n.range_sigma = 0.05;
    n.embedding_sigma = 0.05;
    n.multipath_probability = 0.05;
    n.dropout_probability = 0.05;
    n.odometry_sigma = [0.01, 0.002];
    cfg.noise_model.landmark = [0.01, 0.01, 0.06];
    cfg.noise_model.odometry = [0.02, 0.004];
    cfg
}

/// Moderate noise, more multipath and two classes that look alike.
pub fn multipath_confusable(seed: u64) -> RunConfig {
    let mut cfg = moderate(seed);
    cfg.sim.noise.multipath_probability = 0.1;
    cfg.sim.world.confusable_pairs = vec![[0, 1]];
    cfg.sim.world.confusable_similarity = 0.9;
    cfg
}
