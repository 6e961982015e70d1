use std::f64::consts::PI;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pomdp::GenerativePomdp;

const ACTIONS: [[f64; 2]; 4] = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
const OBSTACLE_RADIUS: f64 = 1.0;
const OBSTACLE_PENALTY: f64 = -50.0;
const GOAL_SCALE: f64 = 50.0;
const GOAL_SOFTENING: f64 = 0.001;
/// Base isotropic variance (1/100) shared by the motion and observation
/// models.
const BASE_VAR: f64 = 0.01;

fn default_horizon() -> usize {
    2
}

fn default_motion_cov_scale() -> f64 {
    BASE_VAR
}

/// 2D beacon-navigation world: the robot moves on unit steps, observes its
/// position relative to a beacon with distance-dependent noise, is rewarded
/// for proximity to the goal and penalized inside obstacle disks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeaconConfig {
    pub beacon: [f64; 2],
    pub goal: [f64; 2],
    pub obstacles: Vec<[f64; 2]>,
    pub start_mean: [f64; 2],
    /// Isotropic variance of the initial-position Gaussian.
    pub start_cov_scale: f64,
    /// Value-range bound handed to the concentration calculator.
    pub vmax: f64,
    /// Planning depth for the per-step lookahead.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Isotropic variance of the motion noise; zero makes motion
    /// deterministic (useful in tests).
    #[serde(default = "default_motion_cov_scale")]
    pub motion_cov_scale: f64,
}

impl Default for BeaconConfig {
    fn default() -> Self {
        BeaconConfig {
            beacon: [3.0, 0.5],
            goal: [6.3, 0.4],
            obstacles: vec![[2.0, 2.0], [4.0, 2.0], [2.0, -2.0]],
            start_mean: [0.0, 0.0],
            start_cov_scale: BASE_VAR,
            vmax: 2.0 * GOAL_SCALE / GOAL_SOFTENING,
            horizon: default_horizon(),
            motion_cov_scale: BASE_VAR,
        }
    }
}

impl BeaconConfig {
    pub fn to_json_file(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub struct BeaconEnv {
    pub config: BeaconConfig,
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn sample_gauss2(mean: &[f64; 2], var: f64, mut rng: &mut dyn RngCore) -> [f64; 2] {
    let sd = var.sqrt();
    let e0: f64 = StandardNormal.sample(&mut rng);
    let e1: f64 = StandardNormal.sample(&mut rng);
    [mean[0] + sd * e0, mean[1] + sd * e1]
}

impl BeaconEnv {
    pub fn new(config: BeaconConfig) -> Self {
        BeaconEnv { config }
    }

    /// Observation variance at `state`: 1/100 within unit distance of the
    /// beacon, 1/(100·distance) beyond it.
    pub fn obs_variance(&self, state: &[f64; 2]) -> f64 {
        let d = dist(state, &self.config.beacon);
        if d > 1.0 {
            BASE_VAR / d
        } else {
            BASE_VAR
        }
    }

    pub fn goal_distance(&self, state: &[f64; 2]) -> f64 {
        dist(state, &self.config.goal)
    }

    fn in_obstacle(&self, state: &[f64; 2]) -> bool {
        self.config
            .obstacles
            .iter()
            .any(|o| dist(state, o) <= OBSTACLE_RADIUS)
    }
}

impl GenerativePomdp for BeaconEnv {
    type State = [f64; 2];
    type Obs = [f64; 2];

    fn num_actions(&self) -> usize {
        ACTIONS.len()
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> [f64; 2] {
        sample_gauss2(&self.config.start_mean, self.config.start_cov_scale, rng)
    }

    fn sample_transition(
        &self,
        state: &[f64; 2],
        action: usize,
        rng: &mut dyn RngCore,
    ) -> [f64; 2] {
        let a = &ACTIONS[action];
        let mean = [state[0] + a[0], state[1] + a[1]];
        if self.config.motion_cov_scale == 0.0 {
            mean
        } else {
            sample_gauss2(&mean, self.config.motion_cov_scale, rng)
        }
    }

    fn sample_observation(&self, state: &[f64; 2], rng: &mut dyn RngCore) -> [f64; 2] {
        let mean = [
            state[0] - self.config.beacon[0],
            state[1] - self.config.beacon[1],
        ];
        sample_gauss2(&mean, self.obs_variance(state), rng)
    }

    fn obs_loglik(&self, obs: &[f64; 2], state: &[f64; 2]) -> f64 {
        let var = self.obs_variance(state);
        let dx = obs[0] - (state[0] - self.config.beacon[0]);
        let dy = obs[1] - (state[1] - self.config.beacon[1]);
        -(2.0 * PI * var).ln() - (dx * dx + dy * dy) / (2.0 * var)
    }

    fn reward(&self, state: &[f64; 2], _action: usize) -> f64 {
        let r_goal = GOAL_SCALE / (self.goal_distance(state) + GOAL_SOFTENING);
        let r_obs = if self.in_obstacle(state) {
            OBSTACLE_PENALTY
        } else {
            0.0
        };
        r_goal + r_obs
    }

    fn state_features(&self, state: &[f64; 2]) -> Vec<f64> {
        state.to_vec()
    }

    fn v_max(&self) -> Option<f64> {
        Some(self.config.vmax)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env() -> BeaconEnv {
        BeaconEnv::new(BeaconConfig::default())
    }

    #[test]
    fn reward_arithmetic() {
        let e = env();
        // Exactly at the goal: 50 / 0.001 = 50000, no obstacle nearby.
        assert_abs_diff_eq!(e.reward(&e.config.goal.clone(), 0), 50_000.0, epsilon = 1e-9);
        // At unit distance from the goal, outside obstacles: 50 / 1.001.
        let x = [e.config.goal[0] - 1.0, e.config.goal[1]];
        assert_abs_diff_eq!(e.reward(&x, 0), 50.0 / 1.001, epsilon = 1e-9);
        // Centered on an obstacle at [2,2]: goal distance sqrt(4.3^2+1.6^2),
        // penalty applied once even with several obstacles configured.
        let o = [2.0, 2.0];
        let d = ((6.3f64 - 2.0).powi(2) + (0.4f64 - 2.0).powi(2)).sqrt();
        assert_abs_diff_eq!(e.reward(&o, 3), 50.0 / (d + 0.001) - 50.0, epsilon = 1e-9);
        // Reward is action-independent.
        for a in 0..4 {
            assert_eq!(e.reward(&[1.0, 1.0], a), e.reward(&[1.0, 1.0], 0));
        }
    }

    #[test]
    fn obs_variance_regimes() {
        let e = env();
        // On the beacon and within the unit disk: variance 1/100.
        assert_abs_diff_eq!(e.obs_variance(&e.config.beacon.clone()), 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(e.obs_variance(&[3.5, 0.5]), 0.01, epsilon = 1e-12);
        // Two units away: 1/(100·2).
        assert_abs_diff_eq!(e.obs_variance(&[5.0, 0.5]), 0.005, epsilon = 1e-12);
    }

    #[test]
    fn obs_loglik_peak_value() {
        let e = env();
        // At the density mode within the unit disk: -ln(2π·0.01).
        let x = [3.2, 0.5];
        let mode = [x[0] - 3.0, x[1] - 0.5];
        assert_abs_diff_eq!(
            e.obs_loglik(&mode, &x),
            -(2.0 * PI * 0.01).ln(),
            epsilon = 1e-12
        );
        // One observation-sd off in one axis costs exactly 1/2.
        let off = [mode[0] + 0.1, mode[1]];
        assert_abs_diff_eq!(
            e.obs_loglik(&off, &x),
            -(2.0 * PI * 0.01).ln() - 0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn motion_moments() {
        let e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let start = [1.0, -1.0];
        let samples: Vec<[f64; 2]> = (0..n)
            .map(|_| e.sample_transition(&start, 1, &mut rng))
            .collect();
        let mean_y: f64 = samples.iter().map(|s| s[1]).sum::<f64>() / n as f64;
        let mean_x: f64 = samples.iter().map(|s| s[0]).sum::<f64>() / n as f64;
        // Action 1 is "up": mean moves to [1, 0].
        assert!((mean_x - 1.0).abs() < 0.01, "mean_x {mean_x}");
        assert!((mean_y - 0.0).abs() < 0.01, "mean_y {mean_y}");
        let var_x: f64 =
            samples.iter().map(|s| (s[0] - mean_x).powi(2)).sum::<f64>() / n as f64;
        assert!((var_x - 0.01).abs() < 0.002, "var_x {var_x}");
    }

    #[test]
    fn noiseless_motion_hook() {
        let cfg = BeaconConfig {
            motion_cov_scale: 0.0,
            ..BeaconConfig::default()
        };
        let e = BeaconEnv::new(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Right, right, up from the origin lands exactly on [2, 1].
        let mut x = [0.0, 0.0];
        for a in [0, 0, 1] {
            x = e.sample_transition(&x, a, &mut rng);
        }
        assert_eq!(x, [2.0, 1.0]);
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("world.json");
        let cfg = BeaconConfig::default();
        cfg.to_json_file(&path).unwrap();
        let back = BeaconConfig::from_json_file(&path).unwrap();
        assert_eq!(back.beacon, cfg.beacon);
        assert_eq!(back.obstacles, cfg.obstacles);
        assert_eq!(back.horizon, cfg.horizon);

        // Configs without the optional fields still load.
        let minimal = r#"{
            "beacon": [3.0, 0.5], "goal": [6.3, 0.4],
            "obstacles": [[2.0, 2.0]], "start_mean": [0.0, 0.0],
            "start_cov_scale": 0.01, "vmax": 100000.0
        }"#;
        let cfg: BeaconConfig = serde_json::from_str(minimal).unwrap();
        assert_eq!(cfg.horizon, 2);
        assert_eq!(cfg.motion_cov_scale, 0.01);
    }

    #[test]
    fn initial_samples_cluster_at_start_mean() {
        let e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 5000;
        let mean_x: f64 = (0..n)
            .map(|_| e.sample_initial(&mut rng)[0])
            .sum::<f64>()
            / n as f64;
        assert!(mean_x.abs() < 0.01, "mean_x {mean_x}");
    }
}
