use rand::Rng;

use super::{EnvFamily, StepResult};
use crate::error::{Error, Result};
use crate::nn::{ActionRef, Head};
use crate::rng::{self, tag};

pub const DT: f64 = 0.1;
const SUCCESS_BONUS: f64 = 1.0;

/// One procedural point-mass level.
#[derive(Debug, Clone, PartialEq)]
pub struct PointNavParams {
    pub goal: [f64; 2],
    pub force_gain: f64,
    pub friction: f64,
    pub success_radius: f64,
    pub episode_cap: usize,
    pub level_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointNavState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub steps_elapsed: usize,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn observe(params: &PointNavParams, s: &PointNavState) -> Vec<f64> {
    vec![
        s.position[0],
        s.position[1],
        s.velocity[0],
        s.velocity[1],
        params.goal[0] - s.position[0],
        params.goal[1] - s.position[1],
    ]
}

/// Start position uniform in `[-1, 1]^2`, at rest.
pub fn pointnav_reset(params: &PointNavParams, episode_seed: u64) -> (PointNavState, Vec<f64>) {
    let mut rng = rng::stream(episode_seed, &[tag::EPISODE]);
    let state = PointNavState {
        position: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        velocity: [0.0, 0.0],
        steps_elapsed: 0,
    };
    (state, observe(params, &state))
}

pub fn pointnav_step(
    params: &PointNavParams,
    state: &PointNavState,
    action: [f64; 2],
) -> (PointNavState, StepResult) {
    let mut next = *state;
    for d in 0..2 {
        // NaN actions clamp to NaN; callers guarantee finite actions.
        let a = action[d].clamp(-1.0, 1.0);
        next.velocity[d] = (1.0 - params.friction) * state.velocity[d] + params.force_gain * a * DT;
        next.position[d] = state.position[d] + next.velocity[d] * DT;
    }
    next.steps_elapsed = state.steps_elapsed + 1;
    let before = dist(state.position, params.goal);
    let after = dist(next.position, params.goal);
    let success = after <= params.success_radius;
    let reward = (before - after) + if success { SUCCESS_BONUS } else { 0.0 };
    let done = success || next.steps_elapsed >= params.episode_cap;
    let obs = observe(params, &next);
    (
        next,
        StepResult {
            obs,
            reward,
            done,
            success,
        },
    )
}

/// Level generator: each level seed maps to a goal and to dynamics and
/// tolerance drawn uniformly from the configured ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct PointNavFamily {
    pub force_gain: (f64, f64),
    pub friction: (f64, f64),
    pub success_radius: (f64, f64),
    pub episode_cap: usize,
}

impl Default for PointNavFamily {
    fn default() -> Self {
        PointNavFamily {
            force_gain: (1.0, 1.0),
            friction: (0.1, 0.1),
            success_radius: (0.1, 0.1),
            episode_cap: 256,
        }
    }
}

impl PointNavFamily {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ordered(self.force_gain) || !ordered(self.friction) || !ordered(self.success_radius) {
            return Err(Error::Config("pointnav ranges must be finite with min <= max".into()));
        }
        if self.friction.0 <= 0.0 || self.friction.1 >= 1.0 {
            return Err(Error::Config("pointnav friction must lie in (0, 1)".into()));
        }
        if self.success_radius.0 <= 0.0 {
            return Err(Error::Config("pointnav success radius must be positive".into()));
        }
        if self.episode_cap == 0 {
            return Err(Error::Config("episode_cap must be >= 1".into()));
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.gen();
    lo + (hi - lo) * u
}

impl EnvFamily for PointNavFamily {
    type Level = PointNavParams;
    type State = PointNavState;

    fn obs_dim(&self) -> usize {
        6
    }

    fn action_head(&self) -> Head {
        Head::DiagonalGaussian { action_dim: 2 }
    }

    fn level(&self, level_seed: u64) -> PointNavParams {
        let mut rng = rng::stream(level_seed, &[tag::LEVEL]);
        let goal = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        PointNavParams {
            goal,
            force_gain: draw(&mut rng, self.force_gain),
            friction: draw(&mut rng, self.friction),
            success_radius: draw(&mut rng, self.success_radius),
            episode_cap: self.episode_cap,
            level_seed,
        }
    }

    fn reset(&self, level: &PointNavParams, episode_seed: u64) -> (PointNavState, Vec<f64>) {
        pointnav_reset(level, episode_seed)
    }

    fn step(
        &self,
        level: &PointNavParams,
        state: &PointNavState,
        action: ActionRef<'_>,
    ) -> Result<(PointNavState, StepResult)> {
        match action {
            ActionRef::Continuous(a) if a.len() == 2 => {
                if !a.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("pointnav action".into()));
                }
                Ok(pointnav_step(level, state, [a[0], a[1]]))
            }
            _ => Err(Error::Shape("pointnav expects a 2-vector action".into())),
        }
    }

    fn encode_state(s: &PointNavState) -> Vec<u64> {
        vec![
            s.position[0].to_bits(),
            s.position[1].to_bits(),
            s.velocity[0].to_bits(),
            s.velocity[1].to_bits(),
            s.steps_elapsed as u64,
        ]
    }

    fn decode_state(w: &[u64]) -> Result<PointNavState> {
        if w.len() != 5 {
            return Err(Error::Shape("pointnav state needs 5 words".into()));
        }
        Ok(PointNavState {
            position: [f64::from_bits(w[0]), f64::from_bits(w[1])],
            velocity: [f64::from_bits(w[2]), f64::from_bits(w[3])],
            steps_elapsed: w[4] as usize,
        })
    }
}
