//! Learned partial models on MiniPacman: behaviour data from the heuristic
//! agent, a sparse state encoder, and closed-loop evaluation of planners
//! over a learned model.
//!
//! The encoder turns an observation into binary features: for each action,
//! bucketed maze distances from the resulting cell to the nearest food,
//! ghost and ghost-ahead cell; whether the action is blocked; the frightened
//! timer and food left in buckets; and a 7x7 window of the planes centred on
//! the agent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cpm_core::dist::sample_categorical;
use cpm_core::mdp::epsilon_exploration;
use cpm_core::minipacman::{
    decode_observation, heuristic_intent, plane, Action, Maze, MiniPacman, MiniPacmanConfig, Observation, Pos, HEIGHT,
    NUM_ACTIONS, WIDTH,
};

use crate::error::{Error, Result};
use crate::model::{LearnedPartialModel, ModelConfig, ModelKind};
use crate::planner::{LearnedModel, Planner, Root};
use crate::train::Episode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorConfig {
    /// Softmax temperature of the heuristic intent.
    pub temperature: f64,
    pub epsilon: f64,
    /// Episodes longer than this are cut off.
    pub max_frames: u32,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self { temperature: 0.3, epsilon: 0.01, max_frames: 3000 }
    }
}

const FOOD_BUCKETS: usize = 12;
const GHOST_BUCKETS: usize = 10;
const FRIGHTENED_EDGES: [u32; 4] = [1, 4, 8, 13];
const FOOD_LEFT_EDGES: [usize; 6] = [2, 3, 6, 11, 21, 51];
const WINDOW: usize = 7;
const WINDOW_PLANES: [usize; 5] = [plane::WALLS, plane::FOOD, plane::PILLS, plane::GHOSTS, plane::GHOST_DIRECTION];

const FOOD_AT: usize = 0;
const GHOST_AT: usize = FOOD_AT + NUM_ACTIONS * FOOD_BUCKETS;
const PREY_AT: usize = GHOST_AT + NUM_ACTIONS * GHOST_BUCKETS;
const AHEAD_AT: usize = PREY_AT + NUM_ACTIONS * GHOST_BUCKETS;
const BLOCKED_AT: usize = AHEAD_AT + NUM_ACTIONS * GHOST_BUCKETS;
const FRIGHTENED_AT: usize = BLOCKED_AT + NUM_ACTIONS;
const FOOD_LEFT_AT: usize = FRIGHTENED_AT + FRIGHTENED_EDGES.len() + 1;
const WINDOW_AT: usize = FOOD_LEFT_AT + FOOD_LEFT_EDGES.len() + 1;

/// Width of the encoded feature vector.
pub const NUM_ENCODED: usize = WINDOW_AT + WINDOW_PLANES.len() * WINDOW * WINDOW;

fn bucket(d: Option<u16>, buckets: usize) -> usize {
    d.map_or(buckets - 1, |d| (d as usize).min(buckets - 2))
}

fn nearest(maze: &Maze, from: Pos, targets: &[Pos]) -> Option<u16> {
    targets.iter().filter_map(|t| maze.distance(from, *t)).min()
}

/// Indices of the active encoded features, sorted.
pub fn encode_features(maze: &Maze, obs: &Observation) -> Vec<usize> {
    let d = decode_observation(obs);
    let agent = d.agent.unwrap_or_else(|| maze.agent_start());
    let mut food = d.food.clone();
    food.extend(&d.pills);
    let ahead = obs.cells(plane::GHOST_DIRECTION);
    let frightened = d.frightened > 0;
    let mut out = Vec::with_capacity(80);
    for (m, action) in Action::ALL.iter().enumerate() {
        let p = maze.moved(agent, *action);
        out.push(FOOD_AT + m * FOOD_BUCKETS + bucket(nearest(maze, p, &food), FOOD_BUCKETS));
        let ghost = bucket(nearest(maze, p, &d.ghosts), GHOST_BUCKETS);
        if frightened {
            out.push(PREY_AT + m * GHOST_BUCKETS + ghost);
        } else {
            out.push(GHOST_AT + m * GHOST_BUCKETS + ghost);
            out.push(AHEAD_AT + m * GHOST_BUCKETS + bucket(nearest(maze, p, &ahead), GHOST_BUCKETS));
        }
        if *action != Action::Noop && p == agent {
            out.push(BLOCKED_AT + m);
        }
    }
    out.push(FRIGHTENED_AT + FRIGHTENED_EDGES.iter().filter(|e| d.frightened >= **e).count());
    out.push(FOOD_LEFT_AT + FOOD_LEFT_EDGES.iter().filter(|e| food.len() >= **e).count());
    let half = (WINDOW / 2) as isize;
    for (k, pl) in WINDOW_PLANES.iter().enumerate() {
        for dr in -half..=half {
            for dc in -half..=half {
                let (r, c) = (agent.0 as isize + dr, agent.1 as isize + dc);
                let inside = r >= 0 && c >= 0 && r < HEIGHT as isize && c < WIDTH as isize;
                // Outside the grid counts as wall.
                let on = if inside { obs.get(*pl, (r as usize, c as usize)) } else { *pl == plane::WALLS };
                if on {
                    let cell = ((dr + half) as usize) * WINDOW + (dc + half) as usize;
                    out.push(WINDOW_AT + k * WINDOW * WINDOW + cell);
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

pub fn model_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        num_features: NUM_ENCODED,
        num_actions: NUM_ACTIONS,
        num_intents: NUM_ACTIONS,
        hidden: 128,
        head_hidden: 128,
        expected_active: 60,
    }
}

/// Episodes of the heuristic agent. Intents are drawn from the heuristic's
/// softmax and executed with epsilon-exploration.
pub fn collect_episodes(env: &MiniPacmanConfig, behavior: &BehaviorConfig, n: usize, seed: u64) -> Result<Vec<Episode>> {
    let explore = epsilon_exploration(behavior.epsilon, NUM_ACTIONS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (mut game, mut obs) = MiniPacman::reset(env.clone(), rng.random())?;
        let mut e = Episode {
            states: vec![encode_features(game.maze(), &obs)],
            actions: Vec::new(),
            intents: Vec::new(),
            intent_dists: Vec::new(),
            rewards: Vec::new(),
        };
        for _ in 0..behavior.max_frames {
            let m = heuristic_intent(game.maze(), game.state(), behavior.temperature);
            let z = sample_categorical(&m, &mut rng);
            let a = sample_categorical(&explore[z], &mut rng);
            let step = game.step(a)?;
            obs = step.observation;
            e.states.push(encode_features(game.maze(), &obs));
            e.actions.push(a);
            e.intents.push(z);
            e.intent_dists.push(m);
            e.rewards.push(step.reward);
            if step.done {
                break;
            }
        }
        out.push(e);
    }
    Ok(out)
}

/// Returns of the behaviour policy itself, for reference.
pub fn behavior_returns(env: &MiniPacmanConfig, behavior: &BehaviorConfig, n: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(collect_episodes(env, behavior, n, seed)?.iter().map(|e| e.rewards.iter().sum()).collect())
}

/// Undiscounted returns of a planner acting with a learned model, replanning
/// every frame, for `episodes` games of at most `max_frames` frames.
pub fn evaluate_planner(
    model: &LearnedPartialModel,
    planner: &Planner,
    env: &MiniPacmanConfig,
    discount: f64,
    episodes: usize,
    max_frames: u32,
    seed: u64,
) -> Result<Vec<f64>> {
    if model.config().num_features != NUM_ENCODED || model.config().num_actions != NUM_ACTIONS {
        return Err(Error::InvalidParameter("model shapes do not match MiniPacman".into()));
    }
    let adapter = LearnedModel::new(model, discount);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let (mut game, mut obs) = MiniPacman::reset(env.clone(), rng.random())?;
        let mut total = 0.0;
        for frame in 0..max_frames {
            let features = encode_features(game.maze(), &obs);
            let steps_left = (max_frames - frame).min(env.frame_cap - game.state().frame) as usize;
            let root = Root { features: &features, steps_left };
            let a = planner.plan(&adapter, &root, &mut rng)?.action;
            let step = game.step(a)?;
            total += step.reward;
            obs = step.observation;
            if step.done {
                break;
            }
        }
        returns.push(total);
    }
    Ok(returns)
}
