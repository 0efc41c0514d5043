//! A stochastic MiniPacman on a fixed 15x19 maze.
//!
//! Rewards: food +1, power pill +2, eating a frightened ghost +5, clearing the
//! level +10. Touching a ghost that is not frightened ends the episode with no
//! reward. Each ghost moves with probability `ghost_speed` per step; at a
//! junction it heads towards the agent with probability 0.75 (away from it
//! while frightened) and otherwise picks a random exit, and in a corridor it
//! keeps going. One ghost is added after every two cleared levels.

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEIGHT: usize = 15;
pub const WIDTH: usize = 19;
pub const NUM_CELLS: usize = HEIGHT * WIDTH;
pub const NUM_PLANES: usize = 7;
pub const NUM_FEATURES: usize = NUM_PLANES * NUM_CELLS;
pub const NUM_ACTIONS: usize = 5;

pub const FOOD_REWARD: f64 = 1.0;
pub const PILL_REWARD: f64 = 2.0;
pub const GHOST_REWARD: f64 = 5.0;
pub const LEVEL_REWARD: f64 = 10.0;
pub const FRIGHTENED_STEPS: u32 = 20;
pub const CHASE_PROB: f64 = 0.75;
/// Minimum maze distance between the agent and a (re)spawned ghost.
const SPAWN_DISTANCE: u16 = 6;

const LAYOUT: [&str; HEIGHT] = [
    "###################",
    "#........#........#",
    "#.##.###.#.###.##.#",
    "#.................#",
    "#.##.#.#####.#.##.#",
    "#....#...#...#....#",
    "####.###.#.###.####",
    "#........A........#",
    "####.#.#####.#.####",
    "#....#...#...#....#",
    "#.##.###.#.###.##.#",
    "#..#.....#.....#..#",
    "##.#.#.#####.#.#.##",
    "#....#...#...#....#",
    "###################",
];

/// Cells where the two pills may appear; each level picks distinct ones.
const PILL_SITES: [(usize, usize); 4] = [(1, 1), (1, 17), (13, 1), (13, 17)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Noop,
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Noop, Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Noop => (0, 0),
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }

    fn reverse(self) -> Self {
        match self {
            Action::Noop => Action::Noop,
            Action::Up => Action::Down,
            Action::Down => Action::Up,
            Action::Left => Action::Right,
            Action::Right => Action::Left,
        }
    }
}

const MOVES: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Regular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiniPacmanConfig {
    pub frame_cap: u32,
    pub mode: Mode,
    pub npills: usize,
    pub nghosts_init: usize,
    pub ghost_speed: f64,
    pub ghost_speed_increase: f64,
}

impl Default for MiniPacmanConfig {
    fn default() -> Self {
        Self {
            frame_cap: 3000,
            mode: Mode::Regular,
            npills: 2,
            nghosts_init: 2,
            ghost_speed: 0.5,
            ghost_speed_increase: 0.0,
        }
    }
}

impl MiniPacmanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ghost_speed) {
            return Err(Error::InvalidParameter(format!(
                "ghost_speed {} outside [0,1]",
                self.ghost_speed
            )));
        }
        if !(self.ghost_speed_increase >= 0.0) {
            return Err(Error::InvalidParameter("ghost_speed_increase must be >= 0".into()));
        }
        if self.frame_cap == 0 {
            return Err(Error::InvalidParameter("frame_cap must be positive".into()));
        }
        if self.npills > PILL_SITES.len() {
            return Err(Error::InvalidParameter(format!("at most {} pills", PILL_SITES.len())));
        }
        Ok(())
    }
}

pub type Pos = (usize, usize);

/// Wall layout plus all-pairs maze distances.
#[derive(Debug, Clone)]
pub struct Maze {
    walls: Vec<bool>,
    open: Vec<Pos>,
    agent_start: Pos,
    dist: Vec<u16>,
}

const UNREACHABLE: u16 = u16::MAX;

impl Maze {
    pub fn standard() -> Self {
        Self::parse(&LAYOUT).expect("built-in layout is valid")
    }

    /// `#` is wall, `A` the agent start, anything else corridor.
    pub fn parse(rows: &[&str]) -> Result<Self> {
        if rows.len() != HEIGHT || rows.iter().any(|r| r.len() != WIDTH) {
            return Err(Error::DimensionMismatch(format!("layout must be {HEIGHT}x{WIDTH}")));
        }
        let mut walls = vec![false; NUM_CELLS];
        let mut agent_start = None;
        for (r, row) in rows.iter().enumerate() {
            for (c, ch) in row.bytes().enumerate() {
                walls[r * WIDTH + c] = ch == b'#';
                if ch == b'A' {
                    agent_start = Some((r, c));
                }
            }
        }
        let agent_start = agent_start.ok_or_else(|| Error::InvalidParameter("layout has no agent".into()))?;
        let open: Vec<Pos> = (0..NUM_CELLS)
            .filter(|&i| !walls[i])
            .map(|i| (i / WIDTH, i % WIDTH))
            .collect();
        let mut maze = Self { walls, open, agent_start, dist: vec![UNREACHABLE; NUM_CELLS * NUM_CELLS] };
        for &p in &maze.open.clone() {
            maze.bfs_from(p);
        }
        Ok(maze)
    }

    fn bfs_from(&mut self, src: Pos) {
        let base = idx(src) * NUM_CELLS;
        let mut queue = VecDeque::from([src]);
        self.dist[base + idx(src)] = 0;
        while let Some(p) = queue.pop_front() {
            let d = self.dist[base + idx(p)];
            for m in MOVES {
                let q = self.moved(p, m);
                if q != p && self.dist[base + idx(q)] == UNREACHABLE {
                    self.dist[base + idx(q)] = d + 1;
                    queue.push_back(q);
                }
            }
        }
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        self.walls[idx(p)]
    }

    pub fn open_cells(&self) -> &[Pos] {
        &self.open
    }

    pub fn agent_start(&self) -> Pos {
        self.agent_start
    }

    /// Maze distance, `None` if disconnected.
    pub fn distance(&self, a: Pos, b: Pos) -> Option<u16> {
        let d = self.dist[idx(a) * NUM_CELLS + idx(b)];
        (d != UNREACHABLE).then_some(d)
    }

    /// Position after trying to move; walls block.
    pub fn moved(&self, p: Pos, a: Action) -> Pos {
        let (dr, dc) = a.delta();
        let r = p.0 as isize + dr;
        let c = p.1 as isize + dc;
        if r < 0 || c < 0 || r >= HEIGHT as isize || c >= WIDTH as isize {
            return p;
        }
        let q = (r as usize, c as usize);
        if self.is_wall(q) {
            p
        } else {
            q
        }
    }

    /// Cell one step ahead, ignoring walls (clamped to the grid).
    fn ahead(&self, p: Pos, a: Action) -> Pos {
        let (dr, dc) = a.delta();
        let r = (p.0 as isize + dr).clamp(0, HEIGHT as isize - 1);
        let c = (p.1 as isize + dc).clamp(0, WIDTH as isize - 1);
        (r as usize, c as usize)
    }

    fn exits(&self, p: Pos) -> Vec<Action> {
        MOVES.into_iter().filter(|m| self.moved(p, *m) != p).collect()
    }
}

fn idx(p: Pos) -> usize {
    p.0 * WIDTH + p.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ghost {
    pub pos: Pos,
    pub heading: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniPacmanState {
    pub food: Vec<bool>,
    pub pills: Vec<Pos>,
    pub agent: Pos,
    pub ghosts: Vec<Ghost>,
    pub frightened: u32,
    pub level: u32,
    pub frame: u32,
    pub alive: bool,
}

impl MiniPacmanState {
    pub fn food_left(&self) -> usize {
        self.food.iter().filter(|f| **f).count()
    }
}

/// Binary feature planes, `[plane][row][col]` flattened.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub planes: Vec<u8>,
}

pub mod plane {
    pub const WALLS: usize = 0;
    pub const FOOD: usize = 1;
    pub const PILLS: usize = 2;
    pub const AGENT: usize = 3;
    pub const GHOSTS: usize = 4;
    /// Cell one step ahead of each ghost along its heading.
    pub const GHOST_DIRECTION: usize = 5;
    /// Remaining frightened steps in unary, filling cells in row-major order.
    pub const FRIGHTENED: usize = 6;
}

impl Observation {
    pub fn get(&self, plane: usize, p: Pos) -> bool {
        self.planes[plane * NUM_CELLS + idx(p)] != 0
    }

    /// Indices of the set features, for sparse network inputs.
    pub fn active_features(&self) -> Vec<usize> {
        self.planes
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn cells(&self, plane: usize) -> Vec<Pos> {
        (0..NUM_CELLS)
            .filter(|&i| self.planes[plane * NUM_CELLS + i] != 0)
            .map(|i| (i / WIDTH, i % WIDTH))
            .collect()
    }
}

pub fn encode_observation(maze: &Maze, state: &MiniPacmanState) -> Observation {
    let mut planes = vec![0u8; NUM_FEATURES];
    let mut set = |plane: usize, p: Pos| planes[plane * NUM_CELLS + idx(p)] = 1;
    for &p in maze.open_cells() {
        if state.food[idx(p)] {
            set(plane::FOOD, p);
        }
    }
    for r in 0..HEIGHT {
        for c in 0..WIDTH {
            if maze.is_wall((r, c)) {
                set(plane::WALLS, (r, c));
            }
        }
    }
    for &p in &state.pills {
        set(plane::PILLS, p);
    }
    set(plane::AGENT, state.agent);
    for g in &state.ghosts {
        set(plane::GHOSTS, g.pos);
        set(plane::GHOST_DIRECTION, maze.ahead(g.pos, g.heading));
    }
    for i in 0..state.frightened.min(NUM_CELLS as u32) as usize {
        planes[plane::FRIGHTENED * NUM_CELLS + i] = 1;
    }
    Observation { planes }
}

/// Entity positions recovered from an observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedObservation {
    pub agent: Option<Pos>,
    pub ghosts: Vec<Pos>,
    pub pills: Vec<Pos>,
    pub food: Vec<Pos>,
    pub frightened: u32,
}

pub fn decode_observation(obs: &Observation) -> DecodedObservation {
    DecodedObservation {
        agent: obs.cells(plane::AGENT).first().copied(),
        ghosts: obs.cells(plane::GHOSTS),
        pills: obs.cells(plane::PILLS),
        food: obs.cells(plane::FOOD),
        frightened: obs.planes[plane::FRIGHTENED * NUM_CELLS..(plane::FRIGHTENED + 1) * NUM_CELLS]
            .iter()
            .filter(|v| **v != 0)
            .count() as u32,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub frame: u32,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    pub agent: Pos,
    pub ghosts: Vec<Pos>,
}

#[derive(Debug, Clone)]
pub struct MiniPacman {
    config: MiniPacmanConfig,
    maze: Maze,
    state: MiniPacmanState,
    rng: ChaCha8Rng,
    ghost_moves: u64,
    ghost_turns: u64,
}

impl MiniPacman {
    pub fn reset(config: MiniPacmanConfig, seed: u64) -> Result<(Self, Observation)> {
        Self::with_maze(config, Maze::standard(), seed)
    }

    pub fn with_maze(config: MiniPacmanConfig, maze: Maze, seed: u64) -> Result<(Self, Observation)> {
        config.validate()?;
        let mut env = Self {
            state: MiniPacmanState {
                food: vec![false; NUM_CELLS],
                pills: Vec::new(),
                agent: maze.agent_start(),
                ghosts: Vec::new(),
                frightened: 0,
                level: 0,
                frame: 0,
                alive: true,
            },
            config,
            maze,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ghost_moves: 0,
            ghost_turns: 0,
        };
        env.populate_level();
        let obs = env.observation();
        Ok((env, obs))
    }

    pub fn state(&self) -> &MiniPacmanState {
        &self.state
    }

    pub fn maze(&self) -> &Maze {
        &self.maze
    }

    pub fn config(&self) -> &MiniPacmanConfig {
        &self.config
    }

    pub fn observation(&self) -> Observation {
        encode_observation(&self.maze, &self.state)
    }

    /// Fraction of ghost turns on which a ghost moved.
    pub fn ghost_move_rate(&self) -> f64 {
        self.ghost_moves as f64 / self.ghost_turns.max(1) as f64
    }

    pub fn ghost_speed(&self) -> f64 {
        (self.config.ghost_speed + self.config.ghost_speed_increase * self.state.level as f64).min(1.0)
    }

    /// Replaces the state wholesale, e.g. to set up a test position.
    pub fn set_state(&mut self, state: MiniPacmanState) -> Result<()> {
        if state.food.len() != NUM_CELLS {
            return Err(Error::DimensionMismatch("food grid has the wrong size".into()));
        }
        let on_wall = |p: Pos| p.0 >= HEIGHT || p.1 >= WIDTH || self.maze.is_wall(p);
        if on_wall(state.agent) || state.ghosts.iter().any(|g| on_wall(g.pos)) {
            return Err(Error::InvalidParameter("entities must be on corridor cells".into()));
        }
        self.state = state;
        Ok(())
    }

    fn num_ghosts(&self) -> usize {
        self.config.nghosts_init + self.state.level as usize / 2
    }

    fn populate_level(&mut self) {
        let s = &mut self.state;
        s.food = vec![false; NUM_CELLS];
        let mut sites = PILL_SITES.to_vec();
        s.pills.clear();
        for _ in 0..self.config.npills {
            let k = self.rng.random_range(0..sites.len());
            s.pills.push(sites.swap_remove(k));
        }
        for &p in self.maze.open_cells() {
            if p != s.agent && !s.pills.contains(&p) {
                s.food[idx(p)] = true;
            }
        }
        s.frightened = 0;
        let n = self.num_ghosts();
        self.state.ghosts = (0..n).map(|_| self.spawn_ghost()).collect();
    }

    fn spawn_ghost(&mut self) -> Ghost {
        let agent = self.state.agent;
        let far: Vec<Pos> = self
            .maze
            .open_cells()
            .iter()
            .copied()
            .filter(|&p| self.maze.distance(p, agent).is_some_and(|d| d >= SPAWN_DISTANCE))
            .collect();
        let pos = far[self.rng.random_range(0..far.len())];
        let exits = self.maze.exits(pos);
        let heading = exits[self.rng.random_range(0..exits.len())];
        Ghost { pos, heading }
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if !self.state.alive {
            return Err(Error::StepAfterDone);
        }
        let action = Action::from_index(action)
            .ok_or_else(|| Error::InvalidParameter(format!("action {action} out of range")))?;
        let mut reward = 0.0;
        let before = self.state.agent;
        self.state.agent = self.maze.moved(before, action);

        reward += self.resolve_collisions(before, &vec![None; self.state.ghosts.len()]);
        if self.state.alive {
            reward += self.eat();
            let previous = self.move_ghosts();
            reward += self.resolve_collisions(before, &previous);
        }
        if self.state.frightened > 0 {
            self.state.frightened -= 1;
        }
        if self.state.alive && self.state.food_left() == 0 {
            reward += LEVEL_REWARD;
            self.state.level += 1;
            self.populate_level();
        }
        self.state.frame += 1;
        if self.state.frame >= self.config.frame_cap {
            self.state.alive = false;
        }
        Ok(StepOutcome { observation: self.observation(), reward, done: !self.state.alive })
    }

    fn eat(&mut self) -> f64 {
        let p = self.state.agent;
        if self.state.food[idx(p)] {
            self.state.food[idx(p)] = false;
            return FOOD_REWARD;
        }
        if let Some(k) = self.state.pills.iter().position(|q| *q == p) {
            self.state.pills.swap_remove(k);
            self.state.frightened = FRIGHTENED_STEPS;
            return PILL_REWARD;
        }
        0.0
    }

    /// Handles contact between the agent and each ghost, including the two
    /// swapping cells. Returns the reward for ghosts eaten.
    fn resolve_collisions(&mut self, agent_before: Pos, ghost_before: &[Option<Pos>]) -> f64 {
        let agent = self.state.agent;
        let mut reward = 0.0;
        for k in 0..self.state.ghosts.len() {
            let g = self.state.ghosts[k];
            let crossed = ghost_before[k].is_some_and(|prev| prev == agent && g.pos == agent_before);
            if g.pos != agent && !crossed {
                continue;
            }
            if self.state.frightened > 0 {
                reward += GHOST_REWARD;
                self.state.ghosts[k] = self.spawn_ghost();
            } else {
                self.state.alive = false;
                return reward;
            }
        }
        reward
    }

    fn move_ghosts(&mut self) -> Vec<Option<Pos>> {
        let speed = self.ghost_speed();
        let agent = self.state.agent;
        let fleeing = self.state.frightened > 0;
        let mut previous = Vec::with_capacity(self.state.ghosts.len());
        for k in 0..self.state.ghosts.len() {
            self.ghost_turns += 1;
            let g = self.state.ghosts[k];
            previous.push(Some(g.pos));
            if self.rng.random::<f64>() >= speed {
                continue;
            }
            self.ghost_moves += 1;
            let exits = self.maze.exits(g.pos);
            let forward: Vec<Action> = exits.iter().copied().filter(|m| *m != g.heading.reverse()).collect();
            let options = if forward.is_empty() { exits } else { forward };
            let dir = if options.len() == 1 {
                options[0]
            } else if self.rng.random::<f64>() < CHASE_PROB {
                let key = |m: &Action| {
                    let d = self.maze.distance(self.maze.moved(g.pos, *m), agent).unwrap_or(UNREACHABLE);
                    if fleeing {
                        u16::MAX - d
                    } else {
                        d
                    }
                };
                *options.iter().min_by_key(|m| key(m)).expect("non-empty")
            } else {
                options[self.rng.random_range(0..options.len())]
            };
            self.state.ghosts[k] = Ghost { pos: self.maze.moved(g.pos, dir), heading: dir };
        }
        previous
    }

    pub fn record(&self, action: usize, reward: f64) -> StepRecord {
        StepRecord {
            frame: self.state.frame,
            action,
            reward,
            done: !self.state.alive,
            agent: self.state.agent,
            ghosts: self.state.ghosts.iter().map(|g| g.pos).collect(),
        }
    }
}

impl fmt::Display for MiniPacman {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..HEIGHT {
            for c in 0..WIDTH {
                let p = (r, c);
                let ch = if self.state.ghosts.iter().any(|g| g.pos == p) {
                    if self.state.frightened > 0 { 'g' } else { 'G' }
                } else if self.state.agent == p {
                    'P'
                } else if self.maze.is_wall(p) {
                    '#'
                } else if self.state.pills.contains(&p) {
                    'o'
                } else if self.state.food[idx(p)] {
                    '.'
                } else {
                    ' '
                };
                write!(f, "{ch}")?;
            }
            writeln!(f)?;
        }
        write!(
            f,
            "frame {} level {} frightened {}",
            self.state.frame, self.state.level, self.state.frightened
        )
    }
}

/// Hand-written stand-in for a pretrained agent: intent scores per action
/// from food distance and ghost danger, turned into a softmax with the given
/// temperature.
pub fn heuristic_intent(maze: &Maze, state: &MiniPacmanState, temperature: f64) -> Vec<f64> {
    let targets: Vec<Pos> = maze
        .open_cells()
        .iter()
        .copied()
        .filter(|&p| state.food[idx(p)] || state.pills.contains(&p))
        .collect();
    let scores: Vec<f64> = Action::ALL
        .iter()
        .map(|&a| {
            let p = maze.moved(state.agent, a);
            let food = targets
                .iter()
                .filter_map(|&t| maze.distance(p, t))
                .min()
                .map_or(0.0, |d| d as f64);
            let ghost = state
                .ghosts
                .iter()
                .filter_map(|g| maze.distance(p, g.pos))
                .min()
                .map_or(f64::INFINITY, |d| d as f64);
            let mut score = -food;
            if state.frightened > 2 {
                score -= 0.5 * ghost.min(10.0);
            } else if ghost <= 1.0 {
                score -= 20.0;
            } else if ghost <= 3.0 {
                score -= 6.0 / ghost;
            }
            if a == Action::Noop {
                score -= 0.5;
            }
            score
        })
        .collect();
    softmax(&scores, temperature)
}

fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let t = temperature.max(1e-6);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| ((s - max) / t).exp()).collect();
    crate::dist::normalize(&mut out);
    out
}
