use cpm_core::minipacman::{
    decode_observation, encode_observation, plane, Action, Ghost, Maze, MiniPacman, MiniPacmanConfig, NUM_CELLS,
    NUM_FEATURES, NUM_PLANES, FOOD_REWARD, LEVEL_REWARD,
};
use cpm_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn env(seed: u64) -> MiniPacman {
    MiniPacman::reset(MiniPacmanConfig::default(), seed).unwrap().0
}

#[test]
fn reset_is_deterministic_in_seed() {
    let (_, a) = MiniPacman::reset(MiniPacmanConfig::default(), 3).unwrap();
    let (_, b) = MiniPacman::reset(MiniPacmanConfig::default(), 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.planes.len(), NUM_FEATURES);
    assert_eq!(NUM_PLANES, 7);
    let e = env(3);
    assert_eq!(e.state().pills.len(), 2);
    assert_eq!(e.state().ghosts.len(), 2);
    // Food on every corridor cell except the agent and pill cells.
    assert_eq!(e.state().food_left(), e.maze().open_cells().len() - 3);
}

#[test]
fn direction_marker_is_one_cell_ahead() {
    let e = env(1);
    let obs = e.observation();
    for g in &e.state().ghosts {
        let (dr, dc) = match g.heading {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Noop => unreachable!("ghosts always have a heading"),
        };
        let ahead = ((g.pos.0 as isize + dr) as usize, (g.pos.1 as isize + dc) as usize);
        assert!(obs.get(plane::GHOST_DIRECTION, ahead));
    }
}

#[test]
fn heading_only_changes_direction_plane() {
    let mut e = env(2);
    let mut s = e.state().clone();
    let a = s.agent;
    s.ghosts = vec![Ghost { pos: (a.0, a.1 + 3), heading: Action::Left }];
    let first = encode_observation(e.maze(), &s);
    s.ghosts[0].heading = Action::Right;
    let second = encode_observation(e.maze(), &s);
    for i in 0..NUM_FEATURES {
        if first.planes[i] != second.planes[i] {
            assert_eq!(i / NUM_CELLS, plane::GHOST_DIRECTION);
        }
    }
    assert_ne!(first, second);
    e.set_state(s).unwrap();
}

#[test]
fn decode_recovers_entities() {
    let e = env(4);
    let d = decode_observation(&e.observation());
    let s = e.state();
    assert_eq!(d.agent, Some(s.agent));
    let mut ghosts: Vec<_> = s.ghosts.iter().map(|g| g.pos).collect();
    ghosts.sort();
    ghosts.dedup();
    assert_eq!(d.ghosts, ghosts);
    let mut pills = s.pills.clone();
    pills.sort();
    assert_eq!(d.pills, pills);
    assert_eq!(d.food.len(), s.food_left());
    assert_eq!(d.frightened, s.frightened);
}

#[test]
fn walls_block_movement() {
    let mut e = env(5);
    let mut s = e.state().clone();
    s.agent = (1, 1);
    s.ghosts = vec![Ghost { pos: (13, 17), heading: Action::Up }];
    e.set_state(s).unwrap();
    e.step(Action::Up.index()).unwrap();
    assert_eq!(e.state().agent, (1, 1));
    e.step(Action::Left.index()).unwrap();
    assert_eq!(e.state().agent, (1, 1));
}

#[test]
fn frame_cap_ends_episode() {
    let config = MiniPacmanConfig { frame_cap: 5, nghosts_init: 0, ..Default::default() };
    let (mut e, _) = MiniPacman::reset(config, 0).unwrap();
    for i in 0..5 {
        let out = e.step(Action::Noop.index()).unwrap();
        assert_eq!(out.done, i == 4);
    }
    assert!(matches!(e.step(0), Err(Error::StepAfterDone)));
    // Full default cap.
    let config = MiniPacmanConfig { nghosts_init: 0, ..Default::default() };
    let (mut e, _) = MiniPacman::reset(config, 0).unwrap();
    let mut steps = 0;
    while !e.step(Action::Noop.index()).unwrap().done {
        steps += 1;
    }
    assert_eq!(steps + 1, 3000);
}

#[test]
fn eating_last_food_advances_level() {
    let config = MiniPacmanConfig { nghosts_init: 0, npills: 0, ..Default::default() };
    let (mut e, _) = MiniPacman::reset(config, 0).unwrap();
    let mut s = e.state().clone();
    s.food = vec![false; NUM_CELLS];
    let target = (s.agent.0, s.agent.1 + 1);
    s.food[target.0 * 19 + target.1] = true;
    e.set_state(s).unwrap();
    let out = e.step(Action::Right.index()).unwrap();
    assert_eq!(out.reward, FOOD_REWARD + LEVEL_REWARD);
    assert_eq!(e.state().level, 1);
    assert!(e.state().food_left() > 100);
    assert!(!out.done);
}

#[test]
fn ghost_added_every_two_levels() {
    let config = MiniPacmanConfig { npills: 0, ghost_speed: 0.0, ..Default::default() };
    let (mut e, _) = MiniPacman::reset(config, 0).unwrap();
    for level in 1..=4u32 {
        let mut s = e.state().clone();
        s.food = vec![false; NUM_CELLS];
        let here = s.agent;
        let target = if e.maze().is_wall((here.0, here.1 + 1)) { (here.0, here.1 - 1) } else { (here.0, here.1 + 1) };
        s.food[target.0 * 19 + target.1] = true;
        e.set_state(s).unwrap();
        let dir = if target.1 > here.1 { Action::Right } else { Action::Left };
        e.step(dir.index()).unwrap();
        assert_eq!(e.state().level, level);
        assert_eq!(e.state().ghosts.len(), 2 + level as usize / 2);
    }
}

#[test]
fn touching_a_ghost_kills() {
    let mut e = env(6);
    let mut s = e.state().clone();
    let a = s.agent;
    s.ghosts = vec![Ghost { pos: (a.0, a.1 + 1), heading: Action::Right }];
    e.set_state(s).unwrap();
    let out = e.step(Action::Right.index()).unwrap();
    assert!(out.done);
    assert_eq!(out.reward, 0.0);
}

#[test]
fn frightened_ghost_is_eaten() {
    let mut e = env(6);
    let mut s = e.state().clone();
    let a = s.agent;
    s.ghosts = vec![Ghost { pos: (a.0, a.1 + 1), heading: Action::Right }];
    s.frightened = 10;
    e.set_state(s).unwrap();
    let out = e.step(Action::Right.index()).unwrap();
    assert!(!out.done);
    assert!(out.reward >= 5.0);
}

#[test]
fn episodes_are_determined_by_seed_and_actions() {
    let actions: Vec<usize> = {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        (0..300).map(|_| rng.random_range(0..5)).collect()
    };
    let run = |seed| {
        let mut e = env(seed);
        let mut log = Vec::new();
        for &a in &actions {
            let out = e.step(a).unwrap();
            log.push((out.observation, out.reward));
            if out.done {
                break;
            }
        }
        log
    };
    assert_eq!(run(9), run(9));
}

#[test]
fn ghosts_move_half_the_time() {
    let config = MiniPacmanConfig { npills: 0, ..Default::default() };
    let maze = Maze::standard();
    let (mut e, _) = MiniPacman::with_maze(config, maze, 42).unwrap();
    let mut steps = 0;
    while steps < 10_000 {
        // Keep the agent out of the way so the episode does not end.
        let mut s = e.state().clone();
        s.agent = e.maze().agent_start();
        if s.ghosts.iter().any(|g| e.maze().distance(g.pos, s.agent).unwrap() < 3) {
            s.ghosts.iter_mut().for_each(|g| g.pos = (1, 1));
        }
        s.frame = 0;
        e.set_state(s).unwrap();
        e.step(Action::Noop.index()).unwrap();
        steps += 1;
    }
    let rate = e.ghost_move_rate();
    let n = (steps * 2) as f64;
    let sigma = (0.25 / n).sqrt();
    assert!((rate - 0.5).abs() < 3.0 * sigma, "rate {rate}");
}
