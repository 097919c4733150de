use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::BattleConfig;
use crate::error::{Error, Result};
use crate::seeds;

const EMPTY: u32 = u32::MAX;

/// Offsets for the 8 directions N, NE, E, SE, S, SW, W, NW; `y` grows downwards.
pub const DIRECTIONS: [(i64, i64); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    Move(usize),
    Attack(usize),
    Stay,
}

/// Decodes an action index: `0..8` move, `8..16` attack, `16` stay.
pub fn decode_action(action: usize, config: &BattleConfig) -> Result<ActionKind> {
    match action {
        0..=7 => Ok(ActionKind::Move(action)),
        8..=15 => Ok(ActionKind::Attack(action - 8)),
        16 if config.idle_action => Ok(ActionKind::Stay),
        _ => Err(Error::Input(format!(
            "action {action} outside [0, {})",
            config.num_actions()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub x: usize,
    pub y: usize,
    pub hp: u32,
    /// Army label, 1 or 2.
    pub group: u8,
    pub alive: bool,
    pub last_action: Option<usize>,
    pub last_reward: f64,
}

/// Full simulator state. Agents `0..N` form army 1 and `N..2N` army 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub agents: Vec<Agent>,
    pub step: u32,
    /// Keys the move-conflict priorities.
    pub seed: u64,
    width: usize,
    height: usize,
    cells: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Event {
    Hit { attacker: usize, victim: usize },
    Kill { attacker: usize, victim: usize },
    Death { agent: usize },
    AttackMissed { attacker: usize },
    MoveBlocked { agent: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Reward of every agent this step; zero for agents dead at the start.
    pub rewards: Vec<f64>,
    /// Whether each agent was alive at the start of the step.
    pub acted: Vec<bool>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Ongoing,
    Won(u8),
    Draw,
}

impl Verdict {
    pub fn is_done(self) -> bool {
        self != Verdict::Ongoing
    }

    pub fn winner(self) -> Option<u8> {
        match self {
            Verdict::Won(g) => Some(g),
            _ => None,
        }
    }
}

impl GridState {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Id of the alive agent at `(x, y)`.
    pub fn occupant(&self, x: usize, y: usize) -> Option<usize> {
        match self.cells[y * self.width + x] {
            EMPTY => None,
            id => Some(id as usize),
        }
    }

    pub fn alive_count(&self, group: u8) -> usize {
        self.agents.iter().filter(|a| a.alive && a.group == group).count()
    }

    fn offset(&self, x: usize, y: usize, dir: usize) -> Option<(usize, usize)> {
        let (dx, dy) = DIRECTIONS[dir];
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
            None
        } else {
            Some((nx as usize, ny as usize))
        }
    }

    /// A state holding exactly `agents` on the config's map, at step 0.
    pub fn from_agents(config: &BattleConfig, agents: Vec<Agent>, seed: u64) -> Result<GridState> {
        let mut cells = vec![EMPTY; config.width * config.height];
        for (id, a) in agents.iter().enumerate() {
            if a.x >= config.width || a.y >= config.height || !(a.group == 1 || a.group == 2) {
                return Err(Error::Input(format!("agent {id} at ({}, {}) group {} does not fit the map", a.x, a.y, a.group)));
            }
            if a.alive {
                cells[a.y * config.width + a.x] = id as u32;
            }
        }
        let state = GridState {
            agents,
            step: 0,
            seed,
            width: config.width,
            height: config.height,
            cells,
        };
        state
            .check_invariants(config.max_hp)
            .map_err(|e| Error::Input(e.to_string()))?;
        Ok(state)
    }

    /// Recomputes the occupancy grid from the alive agents.
    #[cfg(test)]
    pub(crate) fn rebuild_cells(&mut self) {
        self.cells.fill(EMPTY);
        for (id, a) in self.agents.iter().enumerate() {
            if a.alive {
                self.cells[a.y * self.width + a.x] = id as u32;
            }
        }
    }

    /// Checks the occupancy and HP invariants.
    pub fn check_invariants(&self, max_hp: u32) -> Result<()> {
        let mut seen = vec![EMPTY; self.cells.len()];
        for (id, a) in self.agents.iter().enumerate() {
            if a.alive != (a.hp > 0) || a.hp > max_hp {
                return Err(Error::Training(format!("agent {id} has hp {} alive {}", a.hp, a.alive)));
            }
            if a.alive {
                let c = a.y * self.width + a.x;
                if seen[c] != EMPTY {
                    return Err(Error::Training(format!("agents {} and {id} share a cell", seen[c])));
                }
                seen[c] = id as u32;
            }
        }
        if seen != self.cells {
            return Err(Error::Training("occupancy grid out of sync".into()));
        }
        Ok(())
    }
}

/// Places both armies in mirrored rectangular formations. The formation's
/// vertical offset is drawn from the seed.
pub fn reset(config: &BattleConfig, seed: u64) -> Result<GridState> {
    config.validate()?;
    let (rows, cols) = config.formation();
    let front = config.front_column()?;
    let x0 = front + 1 - cols;
    let y0 = seeds::stream(seed, seeds::ENVIRONMENT).gen_range(0..=config.height - rows);
    let n = config.army_size;
    let mut agents = Vec::with_capacity(2 * n);
    for group in [1u8, 2] {
        for k in 0..n {
            let (r, c) = (k / cols, k % cols);
            let x = x0 + c;
            agents.push(Agent {
                x: if group == 1 { x } else { config.width - 1 - x },
                y: y0 + r,
                hp: config.max_hp,
                group,
                alive: true,
                last_action: None,
                last_reward: 0.0,
            });
        }
    }
    let mut cells = vec![EMPTY; config.width * config.height];
    for (id, a) in agents.iter().enumerate() {
        cells[a.y * config.width + a.x] = id as u32;
    }
    Ok(GridState {
        agents,
        step: 0,
        seed,
        width: config.width,
        height: config.height,
        cells,
    })
}

/// Alive same-group agents within Chebyshev distance `radius`, ascending id.
pub fn neighbor_agents(state: &GridState, agent: usize, radius: usize) -> Vec<usize> {
    let me = &state.agents[agent];
    state
        .agents
        .iter()
        .enumerate()
        .filter(|&(j, a)| {
            j != agent && a.alive && a.group == me.group && a.x.abs_diff(me.x).max(a.y.abs_diff(me.y)) <= radius
        })
        .map(|(j, _)| j)
        .collect()
}

pub fn is_done(state: &GridState, config: &BattleConfig) -> Verdict {
    let (a, b) = (state.alive_count(1), state.alive_count(2));
    match (a, b) {
        (0, 0) => Verdict::Draw,
        (_, 0) => Verdict::Won(1),
        (0, _) => Verdict::Won(2),
        _ if state.step >= config.max_steps => match a.cmp(&b) {
            std::cmp::Ordering::Greater => Verdict::Won(1),
            std::cmp::Ordering::Less => Verdict::Won(2),
            std::cmp::Ordering::Equal => Verdict::Draw,
        },
        _ => Verdict::Ongoing,
    }
}

fn move_priority(seed: u64, step: u32, cell: usize, agent: usize) -> u64 {
    seeds::mix64(seeds::mix64(seeds::mix64(seed ^ step as u64) ^ cell as u64) ^ agent as u64)
}

/// Advances one step. `actions[i]` must be set for every alive agent;
/// entries of dead agents are ignored.
pub fn step(state: &mut GridState, config: &BattleConfig, actions: &[Option<usize>]) -> Result<StepResult> {
    let order: Vec<usize> = (0..state.agents.len()).collect();
    step_in_order(state, config, actions, &order)
}

/// `step` with an explicit agent visiting order; the outcome must not depend on it.
pub(crate) fn step_in_order(
    state: &mut GridState,
    config: &BattleConfig,
    actions: &[Option<usize>],
    order: &[usize],
) -> Result<StepResult> {
    let n = state.agents.len();
    if actions.len() != n {
        return Err(Error::Input(format!("expected {n} action slots, got {}", actions.len())));
    }
    let mut kinds = vec![ActionKind::Stay; n];
    let mut acted = vec![false; n];
    for (i, a) in state.agents.iter().enumerate() {
        if a.alive {
            let act = actions[i].ok_or_else(|| Error::Input(format!("missing action for alive agent {i}")))?;
            kinds[i] = decode_action(act, config)?;
            acted[i] = true;
        }
    }
    let r = &config.rewards;
    let mut rewards = vec![0.0; n];
    let mut events = Vec::new();
    for i in 0..n {
        if acted[i] {
            rewards[i] += r.step;
        }
    }

    // attacks against pre-step positions
    let mut damage = vec![0u32; n];
    let mut hitters: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &i in order {
        let ActionKind::Attack(dir) = kinds[i] else { continue };
        if !acted[i] {
            continue;
        }
        let a = &state.agents[i];
        let victim = state
            .offset(a.x, a.y, dir)
            .and_then(|(x, y)| state.occupant(x, y))
            .filter(|&v| state.agents[v].group != a.group);
        match victim {
            Some(v) => {
                damage[v] += config.damage;
                hitters[v].push(i);
                rewards[i] += r.hit;
                events.push(Event::Hit { attacker: i, victim: v });
            }
            None => {
                rewards[i] += r.attack_empty;
                events.push(Event::AttackMissed { attacker: i });
            }
        }
    }
    for v in 0..n {
        if damage[v] == 0 {
            continue;
        }
        let w = state.width;
        let agent = &mut state.agents[v];
        agent.hp = agent.hp.saturating_sub(damage[v]);
        if agent.hp == 0 {
            agent.alive = false;
            state.cells[agent.y * w + agent.x] = EMPTY;
            rewards[v] += r.death;
            events.push(Event::Death { agent: v });
            hitters[v].sort_unstable();
            for &k in &hitters[v] {
                rewards[k] += r.kill;
                events.push(Event::Kill { attacker: k, victim: v });
            }
        }
    }

    // moves into cells free after the attack phase; ties by keyed priority
    let mut claims: Vec<(usize, usize)> = Vec::new();
    for &i in order {
        let ActionKind::Move(dir) = kinds[i] else { continue };
        let a = &state.agents[i];
        if !a.alive {
            continue;
        }
        match state.offset(a.x, a.y, dir) {
            Some((x, y)) if state.occupant(x, y).is_none() => claims.push((y * state.width + x, i)),
            _ => events.push(Event::MoveBlocked { agent: i }),
        }
    }
    let (seed, step_no) = (state.seed, state.step);
    claims.sort_unstable_by_key(|&(cell, i)| (cell, move_priority(seed, step_no, cell, i), i));
    let mut k = 0;
    while k < claims.len() {
        let (cell, winner) = claims[k];
        let agent = &mut state.agents[winner];
        state.cells[agent.y * state.width + agent.x] = EMPTY;
        agent.x = cell % state.width;
        agent.y = cell / state.width;
        state.cells[cell] = winner as u32;
        k += 1;
        while k < claims.len() && claims[k].0 == cell {
            events.push(Event::MoveBlocked { agent: claims[k].1 });
            k += 1;
        }
    }

    for i in 0..n {
        if acted[i] {
            let a = &mut state.agents[i];
            a.last_action = actions[i];
            a.last_reward = rewards[i];
        }
    }
    state.step += 1;
    Ok(StepResult {
        rewards,
        acted,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battle::Rewards;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn duel_config() -> BattleConfig {
        BattleConfig {
            width: 5,
            height: 5,
            army_size: 1,
            ..Default::default()
        }
    }

    /// Empty map of the config's size with agents placed by hand.
    fn custom(config: &BattleConfig, placed: &[(usize, usize, u8, u32)]) -> GridState {
        let agents = placed
            .iter()
            .map(|&(x, y, group, hp)| Agent {
                x,
                y,
                hp,
                group,
                alive: true,
                last_action: None,
                last_reward: 0.0,
            })
            .collect();
        GridState::from_agents(config, agents, 0).unwrap()
    }

    #[test]
    fn from_agents_rejects_overlap_and_bad_positions() {
        let cfg = duel_config();
        let agent = |x, y| Agent {
            x,
            y,
            hp: 10,
            group: 1,
            alive: true,
            last_action: None,
            last_reward: 0.0,
        };
        assert!(GridState::from_agents(&cfg, vec![agent(1, 1), agent(1, 1)], 0).is_err());
        assert!(GridState::from_agents(&cfg, vec![agent(cfg.width, 0)], 0).is_err());
        assert!(GridState::from_agents(&cfg, vec![agent(0, 0), agent(1, 0)], 0).is_ok());
    }

    #[test]
    fn reset_single_agents_mirrored() {
        let cfg = duel_config();
        let s = reset(&cfg, 4).unwrap();
        assert_eq!(s.agents.len(), 2);
        let (a, b) = (&s.agents[0], &s.agents[1]);
        assert_eq!(a.x + b.x, cfg.width - 1);
        assert_eq!(a.y, b.y);
        assert!(s.agents.iter().all(|a| a.hp == cfg.max_hp && a.alive));
        assert_eq!((a.group, b.group), (1, 2));
        s.check_invariants(cfg.max_hp).unwrap();
    }

    #[test]
    fn reset_is_deterministic_and_checks_fit() {
        let cfg = BattleConfig::default();
        assert_eq!(reset(&cfg, 9).unwrap(), reset(&cfg, 9).unwrap());
        let ys: std::collections::BTreeSet<usize> = (0..20).map(|s| reset(&cfg, s).unwrap().agents[0].y).collect();
        assert!(ys.len() > 1);
        let big = BattleConfig {
            army_size: 300,
            ..Default::default()
        };
        assert!(matches!(reset(&big, 0), Err(Error::Config(_))));
    }

    #[test]
    fn blocked_moves_pay_step_penalty_only() {
        let cfg = duel_config();
        let mut s = custom(&cfg, &[(0, 0, 1, 10), (4, 0, 2, 10)]);
        // north off the map for both
        let out = step(&mut s, &cfg, &[Some(0), Some(0)]).unwrap();
        assert_eq!(out.rewards, vec![cfg.rewards.step; 2]);
        assert_eq!((s.agents[0].x, s.agents[0].y), (0, 0));
        assert_eq!((s.agents[1].x, s.agents[1].y), (4, 0));
        assert_eq!(s.step, 1);
    }

    #[test]
    fn lethal_hit_pays_event_table() {
        let cfg = duel_config();
        let mut s = custom(&cfg, &[(1, 1, 1, 10), (2, 1, 2, 2)]);
        // A attacks east; B tries to move south
        let out = step(&mut s, &cfg, &[Some(8 + 2), Some(4)]).unwrap();
        let r = Rewards::default();
        assert!((out.rewards[0] - (r.step + r.hit + r.kill)).abs() < 1e-12);
        assert!((out.rewards[1] - (r.step + r.death)).abs() < 1e-12);
        assert!(!s.agents[1].alive);
        assert_eq!((s.agents[1].x, s.agents[1].y), (2, 1));
        assert_eq!(s.occupant(2, 1), None);
        assert_eq!(is_done(&s, &cfg), Verdict::Won(1));
    }

    #[test]
    fn mutual_lethal_attacks_kill_both() {
        let cfg = duel_config();
        let mut s = custom(&cfg, &[(1, 1, 1, 2), (2, 1, 2, 2)]);
        step(&mut s, &cfg, &[Some(8 + 2), Some(8 + 6)]).unwrap();
        assert!(!s.agents[0].alive && !s.agents[1].alive);
        assert_eq!(is_done(&s, &cfg), Verdict::Draw);
    }

    #[test]
    fn attacking_a_friend_or_nothing_is_penalized() {
        let cfg = BattleConfig {
            width: 5,
            height: 5,
            army_size: 2,
            ..Default::default()
        };
        let mut s = custom(&cfg, &[(1, 1, 1, 10), (2, 1, 1, 10), (4, 4, 2, 10), (0, 4, 2, 10)]);
        let out = step(&mut s, &cfg, &[Some(8 + 2), Some(8), Some(0), Some(0)]).unwrap();
        let r = Rewards::default();
        assert_eq!(out.rewards[0], r.step + r.attack_empty);
        assert_eq!(out.rewards[1], r.step + r.attack_empty);
        assert_eq!(s.agents[1].hp, 10);
    }

    #[test]
    fn missing_action_is_input_error() {
        let cfg = duel_config();
        let mut s = reset(&cfg, 0).unwrap();
        assert!(matches!(step(&mut s, &cfg, &[Some(0), None]), Err(Error::Input(_))));
        assert!(matches!(step(&mut s, &cfg, &[Some(0), Some(16)]), Err(Error::Input(_))));
        assert!(matches!(step(&mut s, &cfg, &[Some(0)]), Err(Error::Input(_))));
    }

    #[test]
    fn contested_cell_goes_to_exactly_one_mover() {
        let cfg = BattleConfig {
            width: 5,
            height: 5,
            army_size: 2,
            ..Default::default()
        };
        let mut s = custom(&cfg, &[(1, 2, 1, 10), (3, 2, 1, 10), (0, 0, 2, 10), (4, 0, 2, 10)]);
        let out = step(&mut s, &cfg, &[Some(2), Some(6), Some(0), Some(0)]).unwrap();
        let on_center = s.agents.iter().filter(|a| (a.x, a.y) == (2, 2)).count();
        assert_eq!(on_center, 1);
        assert!(out.events.iter().any(|e| matches!(e, Event::MoveBlocked { agent: 0 | 1 })));
        s.check_invariants(cfg.max_hp).unwrap();
    }

    #[test]
    fn neighbors_by_chebyshev_radius() {
        let cfg = BattleConfig {
            width: 30,
            height: 30,
            army_size: 3,
            ..Default::default()
        };
        let s = custom(&cfg, &[(0, 0, 1, 10), (5, 3, 1, 10), (20, 1, 1, 10), (1, 1, 2, 10), (2, 2, 2, 10), (9, 9, 2, 10)]);
        assert_eq!(neighbor_agents(&s, 0, 0), Vec::<usize>::new());
        assert_eq!(neighbor_agents(&s, 0, 13), vec![1]);
        assert_eq!(neighbor_agents(&s, 3, 1), vec![4]);
        assert_eq!(neighbor_agents(&s, 3, 100), vec![4, 5]);
    }

    #[test]
    fn termination_rules() {
        let cfg = duel_config();
        let mut s = reset(&cfg, 0).unwrap();
        assert_eq!(is_done(&s, &cfg), Verdict::Ongoing);
        s.step = cfg.max_steps;
        assert_eq!(is_done(&s, &cfg), Verdict::Draw);
        s.agents[0].hp = 4;
        assert_eq!(is_done(&s, &cfg), Verdict::Draw);
        s.agents[1].alive = false;
        assert_eq!(is_done(&s, &cfg), Verdict::Won(1));
    }

    fn random_actions(s: &GridState, cfg: &BattleConfig, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
        s.agents
            .iter()
            .map(|a| a.alive.then(|| rng.gen_range(0..cfg.num_actions())))
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn rollout_invariants(seed in any::<u64>(), army in 1usize..10) {
            let cfg = BattleConfig { width: 12, height: 12, army_size: army, spawn_gap: 1, max_steps: 60, ..Default::default() };
            let mut s = reset(&cfg, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut alive = s.agents.iter().filter(|a| a.alive).count();
            let mut kills = [0usize; 2];
            while !is_done(&s, &cfg).is_done() {
                let actions = random_actions(&s, &cfg, &mut rng);
                let out = step(&mut s, &cfg, &actions).unwrap();
                s.check_invariants(cfg.max_hp).unwrap();
                let now = s.agents.iter().filter(|a| a.alive).count();
                prop_assert!(now <= alive);
                alive = now;
                for e in out.events {
                    if let Event::Death { agent } = e {
                        kills[(2 - s.agents[agent].group) as usize] += 1;
                    }
                }
            }
            prop_assert_eq!(kills[0], army - s.alive_count(2));
            prop_assert_eq!(kills[1], army - s.alive_count(1));
        }

        #[test]
        fn outcome_independent_of_visit_order(seed in any::<u64>()) {
            let cfg = BattleConfig { width: 8, height: 8, army_size: 6, spawn_gap: 0, ..Default::default() };
            let mut a = reset(&cfg, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            for _ in 0..15 {
                if is_done(&a, &cfg).is_done() { break; }
                let actions = random_actions(&a, &cfg, &mut rng);
                let mut order: Vec<usize> = (0..a.agents.len()).collect();
                order.shuffle(&mut rng);
                let mut b = a.clone();
                let out_a = step(&mut a, &cfg, &actions).unwrap();
                let out_b = step_in_order(&mut b, &cfg, &actions, &order).unwrap();
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(out_a.rewards, out_b.rewards);
            }
        }

        #[test]
        fn neighbor_relation_is_symmetric(seed in any::<u64>(), radius in 0usize..8) {
            let cfg = BattleConfig { width: 14, height: 14, army_size: 9, ..Default::default() };
            let mut s = reset(&cfg, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..5 {
                let actions = random_actions(&s, &cfg, &mut rng);
                step(&mut s, &cfg, &actions).unwrap();
            }
            for i in 0..s.agents.len() {
                if !s.agents[i].alive { continue; }
                for j in neighbor_agents(&s, i, radius) {
                    prop_assert!(neighbor_agents(&s, j, radius).contains(&i));
                }
            }
        }
    }
}
