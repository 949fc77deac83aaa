//! Grid-world pursuit-evasion.
//!
//! Pursuers capture an evader by occupying every traversable cell orthogonally
//! adjacent to it; walls and obstacles count as blocking, so an evader in a
//! corner needs only two pursuers. Evaders move uniformly at random.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_actions, EntitySnapshot, MultiAgentEnv, StepResult};
use crate::context::SimRng;
use crate::error::{Error, Result};

/// Stay, up, down, left, right as `(d_row, d_col)`.
pub const MOVES: [(i32, i32); 5] = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];
const NEIGHBORS: [(i32, i32); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PursuitConfig {
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default = "default_pursuers")]
    pub n_pursuers: usize,
    #[serde(default = "default_evaders")]
    pub n_evaders: usize,
    #[serde(default = "default_episode_length")]
    pub episode_length: usize,
    #[serde(default = "default_window")]
    pub obs_window: usize,
    #[serde(default = "default_tag")]
    pub tag_reward: f64,
    #[serde(default = "default_catch")]
    pub catch_reward: f64,
    /// Place the central obstacle block.
    #[serde(default = "default_true")]
    pub obstacles: bool,
}

fn default_grid() -> usize {
    30
}
fn default_pursuers() -> usize {
    10
}
fn default_evaders() -> usize {
    10
}
fn default_episode_length() -> usize {
    500
}
fn default_window() -> usize {
    7
}
fn default_tag() -> f64 {
    0.01
}
fn default_catch() -> f64 {
    5.0
}
fn default_true() -> bool {
    true
}

impl Default for PursuitConfig {
    fn default() -> Self {
        Self::new(default_grid(), default_pursuers())
    }
}

impl PursuitConfig {
    pub fn new(grid_size: usize, n_pursuers: usize) -> Self {
        Self {
            grid_size,
            n_pursuers,
            n_evaders: default_evaders(),
            episode_length: default_episode_length(),
            obs_window: default_window(),
            tag_reward: default_tag(),
            catch_reward: default_catch(),
            obstacles: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 5 {
            return Err(Error::Environment(format!("grid size {} below 5", self.grid_size)));
        }
        if self.n_pursuers == 0 || self.n_evaders == 0 {
            return Err(Error::Environment("need at least one pursuer and one evader".into()));
        }
        if self.obs_window % 2 == 0 {
            return Err(Error::Environment("observation window must be odd".into()));
        }
        if self.episode_length == 0 {
            return Err(Error::Environment("episode length must be positive".into()));
        }
        Ok(())
    }

    /// Obstacle block dimensions `(rows, cols)`: ⌈G/10⌉ × ⌈G/5⌉.
    pub fn obstacle_shape(&self) -> (usize, usize) {
        if !self.obstacles {
            return (0, 0);
        }
        (self.grid_size.div_ceil(10), self.grid_size.div_ceil(5))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub row: i32,
    pub col: i32,
}

impl Cell {
    pub fn new(row: i32, col: i32) -> Self {
        Self { row, col }
    }

    fn offset(self, (dr, dc): (i32, i32)) -> Self {
        Self::new(self.row + dr, self.col + dc)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PursuitState {
    pub grid_size: usize,
    pub pursuers: Vec<Cell>,
    pub evaders: Vec<Cell>,
    pub alive: Vec<bool>,
    /// Row-major obstacle mask.
    pub obstacles: Vec<bool>,
    pub step: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Occupant {
    Empty,
    Pursuer,
    Evader,
}

impl PursuitState {
    pub fn in_bounds(&self, c: Cell) -> bool {
        let g = self.grid_size as i32;
        c.row >= 0 && c.col >= 0 && c.row < g && c.col < g
    }

    fn index(&self, c: Cell) -> usize {
        c.row as usize * self.grid_size + c.col as usize
    }

    pub fn is_obstacle(&self, c: Cell) -> bool {
        self.obstacles[self.index(c)]
    }

    /// In bounds and not an obstacle.
    pub fn traversable(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.is_obstacle(c)
    }

    fn occupancy(&self) -> Vec<Occupant> {
        let mut occ = vec![Occupant::Empty; self.grid_size * self.grid_size];
        for &p in &self.pursuers {
            occ[self.index(p)] = Occupant::Pursuer;
        }
        for (e, _) in self.evaders.iter().zip(&self.alive).filter(|(_, &a)| a) {
            occ[self.index(*e)] = Occupant::Evader;
        }
        occ
    }

    pub fn n_alive(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    /// Pursuers surrounding the evader at `cell`, if it is captured.
    ///
    /// Captured means: at least one traversable neighbor, and every
    /// traversable neighbor holds a pursuer.
    pub fn surrounding_pursuers(&self, cell: Cell) -> Option<Vec<usize>> {
        let mut surrounders = Vec::with_capacity(4);
        for d in NEIGHBORS {
            let n = cell.offset(d);
            if !self.traversable(n) {
                continue;
            }
            match self.pursuers.iter().position(|&p| p == n) {
                Some(i) => surrounders.push(i),
                None => return None,
            }
        }
        (!surrounders.is_empty()).then_some(surrounders)
    }

    /// 7×7×3 (by default) binary window around pursuer `agent`, row-major with
    /// channels `[pursuer, evader, obstacle]` last. Off-grid cells read as
    /// obstacles.
    pub fn observe(&self, agent: usize, window: usize) -> Vec<f64> {
        self.observe_with(agent, window, &self.occupancy())
    }

    fn observe_with(&self, agent: usize, window: usize, occ: &[Occupant]) -> Vec<f64> {
        let half = (window / 2) as i32;
        let mut obs = vec![0.0; window * window * 3];
        let me = self.pursuers[agent];
        for r in 0..window {
            for c in 0..window {
                let cell = me.offset((r as i32 - half, c as i32 - half));
                let base = (r * window + c) * 3;
                if !self.in_bounds(cell) {
                    obs[base + 2] = 1.0;
                    continue;
                }
                let idx = self.index(cell);
                match occ[idx] {
                    Occupant::Pursuer => obs[base] = 1.0,
                    Occupant::Evader => obs[base + 1] = 1.0,
                    Occupant::Empty => {}
                }
                if self.obstacles[idx] {
                    obs[base + 2] = 1.0;
                }
            }
        }
        obs
    }

    /// Entity-disjointness, bounds, and obstacle checks.
    pub fn check_invariants(&self) -> bool {
        let mut seen = vec![false; self.grid_size * self.grid_size];
        let live_evaders = self.evaders.iter().zip(&self.alive).filter(|(_, &a)| a).map(|(e, _)| e);
        for &c in self.pursuers.iter().chain(live_evaders) {
            if !self.traversable(c) {
                return false;
            }
            let i = self.index(c);
            if seen[i] {
                return false;
            }
            seen[i] = true;
        }
        true
    }
}

pub struct PursuitEnv {
    pub config: PursuitConfig,
    pub state: PursuitState,
}

impl PursuitEnv {
    /// Places the obstacle block and scatters all entities over distinct free
    /// cells.
    pub fn reset(config: PursuitConfig, rng: &mut SimRng) -> Result<Self> {
        config.validate()?;
        let g = config.grid_size;
        let mut obstacles = vec![false; g * g];
        let (h, w) = config.obstacle_shape();
        let (top, left) = ((g - h) / 2, (g - w) / 2);
        for r in top..top + h {
            for c in left..left + w {
                obstacles[r * g + c] = true;
            }
        }
        let free: Vec<usize> = (0..g * g).filter(|&i| !obstacles[i]).collect();
        let needed = config.n_pursuers + config.n_evaders;
        if needed > free.len() {
            return Err(Error::Environment(format!(
                "{needed} entities do not fit in {} free cells",
                free.len()
            )));
        }
        let picks = sample(rng, free.len(), needed);
        let cells: Vec<Cell> = picks
            .iter()
            .map(|k| {
                let i = free[k];
                Cell::new((i / g) as i32, (i % g) as i32)
            })
            .collect();
        let state = PursuitState {
            grid_size: g,
            pursuers: cells[..config.n_pursuers].to_vec(),
            evaders: cells[config.n_pursuers..].to_vec(),
            alive: vec![true; config.n_evaders],
            obstacles,
            step: 0,
        };
        Ok(Self { config, state })
    }

    pub fn from_state(config: PursuitConfig, state: PursuitState) -> Self {
        Self { config, state }
    }

    pub fn observe(&self, agent: usize) -> Vec<f64> {
        self.state.observe(agent, self.config.obs_window)
    }

    fn move_pursuers(&mut self, actions: &[usize]) {
        let occ = self.state.occupancy();
        let n = self.state.pursuers.len();
        let mut claimed = vec![false; occ.len()];
        let mut next = self.state.pursuers.clone();
        for i in 0..n {
            if actions[i] == 0 {
                continue;
            }
            let target = self.state.pursuers[i].offset(MOVES[actions[i]]);
            if !self.state.traversable(target) {
                continue;
            }
            let t = self.state.index(target);
            // Occupied at the start of the step, or already claimed by a
            // lower-index pursuer.
            if occ[t] != Occupant::Empty || claimed[t] {
                continue;
            }
            claimed[t] = true;
            next[i] = target;
        }
        self.state.pursuers = next;
    }

    fn move_evaders(&mut self, rng: &mut SimRng) {
        let mut occ = self.state.occupancy();
        for e in 0..self.state.evaders.len() {
            if !self.state.alive[e] {
                continue;
            }
            let here = self.state.evaders[e];
            let mut options = [here; 5];
            let mut count = 1;
            for d in NEIGHBORS {
                let n = here.offset(d);
                if self.state.traversable(n) && occ[self.state.index(n)] == Occupant::Empty {
                    options[count] = n;
                    count += 1;
                }
            }
            let to = options[rng.gen_range(0..count)];
            if to != here {
                let (from_i, to_i) = (self.state.index(here), self.state.index(to));
                occ[from_i] = Occupant::Empty;
                occ[to_i] = Occupant::Evader;
                self.state.evaders[e] = to;
            }
        }
    }
}

impl MultiAgentEnv for PursuitEnv {
    fn n_agents(&self) -> usize {
        self.state.pursuers.len()
    }

    fn obs_dim(&self) -> usize {
        self.config.obs_window * self.config.obs_window * 3
    }

    fn n_actions(&self) -> usize {
        MOVES.len()
    }

    fn episode_length(&self) -> usize {
        self.config.episode_length
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        let occ = self.state.occupancy();
        (0..self.n_agents())
            .map(|i| self.state.observe_with(i, self.config.obs_window, &occ))
            .collect()
    }

    fn step(&mut self, actions: &[usize], rng: &mut SimRng) -> Result<StepResult> {
        check_actions(actions, self.n_agents(), MOVES.len())?;
        self.move_pursuers(actions);
        self.move_evaders(rng);

        let n = self.n_agents();
        let mut rewards = vec![0.0; n];
        let captures: Vec<(usize, Vec<usize>)> = (0..self.state.evaders.len())
            .filter(|&e| self.state.alive[e])
            .filter_map(|e| {
                self.state
                    .surrounding_pursuers(self.state.evaders[e])
                    .map(|s| (e, s))
            })
            .collect();
        for (e, surrounders) in captures {
            self.state.alive[e] = false;
            let share = self.config.catch_reward / surrounders.len() as f64;
            for p in surrounders {
                rewards[p] += share;
            }
        }

        for (i, reward) in rewards.iter_mut().enumerate() {
            let me = self.state.pursuers[i];
            let tagging = self
                .state
                .evaders
                .iter()
                .zip(&self.state.alive)
                .any(|(e, &a)| a && (e.row - me.row).abs() + (e.col - me.col).abs() == 1);
            if tagging {
                *reward += self.config.tag_reward;
            }
        }

        self.state.step += 1;
        let done = self.state.step >= self.config.episode_length || self.state.n_alive() == 0;
        Ok(StepResult {
            observations: self.observations(),
            rewards,
            done,
        })
    }

    fn snapshot(&self) -> Vec<EntitySnapshot> {
        let pursuers = self.state.pursuers.iter().enumerate().map(|(i, c)| EntitySnapshot {
            kind: "pursuer",
            id: i,
            x: c.col as f64,
            y: c.row as f64,
            alive: true,
        });
        let evaders = self.state.evaders.iter().enumerate().map(|(i, c)| EntitySnapshot {
            kind: "evader",
            id: i,
            x: c.col as f64,
            y: c.row as f64,
            alive: self.state.alive[i],
        });
        pursuers.chain(evaders).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn empty_state(g: usize) -> PursuitState {
        PursuitState {
            grid_size: g,
            pursuers: vec![],
            evaders: vec![],
            alive: vec![],
            obstacles: vec![false; g * g],
            step: 0,
        }
    }

    fn config(g: usize) -> PursuitConfig {
        PursuitConfig {
            obstacles: false,
            ..PursuitConfig::new(g, 1)
        }
    }

    #[test]
    fn reset_places_everything_validly() {
        let mut rng = SimRng::seed_from_u64(3);
        let env = PursuitEnv::reset(PursuitConfig::new(30, 10), &mut rng).unwrap();
        assert!(env.state.check_invariants());
        assert_eq!(env.state.obstacles.iter().filter(|&&o| o).count(), 18);
        assert_eq!(env.state.pursuers.len(), 10);
        assert_eq!(env.state.evaders.len(), 10);

        let again = PursuitEnv::reset(PursuitConfig::new(30, 10), &mut SimRng::seed_from_u64(3)).unwrap();
        assert_eq!(again.state, env.state);
    }

    #[test]
    fn reset_fails_when_crowded() {
        let mut cfg = PursuitConfig::new(5, 20);
        cfg.n_evaders = 10;
        assert!(PursuitEnv::reset(cfg, &mut SimRng::seed_from_u64(0)).is_err());
        assert!(PursuitEnv::reset(PursuitConfig::new(4, 1), &mut SimRng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn observe_lone_agent_interior() {
        let mut s = empty_state(30);
        s.pursuers = vec![Cell::new(15, 15)];
        let obs = s.observe(0, 7);
        assert_eq!(obs.len(), 147);
        let center = (3 * 7 + 3) * 3;
        assert_eq!(obs[center], 1.0);
        assert_eq!(obs.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn observe_corner_marks_off_grid() {
        let mut s = empty_state(30);
        s.pursuers = vec![Cell::new(0, 0)];
        let obs = s.observe(0, 7);
        let obstacle_cells = (0..49).filter(|k| obs[k * 3 + 2] == 1.0).count();
        // Only the bottom-right 4×4 block of the window is on the grid.
        assert_eq!(obstacle_cells, 49 - 16);
        for r in 0..7 {
            for c in 0..7 {
                let off = r < 3 || c < 3;
                assert_eq!(obs[(r * 7 + c) * 3 + 2] == 1.0, off, "({r},{c})");
            }
        }
    }

    #[test]
    fn observe_adjacent_evader_offset() {
        let mut s = empty_state(30);
        s.pursuers = vec![Cell::new(10, 10)];
        s.evaders = vec![Cell::new(10, 11)];
        s.alive = vec![true];
        let obs = s.observe(0, 7);
        assert_eq!(obs[(3 * 7 + 4) * 3 + 1], 1.0);
        assert_eq!(obs.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn four_pursuers_capture_in_open() {
        let mut s = empty_state(10);
        s.evaders = vec![Cell::new(5, 5)];
        s.alive = vec![true];
        s.pursuers = vec![Cell::new(4, 5), Cell::new(6, 5), Cell::new(5, 4), Cell::new(5, 6)];
        let mut env = PursuitEnv::from_state(config(10), s);
        env.config.n_pursuers = 4;
        let out = env.step(&[0, 0, 0, 0], &mut SimRng::seed_from_u64(0)).unwrap();
        assert!(!env.state.alive[0]);
        for r in out.rewards {
            assert!((r - 1.25).abs() < 1e-12);
        }
        assert!(out.done);
    }

    #[test]
    fn wall_reduces_required_pursuers() {
        let mut s = empty_state(10);
        s.evaders = vec![Cell::new(0, 5)];
        s.alive = vec![true, true];
        s.evaders.push(Cell::new(9, 9));
        s.pursuers = vec![Cell::new(1, 5), Cell::new(0, 4), Cell::new(0, 6)];
        // Keep the far evader boxed so only the first can change anything.
        s.pursuers.extend([Cell::new(8, 9), Cell::new(9, 8)]);
        let mut env = PursuitEnv::from_state(config(10), s);
        let out = env.step(&[0; 5], &mut SimRng::seed_from_u64(1)).unwrap();
        assert!(!env.state.alive[0]);
        assert!(!env.state.alive[1]);
        assert!((out.rewards[0] - 5.0 / 3.0).abs() < 1e-12);
        assert!((out.rewards[3] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn tag_reward_iff_adjacent_after_step() {
        for seed in 0..20 {
            let mut s = empty_state(10);
            s.evaders = vec![Cell::new(5, 5)];
            s.alive = vec![true];
            for c in [Cell::new(4, 5), Cell::new(6, 5)] {
                s.obstacles[c.row as usize * 10 + c.col as usize] = true;
            }
            s.pursuers = vec![Cell::new(5, 4)];
            let mut env = PursuitEnv::from_state(config(10), s);
            let out = env.step(&[0], &mut SimRng::seed_from_u64(seed)).unwrap();
            assert!(env.state.alive[0]);
            let adjacent = env.state.evaders[0] == Cell::new(5, 5);
            assert_eq!(out.rewards[0], if adjacent { 0.01 } else { 0.0 });
        }
    }

    #[test]
    fn single_open_side_capture() {
        let mut s = empty_state(10);
        s.obstacles = vec![false; 100];
        // Evader fenced in by obstacles on three sides so it can only stay or
        // move away from the pursuer; it cannot be captured.
        s.evaders = vec![Cell::new(5, 5)];
        s.alive = vec![true];
        for c in [Cell::new(4, 5), Cell::new(6, 5), Cell::new(5, 6)] {
            s.obstacles[c.row as usize * 10 + c.col as usize] = true;
        }
        s.pursuers = vec![Cell::new(5, 3)];
        let mut env = PursuitEnv::from_state(config(10), s);
        // Move right to (5,4); the evader has no empty neighbor left and stays.
        let out = env.step(&[4], &mut SimRng::seed_from_u64(0)).unwrap();
        assert_eq!(env.state.pursuers[0], Cell::new(5, 4));
        // Evader is now fully enclosed with the pursuer on its only open side.
        assert!(!env.state.alive[0]);
        assert!((out.rewards[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn moves_into_occupied_or_blocked_cells_are_cancelled() {
        let mut s = empty_state(6);
        s.pursuers = vec![Cell::new(0, 0), Cell::new(0, 2), Cell::new(1, 1)];
        s.evaders = vec![Cell::new(5, 5)];
        s.alive = vec![true];
        let mut env = PursuitEnv::from_state(config(6), s);
        // 0: up into wall; 1: left into (0,1); 2: up into (0,1) as well.
        env.step(&[1, 3, 1], &mut SimRng::seed_from_u64(0)).unwrap();
        assert_eq!(env.state.pursuers[0], Cell::new(0, 0));
        assert_eq!(env.state.pursuers[1], Cell::new(0, 1));
        assert_eq!(env.state.pursuers[2], Cell::new(1, 1));
        assert!(env.state.check_invariants());
    }

    #[test]
    fn wrong_action_count_errors() {
        let mut env = PursuitEnv::reset(PursuitConfig::new(10, 2), &mut SimRng::seed_from_u64(0)).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        assert!(env.step(&[0], &mut rng).is_err());
        assert!(env.step(&[0, 7], &mut rng).is_err());
    }
}
