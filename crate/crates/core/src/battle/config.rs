use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of directional actions (8 moves followed by 8 attacks).
pub const DIRECTIONAL_ACTIONS: usize = 16;

/// Number of observation planes: obstacle, friendly presence, friendly HP,
/// enemy presence, enemy HP.
pub const SPATIAL_CHANNELS: usize = 5;

/// Per-event reward table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Rewards {
    /// Paid by every agent alive at the start of a step.
    pub step: f64,
    /// Paid per attack that lands on an enemy.
    pub hit: f64,
    /// Paid to each attacker that hit a victim on the step it died.
    pub kill: f64,
    /// Paid by an agent on the step it dies.
    pub death: f64,
    /// Paid by an attack that finds no enemy: empty, friendly or off-map cell.
    pub attack_empty: f64,
}

impl Default for Rewards {
    fn default() -> Self {
        Rewards {
            step: -0.005,
            hit: 0.2,
            kill: 5.0,
            death: -0.1,
            attack_empty: -0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BattleConfig {
    pub width: usize,
    pub height: usize,
    /// Agents per army.
    pub army_size: usize,
    /// Side of the square observation window; odd.
    pub view: usize,
    pub max_hp: u32,
    pub damage: u32,
    pub rewards: Rewards,
    pub max_steps: u32,
    /// Chebyshev radius of the local co-agent neighborhood.
    pub neighbor_radius: usize,
    /// Desired number of empty columns between the two armies at spawn.
    pub spawn_gap: usize,
    /// Adds a 17th "stay" action.
    pub idle_action: bool,
}

impl Default for BattleConfig {
    fn default() -> Self {
        BattleConfig {
            width: 30,
            height: 30,
            army_size: 16,
            view: 13,
            max_hp: 10,
            damage: 2,
            rewards: Rewards::default(),
            max_steps: 200,
            neighbor_radius: 13,
            spawn_gap: 6,
            idle_action: false,
        }
    }
}

impl BattleConfig {
    pub fn num_actions(&self) -> usize {
        DIRECTIONAL_ACTIONS + usize::from(self.idle_action)
    }

    pub fn num_agents(&self) -> usize {
        2 * self.army_size
    }

    /// Formation `(rows, cols)` of one army.
    pub fn formation(&self) -> (usize, usize) {
        let rows = (self.army_size as f64).sqrt().ceil() as usize;
        let rows = rows.max(1);
        (rows, self.army_size.div_ceil(rows))
    }

    /// Rightmost column of army 1's formation.
    pub(crate) fn front_column(&self) -> Result<usize> {
        let (rows, cols) = self.formation();
        // mirrored formations must not touch: 2 * front < width - 1
        let max_front = (self.width as i64 - 2) / 2;
        let wanted = (self.width as i64 - 2 - self.spawn_gap as i64) / 2;
        if rows > self.height || (cols as i64 - 1) > max_front {
            return Err(Error::Config(format!(
                "{} agents per army ({rows}x{cols} formation) do not fit twice on a {}x{} map",
                self.army_size, self.width, self.height
            )));
        }
        Ok(wanted.clamp(cols as i64 - 1, max_front) as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.army_size == 0 {
            return Err(Error::Config("armies need at least one agent".into()));
        }
        if self.view % 2 == 0 {
            return Err(Error::Config(format!("view window side must be odd, got {}", self.view)));
        }
        if self.neighbor_radius == 0 {
            return Err(Error::Config("neighbor radius must be > 0".into()));
        }
        if self.max_hp == 0 || self.damage == 0 || self.max_steps == 0 {
            return Err(Error::Config("max_hp, damage and max_steps must be positive".into()));
        }
        let r = &self.rewards;
        if ![r.step, r.hit, r.kill, r.death, r.attack_empty].iter().all(|v| v.is_finite()) {
            return Err(Error::Config("rewards must be finite".into()));
        }
        self.front_column().map(|_| ())
    }
}
