use std::sync::Arc;

use crate::error::{Error, Result};

/// Immutable state encoding, shared between transitions without copying.
pub type State = Arc<[f64]>;

/// Everything recorded about one group at one time step. Transitions of
/// the agents in that group point into a shared `Peers` and select their
/// co-agents from it with a [`CoAgents`] set.
#[derive(Debug, Clone, Default)]
pub struct Peers {
    pub states: Vec<State>,
    pub actions: Vec<usize>,
    /// State at `t + 1`, or `None` if the agent is gone by then.
    pub next_states: Vec<Option<State>>,
}

impl Peers {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Which entries of a [`Peers`] record are an agent's co-agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoAgents {
    All,
    AllExcept(usize),
    Indices(Arc<[u32]>),
}

impl CoAgents {
    pub fn count(&self, group_size: usize) -> usize {
        match self {
            CoAgents::All => group_size,
            CoAgents::AllExcept(_) => group_size.saturating_sub(1),
            CoAgents::Indices(ix) => ix.len(),
        }
    }

    /// Peer indices in ascending order of appearance.
    pub fn iter(&self, group_size: usize) -> Box<dyn Iterator<Item = usize> + '_> {
        match self {
            CoAgents::All => Box::new(0..group_size),
            CoAgents::AllExcept(me) => {
                let me = *me;
                Box::new((0..group_size).filter(move |&j| j != me))
            }
            CoAgents::Indices(ix) => Box::new(ix.iter().map(|&j| j as usize)),
        }
    }
}

/// One agent's replay record.
///
/// Co-agent actions are the actions taken at the same step `t`; they are
/// reused as the co-agents' "last actions" when bootstrapping from `t + 1`.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: State,
    pub action: usize,
    pub reward: f64,
    /// `None` marks a terminal transition.
    pub next_state: Option<State>,
    pub peers: Arc<Peers>,
    pub co_agents: CoAgents,
}

/// Borrowed view of one co-agent inside a transition.
#[derive(Debug, Clone, Copy)]
pub struct CoAgentRef<'a> {
    pub state: &'a State,
    pub action: usize,
    pub next_state: Option<&'a State>,
}

impl Transition {
    /// Builds a transition from explicit co-agent lists.
    ///
    /// `next` carries the own next state and the co-agents' next states
    /// (aligned with `co_states`); pass `None` for a terminal transition.
    pub fn new(
        state: State,
        action: usize,
        co_states: Vec<State>,
        co_actions: Vec<usize>,
        reward: f64,
        next: Option<(State, Vec<Option<State>>)>,
    ) -> Result<Self> {
        if co_states.len() != co_actions.len() {
            return Err(Error::Input(format!(
                "{} co-agent states but {} co-agent actions",
                co_states.len(),
                co_actions.len()
            )));
        }
        let (next_state, next_states) = match next {
            Some((s, co_next)) => {
                if co_next.len() != co_states.len() {
                    return Err(Error::Input(format!(
                        "{} co-agents but {} next co-agent states",
                        co_states.len(),
                        co_next.len()
                    )));
                }
                (Some(s), co_next)
            }
            None => (None, vec![None; co_states.len()]),
        };
        Ok(Transition {
            state,
            action,
            reward,
            next_state,
            peers: Arc::new(Peers {
                states: co_states,
                actions: co_actions,
                next_states,
            }),
            co_agents: CoAgents::All,
        })
    }

    pub fn is_terminal(&self) -> bool {
        self.next_state.is_none()
    }

    pub fn co_agent_count(&self) -> usize {
        self.co_agents.count(self.peers.len())
    }

    pub fn co_agents(&self) -> impl Iterator<Item = CoAgentRef<'_>> + '_ {
        let peers = &*self.peers;
        self.co_agents.iter(peers.len()).map(move |j| CoAgentRef {
            state: &peers.states[j],
            action: peers.actions[j],
            next_state: peers.next_states[j].as_ref(),
        })
    }

    /// Co-agent actions at step `t`, in co-agent order.
    pub fn co_actions(&self) -> Vec<usize> {
        self.co_agents().map(|c| c.action).collect()
    }

    pub fn validate(&self, num_actions: usize) -> Result<()> {
        if self.action >= num_actions {
            return Err(Error::Input(format!(
                "action {} outside [0, {num_actions})",
                self.action
            )));
        }
        if self.peers.actions.len() != self.peers.states.len()
            || self.peers.next_states.len() != self.peers.states.len()
        {
            return Err(Error::Input("co-agent lists have unequal lengths".into()));
        }
        for c in self.co_agents() {
            if c.action >= num_actions {
                return Err(Error::Input(format!(
                    "co-agent action {} outside [0, {num_actions})",
                    c.action
                )));
            }
        }
        if let CoAgents::Indices(ix) = &self.co_agents {
            if ix.iter().any(|&j| j as usize >= self.peers.len()) {
                return Err(Error::Input("co-agent index out of range".into()));
            }
        }
        Ok(())
    }
}

/// The inputs every agent of a group needs to pick its next action.
#[derive(Debug, Clone, Copy)]
pub struct GroupView<'a> {
    /// Current state of each agent.
    pub states: &'a [State],
    /// Each agent's previous action, or `None` at the first step.
    pub last_actions: Option<&'a [usize]>,
    /// Co-agent set of each agent, indexing into `states`.
    pub co_agents: &'a [CoAgents],
}

impl GroupView<'_> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.co_agents.len() != self.states.len() {
            return Err(Error::Input("one co-agent set per agent required".into()));
        }
        if let Some(last) = self.last_actions {
            if last.len() != self.states.len() {
                return Err(Error::Input("one last action per agent required".into()));
            }
        }
        Ok(())
    }
}
