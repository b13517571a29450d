//! Market state: integral allocation multiplicities, per-good prices and
//! per-agent MBB ratios, tied together by the interval contract
//!
//! ```text
//!   u_{i,j,m(j,x_i)+1} <= alpha_i * p_j   and, for m(j,x_i) >= 1,
//!   alpha_i * p_j <= u_{i,j,m(j,x_i)}
//! ```
//!
//! which is the product form of `u_{i,j,m+1}/p_j <= alpha_i <= u_{i,j,m}/p_j`
//! (upper bound +infinity when the agent holds no copy, lower bound 0 when it
//! holds all of them). The product form needs no division, so goods whose
//! final greedy marginal was zero (price 0) stay well-defined. Tightness is
//! equality at a positive value; zero-priced goods therefore carry no tight
//! edges.

use thiserror::Error;

use crate::instance::RoundedInstance;
use crate::numerics::Rat;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MarketError {
    #[error("agent {agent} holds no copy of good {good}")]
    NothingToRemove { agent: usize, good: usize },
    #[error("MBB ratio of agent {agent} is not positive")]
    BadMbb { agent: usize },
}

/// Direction of a tight-graph edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TightEdge {
    /// `alpha_i = u_{i,j,m+1}/p_j`: one more copy of `j` is exactly affordable
    /// for `i`; traversing assigns a copy.
    AgentToGood { agent: usize, good: usize },
    /// `alpha_i = u_{i,j,m}/p_j` with `m >= 1`: the top copy of `j` held by
    /// `i` is exactly at value; traversing removes a copy.
    GoodToAgent { good: usize, agent: usize },
}

/// Adjacency of the tight graph, edge lists sorted by index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TightGraph {
    /// `agent_out[i]` = goods reachable from agent `i` via lower-tight edges.
    pub agent_out: Vec<Vec<usize>>,
    /// `good_out[j]` = agents reachable from good `j` via upper-tight edges.
    pub good_out: Vec<Vec<usize>>,
}

impl TightGraph {
    pub fn edges(&self) -> Vec<TightEdge> {
        let mut out = Vec::new();
        for (i, goods) in self.agent_out.iter().enumerate() {
            for &j in goods {
                out.push(TightEdge::AgentToGood { agent: i, good: j });
            }
        }
        for (j, agents) in self.good_out.iter().enumerate() {
            for &i in agents {
                out.push(TightEdge::GoodToAgent { good: j, agent: i });
            }
        }
        out
    }
}

/// Mutable market state over a rounded instance.
#[derive(Debug, Clone)]
pub struct MarketState<'a> {
    pub inst: &'a RoundedInstance,
    /// `mult[i][j] = m(j, x_i)`.
    pub mult: Vec<Vec<usize>>,
    pub price: Vec<Rat>,
    pub mbb: Vec<Rat>,
    util_sum: Vec<Rat>,
}

impl<'a> MarketState<'a> {
    pub fn from_parts(
        inst: &'a RoundedInstance,
        mult: Vec<Vec<usize>>,
        price: Vec<Rat>,
        mbb: Vec<Rat>,
    ) -> Self {
        let util_sum = (0..inst.n())
            .map(|i| {
                let mut s = Rat::zero();
                for j in 0..inst.m() {
                    for l in 0..mult[i][j] {
                        s = s + &inst.utils[i][j][l];
                    }
                }
                s
            })
            .collect();
        MarketState { inst, mult, price, mbb, util_sum }
    }

    pub fn n(&self) -> usize {
        self.inst.n()
    }

    pub fn m(&self) -> usize {
        self.inst.m()
    }

    /// `u_i(x_i)` under the rounded utilities.
    pub fn utility_sum(&self, agent: usize) -> &Rat {
        &self.util_sum[agent]
    }

    /// `P_i(x_i) = u_i(x_i) / alpha_i` (Eq. (2) of the interval contract).
    pub fn bundle_value(&self, agent: usize) -> Rat {
        debug_assert!(self.mbb[agent].is_positive(), "MBB ratios stay positive");
        &self.util_sum[agent] / &self.mbb[agent]
    }

    /// `P_k(x_k - j) = P_k(x_k) - u_{k,j,m(j,x_k)}/alpha_k`.
    pub fn bundle_value_minus_one(&self, agent: usize, good: usize) -> Result<Rat, MarketError> {
        let m = self.mult[agent][good];
        if m == 0 {
            return Err(MarketError::NothingToRemove { agent, good });
        }
        let top = &self.inst.utils[agent][good][m - 1];
        Ok(self.bundle_value(agent) - top / &self.mbb[agent])
    }

    pub fn bundle_is_empty(&self, agent: usize) -> bool {
        self.mult[agent].iter().all(|&m| m == 0)
    }

    /// Highest-value item in `x_k` (value `u_{k,j,m_j}/alpha_k`), lowest good
    /// index on ties; `None` for an empty bundle.
    pub fn top_item(&self, agent: usize) -> Option<(usize, Rat)> {
        let mut best: Option<(usize, Rat)> = None;
        for j in 0..self.m() {
            let m = self.mult[agent][j];
            if m == 0 {
                continue;
            }
            let v = &self.inst.utils[agent][j][m - 1] / &self.mbb[agent];
            match &best {
                Some((_, bv)) if *bv >= v => {}
                _ => best = Some((j, v)),
            }
        }
        best
    }

    /// `min_{j in x_k} P_k(x_k - j)` together with the removed good;
    /// `None` for an empty bundle.
    pub fn min_removal_value(&self, agent: usize) -> Option<(usize, Rat)> {
        self.top_item(agent)
            .map(|(j, v)| (j, self.bundle_value(agent) - v))
    }

    /// Capped means `u_i(x_i) >= c_i`; agents without a finite cap never are.
    pub fn is_capped_agent(&self, agent: usize) -> bool {
        match &self.inst.caps[agent] {
            Some(c) => &self.util_sum[agent] >= c,
            None => false,
        }
    }

    fn is_active(&self, agent: usize) -> bool {
        !self.inst.null_agent[agent] && !self.is_capped_agent(agent)
    }

    /// Uncapped agent minimizing `P_i(x_i)`, lowest index on ties; `None`
    /// when every agent is capped. Agents with all-zero utilities are never
    /// selected (their bundle value is identically zero).
    pub fn least_spending_uncapped(&self) -> Option<usize> {
        let mut best: Option<(usize, Rat)> = None;
        for i in 0..self.n() {
            if !self.is_active(i) {
                continue;
            }
            let p = self.bundle_value(i);
            match &best {
                Some((_, bp)) if *bp <= p => {}
                _ => best = Some((i, p)),
            }
        }
        best.map(|(i, _)| i)
    }

    /// ε-p-EF1: every uncapped agent `i` is within `(1+ε)` of every other
    /// agent's bundle minus one item. Returns the first violating pair
    /// `(i, k)` in index order, or `None` when the allocation passes.
    /// Agents `k` with empty bundles are skipped (an empty bundle cannot be
    /// envied), as are all-zero-utility agents in the role of `i`.
    pub fn eps_p_ef1_violation(&self, eps: &Rat) -> Option<(usize, usize)> {
        let one_plus = Rat::one() + eps;
        let min_removals: Vec<Option<Rat>> = (0..self.n())
            .map(|k| self.min_removal_value(k).map(|(_, v)| v))
            .collect();
        for i in 0..self.n() {
            if !self.is_active(i) {
                continue;
            }
            let threshold = &one_plus * &self.bundle_value(i);
            for (k, removal) in min_removals.iter().enumerate() {
                if k == i {
                    continue;
                }
                if let Some(v) = removal {
                    if *v > threshold {
                        return Some((i, k));
                    }
                }
            }
        }
        None
    }

    pub fn is_eps_p_ef1(&self, eps: &Rat) -> bool {
        self.eps_p_ef1_violation(eps).is_none()
    }

    /// Lower bound of Eq. (1) met with equality at a positive value.
    pub fn lower_tight(&self, agent: usize, good: usize) -> bool {
        let m = self.mult[agent][good];
        match self.inst.marginal(agent, good, m) {
            Some(u) if u.is_positive() => &self.mbb[agent] * &self.price[good] == *u,
            _ => false,
        }
    }

    /// Upper bound of Eq. (1) met with equality at a positive value;
    /// requires `m(j,x_i) >= 1`.
    pub fn upper_tight(&self, agent: usize, good: usize) -> bool {
        let m = self.mult[agent][good];
        if m == 0 {
            return false;
        }
        let u = &self.inst.utils[agent][good][m - 1];
        u.is_positive() && &self.mbb[agent] * &self.price[good] == *u
    }

    pub fn tight_graph(&self) -> TightGraph {
        let mut agent_out = vec![Vec::new(); self.n()];
        let mut good_out = vec![Vec::new(); self.m()];
        for i in 0..self.n() {
            for j in 0..self.m() {
                if self.lower_tight(i, j) {
                    agent_out[i].push(j);
                }
                if self.upper_tight(i, j) {
                    good_out[j].push(i);
                }
            }
        }
        TightGraph { agent_out, good_out }
    }

    /// Moves one copy of `good` from `from` to `to`, keeping the cached
    /// utility sums in step.
    pub(crate) fn move_copy(&mut self, good: usize, from: usize, to: usize) {
        let m_from = self.mult[from][good];
        assert!(m_from >= 1, "move_copy requires the source to hold a copy");
        self.util_sum[from] = &self.util_sum[from] - &self.inst.utils[from][good][m_from - 1];
        self.mult[from][good] -= 1;
        let m_to = self.mult[to][good];
        self.util_sum[to] = &self.util_sum[to] + &self.inst.utils[to][good][m_to];
        self.mult[to][good] += 1;
    }

    /// Multiplies the prices of the given goods and divides the MBB ratios of
    /// the given agents by `beta`.
    pub(crate) fn scale(&mut self, goods: &[usize], agents: &[usize], beta: &Rat) {
        for &j in goods {
            self.price[j] = &self.price[j] * beta;
        }
        for &i in agents {
            self.mbb[i] = &self.mbb[i] / beta;
        }
    }

    // -- invariant checkers (used by tests and the solve-time verifier) -----

    /// `sum_i m(j, x_i) = k_j` for every good.
    pub fn check_conservation(&self) -> Result<(), usize> {
        for j in 0..self.m() {
            let total: usize = (0..self.n()).map(|i| self.mult[i][j]).sum();
            if total != self.inst.copies[j] {
                return Err(j);
            }
        }
        Ok(())
    }

    /// Product-form Eq. (1) for every pair.
    pub fn check_interval_contract(&self) -> Result<(), (usize, usize)> {
        for i in 0..self.n() {
            for j in 0..self.m() {
                let m = self.mult[i][j];
                let budget = &self.mbb[i] * &self.price[j];
                if let Some(next) = self.inst.marginal(i, j, m) {
                    if *next > budget {
                        return Err((i, j));
                    }
                }
                if m >= 1 && budget > self.inst.utils[i][j][m - 1] {
                    return Err((i, j));
                }
            }
        }
        Ok(())
    }

    /// Local social-welfare optimality of the scaled utilities: for every
    /// good `j`, holder `i` and agent `k`,
    /// `u_{i,j,m_i}/alpha_i >= u_{k,j,m_k+1}/alpha_k`, so moving one copy
    /// never increases `sum_i u_i(x_i)/alpha_i`. Checked cross-multiplied.
    pub fn check_local_sw_optimality(&self) -> Result<(), (usize, usize, usize)> {
        for j in 0..self.m() {
            for i in 0..self.n() {
                let m_i = self.mult[i][j];
                if m_i == 0 {
                    continue;
                }
                let held = &self.inst.utils[i][j][m_i - 1];
                for k in 0..self.n() {
                    if k == i {
                        continue;
                    }
                    let m_k = self.mult[k][j];
                    if let Some(next) = self.inst.marginal(k, j, m_k) {
                        if held * &self.mbb[k] < next * &self.mbb[i] {
                            return Err((j, i, k));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators;
    use crate::instance::cap_and_round;
    use crate::numerics::Rat;

    fn eps() -> Rat {
        Rat::ratio(1, 100)
    }

    fn s_value() -> Rat {
        // smallest power of r = 101/100 that is >= 2r^2, i.e. r^72
        Rat::ratio(101, 100).pow(72)
    }

    /// The two-agent multi-copy instance of the envy example, at its optimal
    /// allocation: agent 1 holds 2 copies of good 1; agent 2 holds the rest.
    fn multicopy_state(rounded: &RoundedInstance) -> MarketState<'_> {
        let s = s_value();
        MarketState::from_parts(
            rounded,
            vec![vec![2, 0], vec![3, 2]],
            vec![s.clone(), s],
            vec![Rat::one(), Rat::one()],
        )
    }

    #[test]
    fn bundle_values_match_worked_example() {
        let inst = generators::multicopy_envy(&eps()).unwrap();
        let rounded = cap_and_round(&inst, &eps()).unwrap();
        let st = multicopy_state(&rounded);
        let s = s_value();
        assert_eq!(st.bundle_value(0), &Rat::from_int(2) * &s);
        assert_eq!(st.bundle_value(1), &Rat::from_int(5) * &s);
        // alpha_1 = r^2/2 rescales P_1 to 4s/r^2
        let mut st = st;
        st.mbb[0] = Rat::ratio(101, 100).pow(2) / Rat::from_int(2);
        assert_eq!(
            st.bundle_value(0),
            &Rat::from_int(4) * &s / Rat::ratio(101, 100).pow(2)
        );
    }

    #[test]
    fn bundle_value_of_empty_bundle_is_zero() {
        let inst = generators::multicopy_envy(&eps()).unwrap();
        let rounded = cap_and_round(&inst, &eps()).unwrap();
        let st = MarketState::from_parts(
            &rounded,
            vec![vec![0, 0], vec![5, 2]],
            vec![Rat::one(), Rat::one()],
            vec![Rat::one(), Rat::one()],
        );
        assert_eq!(st.bundle_value(0), Rat::zero());
        assert!(st.bundle_is_empty(0));
    }

    #[test]
    fn removal_values_and_errors() {
        let inst = generators::multicopy_envy(&eps()).unwrap();
        let rounded = cap_and_round(&inst, &eps()).unwrap();
        let st = multicopy_state(&rounded);
        let s = s_value();
        // removing either good from agent 2's bundle leaves 4s
        let four_s = &Rat::from_int(4) * &s;
        assert_eq!(st.bundle_value_minus_one(1, 0).unwrap(), four_s);
        assert_eq!(st.bundle_value_minus_one(1, 1).unwrap(), four_s);
        assert_eq!(st.min_removal_value(1).unwrap().1, four_s);
        // agent 1 holds nothing of good 2
        assert_eq!(
            st.bundle_value_minus_one(0, 1),
            Err(MarketError::NothingToRemove { agent: 0, good: 1 })
        );
    }

    #[test]
    fn singleton_bundle_removal_is_zero() {
        let inst = generators::multicopy_envy(&eps()).unwrap();
        let rounded = cap_and_round(&inst, &eps()).unwrap();
        let st = MarketState::from_parts(
            &rounded,
            vec![vec![1, 0], vec![4, 2]],
            vec![s_value(), s_value()],
            vec![Rat::one(), Rat::one()],
        );
        assert_eq!(st.bundle_value_minus_one(0, 0).unwrap(), Rat::zero());
    }

    #[test]
    fn ef1_violation_on_multicopy_initial_state() {
        let inst = generators::multicopy_envy(&eps()).unwrap();
        let rounded = cap_and_round(&inst, &eps()).unwrap();
        let st = multicopy_state(&rounded);
        assert_eq!(st.eps_p_ef1_violation(&eps()), Some((0, 1)));
        // no uncapped agents -> vacuous
        let capped = generators::capped_envy(&eps()).unwrap();
        let rounded_capped = cap_and_round(&capped, &eps()).unwrap();
        let st2 = MarketState::from_parts(
            &rounded_capped,
            vec![vec![1, 1, 1, 1], vec![0, 0, 0, 0]],
            vec![s_value(), s_value(), s_value(), s_value()],
            vec![Rat::one(), Rat::one()],
        );
        // agent 1 capped (4s > cap), agent 2 empty-handed but uncapped:
        // every removal from agent 1 leaves 3s > 0 -> violated
        assert_eq!(st2.eps_p_ef1_violation(&eps()), Some((1, 0)));
    }

    #[test]
    fn capped_agent_predicate() {
        let inst = generators::capped_envy(&eps()).unwrap();
        let rounded = cap_and_round(&inst, &eps()).unwrap();
        let s = s_value();
        let st = MarketState::from_parts(
            &rounded,
            vec![vec![1, 1, 0, 0], vec![0, 0, 1, 1]],
            vec![s.clone(), s.clone(), s.clone(), s],
            vec![Rat::one(), Rat::one()],
        );
        // bundle utility 2s exceeds the rounded cap of 3
        assert!(st.is_capped_agent(0));
        // uncapped-cap agents are never capped
        assert!(!st.is_capped_agent(1));
        // empty bundle below a finite cap
        let st2 = MarketState::from_parts(
            &rounded,
            vec![vec![0, 0, 0, 0], vec![1, 1, 1, 1]],
            vec![s_value(), s_value(), s_value(), s_value()],
            vec![Rat::one(), Rat::one()],
        );
        assert!(!st2.is_capped_agent(0));
    }

    #[test]
    fn least_spender_selection() {
        let inst = generators::multicopy_envy(&eps()).unwrap();
        let rounded = cap_and_round(&inst, &eps()).unwrap();
        let st = multicopy_state(&rounded);
        assert_eq!(st.least_spending_uncapped(), Some(0));
        // ties break to the lower index
        let tie = generators::capped_envy(&eps()).unwrap();
        let rounded_tie = cap_and_round(&tie, &eps()).unwrap();
        let st2 = MarketState::from_parts(
            &rounded_tie,
            vec![vec![1, 0, 0, 0], vec![0, 1, 0, 0]],
            vec![s_value(), s_value(), s_value(), s_value()],
            vec![Rat::one(), Rat::one()],
        );
        assert_eq!(st2.least_spending_uncapped(), Some(0));
    }

    #[test]
    fn tight_graph_of_multicopy_initial_state() {
        let inst = generators::multicopy_envy(&eps()).unwrap();
        let rounded = cap_and_round(&inst, &eps()).unwrap();
        let st = multicopy_state(&rounded);
        let g = st.tight_graph();
        // no edge leaves agent 1: its alpha sits strictly inside both lower
        // bounds (0 from good 1, 1/s from good 2)
        assert!(g.agent_out[0].is_empty());
        assert!(g.agent_out[1].is_empty());
        // upper-tight edges exist into both agents
        assert_eq!(g.good_out[0], vec![0, 1]);
        assert_eq!(g.good_out[1], vec![1]);
    }

    #[test]
    fn tight_graph_of_capped_optimal_state() {
        let inst = generators::capped_envy(&eps()).unwrap();
        let rounded = cap_and_round(&inst, &eps()).unwrap();
        let s = s_value();
        let st = MarketState::from_parts(
            &rounded,
            vec![vec![1, 0, 0, 0], vec![0, 1, 1, 1]],
            vec![s.clone(), s.clone(), s.clone(), s],
            vec![Rat::one(), Rat::one()],
        );
        let g = st.tight_graph();
        // agent 1 reaches the goods owned by agent 2, and those goods point
        // back at their holder
        assert_eq!(g.agent_out[0], vec![1, 2, 3]);
        assert_eq!(g.good_out[1], vec![1]);
        assert_eq!(g.good_out[2], vec![1]);
        assert_eq!(g.good_out[3], vec![1]);
        assert_eq!(g.agent_out[1], vec![0]);
        assert_eq!(g.good_out[0], vec![0]);
        assert!(st.check_interval_contract().is_ok());
        assert!(st.check_local_sw_optimality().is_ok());
    }

    #[test]
    fn strictly_interior_alpha_is_isolated() {
        // one agent holding one of two copies at a price strictly between
        // the bounds: no tight edge either way
        let inst = crate::instance::Instance::new(
            vec![None],
            vec![2],
            vec![vec![vec![Rat::from_int(4), Rat::from_int(1)]]],
        );
        let eps = Rat::ratio(1, 4);
        let rounded = cap_and_round(&inst, &eps).unwrap();
        let st = MarketState::from_parts(
            &rounded,
            vec![vec![1]],
            vec![Rat::from_int(2)],
            vec![Rat::one()],
        );
        let g = st.tight_graph();
        assert!(g.agent_out[0].is_empty());
        assert!(g.good_out[0].is_empty());
    }
}
