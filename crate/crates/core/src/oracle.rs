//! Exact ground truth at desk scale: brute-force NSW maximization over
//! per-good multiplicity compositions, and the plain utility-based
//! envy-free-up-to-one-good predicate.

use num_bigint::BigInt;
use thiserror::Error;

use crate::instance::ProblemView;
use crate::numerics::Rat;

/// Default refusal threshold for the `n^M` state-space guard.
pub const DEFAULT_MAX_STATES: u64 = 100_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("state space n^M = {states} exceeds the limit {limit}")]
    TooLarge { states: String, limit: u64 },
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// `max_x prod_i min(c_i, u_i(x_i))` exactly.
    pub best_nsw_nth_power: Rat,
    /// First optimal allocation in enumeration order, `[i][j] = m(j, x_i)`.
    pub allocation: Vec<Vec<usize>>,
    /// Number of optimal multiplicity matrices (agent relabelings counted).
    pub optima_count: u64,
    /// Leaves actually enumerated (compositions, not owner strings).
    pub leaves: u64,
}

/// Guard metric `n^M`.
pub fn state_space_size<V: ProblemView + ?Sized>(view: &V) -> BigInt {
    BigInt::from(view.n_agents()).pow(view.total_items() as u32)
}

struct Search<'v, V: ?Sized> {
    view: &'v V,
    mult: Vec<Vec<usize>>,
    sums: Vec<Rat>,
    best: Option<Rat>,
    best_alloc: Vec<Vec<usize>>,
    optima: u64,
    leaves: u64,
}

impl<V: ProblemView + ?Sized> Search<'_, V> {
    /// Distributes the remaining copies of good `j` over agents `i..`, then
    /// recurses into good `j+1`.
    fn go(&mut self, j: usize, i: usize, remaining: usize) {
        let n = self.view.n_agents();
        let m = self.view.n_goods();
        if j == m {
            self.leaves += 1;
            let mut product = Rat::one();
            for (idx, s) in self.sums.iter().enumerate() {
                let capped = match self.view.cap(idx) {
                    Some(c) if c < s => c.clone(),
                    _ => s.clone(),
                };
                product = product * capped;
            }
            match &self.best {
                Some(b) if *b > product => {}
                Some(b) if *b == product => self.optima += 1,
                _ => {
                    self.best = Some(product);
                    self.best_alloc = self.mult.clone();
                    self.optima = 1;
                }
            }
            return;
        }
        let max_take = if i + 1 == n { remaining..=remaining } else { 0..=remaining };
        for take in max_take.rev() {
            for l in 0..take {
                self.sums[i] = &self.sums[i] + self.view.utility(i, j, self.mult[i][j] + l);
            }
            self.mult[i][j] += take;
            if i + 1 == n {
                let next_remaining = if j + 1 < m { self.view.copies(j + 1) } else { 0 };
                self.go(j + 1, 0, next_remaining);
            } else {
                self.go(j, i + 1, remaining - take);
            }
            self.mult[i][j] -= take;
            for l in 0..take {
                self.sums[i] = &self.sums[i] - self.view.utility(i, j, self.mult[i][j] + l);
            }
        }
    }
}

/// Exhaustive NSW maximization. Copies of a good are interchangeable, so the
/// search enumerates per-good multiplicity compositions rather than per-copy
/// owner strings; agent utilities are maintained incrementally. The first
/// optimum in enumeration order is returned.
pub fn brute_force_opt<V: ProblemView + ?Sized>(
    view: &V,
    max_states: u64,
) -> Result<OracleResult, OracleError> {
    let states = state_space_size(view);
    if states > BigInt::from(max_states) {
        return Err(OracleError::TooLarge { states: states.to_string(), limit: max_states });
    }
    let n = view.n_agents();
    let m = view.n_goods();
    let mut search = Search {
        view,
        mult: vec![vec![0usize; m]; n],
        sums: vec![Rat::zero(); n],
        best: None,
        best_alloc: Vec::new(),
        optima: 0,
        leaves: 0,
    };
    search.go(0, 0, view.copies(0));
    Ok(OracleResult {
        best_nsw_nth_power: search.best.expect("at least one allocation exists"),
        allocation: search.best_alloc,
        optima_count: search.optima,
        leaves: search.leaves,
    })
}

/// Plain envy-freeness up to one good on raw utilities: for all agents
/// `i != k` with `x_k` nonempty there is a `j` in `x_k` with
/// `u_i(x_k - j) <= u_i(x_i)`. Returns the first violating pair.
pub fn utility_ef1_violation<V: ProblemView + ?Sized>(
    view: &V,
    allocation: &[Vec<usize>],
) -> Option<(usize, usize)> {
    let n = view.n_agents();
    let own: Vec<Rat> = (0..n).map(|i| view.bundle_utility(i, &allocation[i])).collect();
    for i in 0..n {
        for k in 0..n {
            if i == k || allocation[k].iter().all(|&c| c == 0) {
                continue;
            }
            // u_i(x_k) minus the copy of x_k that is most valuable to i
            let cross = view.bundle_utility(i, &allocation[k]);
            let mut best_drop: Option<Rat> = None;
            for (j, &mj) in allocation[k].iter().enumerate() {
                if mj == 0 {
                    continue;
                }
                let v = view.utility(i, j, mj - 1).clone();
                match &best_drop {
                    Some(b) if *b >= v => {}
                    _ => best_drop = Some(v),
                }
            }
            let left = cross - best_drop.expect("nonempty bundle");
            if left > own[i] {
                return Some((i, k));
            }
        }
    }
    None
}

pub fn is_utility_ef1<V: ProblemView + ?Sized>(view: &V, allocation: &[Vec<usize>]) -> bool {
    utility_ef1_violation(view, allocation).is_none()
}

/// Reads the `NSW_MAX_ORACLE_STATES` override, falling back to the default.
pub fn max_states_from_env() -> u64 {
    std::env::var("NSW_MAX_ORACLE_STATES")
        .ok()
        .and_then(|v| v.parse::<u64>().ok())
        .unwrap_or(DEFAULT_MAX_STATES)
}

#[derive(Debug, Clone, serde::Serialize)]
struct OracleJson {
    #[serde(rename = "bestNswNthPower")]
    best_nsw_nth_power: crate::solver::RatField,
    #[serde(rename = "nswFloat")]
    nsw_float: f64,
    allocation: Vec<Vec<u64>>,
    #[serde(rename = "optimaCount")]
    optima_count: u64,
    leaves: u64,
}

impl OracleResult {
    pub fn to_json_string(&self, n_agents: usize) -> String {
        let raw = OracleJson {
            best_nsw_nth_power: crate::solver::rat_field(&self.best_nsw_nth_power),
            nsw_float: self.best_nsw_nth_power.to_f64().powf(1.0 / n_agents.max(1) as f64),
            allocation: self
                .allocation
                .iter()
                .map(|row| row.iter().map(|&v| v as u64).collect())
                .collect(),
            optima_count: self.optima_count,
            leaves: self.leaves,
        };
        serde_json::to_string_pretty(&raw).expect("oracle serialization cannot fail")
    }
}
