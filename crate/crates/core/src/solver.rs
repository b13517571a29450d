//! The main solver loop: greedy initialization, improving-path swap
//! sequences over the tight graph, and price increases limited by the four
//! factors β₁..β₄, until the allocation is ε-p-EF1 (top-of-loop exit) or the
//! β₃ branch fires (terminal price step). Either way the final allocation is
//! 4ε-p-EF1 with respect to the final prices and MBB ratios.

use thiserror::Error;

use crate::instance::{cap_and_round, stats, Instance, RoundedInstance, ValidationError};
use crate::market::MarketState;
use crate::numerics::{floor_log_ratio, power_of_r_exponent, Rat};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid instance: {}", format_validation(.0))]
    Validation(Vec<ValidationError>),
    #[error(transparent)]
    Rounding(#[from] crate::instance::RoundingError),
    #[error("iteration cap {cap} exceeded after {iterations} iterations; this falsifies the running-time bound and is treated as a bug")]
    IterationCapExceeded { iterations: u64, cap: String },
    #[error("no finite price-increase factor exists for least spender {agent}")]
    MarketStuck { agent: usize },
}

fn format_validation(errs: &[ValidationError]) -> String {
    errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

/// Alternating tight-graph path `(i = a_0, g_1, a_1, ..., g_h, a_h)`; each
/// step is `(good, agent)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImprovingPath {
    pub start: usize,
    pub steps: Vec<(usize, usize)>,
}

impl ImprovingPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// One executed swap sequence along an improving path, with the pre-swap
/// values needed to audit its post-conditions.
#[derive(Debug, Clone)]
pub struct SwapReport {
    pub path: ImprovingPath,
    /// Final value of the walk index: copies moved for `h' < l <= h`.
    pub h_prime: usize,
    /// `(good, from, to)` in execution order (walking the path backwards).
    pub moves: Vec<(usize, usize, usize)>,
    /// `(1+eps) * P_i(x_i)` at the start of the sequence.
    pub threshold: Rat,
    /// `P_{a_h}(x_{a_h})` before the sequence.
    pub pre_terminal_value: Rat,
    /// `P_{a_0}(x_{a_0})` before the sequence.
    pub pre_start_value: Rat,
    /// `P_{a_l}(x_{a_l} - g_l)` before the sequence, index `l-1`.
    pub pre_removals: Vec<Rat>,
}

/// One price increase: the reachable set S, the four limiting factors
/// (`None` = +infinity), the applied factor, and whether the β₃ rule ended
/// the run.
#[derive(Debug, Clone)]
pub struct PriceStep {
    pub s_agents: Vec<usize>,
    pub s_goods: Vec<usize>,
    pub beta1: Option<Rat>,
    pub beta2: Option<Rat>,
    pub beta3: Option<Rat>,
    pub beta4: Option<Rat>,
    pub beta: Rat,
    pub terminated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The top-of-loop ε-p-EF1 check passed.
    Ef1Check,
    /// β₃ was the binding factor of a price increase.
    Beta3Break,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    /// Loop iterations that performed work (a swap sequence or a price
    /// increase); the final check-only pass is not counted.
    pub iterations: u64,
    pub swap_sequences: u64,
    pub price_increases: u64,
    /// Longest run of consecutive swap iterations with the same least
    /// spender and no intervening price increase.
    pub max_same_spender_run: u64,
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub eps: Rat,
    /// `allocation[i][j] = m(j, x_i)`.
    pub allocation: Vec<Vec<usize>>,
    pub prices: Vec<Rat>,
    pub mbb: Vec<Rat>,
    pub termination: Termination,
    pub counters: Counters,
}

/// Observer hooks for auditing every state transition.
pub enum SolveEvent<'e> {
    Init,
    SwapSequence(&'e SwapReport),
    PriceIncrease(&'e PriceStep),
}

pub trait SolveObserver {
    fn observe(&mut self, event: &SolveEvent<'_>, state: &MarketState<'_>);
}

pub struct NoopObserver;

impl SolveObserver for NoopObserver {
    fn observe(&mut self, _event: &SolveEvent<'_>, _state: &MarketState<'_>) {}
}

/// Greedy initialization: each copy of each good goes to the agent with the
/// highest marginal utility (ties: least bundle utility so far, then lowest
/// index); the price of a good is the marginal its last copy was taken at;
/// all MBB ratios start at 1. The interval contract holds afterwards.
pub fn greedy_init(inst: &RoundedInstance) -> MarketState<'_> {
    let n = inst.n();
    let m = inst.m();
    let mut mult = vec![vec![0usize; m]; n];
    let mut sums = vec![Rat::zero(); n];
    let mut price = vec![Rat::zero(); m];
    for j in 0..m {
        let mut last = 0usize;
        for _copy in 0..inst.copies[j] {
            let mut best = 0usize;
            for i in 1..n {
                let cand = &inst.utils[i][j][mult[i][j]];
                let cur = &inst.utils[best][j][mult[best][j]];
                if cand > cur || (cand == cur && sums[i] < sums[best]) {
                    best = i;
                }
            }
            sums[best] = &sums[best] + &inst.utils[best][j][mult[best][j]];
            mult[best][j] += 1;
            last = best;
        }
        price[j] = inst.utils[last][j][mult[last][j] - 1].clone();
    }
    MarketState::from_parts(inst, mult, price, vec![Rat::one(); n])
}

/// Shortest improving path from `start` by layered BFS over the tight graph.
///
/// Candidate terminal edges are scanned in (good index, agent index) order
/// within each layer, and an agent first reached in the same layer is still
/// tested against later same-layer in-edges. Agents reached at an earlier
/// layer passed their own terminal test there and act as pass-throughs, so
/// `None` means `start` does not ε-p-envy any agent reachable in the tight
/// graph.
pub fn find_improving_path(
    st: &MarketState<'_>,
    start: usize,
    threshold: &Rat,
) -> Option<ImprovingPath> {
    let n = st.n();
    let m = st.m();
    let mut agent_parent: Vec<Option<usize>> = vec![None; n];
    let mut good_parent: Vec<Option<usize>> = vec![None; m];
    let mut agent_seen = vec![false; n];
    let mut good_seen = vec![false; m];
    agent_seen[start] = true;
    let mut agent_frontier = vec![start];

    let reconstruct = |terminal_good: usize,
                       terminal_agent: usize,
                       good_parent: &[Option<usize>],
                       agent_parent: &[Option<usize>]| {
        let mut rev = vec![(terminal_good, terminal_agent)];
        let mut agent = good_parent[terminal_good].expect("good was discovered");
        while agent != start {
            let g = agent_parent[agent].expect("agent was discovered");
            rev.push((g, agent));
            agent = good_parent[g].expect("good was discovered");
        }
        rev.reverse();
        ImprovingPath { start, steps: rev }
    };

    loop {
        let mut good_frontier = Vec::new();
        for &a in &agent_frontier {
            for j in 0..m {
                if !good_seen[j] && st.lower_tight(a, j) {
                    good_seen[j] = true;
                    good_parent[j] = Some(a);
                    good_frontier.push(j);
                }
            }
        }
        if good_frontier.is_empty() {
            return None;
        }
        good_frontier.sort_unstable();

        let mut next_agents = Vec::new();
        let mut in_this_layer = vec![false; n];
        for &j in &good_frontier {
            for a in 0..n {
                if !st.upper_tight(a, j) {
                    continue;
                }
                if agent_seen[a] && !in_this_layer[a] {
                    continue;
                }
                let removal = st
                    .bundle_value_minus_one(a, j)
                    .expect("upper-tight edge implies a held copy");
                if removal > *threshold {
                    let path = reconstruct(j, a, &good_parent, &agent_parent);
                    debug_assert!(path_is_improving(st, &path, threshold));
                    return Some(path);
                }
                if !agent_seen[a] {
                    agent_seen[a] = true;
                    in_this_layer[a] = true;
                    agent_parent[a] = Some(j);
                    next_agents.push(a);
                }
            }
        }
        if next_agents.is_empty() {
            return None;
        }
        agent_frontier = next_agents;
    }
}

/// Defining conditions of an improving path: simple, alternating tight
/// edges, every interior removal within threshold, the terminal one above it.
pub fn path_is_improving(st: &MarketState<'_>, path: &ImprovingPath, threshold: &Rat) -> bool {
    if path.steps.is_empty() {
        return false;
    }
    let mut seen_agents = vec![path.start];
    let mut seen_goods = Vec::new();
    let mut prev_agent = path.start;
    let h = path.steps.len();
    for (idx, &(g, a)) in path.steps.iter().enumerate() {
        if seen_goods.contains(&g) || seen_agents.contains(&a) {
            return false;
        }
        seen_goods.push(g);
        seen_agents.push(a);
        if !st.lower_tight(prev_agent, g) || !st.upper_tight(a, g) {
            return false;
        }
        let removal = match st.bundle_value_minus_one(a, g) {
            Ok(v) => v,
            Err(_) => return false,
        };
        let last = idx + 1 == h;
        if last && removal <= *threshold {
            return false;
        }
        if !last && removal > *threshold {
            return false;
        }
        prev_agent = a;
    }
    true
}

/// Walks the path from its far end, moving one copy of `g_l` from `a_l` to
/// `a_{l-1}` while the current bundle minus `g_l` is still worth more than
/// the threshold. Every move traverses tight edges, so the interval contract
/// survives.
pub fn execute_swaps(
    st: &mut MarketState<'_>,
    path: &ImprovingPath,
    threshold: &Rat,
) -> SwapReport {
    let h = path.steps.len();
    let pre_terminal_value = st.bundle_value(path.steps[h - 1].1);
    let pre_start_value = st.bundle_value(path.start);
    let pre_removals: Vec<Rat> = path
        .steps
        .iter()
        .map(|&(g, a)| st.bundle_value_minus_one(a, g).expect("path holds a copy"))
        .collect();
    let mut moves = Vec::new();
    let mut l = h;
    while l >= 1 {
        let (g, a) = path.steps[l - 1];
        let removal = st.bundle_value_minus_one(a, g).expect("path holds a copy");
        if removal <= *threshold {
            break;
        }
        let receiver = if l == 1 { path.start } else { path.steps[l - 2].1 };
        st.move_copy(g, a, receiver);
        moves.push((g, a, receiver));
        l -= 1;
    }
    SwapReport {
        path: path.clone(),
        h_prime: l,
        moves,
        threshold: threshold.clone(),
        pre_terminal_value,
        pre_start_value,
        pre_removals,
    }
}

/// Agents and goods reachable from `start` in the tight graph (closure used
/// by the price increase).
pub fn reachable_set(st: &MarketState<'_>, start: usize) -> (Vec<bool>, Vec<bool>) {
    let n = st.n();
    let m = st.m();
    let mut agents = vec![false; n];
    let mut goods = vec![false; m];
    agents[start] = true;
    let mut agent_frontier = vec![start];
    while !agent_frontier.is_empty() {
        let mut good_frontier = Vec::new();
        for &a in &agent_frontier {
            for j in 0..m {
                if !goods[j] && st.lower_tight(a, j) {
                    goods[j] = true;
                    good_frontier.push(j);
                }
            }
        }
        agent_frontier = Vec::new();
        for &j in &good_frontier {
            for a in 0..n {
                if !agents[a] && st.upper_tight(a, j) {
                    agents[a] = true;
                    agent_frontier.push(a);
                }
            }
        }
    }
    (agents, goods)
}

fn opt_min(a: Option<Rat>, b: Rat) -> Option<Rat> {
    match a {
        Some(v) if v <= b => Some(v),
        _ => Some(b),
    }
}

fn le_with_inf(a: &Rat, b: &Option<Rat>) -> bool {
    match b {
        Some(v) => a <= v,
        None => true,
    }
}

/// Computes β₁..β₄ for the reachable set, applies
/// `β = min(β₁, β₂, max(1, β₃), β₄)` (prices of S-goods multiplied, MBB
/// ratios of S-agents divided), and reports whether β₃ was binding.
///
/// Conventions for empty quantifications: β₁, β₂, β₄ default to +infinity;
/// β₃ is 0 when no agent outside S holds anything of value (termination
/// fires), and +infinity when the least spender's bundle value is 0 while a
/// positive violator exists (progress then comes from β₁/β₂ growing S).
pub fn price_increase(
    st: &mut MarketState<'_>,
    least: usize,
    s_agents_mask: &[bool],
    s_goods_mask: &[bool],
    eps: &Rat,
) -> Result<PriceStep, SolveError> {
    let n = st.n();
    let m = st.m();
    let r = Rat::one() + eps;
    let p_least = st.bundle_value(least);

    let mut beta1: Option<Rat> = None;
    for k in 0..n {
        if !s_agents_mask[k] {
            continue;
        }
        for j in 0..m {
            if s_goods_mask[j] {
                continue;
            }
            if let Some(u) = st.inst.marginal(k, j, st.mult[k][j]) {
                if u.is_positive() {
                    let cand = &(&st.mbb[k] * &st.price[j]) / u;
                    debug_assert!(cand >= Rat::one());
                    beta1 = opt_min(beta1, cand);
                }
            }
        }
    }

    let mut beta2: Option<Rat> = None;
    for k in 0..n {
        if s_agents_mask[k] {
            continue;
        }
        for j in 0..m {
            if !s_goods_mask[j] {
                continue;
            }
            let held = st.mult[k][j];
            if held == 0 {
                continue;
            }
            let u = &st.inst.utils[k][j][held - 1];
            if !u.is_positive() {
                continue;
            }
            let cand = u / &(&st.price[j] * &st.mbb[k]);
            debug_assert!(cand >= Rat::one());
            beta2 = opt_min(beta2, cand);
        }
    }

    let mut worst_outside: Option<Rat> = None;
    for k in 0..n {
        if s_agents_mask[k] {
            continue;
        }
        if let Some((_, v)) = st.min_removal_value(k) {
            match &worst_outside {
                Some(w) if *w >= v => {}
                _ => worst_outside = Some(v),
            }
        }
    }
    let beta3: Option<Rat> = match worst_outside {
        None => Some(Rat::zero()),
        Some(w) if w.is_zero() => Some(Rat::zero()),
        Some(w) => {
            if p_least.is_zero() {
                None
            } else {
                Some(&w / &(&r.pow(2) * &p_least))
            }
        }
    };

    let mut outside_least: Option<(usize, Rat)> = None;
    for k in 0..n {
        if s_agents_mask[k] || st.inst.null_agent[k] || st.is_capped_agent(k) {
            continue;
        }
        let p = st.bundle_value(k);
        match &outside_least {
            Some((_, bp)) if *bp <= p => {}
            _ => outside_least = Some((k, p)),
        }
    }
    let beta4: Option<Rat> = match outside_least {
        None => None,
        Some((_, p_h)) => {
            if p_least.is_zero() {
                None
            } else {
                let s = floor_log_ratio(&(&p_h / &p_least), &r).expect("positive ratio");
                Some(r.pow(s))
            }
        }
    };

    let beta3_floored = beta3.clone().map(|b| b.max(Rat::one()));
    let mut beta: Option<Rat> = None;
    for v in [&beta1, &beta2, &beta3_floored, &beta4].into_iter().flatten() {
        beta = opt_min(beta, v.clone());
    }
    let beta = beta.ok_or(SolveError::MarketStuck { agent: least })?;

    let terminated = match &beta3 {
        Some(b3) => {
            le_with_inf(b3, &beta1) && le_with_inf(b3, &beta2) && le_with_inf(b3, &beta4)
        }
        None => false,
    };

    let s_goods: Vec<usize> = (0..m).filter(|&j| s_goods_mask[j]).collect();
    let s_agents: Vec<usize> = (0..n).filter(|&i| s_agents_mask[i]).collect();
    st.scale(&s_goods, &s_agents, &beta);

    Ok(PriceStep {
        s_agents,
        s_goods,
        beta1,
        beta2,
        beta3,
        beta4,
        beta,
        terminated,
    })
}

/// Runs the full pipeline (validate, cap and round, greedy init, main loop)
/// and returns the terminal allocation with prices, MBB ratios and counters.
pub fn solve(inst: &Instance, eps: &Rat) -> Result<SolverOutput, SolveError> {
    solve_with_observer(inst, eps, &mut NoopObserver)
}

pub fn solve_with_observer(
    inst: &Instance,
    eps: &Rat,
    observer: &mut dyn SolveObserver,
) -> Result<SolverOutput, SolveError> {
    inst.validate().map_err(SolveError::Validation)?;
    let rounded = cap_and_round(inst, eps)?;
    let inst_stats = stats(&rounded);
    let cap_u64 = inst_stats.cap_saturating_u64();
    // debug builds re-check every run invariant after every event
    let mut verifier = if cfg!(debug_assertions) {
        Some(VerifyingObserver::new(eps))
    } else {
        None
    };
    let mut market = greedy_init(&rounded);
    let notify = |event: &SolveEvent<'_>, state: &MarketState<'_>, verifier: &mut Option<VerifyingObserver>, observer: &mut dyn SolveObserver| {
        if let Some(v) = verifier.as_mut() {
            v.observe(event, state);
        }
        observer.observe(event, state);
    };
    notify(&SolveEvent::Init, &market, &mut verifier, observer);

    let mut counters = Counters::default();
    let mut last_swap_spender: Option<usize> = None;
    let mut run = 0u64;
    let one_plus = Rat::one() + eps;

    let termination = loop {
        if market.eps_p_ef1_violation(eps).is_none() {
            break Termination::Ef1Check;
        }
        counters.iterations += 1;
        if counters.iterations > cap_u64 {
            return Err(SolveError::IterationCapExceeded {
                iterations: counters.iterations,
                cap: inst_stats.iteration_cap.to_string(),
            });
        }
        let least = market
            .least_spending_uncapped()
            .expect("an EF1 violation names an uncapped agent");
        let threshold = &one_plus * &market.bundle_value(least);
        match find_improving_path(&market, least, &threshold) {
            Some(path) => {
                if last_swap_spender == Some(least) {
                    run += 1;
                } else {
                    run = 1;
                    last_swap_spender = Some(least);
                }
                counters.max_same_spender_run = counters.max_same_spender_run.max(run);
                let report = execute_swaps(&mut market, &path, &threshold);
                counters.swap_sequences += 1;
                notify(&SolveEvent::SwapSequence(&report), &market, &mut verifier, observer);
            }
            None => {
                run = 0;
                last_swap_spender = None;
                let (s_agents, s_goods) = reachable_set(&market, least);
                let step = price_increase(&mut market, least, &s_agents, &s_goods, eps)?;
                counters.price_increases += 1;
                notify(&SolveEvent::PriceIncrease(&step), &market, &mut verifier, observer);
                if step.terminated {
                    break Termination::Beta3Break;
                }
            }
        }
    };

    Ok(SolverOutput {
        eps: eps.clone(),
        allocation: market.mult.clone(),
        prices: market.price.clone(),
        mbb: market.mbb.clone(),
        termination,
        counters,
    })
}

impl SolverOutput {
    /// Rebuilds the market state over a rounding of the same instance.
    pub fn to_market_state<'a>(&self, rounded: &'a RoundedInstance) -> MarketState<'a> {
        MarketState::from_parts(
            rounded,
            self.allocation.clone(),
            self.prices.clone(),
            self.mbb.clone(),
        )
    }
}

/// Observer that checks every run invariant after every event and panics
/// with a diagnostic on the first violation. Used by the test suites.
pub struct VerifyingObserver {
    eps: Rat,
    r: Rat,
    pub events: u64,
    prev_min_spend: Option<Rat>,
    prev_worst: Option<Rat>,
}

impl VerifyingObserver {
    pub fn new(eps: &Rat) -> Self {
        VerifyingObserver {
            eps: eps.clone(),
            r: Rat::one() + eps,
            events: 0,
            prev_min_spend: None,
            prev_worst: None,
        }
    }

    fn min_uncapped_spend(&self, st: &MarketState<'_>) -> Option<Rat> {
        st.least_spending_uncapped().map(|i| st.bundle_value(i))
    }

    fn worst_violator(&self, st: &MarketState<'_>) -> Option<Rat> {
        (0..st.n())
            .filter_map(|k| st.min_removal_value(k).map(|(_, v)| v))
            .max()
    }

    fn check_swap_bullets(&self, report: &SwapReport, st: &MarketState<'_>) {
        let path = &report.path;
        let h = path.steps.len();
        let hp = report.h_prime;
        let thr = &report.threshold;
        // bullet 1: terminal agent still above threshold after losing g_h
        let a_h = path.steps[h - 1].1;
        let post_terminal = st.bundle_value(a_h);
        assert!(
            report.pre_terminal_value >= post_terminal && post_terminal > *thr,
            "swap bullet 1 violated at agent {a_h}"
        );
        if hp >= 1 {
            // bullet 2: the last receiver could absorb the copy it gained
            let (g_hp, a_hp) = path.steps[hp - 1];
            let rm = st.bundle_value_minus_one(a_hp, g_hp).expect("receiver holds g_h'");
            assert!(rm <= *thr, "swap bullet 2 violated at agent {a_hp}");
        } else {
            // bullet 3: the start agent gained g_1; removing it restores the
            // previous bundle value exactly
            let g1 = path.steps[0].0;
            let rm = st.bundle_value_minus_one(path.start, g1).expect("start gained g_1");
            assert!(
                rm == report.pre_start_value && rm <= *thr,
                "swap bullet 3 violated at agent {}",
                path.start
            );
        }
        // bullet 4: interior agents swapped g_{l+1} for g_l
        for l in (hp + 1)..h {
            let a_l = path.steps[l - 1].1;
            let g_next = path.steps[l].0;
            let post = st.bundle_value(a_l);
            assert!(post > *thr, "swap bullet 4 (value) violated at agent {a_l}");
            let rm = st.bundle_value_minus_one(a_l, g_next).expect("interior gained g_{l+1}");
            assert!(
                rm == report.pre_removals[l - 1] && rm <= *thr,
                "swap bullet 4 (removal) violated at agent {a_l}"
            );
        }
        // bullet 5: agents before h' are untouched
        for l in 1..hp {
            let (g_l, a_l) = path.steps[l - 1];
            let rm = st.bundle_value_minus_one(a_l, g_l).expect("untouched prefix");
            assert!(
                rm == report.pre_removals[l - 1] && rm <= *thr,
                "swap bullet 5 violated at agent {a_l}"
            );
        }
    }

    fn check_state(&mut self, st: &MarketState<'_>, terminal_price_step: bool) {
        st.check_conservation()
            .unwrap_or_else(|j| panic!("conservation broken at good {j}"));
        st.check_interval_contract()
            .unwrap_or_else(|(i, j)| panic!("interval contract broken at agent {i}, good {j}"));
        st.check_local_sw_optimality().unwrap_or_else(|(j, i, k)| {
            panic!("scaled social welfare not locally optimal at good {j} between agents {i} and {k}")
        });
        if !terminal_price_step {
            for (j, p) in st.price.iter().enumerate() {
                if p.is_positive() {
                    assert!(
                        power_of_r_exponent(p, &self.r).is_some(),
                        "price of good {j} is not a power of r: {p}"
                    );
                }
            }
            for (i, a) in st.mbb.iter().enumerate() {
                assert!(
                    power_of_r_exponent(a, &self.r).is_some(),
                    "MBB ratio of agent {i} is not a power of r: {a}"
                );
            }
        }
        let min_spend = self.min_uncapped_spend(st);
        if let (Some(prev), Some(cur)) = (&self.prev_min_spend, &min_spend) {
            assert!(cur >= prev, "least uncapped spend decreased: {prev} -> {cur}");
        }
        let worst = self.worst_violator(st);
        if !terminal_price_step {
            if let (Some(prev_w), Some(prev_m)) = (&self.prev_worst, &self.prev_min_spend) {
                let bound = &(&Rat::one() + &self.eps) * prev_m;
                if *prev_w > bound {
                    if let Some(w) = &worst {
                        assert!(
                            w <= prev_w,
                            "worst violator increased while above threshold: {prev_w} -> {w}"
                        );
                    }
                }
            }
        }
        self.prev_min_spend = min_spend;
        self.prev_worst = worst;
    }
}

impl SolveObserver for VerifyingObserver {
    fn observe(&mut self, event: &SolveEvent<'_>, state: &MarketState<'_>) {
        self.events += 1;
        let terminal = matches!(event, SolveEvent::PriceIncrease(step) if step.terminated);
        if let SolveEvent::SwapSequence(report) = event {
            self.check_swap_bullets(report, state);
        }
        self.check_state(state, terminal);
    }
}

// ---------------------------------------------------------------------------
// JSON wire format for solver output
// ---------------------------------------------------------------------------

mod json {
    use serde::{Deserialize, Serialize};

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub(crate) struct RatField {
        pub num: String,
        pub den: String,
        pub float: f64,
    }

    #[derive(Serialize, Deserialize)]
    pub(super) struct CountersJson {
        pub iterations: u64,
        pub swap_sequences: u64,
        pub price_increases: u64,
        pub max_same_spender_run: u64,
    }

    #[derive(Serialize, Deserialize)]
    pub(super) struct OutputJson {
        pub epsilon: String,
        pub allocation: Vec<Vec<u64>>,
        pub prices: Vec<RatField>,
        pub mbb: Vec<RatField>,
        pub termination: String,
        pub counters: CountersJson,
    }
}

pub(crate) use json::RatField;

pub(crate) fn rat_field(v: &Rat) -> RatField {
    RatField {
        num: v.numer().to_string(),
        den: v.denom().to_string(),
        float: v.to_f64(),
    }
}

fn rat_from_field(f: &RatField) -> Result<Rat, String> {
    let num = f.num.parse().map_err(|_| format!("bad numerator {}", f.num))?;
    let den = f.den.parse().map_err(|_| format!("bad denominator {}", f.den))?;
    Ok(Rat::new(num, den))
}

impl SolverOutput {
    pub fn to_json_string(&self) -> String {
        let raw = json::OutputJson {
            epsilon: self.eps.to_string(),
            allocation: self
                .allocation
                .iter()
                .map(|row| row.iter().map(|&v| v as u64).collect())
                .collect(),
            prices: self.prices.iter().map(rat_field).collect(),
            mbb: self.mbb.iter().map(rat_field).collect(),
            termination: match self.termination {
                Termination::Ef1Check => "ef1_check".into(),
                Termination::Beta3Break => "beta3_break".into(),
            },
            counters: json::CountersJson {
                iterations: self.counters.iterations,
                swap_sequences: self.counters.swap_sequences,
                price_increases: self.counters.price_increases,
                max_same_spender_run: self.counters.max_same_spender_run,
            },
        };
        serde_json::to_string_pretty(&raw).expect("output serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<SolverOutput, String> {
        let raw: json::OutputJson = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let eps = Rat::parse(&raw.epsilon).map_err(|e| e.to_string())?;
        let termination = match raw.termination.as_str() {
            "ef1_check" => Termination::Ef1Check,
            "beta3_break" => Termination::Beta3Break,
            other => return Err(format!("unknown termination kind `{other}`")),
        };
        Ok(SolverOutput {
            eps,
            allocation: raw
                .allocation
                .iter()
                .map(|row| row.iter().map(|&v| v as usize).collect())
                .collect(),
            prices: raw.prices.iter().map(rat_from_field).collect::<Result<_, _>>()?,
            mbb: raw.mbb.iter().map(rat_from_field).collect::<Result<_, _>>()?,
            termination,
            counters: Counters {
                iterations: raw.counters.iterations,
                swap_sequences: raw.counters.swap_sequences,
                price_increases: raw.counters.price_increases,
                max_same_spender_run: raw.counters.max_same_spender_run,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators;
    use crate::instance::Instance;

    fn eps100() -> Rat {
        Rat::ratio(1, 100)
    }

    fn r100() -> Rat {
        Rat::ratio(101, 100)
    }

    #[test]
    fn greedy_init_multicopy_matches_worked_example() {
        let inst = generators::multicopy_envy(&eps100()).unwrap();
        let rounded = cap_and_round(&inst, &eps100()).unwrap();
        let st = greedy_init(&rounded);
        let s = generators::envy_scale(&eps100()).unwrap();
        assert_eq!(st.mult, vec![vec![2, 0], vec![3, 2]]);
        assert_eq!(st.price, vec![s.clone(), s]);
        assert_eq!(st.mbb, vec![Rat::one(), Rat::one()]);
        assert!(st.check_interval_contract().is_ok());
    }

    #[test]
    fn greedy_init_single_agent_takes_everything() {
        let inst = Instance::new(
            vec![None],
            vec![2, 1],
            vec![vec![vec![Rat::from_int(4), Rat::from_int(2)], vec![Rat::from_int(3)]]],
        );
        let rounded = cap_and_round(&inst, &Rat::ratio(1, 4)).unwrap();
        let st = greedy_init(&rounded);
        assert_eq!(st.mult, vec![vec![2, 1]]);
        // price = utility of the last copy assigned
        assert_eq!(st.price[0], rounded.utils[0][0][1]);
        assert_eq!(st.price[1], rounded.utils[0][1][0]);
    }

    #[test]
    fn greedy_init_lower_bound_pairs_goods() {
        let inst = generators::lower_bound(3, 1, 666).unwrap();
        let rounded = cap_and_round(&inst, &Rat::ratio(1, 4)).unwrap();
        let st = greedy_init(&rounded);
        // one unit good each, then the two K goods to the least spenders
        assert_eq!(st.mult[0], vec![1, 0, 0, 1, 0]);
        assert_eq!(st.mult[1], vec![0, 1, 0, 0, 1]);
        assert_eq!(st.mult[2], vec![0, 0, 1, 0, 0]);
        // prices equal the rounded values
        assert_eq!(st.price[0], Rat::one());
        assert_eq!(st.price[3], rounded.utils[0][3][0]);
    }

    #[test]
    fn improving_path_found_in_capped_optimal_state() {
        let inst = generators::capped_envy(&eps100()).unwrap();
        let rounded = cap_and_round(&inst, &eps100()).unwrap();
        let s = generators::envy_scale(&eps100()).unwrap();
        let mut st = MarketState::from_parts(
            &rounded,
            vec![vec![1, 0, 0, 0], vec![0, 1, 1, 1]],
            vec![s.clone(), s.clone(), s.clone(), s],
            vec![Rat::one(), Rat::one()],
        );
        assert_eq!(st.least_spending_uncapped(), Some(0));
        let threshold = &(&Rat::one() + &eps100()) * &st.bundle_value(0);
        let path = find_improving_path(&st, 0, &threshold).expect("path exists");
        assert_eq!(path, ImprovingPath { start: 0, steps: vec![(1, 1)] });
        let report = execute_swaps(&mut st, &path, &threshold);
        assert_eq!(report.moves, vec![(1, 1, 0)]);
        assert_eq!(st.mult, vec![vec![1, 1, 0, 0], vec![0, 0, 1, 1]]);
        assert!(st.is_eps_p_ef1(&eps100()));
    }

    /// Chain of four agents with a three-edge tight path from the least
    /// spender to a remote violator. With an anchor good keeping the
    /// threshold positive, the swap walk stops after one move (h' = 2);
    /// without it, the cascade runs all the way back to the start.
    fn chain_instance(with_anchor: bool) -> Instance {
        let r6 = Rat::ratio(5, 4).pow(6);
        let z = Rat::zero;
        let one = Rat::one;
        let mut utils = vec![
            vec![vec![one()], vec![one()], vec![z()], vec![z()], vec![z()]],
            vec![vec![z()], vec![one()], vec![one()], vec![z()], vec![z()]],
            vec![vec![z()], vec![z()], vec![one()], vec![one()], vec![z()]],
            vec![vec![z()], vec![z()], vec![z()], vec![one()], vec![r6]],
        ];
        if !with_anchor {
            for row in utils.iter_mut() {
                row.remove(0);
            }
        }
        let m = utils[0].len();
        Instance::new(vec![None; 4], vec![1; m], utils)
    }

    #[test]
    fn long_path_stops_at_the_first_satisfied_receiver() {
        let eps = Rat::ratio(1, 4);
        let inst = chain_instance(true);
        let rounded = cap_and_round(&inst, &eps).unwrap();
        let r6 = Rat::ratio(5, 4).pow(6);
        let mut st = MarketState::from_parts(
            &rounded,
            vec![
                vec![1, 0, 0, 0, 0],
                vec![0, 1, 0, 0, 0],
                vec![0, 0, 1, 0, 0],
                vec![0, 0, 0, 1, 1],
            ],
            vec![Rat::one(), Rat::one(), Rat::one(), Rat::one(), r6.clone()],
            vec![Rat::one(); 4],
        );
        assert!(st.check_interval_contract().is_ok());
        assert_eq!(st.least_spending_uncapped(), Some(0));
        let threshold = &Rat::ratio(5, 4) * &st.bundle_value(0);
        let path = find_improving_path(&st, 0, &threshold).expect("three-edge path");
        assert_eq!(path.steps, vec![(1, 1), (2, 2), (3, 3)]);
        let report = execute_swaps(&mut st, &path, &threshold);
        // only the terminal good moves: a2 can absorb it and stay within
        // threshold after dropping g2
        assert_eq!(report.moves, vec![(3, 3, 2)]);
        assert_eq!(report.h_prime, 2);
        assert_eq!(st.mult[2], vec![0, 0, 1, 1, 0]);
        assert_eq!(st.bundle_value(3), r6);
        // untouched prefix agent kept its bundle
        assert_eq!(st.mult[1], vec![0, 1, 0, 0, 0]);
        // the full run on this instance terminates cleanly
        let mut obs = VerifyingObserver::new(&eps);
        let out = solve_with_observer(&inst, &eps, &mut obs).unwrap();
        let st_final = out.to_market_state(&rounded);
        assert!(st_final.is_eps_p_ef1(&(Rat::from_int(4) * eps)));
    }

    #[test]
    fn long_path_cascades_to_an_empty_handed_start() {
        let eps = Rat::ratio(1, 4);
        let inst = chain_instance(false);
        let rounded = cap_and_round(&inst, &eps).unwrap();
        let r6 = Rat::ratio(5, 4).pow(6);
        let mut st = MarketState::from_parts(
            &rounded,
            vec![
                vec![0, 0, 0, 0],
                vec![1, 0, 0, 0],
                vec![0, 1, 0, 0],
                vec![0, 0, 1, 1],
            ],
            vec![Rat::one(), Rat::one(), Rat::one(), r6],
            vec![Rat::one(); 4],
        );
        assert!(st.check_interval_contract().is_ok());
        let threshold = st.bundle_value(0) * Rat::ratio(5, 4);
        assert!(threshold.is_zero());
        let path = find_improving_path(&st, 0, &threshold).expect("path to the violator");
        assert_eq!(path.steps, vec![(0, 1), (1, 2), (2, 3)]);
        let report = execute_swaps(&mut st, &path, &threshold);
        assert_eq!(report.moves, vec![(2, 3, 2), (1, 2, 1), (0, 1, 0)]);
        assert_eq!(report.h_prime, 0);
        // every agent shifted one good down the chain
        assert_eq!(st.mult[0], vec![1, 0, 0, 0]);
        assert_eq!(st.mult[1], vec![0, 1, 0, 0]);
        assert_eq!(st.mult[2], vec![0, 0, 1, 0]);
        assert_eq!(st.mult[3], vec![0, 0, 0, 1]);
    }

    #[test]
    fn no_path_when_tight_graph_is_trivial() {
        let inst = generators::multicopy_envy(&eps100()).unwrap();
        let rounded = cap_and_round(&inst, &eps100()).unwrap();
        let st = greedy_init(&rounded);
        let threshold = &(&Rat::one() + &eps100()) * &st.bundle_value(0);
        assert!(find_improving_path(&st, 0, &threshold).is_none());
        let (agents, goods) = reachable_set(&st, 0);
        assert_eq!(agents, vec![true, false]);
        assert_eq!(goods, vec![false, false]);
    }

    #[test]
    fn multicopy_price_increase_matches_worked_example() {
        let inst = generators::multicopy_envy(&eps100()).unwrap();
        let rounded = cap_and_round(&inst, &eps100()).unwrap();
        let mut st = greedy_init(&rounded);
        let s = generators::envy_scale(&eps100()).unwrap();
        let (agents, goods) = reachable_set(&st, 0);
        let step = price_increase(&mut st, 0, &agents, &goods, &eps100()).unwrap();
        let r = r100();
        assert_eq!(step.beta1, Some(s));
        assert_eq!(step.beta2, None);
        assert_eq!(step.beta3, Some(&Rat::from_int(2) / &r.pow(2)));
        assert_eq!(step.beta4, Some(r.pow(93)));
        assert_eq!(step.beta, &Rat::from_int(2) / &r.pow(2));
        assert!(step.terminated);
        // alpha_1 decreased to r^2/2; prices untouched (S held no goods)
        assert_eq!(st.mbb[0], &r.pow(2) / &Rat::from_int(2));
        assert_eq!(st.mbb[1], Rat::one());
    }

    #[test]
    fn solve_multicopy_terminates_after_one_price_increase() {
        let inst = generators::multicopy_envy(&eps100()).unwrap();
        let mut obs = VerifyingObserver::new(&eps100());
        let out = solve_with_observer(&inst, &eps100(), &mut obs).unwrap();
        assert_eq!(out.termination, Termination::Beta3Break);
        assert_eq!(out.counters.price_increases, 1);
        assert_eq!(out.counters.swap_sequences, 0);
        assert_eq!(out.allocation, vec![vec![2, 0], vec![3, 2]]);
        assert_eq!(out.mbb[0], &r100().pow(2) / &Rat::from_int(2));
        // the final state is 4eps-p-EF1
        let rounded = cap_and_round(&inst, &eps100()).unwrap();
        let st = out.to_market_state(&rounded);
        assert!(st.is_eps_p_ef1(&(Rat::from_int(4) * eps100())));
    }

    #[test]
    fn solve_capped_ends_with_two_goods_each() {
        let inst = generators::capped_envy(&eps100()).unwrap();
        let mut obs = VerifyingObserver::new(&eps100());
        let out = solve_with_observer(&inst, &eps100(), &mut obs).unwrap();
        assert_eq!(out.termination, Termination::Ef1Check);
        let owned: Vec<usize> = out.allocation.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(owned, vec![2, 2]);
    }

    #[test]
    fn solve_lower_bound_keeps_greedy_pairing() {
        let inst = generators::lower_bound(3, 1, 666).unwrap();
        let eps = Rat::ratio(1, 4);
        let mut obs = VerifyingObserver::new(&eps);
        let out = solve_with_observer(&inst, &eps, &mut obs).unwrap();
        assert_eq!(out.counters.iterations, 0);
        assert_eq!(out.counters.price_increases, 0);
        assert_eq!(out.allocation[0], vec![1, 0, 0, 1, 0]);
        assert_eq!(out.allocation[1], vec![0, 1, 0, 0, 1]);
        assert_eq!(out.allocation[2], vec![0, 0, 1, 0, 0]);
    }

    #[test]
    fn solve_single_agent_exits_immediately() {
        let inst = Instance::new(
            vec![None],
            vec![3],
            vec![vec![vec![Rat::from_int(5), Rat::from_int(2), Rat::zero()]]],
        );
        let out = solve(&inst, &Rat::ratio(1, 4)).unwrap();
        assert_eq!(out.termination, Termination::Ef1Check);
        assert_eq!(out.allocation, vec![vec![3]]);
        assert_eq!(out.counters.iterations, 0);
    }

    #[test]
    fn solve_recovers_value_for_slighted_agent() {
        // agent 0 values only good 0 (at 1); agent 1 values both goods at 4.
        // Greedy gives everything to agent 1; the loop must hand good 0 over.
        let inst = Instance::new(
            vec![None, None],
            vec![1, 1],
            vec![
                vec![vec![Rat::one()], vec![Rat::zero()]],
                vec![vec![Rat::from_int(4)], vec![Rat::from_int(4)]],
            ],
        );
        let eps = Rat::ratio(1, 4);
        let mut obs = VerifyingObserver::new(&eps);
        let out = solve_with_observer(&inst, &eps, &mut obs).unwrap();
        assert_eq!(out.allocation, vec![vec![1, 0], vec![0, 1]]);
        assert!(out.counters.price_increases >= 1);
    }

    #[test]
    fn solve_tolerates_all_zero_agents() {
        let inst = Instance::new(
            vec![None, None],
            vec![2],
            vec![
                vec![vec![Rat::zero(), Rat::zero()]],
                vec![vec![Rat::from_int(4), Rat::from_int(4)]],
            ],
        );
        let out = solve(&inst, &Rat::ratio(1, 4)).unwrap();
        assert_eq!(out.termination, Termination::Ef1Check);
        assert_eq!(out.allocation[1], vec![2]);
    }

    #[test]
    fn solve_rejects_invalid_inputs() {
        let inst = Instance::new(vec![None], vec![2], vec![vec![vec![Rat::one(), Rat::from_int(2)]]]);
        assert!(matches!(solve(&inst, &Rat::ratio(1, 4)), Err(SolveError::Validation(_))));
        let ok = Instance::new(vec![None], vec![1], vec![vec![vec![Rat::one()]]]);
        assert!(matches!(solve(&ok, &Rat::ratio(1, 3)), Err(SolveError::Rounding(_))));
    }

    #[test]
    fn solver_output_json_round_trips() {
        let inst = generators::multicopy_envy(&eps100()).unwrap();
        let out = solve(&inst, &eps100()).unwrap();
        let text = out.to_json_string();
        let back = SolverOutput::from_json_str(&text).unwrap();
        assert_eq!(back.allocation, out.allocation);
        assert_eq!(back.prices, out.prices);
        assert_eq!(back.mbb, out.mbb);
        assert_eq!(back.eps, out.eps);
        // determinism: two runs serialize identically
        let again = solve(&inst, &eps100()).unwrap();
        assert_eq!(again.to_json_string(), text);
    }
}
