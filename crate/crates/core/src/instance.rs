//! Problem model: agents with utility caps, goods with copy counts, decreasing
//! per-copy utilities. Validation, capping and rounding to powers of `r`,
//! instance statistics, and the JSON wire format.

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{next_power_up, Rat};

/// Read access shared by raw and rounded instances. Copy indices are 0-based;
/// `utility(i, j, l)` is the value of the `(l+1)`-th copy of good `j` for `i`.
pub trait ProblemView {
    fn n_agents(&self) -> usize;
    fn n_goods(&self) -> usize;
    fn copies(&self, good: usize) -> usize;
    fn cap(&self, agent: usize) -> Option<&Rat>;
    fn utility(&self, agent: usize, good: usize, copy: usize) -> &Rat;

    fn total_items(&self) -> usize {
        (0..self.n_goods()).map(|j| self.copies(j)).sum()
    }

    /// `u_i(x_i)` for a multiplicity row `mult[j] = m(j, x_i)`.
    fn bundle_utility(&self, agent: usize, mult: &[usize]) -> Rat {
        let mut sum = Rat::zero();
        for (j, &m) in mult.iter().enumerate() {
            for l in 0..m {
                sum = sum + self.utility(agent, j, l);
            }
        }
        sum
    }

    /// `min(c_i, u_i(x_i))`, the capped utility entering the NSW product.
    fn capped_bundle_utility(&self, agent: usize, mult: &[usize]) -> Rat {
        let u = self.bundle_utility(agent, mult);
        match self.cap(agent) {
            Some(c) if *c < u => c.clone(),
            _ => u,
        }
    }
}

/// A fair-division instance over integers or exact rationals.
///
/// `utils[i][j]` lists the per-copy utilities of good `j` for agent `i`,
/// outermost copy first; `caps[i]` is `None` for an uncapped agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub caps: Vec<Option<Rat>>,
    pub copies: Vec<usize>,
    pub utils: Vec<Vec<Vec<Rat>>>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValidationError {
    #[error("n >= 1 required")]
    NoAgents,
    #[error("m >= 1 required")]
    NoGoods,
    #[error("copies k_j >= 1 required at good {good}")]
    BadCopies { good: usize },
    #[error("utilities row count {got} does not match agent count {want}")]
    AgentRows { got: usize, want: usize },
    #[error("utilities column count {got} does not match good count {want} at agent {agent}")]
    GoodCols { agent: usize, got: usize, want: usize },
    #[error("utilities length {got} does not match copies {want} at (agent {agent}, good {good})")]
    CopyLen { agent: usize, good: usize, got: usize, want: usize },
    #[error("negative utility at (agent {agent}, good {good}, copy {copy})")]
    NegativeUtility { agent: usize, good: usize, copy: usize },
    #[error("utilities increasing at (agent {agent}, good {good})")]
    IncreasingUtilities { agent: usize, good: usize },
    #[error("non-positive cap at agent {agent}")]
    NonPositiveCap { agent: usize },
}

impl Instance {
    pub fn new(caps: Vec<Option<Rat>>, copies: Vec<usize>, utils: Vec<Vec<Vec<Rat>>>) -> Self {
        Instance { caps, copies, utils }
    }

    pub fn n(&self) -> usize {
        self.caps.len()
    }

    pub fn m(&self) -> usize {
        self.copies.len()
    }

    /// Checks every structural invariant; returns the full list of violations.
    /// Indices in the errors are 1-based to match the input format.
    pub fn validate(&self) -> Result<(), Vec<ValidationError>> {
        let mut errs = Vec::new();
        if self.n() == 0 {
            errs.push(ValidationError::NoAgents);
        }
        if self.m() == 0 {
            errs.push(ValidationError::NoGoods);
        }
        for (j, &k) in self.copies.iter().enumerate() {
            if k == 0 {
                errs.push(ValidationError::BadCopies { good: j + 1 });
            }
        }
        if self.utils.len() != self.n() {
            errs.push(ValidationError::AgentRows { got: self.utils.len(), want: self.n() });
            return Err(errs);
        }
        for (i, row) in self.utils.iter().enumerate() {
            if row.len() != self.m() {
                errs.push(ValidationError::GoodCols { agent: i + 1, got: row.len(), want: self.m() });
                continue;
            }
            for (j, per_copy) in row.iter().enumerate() {
                if j < self.copies.len() && per_copy.len() != self.copies[j] {
                    errs.push(ValidationError::CopyLen {
                        agent: i + 1,
                        good: j + 1,
                        got: per_copy.len(),
                        want: self.copies[j],
                    });
                }
                for (l, u) in per_copy.iter().enumerate() {
                    if !u.is_zero() && !u.is_positive() {
                        errs.push(ValidationError::NegativeUtility { agent: i + 1, good: j + 1, copy: l + 1 });
                    }
                }
                if per_copy.windows(2).any(|w| w[0] < w[1]) {
                    errs.push(ValidationError::IncreasingUtilities { agent: i + 1, good: j + 1 });
                }
            }
        }
        for (i, cap) in self.caps.iter().enumerate() {
            if let Some(c) = cap {
                if !c.is_positive() {
                    errs.push(ValidationError::NonPositiveCap { agent: i + 1 });
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

impl ProblemView for Instance {
    fn n_agents(&self) -> usize {
        self.n()
    }
    fn n_goods(&self) -> usize {
        self.m()
    }
    fn copies(&self, good: usize) -> usize {
        self.copies[good]
    }
    fn cap(&self, agent: usize) -> Option<&Rat> {
        self.caps[agent].as_ref()
    }
    fn utility(&self, agent: usize, good: usize, copy: usize) -> &Rat {
        &self.utils[agent][good][copy]
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RoundingError {
    #[error("epsilon must lie in (0, 1/4], got {0}")]
    EpsilonOutOfRange(Rat),
}

/// The instance after capping utilities at `c_i` and rounding every nonzero
/// value (and every finite cap) up to the next power of `r = 1 + ε`.
///
/// Zero utilities are passed through unrounded. `util_exp`/`cap_exp` carry the
/// power-of-r exponents alongside the exact values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundedInstance {
    pub eps: Rat,
    pub r: Rat,
    pub copies: Vec<usize>,
    pub caps: Vec<Option<Rat>>,
    pub cap_exp: Vec<Option<i64>>,
    pub utils: Vec<Vec<Vec<Rat>>>,
    pub util_exp: Vec<Vec<Vec<Option<i64>>>>,
    /// Agents whose utilities are all zero; they can never derive value and
    /// are excluded from least-spender selection and the EF1 quantifier.
    pub null_agent: Vec<bool>,
}

impl RoundedInstance {
    pub fn n(&self) -> usize {
        self.caps.len()
    }

    pub fn m(&self) -> usize {
        self.copies.len()
    }

    /// `u_{i,j,m+1}`, the marginal for one more copy when `i` holds `m`;
    /// zero once all copies are exhausted.
    pub fn marginal(&self, agent: usize, good: usize, mult: usize) -> Option<&Rat> {
        self.utils[agent][good].get(mult)
    }
}

impl ProblemView for RoundedInstance {
    fn n_agents(&self) -> usize {
        self.n()
    }
    fn n_goods(&self) -> usize {
        self.m()
    }
    fn copies(&self, good: usize) -> usize {
        self.copies[good]
    }
    fn cap(&self, agent: usize) -> Option<&Rat> {
        self.caps[agent].as_ref()
    }
    fn utility(&self, agent: usize, good: usize, copy: usize) -> &Rat {
        &self.utils[agent][good][copy]
    }
}

pub fn epsilon_in_range(eps: &Rat) -> bool {
    eps.is_positive() && *eps <= Rat::ratio(1, 4)
}

/// Caps utilities at `c_i`, then rounds utilities and finite caps up to powers
/// of `r = 1 + ε`. Monotone marginals survive because the rounding is
/// monotone; capping first keeps every utility at most the (rounded) cap.
pub fn cap_and_round(inst: &Instance, eps: &Rat) -> Result<RoundedInstance, RoundingError> {
    if !epsilon_in_range(eps) {
        return Err(RoundingError::EpsilonOutOfRange(eps.clone()));
    }
    let r = Rat::one() + eps;
    let mut utils = Vec::with_capacity(inst.n());
    let mut util_exp = Vec::with_capacity(inst.n());
    let mut null_agent = Vec::with_capacity(inst.n());
    for i in 0..inst.n() {
        let mut row = Vec::with_capacity(inst.m());
        let mut row_exp = Vec::with_capacity(inst.m());
        let mut any_nonzero = false;
        for j in 0..inst.m() {
            let mut per_copy = Vec::with_capacity(inst.copies[j]);
            let mut per_copy_exp = Vec::with_capacity(inst.copies[j]);
            for u in &inst.utils[i][j] {
                let capped = match &inst.caps[i] {
                    Some(c) if c < u => c.clone(),
                    _ => u.clone(),
                };
                if capped.is_zero() {
                    per_copy.push(Rat::zero());
                    per_copy_exp.push(None);
                } else {
                    any_nonzero = true;
                    let p = next_power_up(&capped, &r).expect("positive capped utility");
                    per_copy.push(p.value(&r));
                    per_copy_exp.push(Some(p.exponent));
                }
            }
            row.push(per_copy);
            row_exp.push(per_copy_exp);
        }
        utils.push(row);
        util_exp.push(row_exp);
        null_agent.push(!any_nonzero);
    }
    let mut caps = Vec::with_capacity(inst.n());
    let mut cap_exp = Vec::with_capacity(inst.n());
    for c in &inst.caps {
        match c {
            None => {
                caps.push(None);
                cap_exp.push(None);
            }
            Some(c) => {
                let p = next_power_up(c, &r).expect("positive cap");
                caps.push(Some(p.value(&r)));
                cap_exp.push(Some(p.exponent));
            }
        }
    }
    Ok(RoundedInstance {
        eps: eps.clone(),
        r,
        copies: inst.copies.clone(),
        caps,
        cap_exp,
        utils,
        util_exp,
        null_agent,
    })
}

/// Instance statistics and the iteration cap `ceil(n^3 M^2 log_r(M*U))`
/// enforced as a runtime assertion by the solver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceStats {
    pub total_items: usize,
    /// `U` = max nonzero utility / min nonzero utility, exactly `r^exp_span`.
    pub u_ratio: Rat,
    pub exp_span: i64,
    /// True when the instance has no nonzero utility; `U` is then taken as 1.
    pub degenerate: bool,
    pub iteration_cap: BigInt,
}

impl InstanceStats {
    pub fn cap_saturating_u64(&self) -> u64 {
        self.iteration_cap.to_u64().unwrap_or(u64::MAX)
    }
}

/// Size threshold (in estimated bits of `r^L`) above which
/// `ceil(c*log_r M)` falls back to the safe upper bound `c*ceil(log_r M)`;
/// the abort check stays conservative.
const EXACT_LOG_BIT_LIMIT: f64 = 200_000.0;

pub fn stats(rounded: &RoundedInstance) -> InstanceStats {
    let n = rounded.n();
    let m_items: usize = rounded.copies.iter().sum();
    let mut lo: Option<i64> = None;
    let mut hi: Option<i64> = None;
    for row in &rounded.util_exp {
        for per_copy in row {
            for e in per_copy.iter().flatten() {
                lo = Some(lo.map_or(*e, |v: i64| v.min(*e)));
                hi = Some(hi.map_or(*e, |v: i64| v.max(*e)));
            }
        }
    }
    let (span, degenerate) = match (lo, hi) {
        (Some(lo), Some(hi)) => (hi - lo, false),
        _ => (0, true),
    };
    let c = BigInt::from(n).pow(3) * BigInt::from(m_items).pow(2);
    // log_r(M*U) = log_r M + span since U = r^span exactly.
    let log_m_term = if m_items <= 1 {
        BigInt::from(0)
    } else {
        let m_rat = Rat::from_int(m_items as i64);
        // The exact ceiling is the exponent of next_power_up(M^c, r), which
        // costs big-int work proportional to the bit length of r^L for
        // L ~ c*log_r M. Estimate that length and bail out to the upper
        // bound c*ceil(log_r M) when the exact route would be unreasonable.
        let r_f = rounded.r.to_f64();
        let term_bits = c.to_f64().map(|c_f| {
            let l_est = c_f * (m_items as f64).ln() / r_f.ln();
            let digit_bits = (rounded.r.numer().to_f64().unwrap_or(f64::INFINITY)
                * rounded.r.denom().to_f64().unwrap_or(f64::INFINITY))
            .log2();
            l_est * digit_bits
        });
        let feasible = matches!(term_bits, Some(b) if b.is_finite() && b <= EXACT_LOG_BIT_LIMIT);
        if feasible {
            let c_small = c.to_u64().expect("feasible c fits u64");
            let m_pow = m_rat.pow(c_small as i64);
            BigInt::from(next_power_up(&m_pow, &rounded.r).expect("M^c >= 1").exponent)
        } else {
            let per_unit = next_power_up(&m_rat, &rounded.r).expect("M >= 2").exponent;
            &c * BigInt::from(per_unit)
        }
    };
    let iteration_cap = &c * BigInt::from(span) + log_m_term;
    InstanceStats {
        total_items: m_items,
        u_ratio: rounded.r.pow(span),
        exp_span: span,
        degenerate,
        iteration_cap,
    }
}

// ---------------------------------------------------------------------------
// JSON wire format
// ---------------------------------------------------------------------------

/// Scalar in instance files: a plain JSON integer, or a string holding an
/// arbitrary-precision integer or exact fraction like `"3125/1024"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ScalarJson {
    Int(u64),
    Text(String),
}

impl ScalarJson {
    fn to_rat(&self) -> Result<Rat, InstanceJsonError> {
        match self {
            ScalarJson::Int(v) => Ok(Rat::from_bigint(BigInt::from(*v))),
            ScalarJson::Text(s) => Rat::parse(s).map_err(|e| InstanceJsonError::BadScalar(e.to_string())),
        }
    }

    fn from_rat(v: &Rat) -> ScalarJson {
        if v.is_integer() {
            if let Some(small) = v.numer().to_u64() {
                return ScalarJson::Int(small);
            }
        }
        ScalarJson::Text(v.to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AgentJson {
    cap: Option<ScalarJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GoodJson {
    copies: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceJson {
    agents: Vec<AgentJson>,
    goods: Vec<GoodJson>,
    utilities: Vec<Vec<Vec<ScalarJson>>>,
}

#[derive(Debug, Error)]
pub enum InstanceJsonError {
    #[error("malformed instance JSON: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("bad scalar: {0}")]
    BadScalar(String),
}

pub fn instance_from_json(text: &str) -> Result<Instance, InstanceJsonError> {
    let raw: InstanceJson = serde_json::from_str(text)?;
    let caps = raw
        .agents
        .iter()
        .map(|a| a.cap.as_ref().map(|c| c.to_rat()).transpose())
        .collect::<Result<Vec<_>, _>>()?;
    let copies = raw.goods.iter().map(|g| g.copies as usize).collect();
    let utils = raw
        .utilities
        .iter()
        .map(|row| {
            row.iter()
                .map(|per_copy| per_copy.iter().map(|u| u.to_rat()).collect::<Result<Vec<_>, _>>())
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Instance::new(caps, copies, utils))
}

pub fn instance_to_json(inst: &Instance) -> String {
    let raw = InstanceJson {
        agents: inst
            .caps
            .iter()
            .map(|c| AgentJson { cap: c.as_ref().map(ScalarJson::from_rat) })
            .collect(),
        goods: inst.copies.iter().map(|&k| GoodJson { copies: k as u64 }).collect(),
        utilities: inst
            .utils
            .iter()
            .map(|row| row.iter().map(|per_copy| per_copy.iter().map(ScalarJson::from_rat).collect()).collect())
            .collect(),
    };
    serde_json::to_string_pretty(&raw).expect("instance serialization cannot fail")
}
