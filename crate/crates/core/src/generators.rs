//! Named worked-example instances and randomized test families.
//!
//! All randomness comes from an explicitly seeded SplitMix64 so generated
//! instances are identical across platforms and runs.

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use thiserror::Error;

use crate::instance::{epsilon_in_range, Instance};
use crate::numerics::{next_power_up, Rat};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenError {
    #[error("epsilon must lie in (0, 1/4]")]
    BadEpsilon,
    #[error("invalid generator parameters: {0}")]
    BadParams(String),
    #[error("infeasible generator parameters: {0}")]
    Infeasible(String),
}

/// Deterministic counter-based PRNG (SplitMix64).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform value in `[0, bound)`; `bound` must be positive.
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        self.next_u64() % bound
    }
}

/// Lower-bound family: `s(k-1)` goods of value `K` and `sk` goods of value 1,
/// one copy each, `sk` identical uncapped agents. Unit goods come first so the
/// greedy initialization pairs one unit good per agent before the `K` goods
/// are handed out.
pub fn lower_bound(k: u64, s: u64, big_k: u64) -> Result<Instance, GenError> {
    if k < 1 || s < 1 {
        return Err(GenError::BadParams("k >= 1 and s >= 1 required".into()));
    }
    if big_k < k {
        return Err(GenError::BadParams("K >= k required".into()));
    }
    let h = (s * (k - 1)) as usize;
    let n = (s * k) as usize;
    let mut values = vec![Rat::one(); n];
    values.extend(std::iter::repeat_n(Rat::from_bigint(BigInt::from(big_k)), h));
    let row: Vec<Vec<Rat>> = values.iter().map(|v| vec![v.clone()]).collect();
    Ok(Instance::new(
        vec![None; n],
        vec![1; n + h],
        vec![row; n],
    ))
}

/// Closed-form optimum of the lower-bound family as an n-th power:
/// `K^h * k^s` (the `K` goods to `h` agents, `k` unit goods to each of the
/// remaining `s` agents).
pub fn lower_bound_opt_nth_power(k: u64, s: u64, big_k: u64) -> Rat {
    let h = s * (k - 1);
    Rat::from_bigint(BigInt::from(big_k).pow(h as u32) * BigInt::from(k).pow(s as u32))
}

/// The scalar `s` of the envy examples: smallest power of `r = 1 + ε` that is
/// at least `2r^2`.
pub fn envy_scale(eps: &Rat) -> Result<Rat, GenError> {
    if !epsilon_in_range(eps) {
        return Err(GenError::BadEpsilon);
    }
    let r = Rat::one() + eps;
    let target = Rat::from_int(2) * r.pow(2);
    Ok(next_power_up(&target, &r).expect("target positive").value(&r))
}

/// Multi-copy envy example: two uncapped agents, good 1 with 5 copies and
/// good 2 with 2 copies. Utilities are powers of `r`, so rounding with the
/// same ε leaves them unchanged.
pub fn multicopy_envy(eps: &Rat) -> Result<Instance, GenError> {
    let s = envy_scale(eps)?;
    let z = Rat::zero;
    let agent1 = vec![
        vec![s.clone(), s.clone(), z(), z(), z()],
        vec![Rat::one(), z()],
    ];
    let agent2 = vec![
        vec![s.clone(), s.clone(), s.clone(), z(), z()],
        vec![s.clone(), s.clone()],
    ];
    Ok(Instance::new(vec![None, None], vec![5, 2], vec![agent1, agent2]))
}

/// Capped envy example: four single-copy goods, both agents value every good
/// at `s`, the first agent is capped at 3.
pub fn capped_envy(eps: &Rat) -> Result<Instance, GenError> {
    let s = envy_scale(eps)?;
    let row: Vec<Vec<Rat>> = (0..4).map(|_| vec![s.clone()]).collect();
    Ok(Instance::new(
        vec![Some(Rat::from_int(3)), None],
        vec![1, 1, 1, 1],
        vec![row.clone(), row],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapMode {
    Uncapped,
    Random,
}

#[derive(Debug, Clone)]
pub struct RandomSpec {
    pub n: usize,
    pub m: usize,
    pub max_copies: usize,
    pub max_util: u64,
    pub cap_mode: CapMode,
    pub seed: u64,
}

/// Random instance: copies uniform in `[1, max_copies]`, per-copy utilities
/// uniform in `[0, max_util]` sorted descending, caps per `cap_mode` (coin
/// flip per agent, cap uniform in `[1, total utility]`).
pub fn random_instance(spec: &RandomSpec) -> Result<Instance, GenError> {
    if spec.n == 0 || spec.m == 0 || spec.max_copies == 0 {
        return Err(GenError::BadParams("n, m, max_copies must be positive".into()));
    }
    let mut rng = SplitMix64::new(spec.seed);
    let copies: Vec<usize> = (0..spec.m).map(|_| 1 + rng.below(spec.max_copies as u64) as usize).collect();
    let mut utils = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let mut row: Vec<Vec<Rat>> = Vec::with_capacity(spec.m);
        for &k in &copies {
            let mut per_copy: Vec<u64> = (0..k).map(|_| rng.below(spec.max_util + 1)).collect();
            per_copy.sort_unstable_by(|a, b| b.cmp(a));
            row.push(per_copy.into_iter().map(|v| Rat::from_bigint(BigInt::from(v))).collect());
        }
        utils.push(row);
    }
    let caps: Vec<Option<Rat>> = match spec.cap_mode {
        CapMode::Uncapped => vec![None; spec.n],
        CapMode::Random => (0..spec.n)
            .map(|i| {
                let total: u64 = utils[i]
                    .iter()
                    .flat_map(|per_copy| per_copy.iter())
                    .map(|v| v.numer().to_u64().unwrap_or(0))
                    .sum();
                if rng.below(2) == 1 && total >= 1 {
                    Some(Rat::from_bigint(BigInt::from(1 + rng.below(total))))
                } else {
                    None
                }
            })
            .collect(),
    };
    Ok(Instance::new(caps, copies, utils))
}

/// Utility range for the δ-large family.
const DELTA_LARGE_MAX_UTIL: u64 = 1000;

/// Largest legal rounding factor; δ-largeness is generated with this much
/// margin so the rounded instance stays δ-large for every ε in (0, 1/4].
fn max_rounding_factor() -> Rat {
    Rat::ratio(5, 4)
}

/// δ-large market: uncapped, single-copy goods, every utility at most
/// `(δ/r_max) * u_i(G)/n`. Violating draws are clamped until the definition
/// holds, then the instance is re-verified.
pub fn delta_large(n: usize, m: usize, delta: &Rat, seed: u64) -> Result<Instance, GenError> {
    if n == 0 || m == 0 {
        return Err(GenError::BadParams("n and m must be positive".into()));
    }
    if !delta.is_positive() || *delta >= Rat::one() {
        return Err(GenError::BadParams("delta must lie in (0, 1)".into()));
    }
    let margin = delta / &max_rounding_factor();
    // feasible iff a uniform utility vector satisfies the bound:
    // u <= margin * (m*u)/n  <=>  m*margin >= n
    if &Rat::from_int(m as i64) * &margin < Rat::from_int(n as i64) {
        return Err(GenError::Infeasible(format!(
            "need m >= n/(delta/r) = {}, got m = {}",
            (&Rat::from_int(n as i64) / &margin),
            m
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut utils: Vec<Vec<u64>> = (0..n)
        .map(|_| (0..m).map(|_| 1 + rng.below(DELTA_LARGE_MAX_UTIL)).collect())
        .collect();
    let n_rat = Rat::from_int(n as i64);
    for row in utils.iter_mut() {
        loop {
            let total: u64 = row.iter().sum();
            let threshold = &margin * &Rat::from_bigint(BigInt::from(total)) / &n_rat;
            let mut changed = false;
            for v in row.iter_mut() {
                if Rat::from_bigint(BigInt::from(*v)) > threshold {
                    // floor(threshold)
                    let floored = (threshold.numer() / threshold.denom()).to_u64().unwrap_or(0);
                    *v = floored;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if row.contains(&0) {
            return Err(GenError::Infeasible("clamping collapsed a utility to zero".into()));
        }
    }
    let inst = Instance::new(
        vec![None; n],
        vec![1; m],
        utils
            .iter()
            .map(|row| row.iter().map(|&v| vec![Rat::from_bigint(BigInt::from(v))]).collect())
            .collect(),
    );
    verify_delta_large(&inst, &margin).map_err(|(i, j)| {
        GenError::Infeasible(format!("generated instance violates largeness at agent {i}, good {j}"))
    })?;
    Ok(inst)
}

/// Checks `u_{i,j,l} <= delta * u_i(G)/n` for every item; returns the first
/// violating pair on failure.
pub fn verify_delta_large(inst: &Instance, delta: &Rat) -> Result<(), (usize, usize)> {
    let n_rat = Rat::from_int(inst.n() as i64);
    for i in 0..inst.n() {
        let total: Rat = inst.utils[i]
            .iter()
            .flat_map(|per_copy| per_copy.iter())
            .fold(Rat::zero(), |acc, v| acc + v);
        let threshold = delta * &total / &n_rat;
        for (j, per_copy) in inst.utils[i].iter().enumerate() {
            for v in per_copy {
                if *v > threshold {
                    return Err((i, j));
                }
            }
        }
    }
    Ok(())
}
