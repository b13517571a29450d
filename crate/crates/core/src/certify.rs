//! Post-hoc verification of solver output: price-envy-freeness at `4ε`,
//! per-agent guarantees, the computable auxiliary upper bound on optimal NSW,
//! the greedy-set bound for a fixed scaling vector, the large-market bound,
//! and the bundled approximation certificate.

use serde::Serialize;
use thiserror::Error;

use crate::generators::SplitMix64;
use crate::instance::{cap_and_round, Instance, ProblemView, RoundedInstance};
use crate::market::MarketState;
use crate::numerics::Rat;
use crate::solver::{rat_field, RatField, SolverOutput};

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("solution does not match the instance: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Rounding(#[from] crate::instance::RoundingError),
    #[error("no valid (h, k) pair exists for the auxiliary bound")]
    NoValidAuxPair,
    #[error("the greedy-set bound needs a single-copy uncapped instance")]
    NotSingleCopyUncapped,
    #[error("the large-market bound needs an uncapped instance")]
    NotUncapped,
    #[error("instance is not delta-large: utility at (agent {agent}, good {good}, copy {copy}) exceeds delta * u_i(G)/n")]
    NotDeltaLarge { agent: usize, good: usize, copy: usize },
    #[error("scaling vector must be positive at agent {0}")]
    BadScaling(usize),
}

/// `prod_i min(c_i, u_i(x_i))`, the n-th power of the Nash social welfare of
/// an allocation under the given utilities and caps.
pub fn nsw_nth_power<V: ProblemView + ?Sized>(view: &V, allocation: &[Vec<usize>]) -> Rat {
    let mut product = Rat::one();
    for i in 0..view.n_agents() {
        product = product * view.capped_bundle_utility(i, &allocation[i]);
    }
    product
}

/// Worst per-agent envy after one removal, in the envied agent's own scale:
/// `max` over uncapped `i` and `k != i` with nonempty bundle of
/// `min_{j in x_k} u_i(x_k - j) / u_i(x_i)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndividualGuarantee {
    /// `None` means unbounded (zero own utility against positive envy);
    /// cannot happen for solver output.
    pub ratio: Option<Rat>,
    pub witness: Option<(usize, usize)>,
}

pub fn individual_guarantee(state: &MarketState<'_>) -> IndividualGuarantee {
    let view = state.inst;
    let n = view.n();
    let own: Vec<Rat> = (0..n).map(|i| view.bundle_utility(i, &state.mult[i])).collect();
    let mut best: Option<(Rat, (usize, usize))> = None;
    for i in 0..n {
        if state.is_capped_agent(i) {
            continue;
        }
        for k in 0..n {
            if i == k || state.mult[k].iter().all(|&c| c == 0) {
                continue;
            }
            let cross = view.bundle_utility(i, &state.mult[k]);
            let mut best_drop: Option<Rat> = None;
            for (j, &mj) in state.mult[k].iter().enumerate() {
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
            if left.is_zero() {
                continue;
            }
            if own[i].is_zero() {
                return IndividualGuarantee { ratio: None, witness: Some((i, k)) };
            }
            let ratio = &left / &own[i];
            match &best {
                Some((b, _)) if *b >= ratio => {}
                _ => best = Some((ratio, (i, k))),
            }
        }
    }
    match best {
        Some((ratio, pair)) => IndividualGuarantee { ratio: Some(ratio), witness: Some(pair) },
        None => IndividualGuarantee { ratio: Some(Rat::zero()), witness: None },
    }
}

/// The auxiliary single-copy uniform-utility relaxation built from scaled
/// item values and scaled caps, both sorted descending (`None` = uncapped,
/// sorting above every finite cap). `bound_nth_power` here is in scaled
/// units; [`auxiliary_upper_bound`] multiplies the product of the MBB ratios
/// back in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuxiliaryBound {
    pub item_values: Vec<Rat>,
    pub caps: Vec<Option<Rat>>,
    pub h: usize,
    pub k: usize,
    pub delta: Option<Rat>,
    pub bound_nth_power: Rat,
}

/// Enumerates `(k, h)` splits of the water-filling shape: goods `1..h` go
/// integrally to the largest-capped agents, the `k` smallest caps bind, and
/// the remaining `n-h-k` agents each take value `delta`. Every validated
/// pair yields an upper bound on the NSW of the auxiliary problem; the
/// smallest is returned. When every cap is finite, the unconditional
/// all-caps product joins the candidates so instances whose water level
/// exceeds every cap (for example a single agent with a binding cap) still
/// validate.
pub fn auxiliary_bound_core(
    items_desc: &[Rat],
    caps_desc: &[Option<Rat>],
    n: usize,
) -> Result<AuxiliaryBound, CertifyError> {
    assert!(n >= 1);
    let item = |idx: usize| -> Rat {
        items_desc.get(idx).cloned().unwrap_or_else(Rat::zero)
    };
    let total_items: Rat = items_desc.iter().fold(Rat::zero(), |a, b| a + b);
    let finite_caps = caps_desc.iter().filter(|c| c.is_some()).count();
    let mut best: Option<AuxiliaryBound> = None;
    let mut consider = |cand: AuxiliaryBound| match &best {
        Some(b) if b.bound_nth_power <= cand.bound_nth_power => {}
        _ => best = Some(cand),
    };
    for k in 0..=finite_caps {
        // sum of the k smallest caps (suffix of the descending cap order)
        let cap_tail: Rat = caps_desc[n - k..]
            .iter()
            .map(|c| c.as_ref().expect("suffix caps are finite"))
            .fold(Rat::zero(), |a, b| a + b);
        for h in 0..(n - k) {
            let head: Rat = (0..h).map(item).fold(Rat::zero(), |a, b| a + b);
            let item_tail = &total_items - &head;
            let middle = n - h - k;
            let delta = &(&item_tail - &cap_tail) / &Rat::from_int(middle as i64);
            let nonneg = delta.is_zero() || delta.is_positive();
            let cap_lower = k == 0 || caps_desc[n - k].as_ref().expect("finite") <= &delta;
            let cap_upper = match &caps_desc[n - k - 1] {
                Some(c) => delta < *c,
                None => true,
            };
            let item_above = h == 0 || delta < item(h - 1);
            let item_below = item(h) <= delta;
            if !(nonneg && cap_lower && cap_upper && item_above && item_below) {
                continue;
            }
            let mut bound = delta.pow(middle as i64);
            for i in 0..h {
                let u = item(i);
                bound = bound
                    * match &caps_desc[i] {
                        Some(c) if *c < u => c.clone(),
                        _ => u,
                    };
            }
            for c in &caps_desc[n - k..] {
                bound = bound * c.as_ref().expect("finite").clone();
            }
            consider(AuxiliaryBound {
                item_values: items_desc.to_vec(),
                caps: caps_desc.to_vec(),
                h,
                k,
                delta: Some(delta),
                bound_nth_power: bound,
            });
        }
    }
    if finite_caps == n {
        // capped utilities never exceed the caps, so the plain cap product
        // is always an upper bound
        let bound = caps_desc
            .iter()
            .map(|c| c.as_ref().expect("all caps finite"))
            .fold(Rat::one(), |a, b| a * b);
        consider(AuxiliaryBound {
            item_values: items_desc.to_vec(),
            caps: caps_desc.to_vec(),
            h: 0,
            k: n,
            delta: None,
            bound_nth_power: bound,
        });
    }
    best.ok_or(CertifyError::NoValidAuxPair)
}

/// Upper bound on `NSW(x*)^n` for the rounded instance, from the solver's
/// allocation and MBB vector: scale each allocated item and each cap by the
/// owner's `1/alpha`, bound the auxiliary problem, and multiply the product
/// of the alphas back in.
pub fn auxiliary_upper_bound(
    rounded: &RoundedInstance,
    output: &SolverOutput,
) -> Result<AuxiliaryBound, CertifyError> {
    let n = rounded.n();
    let mut items = Vec::new();
    for i in 0..n {
        for j in 0..rounded.m() {
            for l in 0..output.allocation[i][j] {
                items.push(&rounded.utils[i][j][l] / &output.mbb[i]);
            }
        }
    }
    items.sort_unstable_by(|a, b| b.cmp(a));
    let mut caps: Vec<Option<Rat>> = (0..n)
        .map(|i| rounded.caps[i].as_ref().map(|c| c / &output.mbb[i]))
        .collect();
    caps.sort_unstable_by(|a, b| match (a, b) {
        (None, None) => std::cmp::Ordering::Equal,
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
        (Some(x), Some(y)) => y.cmp(x),
    });
    let mut core = auxiliary_bound_core(&items, &caps, n)?;
    let alpha_product = output.mbb.iter().fold(Rat::one(), |a, b| a * b);
    core.bound_nth_power = &core.bound_nth_power * &alpha_product;
    Ok(core)
}

/// Greedy set for the fixed-scaling upper bound: start from all goods and
/// remove any `j` with `u_j > a(S)` until none remains, where
/// `a(S) = sum_{j in S} u_j / (|S| - (m - n))`. The fixpoint is independent
/// of removal order; `order_seed` exercises that in tests (`None` removes the
/// lowest index first).
pub fn bmv_greedy_set(values: &[Rat], n: usize, order_seed: Option<u64>) -> Vec<usize> {
    let m = values.len() as i64;
    let mut in_set: Vec<bool> = vec![true; values.len()];
    let mut size = values.len() as i64;
    let mut sum: Rat = values.iter().fold(Rat::zero(), |a, b| a + b);
    let mut rng = order_seed.map(SplitMix64::new);
    loop {
        let denom = size - (m - n as i64);
        debug_assert!(denom > 0);
        let avg = &sum / &Rat::from_int(denom);
        let violators: Vec<usize> = (0..values.len())
            .filter(|&j| in_set[j] && values[j] > avg)
            .collect();
        if violators.is_empty() {
            return (0..values.len()).filter(|&j| in_set[j]).collect();
        }
        let pick = match &mut rng {
            Some(r) => violators[r.below(violators.len() as u64) as usize],
            None => violators[0],
        };
        in_set[pick] = false;
        size -= 1;
        sum = sum - &values[pick];
    }
}

/// Uniform values `u_j = max_i u_{ij}/alpha_i` of the single-copy problem.
pub fn bmv_uniform_values<V: ProblemView + ?Sized>(
    view: &V,
    alpha: &[Rat],
) -> Result<Vec<Rat>, CertifyError> {
    let n = view.n_agents();
    for (i, a) in alpha.iter().enumerate() {
        if !a.is_positive() {
            return Err(CertifyError::BadScaling(i));
        }
    }
    for j in 0..view.n_goods() {
        if view.copies(j) != 1 {
            return Err(CertifyError::NotSingleCopyUncapped);
        }
    }
    if (0..n).any(|i| view.cap(i).is_some()) {
        return Err(CertifyError::NotSingleCopyUncapped);
    }
    Ok((0..view.n_goods())
        .map(|j| {
            (0..n)
                .map(|i| view.utility(i, j, 0) / &alpha[i])
                .max()
                .expect("n >= 1")
        })
        .collect())
}

/// Upper bound (as an n-th power) on the NSW of any integral allocation of a
/// single-copy uncapped instance, for a fixed positive scaling vector:
/// `prod_{j not in S} u_j * a(S)^(n - |S̄|) * prod_i alpha_i`.
pub fn bmv_bound_nth_power<V: ProblemView + ?Sized>(
    view: &V,
    alpha: &[Rat],
) -> Result<Rat, CertifyError> {
    let values = bmv_uniform_values(view, alpha)?;
    let set = bmv_greedy_set(&values, view.n_agents(), None);
    let in_set: Vec<bool> = {
        let mut mask = vec![false; values.len()];
        for &j in &set {
            mask[j] = true;
        }
        mask
    };
    let m = values.len() as i64;
    let n = view.n_agents() as i64;
    let sum_in: Rat = set.iter().map(|&j| values[j].clone()).fold(Rat::zero(), |a, b| a + b);
    let avg = &sum_in / &Rat::from_int(set.len() as i64 - (m - n));
    let mut bound = Rat::one();
    for (j, v) in values.iter().enumerate() {
        if !in_set[j] {
            bound = bound * v.clone();
        }
    }
    let outside = values.len() - set.len();
    bound = bound * avg.pow(n - outside as i64);
    for a in alpha {
        bound = bound * a.clone();
    }
    Ok(bound)
}

/// Verifies δ-largeness of the rounded utilities, then checks the
/// large-market guarantee: the social-welfare upper bound `U/n` (in scaled
/// units) is within `(1+4ε)/(1-δ)` of the scaled NSW of the output. All
/// comparisons are exact.
pub fn large_market_check(
    rounded: &RoundedInstance,
    output: &SolverOutput,
    delta: &Rat,
) -> Result<bool, CertifyError> {
    let n = rounded.n();
    if (0..n).any(|i| rounded.caps[i].is_some()) {
        return Err(CertifyError::NotUncapped);
    }
    let n_rat = Rat::from_int(n as i64);
    for i in 0..n {
        let total: Rat = rounded.utils[i]
            .iter()
            .flat_map(|per_copy| per_copy.iter())
            .fold(Rat::zero(), |a, b| a + b);
        let threshold = delta * &total / &n_rat;
        for (j, per_copy) in rounded.utils[i].iter().enumerate() {
            for (l, u) in per_copy.iter().enumerate() {
                if *u > threshold {
                    return Err(CertifyError::NotDeltaLarge { agent: i, good: j, copy: l });
                }
            }
        }
    }
    // scaled bundle utilities u_i(x_i)/alpha_i
    let scaled: Vec<Rat> = (0..n)
        .map(|i| &rounded.bundle_utility(i, &output.allocation[i]) / &output.mbb[i])
        .collect();
    let total: Rat = scaled.iter().fold(Rat::zero(), |a, b| a + b);
    // (U/n)^n <= ((1+4eps)/(1-delta))^n * prod_i scaled_i
    let gamma = &Rat::one() + &(&Rat::from_int(4) * &output.eps);
    let factor = &gamma / &(&Rat::one() - delta);
    let lhs = (&total / &n_rat).pow(n as i64);
    let rhs = factor.pow(n as i64) * scaled.iter().fold(Rat::one(), |a, b| a * b.clone());
    Ok(lhs <= rhs)
}

/// `exp(exp(-1/(1+gamma)))`, the analysis factor, in double precision.
pub fn theoretical_factor(gamma: &Rat) -> f64 {
    (-1.0 / (1.0 + gamma.to_f64())).exp().exp()
}

#[derive(Debug, Clone)]
pub struct Certificate {
    pub eps: Rat,
    pub gamma: Rat,
    pub ef1_ok: bool,
    pub ef1_witness: Option<(usize, usize)>,
    pub individual: IndividualGuarantee,
    pub individual_ok: bool,
    pub auxiliary: AuxiliaryBound,
    pub alg_nsw_nth_power: Rat,
    pub ratio_nth_power: Option<Rat>,
    pub theoretical_cap: f64,
    pub ratio_ok: bool,
    pub n_agents: usize,
}

impl Certificate {
    pub fn pass(&self) -> bool {
        self.ef1_ok && self.ratio_ok
    }
}

/// Float slack applied to the ratio-versus-cap comparison.
pub const RATIO_SLACK: f64 = 1e-9;

/// Checks the solver output against its instance: the 4ε-p-EF1 predicate,
/// the individual guarantee `2 + 4ε`, and the auxiliary upper bound; the
/// certified ratio is compared against `r * exp(exp(-1/(1+4ε)))` (Nash
/// welfare of the output and the bound both live on the rounded instance, so
/// the extra factor `r` covers the rounding loss against original values).
pub fn certify(inst: &Instance, output: &SolverOutput) -> Result<Certificate, CertifyError> {
    let rounded = cap_and_round(inst, &output.eps)?;
    if output.allocation.len() != rounded.n() {
        return Err(CertifyError::Mismatch(format!(
            "allocation rows {} != agent count {}",
            output.allocation.len(),
            rounded.n()
        )));
    }
    for row in &output.allocation {
        if row.len() != rounded.m() {
            return Err(CertifyError::Mismatch("allocation columns != good count".into()));
        }
    }
    if output.prices.len() != rounded.m() || output.mbb.len() != rounded.n() {
        return Err(CertifyError::Mismatch("price/MBB vector lengths do not match".into()));
    }
    for j in 0..rounded.m() {
        let total: usize = (0..rounded.n()).map(|i| output.allocation[i][j]).sum();
        if total != rounded.copies[j] {
            return Err(CertifyError::Mismatch(format!("good {j} is not fully allocated")));
        }
    }

    let state = output.to_market_state(&rounded);
    let gamma = &Rat::from_int(4) * &output.eps;
    let ef1_witness = state.eps_p_ef1_violation(&gamma);
    let individual = individual_guarantee(&state);
    let individual_bound = &Rat::from_int(2) + &gamma;
    let individual_ok = match &individual.ratio {
        Some(r) => *r <= individual_bound,
        None => false,
    };
    let auxiliary = auxiliary_upper_bound(&rounded, output)?;
    let alg_nsw = nsw_nth_power(&rounded, &output.allocation);
    let n = rounded.n();
    let r = &Rat::one() + &output.eps;
    let theoretical_cap = r.to_f64() * theoretical_factor(&gamma);
    let (ratio_nth_power, ratio_ok) = if alg_nsw.is_positive() {
        let ratio = &auxiliary.bound_nth_power / &alg_nsw;
        let root = ratio.to_f64().powf(1.0 / n as f64);
        (Some(ratio), root <= theoretical_cap + RATIO_SLACK)
    } else {
        // Nash welfare zero: the multiplicative ratio is vacuous; EF1 and
        // the bounds remain informative.
        (None, true)
    };
    Ok(Certificate {
        eps: output.eps.clone(),
        gamma,
        ef1_ok: ef1_witness.is_none(),
        ef1_witness,
        individual,
        individual_ok,
        auxiliary,
        alg_nsw_nth_power: alg_nsw,
        ratio_nth_power,
        theoretical_cap,
        ratio_ok,
        n_agents: n,
    })
}

#[derive(Serialize)]
struct CertificateJson {
    epsilon: String,
    gamma: String,
    #[serde(rename = "ef1Ok")]
    ef1_ok: bool,
    #[serde(rename = "ef1Witness")]
    ef1_witness: Option<(usize, usize)>,
    #[serde(rename = "worstIndividualRatio")]
    worst_individual_ratio: Option<RatField>,
    #[serde(rename = "individualWitness")]
    individual_witness: Option<(usize, usize)>,
    #[serde(rename = "individualOk")]
    individual_ok: bool,
    #[serde(rename = "upperBoundNthPower")]
    upper_bound_nth_power: RatField,
    #[serde(rename = "algNswNthPower")]
    alg_nsw_nth_power: RatField,
    #[serde(rename = "ratioToTheNthPower")]
    ratio_to_the_nth_power: Option<RatField>,
    #[serde(rename = "nswFloat")]
    nsw_float: f64,
    #[serde(rename = "upperBoundFloat")]
    upper_bound_float: f64,
    #[serde(rename = "ratioFloat")]
    ratio_float: Option<f64>,
    #[serde(rename = "theoreticalCapFloat")]
    theoretical_cap_float: f64,
    #[serde(rename = "auxiliaryH")]
    auxiliary_h: usize,
    #[serde(rename = "auxiliaryK")]
    auxiliary_k: usize,
    #[serde(rename = "auxiliaryDelta")]
    auxiliary_delta: Option<RatField>,
    #[serde(rename = "ratioOk")]
    ratio_ok: bool,
    pass: bool,
}

impl Certificate {
    pub fn to_json_string(&self) -> String {
        let n = self.n_agents.max(1) as f64;
        let raw = CertificateJson {
            epsilon: self.eps.to_string(),
            gamma: self.gamma.to_string(),
            ef1_ok: self.ef1_ok,
            ef1_witness: self.ef1_witness,
            worst_individual_ratio: self.individual.ratio.as_ref().map(rat_field),
            individual_witness: self.individual.witness,
            individual_ok: self.individual_ok,
            upper_bound_nth_power: rat_field(&self.auxiliary.bound_nth_power),
            alg_nsw_nth_power: rat_field(&self.alg_nsw_nth_power),
            ratio_to_the_nth_power: self.ratio_nth_power.as_ref().map(rat_field),
            nsw_float: self.alg_nsw_nth_power.to_f64().powf(1.0 / n),
            upper_bound_float: self.auxiliary.bound_nth_power.to_f64().powf(1.0 / n),
            ratio_float: self.ratio_nth_power.as_ref().map(|r| r.to_f64().powf(1.0 / n)),
            theoretical_cap_float: self.theoretical_cap,
            auxiliary_h: self.auxiliary.h,
            auxiliary_k: self.auxiliary.k,
            auxiliary_delta: self.auxiliary.delta.as_ref().map(rat_field),
            ratio_ok: self.ratio_ok,
            pass: self.pass(),
        };
        serde_json::to_string_pretty(&raw).expect("certificate serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators;
    use crate::instance::Instance;
    use crate::oracle;
    use crate::solver::solve;

    fn eps100() -> Rat {
        Rat::ratio(1, 100)
    }

    #[test]
    fn nsw_matches_worked_examples() {
        let multi = generators::multicopy_envy(&eps100()).unwrap();
        let s = generators::envy_scale(&eps100()).unwrap();
        let opt = vec![vec![2, 0], vec![3, 2]];
        assert_eq!(nsw_nth_power(&multi, &opt), &Rat::from_int(10) * &(&s * &s));
        let capped = generators::capped_envy(&eps100()).unwrap();
        let opt2 = vec![vec![1, 0, 0, 0], vec![0, 1, 1, 1]];
        assert_eq!(nsw_nth_power(&capped, &opt2), &Rat::from_int(3) * &(&s * &s));
        // empty bundle zeroes the product
        assert_eq!(nsw_nth_power(&capped, &[vec![0; 4], vec![1; 4]]), Rat::zero());
    }

    #[test]
    fn individual_guarantee_on_multicopy_terminal_state() {
        let inst = generators::multicopy_envy(&eps100()).unwrap();
        let out = solve(&inst, &eps100()).unwrap();
        let rounded = cap_and_round(&inst, &eps100()).unwrap();
        let state = out.to_market_state(&rounded);
        let s = generators::envy_scale(&eps100()).unwrap();
        let g = individual_guarantee(&state);
        let two_s = &Rat::from_int(2) * &s;
        let expected = &(&two_s + &Rat::one()) / &two_s;
        assert_eq!(g.ratio, Some(expected.clone()));
        assert_eq!(g.witness, Some((0, 1)));
        assert!(expected > Rat::ratio(12, 10));
        assert!(expected <= &Rat::from_int(2) + &(&Rat::from_int(4) * &eps100()));
    }

    #[test]
    fn individual_guarantee_trivial_cases() {
        // single agent: no pairs
        let inst = Instance::new(vec![None], vec![1], vec![vec![vec![Rat::from_int(3)]]]);
        let rounded = cap_and_round(&inst, &Rat::ratio(1, 4)).unwrap();
        let st = MarketState::from_parts(&rounded, vec![vec![1]], vec![rounded.utils[0][0][0].clone()], vec![Rat::one()]);
        let g = individual_guarantee(&st);
        assert_eq!(g.ratio, Some(Rat::zero()));
        assert_eq!(g.witness, None);
        // identical singleton bundles: removal empties the bundle
        let pair = Instance::new(
            vec![None, None],
            vec![1, 1],
            vec![
                vec![vec![Rat::from_int(5)], vec![Rat::from_int(5)]],
                vec![vec![Rat::from_int(5)], vec![Rat::from_int(5)]],
            ],
        );
        let rounded2 = cap_and_round(&pair, &Rat::ratio(1, 4)).unwrap();
        let v = rounded2.utils[0][0][0].clone();
        let st2 = MarketState::from_parts(
            &rounded2,
            vec![vec![1, 0], vec![0, 1]],
            vec![v.clone(), v],
            vec![Rat::one(), Rat::one()],
        );
        let g2 = individual_guarantee(&st2);
        assert_eq!(g2.ratio, Some(Rat::zero()));
    }

    #[test]
    fn auxiliary_core_reproduces_worked_example() {
        // items (3, 1, 1), two uncapped agents: h=1, k=0, delta=2, bound 3*2
        let items = vec![Rat::from_int(3), Rat::one(), Rat::one()];
        let caps = vec![None, None];
        let core = auxiliary_bound_core(&items, &caps, 2).unwrap();
        assert_eq!(core.h, 1);
        assert_eq!(core.k, 0);
        assert_eq!(core.delta, Some(Rat::from_int(2)));
        assert_eq!(core.bound_nth_power, Rat::from_int(6));
        // strictly below the analysis-style bound 4*2
        assert!(core.bound_nth_power < Rat::from_int(8));
    }

    #[test]
    fn auxiliary_core_single_agent() {
        // n=1: bound = min(cap, total value)
        let items = vec![Rat::from_int(4), Rat::from_int(2)];
        let capped = auxiliary_bound_core(&items, &[Some(Rat::from_int(5))], 1).unwrap();
        assert_eq!(capped.bound_nth_power, Rat::from_int(5));
        let free = auxiliary_bound_core(&items, &[None], 1).unwrap();
        assert_eq!(free.bound_nth_power, Rat::from_int(6));
        let large_cap = auxiliary_bound_core(&items, &[Some(Rat::from_int(50))], 1).unwrap();
        assert_eq!(large_cap.bound_nth_power, Rat::from_int(6));
    }

    #[test]
    fn auxiliary_bound_dominates_optimum_on_worked_examples() {
        for inst in [
            generators::multicopy_envy(&eps100()).unwrap(),
            generators::capped_envy(&eps100()).unwrap(),
        ] {
            let out = solve(&inst, &eps100()).unwrap();
            let rounded = cap_and_round(&inst, &eps100()).unwrap();
            let aux = auxiliary_upper_bound(&rounded, &out).unwrap();
            let opt = oracle::brute_force_opt(&rounded, oracle::DEFAULT_MAX_STATES).unwrap();
            assert!(aux.bound_nth_power >= opt.best_nsw_nth_power);
            let alg = nsw_nth_power(&rounded, &out.allocation);
            assert!(opt.best_nsw_nth_power >= alg);
        }
    }

    #[test]
    fn bmv_greedy_set_reproduces_worked_example() {
        let values = vec![Rat::from_int(3), Rat::one(), Rat::one()];
        let set = bmv_greedy_set(&values, 2, None);
        assert_eq!(set, vec![1, 2]);
        let inst = Instance::new(
            vec![None, None],
            vec![1, 1, 1],
            vec![
                vec![vec![Rat::from_int(3)], vec![Rat::one()], vec![Rat::one()]],
                vec![vec![Rat::from_int(3)], vec![Rat::one()], vec![Rat::one()]],
            ],
        );
        let bound = bmv_bound_nth_power(&inst, &[Rat::one(), Rat::one()]).unwrap();
        assert_eq!(bound, Rat::from_int(6));
    }

    #[test]
    fn bmv_uniform_and_scale_invariance() {
        // uniform values, m = n: S stays full and the bound is v^n
        let inst = Instance::new(
            vec![None, None],
            vec![1, 1],
            vec![
                vec![vec![Rat::from_int(5)], vec![Rat::from_int(5)]],
                vec![vec![Rat::from_int(5)], vec![Rat::from_int(5)]],
            ],
        );
        let ones = vec![Rat::one(), Rat::one()];
        assert_eq!(bmv_bound_nth_power(&inst, &ones).unwrap(), Rat::from_int(25));
        // rescaling alpha by a common factor leaves the bound unchanged
        let scaled = vec![Rat::ratio(7, 3), Rat::ratio(7, 3)];
        assert_eq!(bmv_bound_nth_power(&inst, &scaled).unwrap(), Rat::from_int(25));
        // rejects multi-copy or capped input
        let multi = generators::multicopy_envy(&eps100()).unwrap();
        assert!(bmv_bound_nth_power(&multi, &ones).is_err());
    }

    #[test]
    fn bmv_fixpoint_is_order_independent() {
        let values = vec![
            Rat::from_int(9),
            Rat::from_int(7),
            Rat::from_int(2),
            Rat::one(),
            Rat::one(),
            Rat::ratio(1, 2),
        ];
        let reference = bmv_greedy_set(&values, 3, None);
        for seed in 0..10 {
            assert_eq!(bmv_greedy_set(&values, 3, Some(seed)), reference);
        }
    }

    #[test]
    fn theoretical_factor_matches_table() {
        let cases = [
            (Rat::zero(), 1.44467),
            (Rat::ratio(1, 100), 1.44997),
            (Rat::ratio(2, 100), 1.45523),
            (Rat::ratio(3, 100), 1.46046),
            (Rat::ratio(4, 100), 1.46566),
        ];
        for (gamma, expected) in cases {
            assert!((theoretical_factor(&gamma) - expected).abs() < 5e-6);
        }
    }

    #[test]
    fn large_market_check_accepts_generated_instances() {
        let delta = Rat::ratio(1, 2);
        let inst = generators::delta_large(2, 8, &delta, 3).unwrap();
        let eps = Rat::ratio(1, 4);
        let out = solve(&inst, &eps).unwrap();
        let rounded = cap_and_round(&inst, &eps).unwrap();
        assert!(large_market_check(&rounded, &out, &delta).unwrap());
        // a spiked instance fails the precondition with the violating item
        let spiked = Instance::new(
            vec![None, None],
            vec![1, 1],
            vec![
                vec![vec![Rat::from_int(100)], vec![Rat::one()]],
                vec![vec![Rat::one()], vec![Rat::one()]],
            ],
        );
        let out2 = solve(&spiked, &eps).unwrap();
        let rounded2 = cap_and_round(&spiked, &eps).unwrap();
        assert!(matches!(
            large_market_check(&rounded2, &out2, &delta),
            Err(CertifyError::NotDeltaLarge { agent: 0, good: 0, copy: 0 })
        ));
    }

    #[test]
    fn certify_bundles_the_run_guarantees() {
        let inst = generators::multicopy_envy(&eps100()).unwrap();
        let out = solve(&inst, &eps100()).unwrap();
        let cert = certify(&inst, &out).unwrap();
        assert!(cert.ef1_ok);
        assert!(cert.individual_ok);
        assert!(cert.ratio_ok);
        assert!(cert.pass());
        let ratio = cert.ratio_nth_power.clone().unwrap();
        assert!(ratio >= Rat::one());
        // serialized form carries the pinned field names
        let text = cert.to_json_string();
        for key in [
            "\"ef1Ok\"",
            "\"worstIndividualRatio\"",
            "\"upperBoundNthPower\"",
            "\"algNswNthPower\"",
            "\"ratioToTheNthPower\"",
            "\"theoreticalCapFloat\"",
        ] {
            assert!(text.contains(key), "missing {key} in certificate JSON");
        }
    }

    #[test]
    fn certify_rejects_mismatched_solutions() {
        let inst = generators::capped_envy(&eps100()).unwrap();
        let mut out = solve(&inst, &eps100()).unwrap();
        out.allocation[0][0] += 1;
        assert!(matches!(certify(&inst, &out), Err(CertifyError::Mismatch(_))));
    }

}
