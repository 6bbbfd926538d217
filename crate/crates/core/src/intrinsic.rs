//! The per-instant trading problem: given the current book, open positions
//! and storage state, pick order quantities maximizing cash minus
//! degradation subject to power, envelope, terminal and cycle limits.
//!
//! Charging and discharging within one delivery period are mutually
//! exclusive, enforced by one binary per period. The LP relaxation is
//! accepted whenever it already respects that exclusivity, which is the
//! common case; branch and bound is the fallback.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcr::{soc_envelope, BessSpec, EfaBlock, FcrStrategy};
use crate::market::{DeliveryPeriod, OrderBookSnapshot, Side};
use crate::solver::{solve_milp, LinearProgram, LpStatus, MilpStatus, Rel};

const FEAS_TOL: f64 = 1e-6;
const COMP_TOL: f64 = 1e-7;

/// JSON has no infinity literal, so an unbounded value travels as null.
mod optional_infinity {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// One tradeable delivery period with its prior position and bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSpec {
    pub product: DeliveryPeriod,
    /// b_t^0, MW. Positive charges the battery.
    pub prior_mw: f64,
    pub power_min_mw: f64,
    pub power_max_mw: f64,
    pub soc_min_mwh: f64,
    pub soc_max_mwh: f64,
}

/// A resting order visible to the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOrder {
    pub order_id: String,
    /// Index into `IntrinsicInstance::periods`.
    pub period: usize,
    pub side: Side,
    pub price: f64,
    pub quantity_mw: f64,
}

impl InstanceOrder {
    /// Trade direction executed against this resting order: hitting an ask
    /// buys energy (battery charges, cash out), hitting a bid sells.
    pub fn trade_sign(&self) -> f64 {
        -self.side.sign()
    }
}

/// Immutable input of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicInstance {
    /// Δ, hours per period.
    pub delta_h: f64,
    /// Drift-corrected storage level entering the first period, MWh.
    pub c0_mwh: f64,
    /// Required storage level after the last period, MWh.
    pub terminal_mwh: f64,
    /// Remaining full cycles; may be infinite (serialized as null).
    #[serde(with = "optional_infinity")]
    pub cycle_budget: f64,
    pub energy_cap_mwh: f64,
    pub kappa_eur_mwh: f64,
    pub eta_ch: f64,
    pub eta_dis: f64,
    pub periods: Vec<PeriodSpec>,
    pub orders: Vec<InstanceOrder>,
}

/// Solution of one solve. Quantities are per instance order; schedule
/// vectors are per period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradePlan {
    pub objective_eur: f64,
    pub q_mw: Vec<f64>,
    pub net_mw: Vec<f64>,
    pub charge_mw: Vec<f64>,
    pub discharge_mw: Vec<f64>,
    pub soc_mwh: Vec<f64>,
}

impl TradePlan {
    pub fn has_trades(&self) -> bool {
        self.q_mw.iter().any(|q| *q > 0.0)
    }
}

/// Outcome of a solve: an optimal plan, or proof that no feasible schedule
/// exists for the given state.
#[derive(Debug, Clone, PartialEq)]
pub enum IntrinsicOutcome {
    Plan(TradePlan),
    Infeasible,
}

impl IntrinsicInstance {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_h > 0.0) {
            return Err(Error::validation("period length must be positive"));
        }
        if self.periods.is_empty() {
            return Err(Error::validation("instance has no periods"));
        }
        if !self
            .periods
            .windows(2)
            .all(|w| w[0].product.start < w[1].product.start)
        {
            return Err(Error::validation("periods must be strictly increasing"));
        }
        for (t, p) in self.periods.iter().enumerate() {
            if p.power_min_mw > p.power_max_mw + FEAS_TOL {
                return Err(Error::validation(format!("period {t}: empty power range")));
            }
            if p.soc_min_mwh > p.soc_max_mwh + FEAS_TOL {
                return Err(Error::validation(format!("period {t}: empty SoC range")));
            }
        }
        let last = self.periods.last().unwrap();
        if self.terminal_mwh < last.soc_min_mwh - FEAS_TOL
            || self.terminal_mwh > last.soc_max_mwh + FEAS_TOL
        {
            return Err(Error::validation(format!(
                "terminal level {} outside the final envelope [{}, {}]",
                self.terminal_mwh, last.soc_min_mwh, last.soc_max_mwh
            )));
        }
        if self.cycle_budget < 0.0 {
            return Err(Error::validation("cycle budget must be nonnegative"));
        }
        if !(self.eta_ch > 0.0 && self.eta_ch <= 1.0 && self.eta_dis > 0.0 && self.eta_dis <= 1.0)
        {
            return Err(Error::validation("efficiencies must lie in (0, 1]"));
        }
        for (i, o) in self.orders.iter().enumerate() {
            if o.period >= self.periods.len() {
                return Err(Error::validation(format!(
                    "order {i} references missing period {}",
                    o.period
                )));
            }
            if !(o.quantity_mw >= 0.0 && o.price.is_finite()) {
                return Err(Error::validation(format!("order {i}: bad price or quantity")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<IntrinsicInstance> {
        let inst: IntrinsicInstance = serde_json::from_str(s)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn dump(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<IntrinsicInstance> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Energy added to storage in one period at net power `b`, MWh,
    /// with charge and discharge forced onto separate signs.
    fn soc_step(&self, b: f64) -> f64 {
        if b >= 0.0 {
            self.delta_h * self.eta_ch * b
        } else {
            self.delta_h * b / self.eta_dis
        }
    }

    /// Cash plus degradation value of quantities `q`, recomputed in plain
    /// arithmetic, together with the implied schedule. Errors name the
    /// violated constraint.
    pub fn evaluate(&self, q: &[f64], tol: f64) -> Result<TradePlan> {
        if q.len() != self.orders.len() {
            return Err(Error::validation("quantity vector length mismatch"));
        }
        let t_count = self.periods.len();
        let mut net: Vec<f64> = self.periods.iter().map(|p| p.prior_mw).collect();
        let mut cash = 0.0;
        for (o, &qi) in self.orders.iter().zip(q.iter()) {
            if qi < -tol || qi > o.quantity_mw + tol {
                return Err(Error::validation(format!(
                    "order {} quantity {qi} outside [0, {}]",
                    o.order_id, o.quantity_mw
                )));
            }
            net[o.period] -= o.trade_sign() * qi;
            cash += self.delta_h * o.price * o.trade_sign() * qi;
        }
        let mut charge = vec![0.0; t_count];
        let mut discharge = vec![0.0; t_count];
        let mut soc = vec![0.0; t_count];
        let mut c = self.c0_mwh;
        let mut throughput = 0.0;
        for (t, p) in self.periods.iter().enumerate() {
            let b = net[t];
            if b < p.power_min_mw - tol || b > p.power_max_mw + tol {
                return Err(Error::validation(format!(
                    "period {t}: net power {b} outside [{}, {}]",
                    p.power_min_mw, p.power_max_mw
                )));
            }
            charge[t] = b.max(0.0);
            discharge[t] = (-b).max(0.0);
            throughput += charge[t] + discharge[t];
            c += self.soc_step(b);
            if c < p.soc_min_mwh - tol || c > p.soc_max_mwh + tol {
                return Err(Error::validation(format!(
                    "period {t}: storage {c} outside [{}, {}]",
                    p.soc_min_mwh, p.soc_max_mwh
                )));
            }
            soc[t] = c;
        }
        if (c - self.terminal_mwh).abs() > tol {
            return Err(Error::validation(format!(
                "terminal level {c} != {}",
                self.terminal_mwh
            )));
        }
        if self.cycle_budget.is_finite() {
            let cycles = self.delta_h * throughput / (2.0 * self.energy_cap_mwh);
            if cycles > self.cycle_budget + tol {
                return Err(Error::validation(format!(
                    "cycles {cycles} exceed budget {}",
                    self.cycle_budget
                )));
            }
        }
        let objective = cash - self.kappa_eur_mwh * self.delta_h * throughput;
        Ok(TradePlan {
            objective_eur: objective,
            q_mw: q.to_vec(),
            net_mw: net,
            charge_mw: charge,
            discharge_mw: discharge,
            soc_mwh: soc,
        })
    }
}

/// Calendar and state context needed to assemble an instance.
#[derive(Debug, Clone)]
pub struct InstanceContext<'a> {
    /// Tradeable products, ascending, all of one granularity.
    pub products: &'a [DeliveryPeriod],
    pub c0_mwh: f64,
    pub terminal_mwh: f64,
    pub cycle_budget: f64,
    /// Prior positions; products absent here start flat.
    pub prior_mw: &'a BTreeMap<DeliveryPeriod, f64>,
}

/// Assembles the optimization input for one solve instant from the order
/// book, the FCR commitment and the battery parameters.
pub fn build_instance(
    snapshot: &OrderBookSnapshot,
    ctx: &InstanceContext<'_>,
    strategy: &FcrStrategy,
    spec: &BessSpec,
) -> Result<IntrinsicInstance> {
    if ctx.products.is_empty() {
        return Err(Error::validation("no tradeable products"));
    }
    let duration = ctx.products[0].duration;
    if ctx.products.iter().any(|p| p.duration != duration) {
        return Err(Error::validation("mixed product granularities"));
    }
    let mut periods = Vec::with_capacity(ctx.products.len());
    let mut orders = Vec::new();
    for (t, product) in ctx.products.iter().enumerate() {
        let block = EfaBlock::of_instant(product.start);
        let x_i = strategy.mw(block);
        let envelope = soc_envelope(spec, x_i)?;
        let headroom = (spec.power_cap_mw - x_i).max(0.0);
        periods.push(PeriodSpec {
            product: *product,
            prior_mw: ctx.prior_mw.get(product).copied().unwrap_or(0.0),
            power_min_mw: -headroom,
            power_max_mw: headroom,
            soc_min_mwh: envelope.lower_mwh,
            soc_max_mwh: envelope.upper_mwh,
        });
        if let Some(book) = snapshot.book(product) {
            for order in book.bids.iter().chain(book.asks.iter()) {
                orders.push(InstanceOrder {
                    order_id: order.order_id.clone(),
                    period: t,
                    side: order.side,
                    price: order.limit_price,
                    quantity_mw: order.quantity_mw,
                });
            }
        }
    }
    let instance = IntrinsicInstance {
        delta_h: duration.hours(),
        c0_mwh: ctx.c0_mwh,
        terminal_mwh: ctx.terminal_mwh,
        cycle_budget: ctx.cycle_budget,
        energy_cap_mwh: spec.energy_cap_mwh,
        kappa_eur_mwh: spec.degradation_eur_mwh,
        eta_ch: spec.eta_ch,
        eta_dis: spec.eta_dis,
        periods,
        orders,
    };
    instance.validate()?;
    Ok(instance)
}

struct VarMap {
    q0: usize,
    b0: usize,
    bp0: usize,
    bm0: usize,
    dl0: usize,
}

fn build_lp(inst: &IntrinsicInstance) -> (LinearProgram, VarMap, bool) {
    let t_count = inst.periods.len();
    let n_orders = inst.orders.len();
    let mut lp = LinearProgram::new();
    let kappa_term = -inst.kappa_eur_mwh * inst.delta_h;

    let q0 = 0;
    for o in &inst.orders {
        lp.add_var(inst.delta_h * o.price * o.trade_sign(), 0.0, o.quantity_mw);
    }
    let b0 = q0 + n_orders;
    for p in &inst.periods {
        lp.add_var(0.0, p.power_min_mw, p.power_max_mw);
    }
    let bp0 = b0 + t_count;
    for p in &inst.periods {
        lp.add_var(kappa_term, 0.0, p.power_max_mw.max(0.0));
    }
    let bm0 = bp0 + t_count;
    for p in &inst.periods {
        lp.add_var(kappa_term, 0.0, (-p.power_min_mw).max(0.0));
    }
    let c0 = bm0 + t_count;
    for (t, p) in inst.periods.iter().enumerate() {
        if t + 1 == t_count {
            lp.add_var(
                0.0,
                inst.terminal_mwh.max(p.soc_min_mwh),
                inst.terminal_mwh.min(p.soc_max_mwh),
            );
        } else {
            lp.add_var(0.0, p.soc_min_mwh, p.soc_max_mwh);
        }
    }
    let dl0 = c0 + t_count;
    for _ in 0..t_count {
        lp.add_var(0.0, 0.0, 1.0);
    }

    for (t, p) in inst.periods.iter().enumerate() {
        // b_t + sum sigma_i q_i = b_t^0
        let mut coeffs = vec![(b0 + t, 1.0)];
        for (i, o) in inst.orders.iter().enumerate() {
            if o.period == t {
                coeffs.push((q0 + i, o.trade_sign()));
            }
        }
        lp.add_row(coeffs, Rel::Eq, p.prior_mw);

        // b_t = b+_t - b-_t
        lp.add_row(
            vec![(b0 + t, 1.0), (bp0 + t, -1.0), (bm0 + t, 1.0)],
            Rel::Eq,
            0.0,
        );

        // exclusivity links to the binary
        let cap_up = p.power_max_mw.max(0.0);
        let cap_dn = (-p.power_min_mw).max(0.0);
        lp.add_row(vec![(bp0 + t, 1.0), (dl0 + t, -cap_up)], Rel::Le, 0.0);
        lp.add_row(vec![(bm0 + t, 1.0), (dl0 + t, cap_dn)], Rel::Le, cap_dn);

        // storage recursion
        let mut rec = vec![
            (c0 + t, 1.0),
            (bp0 + t, -inst.delta_h * inst.eta_ch),
            (bm0 + t, inst.delta_h / inst.eta_dis),
        ];
        let rhs = if t == 0 {
            inst.c0_mwh
        } else {
            rec.push((c0 + t - 1, -1.0));
            0.0
        };
        lp.add_row(rec, Rel::Eq, rhs);
    }

    // cycle limit, only when it can bind
    let max_throughput: f64 = inst
        .periods
        .iter()
        .map(|p| p.power_max_mw.max(0.0) + (-p.power_min_mw).max(0.0))
        .sum();
    let mut has_cycle_row = false;
    if inst.cycle_budget.is_finite() {
        let rhs = 2.0 * inst.energy_cap_mwh * inst.cycle_budget / inst.delta_h;
        if rhs < max_throughput {
            let coeffs: Vec<(usize, f64)> = (0..t_count)
                .flat_map(|t| [(bp0 + t, 1.0), (bm0 + t, 1.0)])
                .collect();
            lp.add_row(coeffs, Rel::Le, rhs);
            has_cycle_row = true;
        }
    }

    (
        lp,
        VarMap {
            q0,
            b0,
            bp0,
            bm0,
            dl0,
        },
        has_cycle_row,
    )
}

/// Interval reachability of the storage path under exclusive charge and
/// discharge. `false` certifies the instance infeasible before any LP
/// runs; `true` says nothing. The relaxation cannot stand in for this
/// check because it may dissipate surplus energy by charging and
/// discharging at once, which keeps every branch-and-bound node feasible
/// and turns an infeasibility proof into a full tree walk.
fn energy_reachable(inst: &IntrinsicInstance) -> bool {
    let t_count = inst.periods.len();
    let mut buy_mw = vec![0.0f64; t_count];
    let mut sell_mw = vec![0.0f64; t_count];
    for o in &inst.orders {
        match o.side {
            Side::Ask => buy_mw[o.period] += o.quantity_mw,
            Side::Bid => sell_mw[o.period] += o.quantity_mw,
        }
    }
    let (mut lo, mut hi) = (inst.c0_mwh, inst.c0_mwh);
    for (t, p) in inst.periods.iter().enumerate() {
        let b_lo = (p.prior_mw - sell_mw[t]).max(p.power_min_mw);
        let b_hi = (p.prior_mw + buy_mw[t]).min(p.power_max_mw);
        if b_lo > b_hi + 1e-7 {
            return false;
        }
        lo += inst.soc_step(b_lo.min(b_hi));
        hi += inst.soc_step(b_hi);
        let (c_lo, c_hi) = if t + 1 == t_count {
            (
                inst.terminal_mwh.max(p.soc_min_mwh),
                inst.terminal_mwh.min(p.soc_max_mwh),
            )
        } else {
            (p.soc_min_mwh, p.soc_max_mwh)
        };
        lo = lo.max(c_lo);
        hi = hi.min(c_hi);
        if lo > hi + 1e-7 {
            return false;
        }
    }
    true
}

/// Largest pairwise min(b+, b-): zero means no period charges and
/// discharges at once.
fn worst_overlap(x: &[f64], vm: &VarMap, t_count: usize) -> f64 {
    (0..t_count)
        .map(|t| x[vm.bp0 + t].min(x[vm.bm0 + t]))
        .fold(0.0, f64::max)
}

fn extract_q(x: &[f64], inst: &IntrinsicInstance, vm: &VarMap) -> Vec<f64> {
    inst.orders
        .iter()
        .enumerate()
        .map(|(i, o)| x[vm.q0 + i].clamp(0.0, o.quantity_mw))
        .collect()
}

/// Secondary solve: among plans within 1e-7 of the optimal value and with
/// the given exclusivity pattern, pick the one moving positions least.
fn tie_break(
    inst: &IntrinsicInstance,
    objective: f64,
    deltas: &[f64],
) -> Result<Option<Vec<f64>>> {
    let t_count = inst.periods.len();
    let (mut lp, vm, _) = build_lp(inst);
    for (t, d) in deltas.iter().enumerate() {
        let v = if *d > 0.5 { 1.0 } else { 0.0 };
        lp.set_bounds(vm.dl0 + t, v, v);
    }
    // pin the primary objective
    let mut obj_row = Vec::new();
    for (i, o) in inst.orders.iter().enumerate() {
        obj_row.push((vm.q0 + i, inst.delta_h * o.price * o.trade_sign()));
    }
    let kappa_term = -inst.kappa_eur_mwh * inst.delta_h;
    if kappa_term != 0.0 {
        for t in 0..t_count {
            obj_row.push((vm.bp0 + t, kappa_term));
            obj_row.push((vm.bm0 + t, kappa_term));
        }
    }
    lp.add_row(obj_row, Rel::Ge, objective - 1e-7);
    // distance variables d_t >= |b_t - b_t^0|
    let mut dist_cols = Vec::with_capacity(t_count);
    for p in &inst.periods {
        let reach = (p.power_max_mw - p.prior_mw)
            .abs()
            .max((p.prior_mw - p.power_min_mw).abs())
            + 1.0;
        dist_cols.push(lp.add_var(-1.0, 0.0, reach));
    }
    for (t, p) in inst.periods.iter().enumerate() {
        lp.add_row(
            vec![(dist_cols[t], 1.0), (vm.b0 + t, -1.0)],
            Rel::Ge,
            -p.prior_mw,
        );
        lp.add_row(
            vec![(dist_cols[t], 1.0), (vm.b0 + t, 1.0)],
            Rel::Ge,
            p.prior_mw,
        );
    }
    let sol = lp.solve()?;
    if sol.status != LpStatus::Optimal {
        return Ok(None);
    }
    Ok(Some(extract_q(&sol.x, inst, &vm)))
}

/// Solves the instance to optimality. Returns `Infeasible` when no
/// schedule satisfies the bounds, terminal level and cycle budget.
pub fn solve(inst: &IntrinsicInstance) -> Result<IntrinsicOutcome> {
    inst.validate()?;
    if !energy_reachable(inst) {
        return Ok(IntrinsicOutcome::Infeasible);
    }
    let t_count = inst.periods.len();
    let (lp, vm, _) = build_lp(inst);
    let relaxed = lp.solve()?;
    if relaxed.status == LpStatus::Infeasible {
        return Ok(IntrinsicOutcome::Infeasible);
    }

    let accepted: Option<(f64, Vec<f64>, Vec<f64>)> = if worst_overlap(&relaxed.x, &vm, t_count)
        <= COMP_TOL
    {
        // exclusivity already holds
        let deltas: Vec<f64> = (0..t_count)
            .map(|t| if relaxed.x[vm.bp0 + t] > COMP_TOL { 1.0 } else { 0.0 })
            .collect();
        Some((relaxed.objective, extract_q(&relaxed.x, inst, &vm), deltas))
    } else {
        // repair attempt: collapse each overlap onto the net sign and keep
        // the point only if the corrected schedule is still feasible
        let q = extract_q(&relaxed.x, inst, &vm);
        match inst.evaluate(&q, FEAS_TOL) {
            Ok(plan) if plan.objective_eur >= relaxed.objective - FEAS_TOL => {
                let deltas: Vec<f64> = plan
                    .net_mw
                    .iter()
                    .map(|b| if *b > 0.0 { 1.0 } else { 0.0 })
                    .collect();
                Some((plan.objective_eur, plan.q_mw, deltas))
            }
            _ => None,
        }
    };

    let (objective, q_star, deltas) = match accepted {
        Some(v) => v,
        None => {
            let int_cols: Vec<usize> = (0..t_count).map(|t| vm.dl0 + t).collect();
            let milp = solve_milp(&lp, &int_cols)?;
            match milp.status {
                MilpStatus::Infeasible => return Ok(IntrinsicOutcome::Infeasible),
                MilpStatus::NodeLimit if !milp.objective.is_finite() => {
                    // no optimum and no infeasibility certificate
                    return Err(Error::Solver(
                        "branch-and-bound exhausted without an answer".into(),
                    ));
                }
                _ => {}
            }
            let deltas: Vec<f64> = (0..t_count)
                .map(|t| milp.x[vm.dl0 + t].round())
                .collect();
            (milp.objective, extract_q(&milp.x, inst, &vm), deltas)
        }
    };

    // prefer the least position churn among ties, then recompute exactly
    let q_final = match tie_break(inst, objective, &deltas)? {
        Some(q) => q,
        None => q_star.clone(),
    };
    let plan = match inst.evaluate(&q_final, FEAS_TOL) {
        Ok(p) => p,
        Err(_) => inst.evaluate(&q_star, FEAS_TOL)?,
    };
    Ok(IntrinsicOutcome::Plan(plan))
}
