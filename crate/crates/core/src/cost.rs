//! Exact MAC/parameter accounting and budget feasibility.
//!
//! All cost values are integer multiply-accumulate counts; the reduction
//! floor (what must still be pruned at a given layer to keep the overall
//! target reachable) is computed in exact rational arithmetic so that clamp
//! decisions never depend on float rounding.

use num_bigint::BigInt;
use num_rational::BigRational;

use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerNode, ModelGraph};
use crate::rate::Rate;

/// Multiply-accumulate count. Additive across layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Macs(pub u64);

impl Macs {
    pub fn as_u64(self) -> u64 {
        self.0
    }
}

impl std::ops::Add for Macs {
    type Output = Macs;
    fn add(self, rhs: Macs) -> Macs {
        Macs(self.0 + rhs.0)
    }
}

impl std::iter::Sum for Macs {
    fn sum<I: Iterator<Item = Macs>>(iter: I) -> Macs {
        Macs(iter.map(|m| m.0).sum())
    }
}

impl std::fmt::Display for Macs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// MACs of one layer at the given channel counts.
///
/// Conv2D: kernel^2 * in * out * out_spatial^2. Dense: in * out. Spatial
/// extent never changes under channel pruning, so it is read off the layer.
pub fn layer_cost(layer: &LayerNode, in_ch: usize, out_ch: usize) -> Macs {
    let (in_ch, out_ch) = (in_ch as u64, out_ch as u64);
    match layer.kind {
        LayerKind::Conv2D => {
            let k = layer.kernel as u64;
            let s = layer.out_spatial as u64;
            Macs(k * k * in_ch * out_ch * s * s)
        }
        LayerKind::Dense => Macs(in_ch * out_ch),
    }
}

/// Total MACs of the graph at its current channel counts.
pub fn total_cost(graph: &ModelGraph) -> Macs {
    graph
        .layers
        .iter()
        .map(|l| layer_cost(l, l.in_channels, l.out_channels))
        .sum()
}

/// Weight plus bias element count over all layers.
pub fn params_count(graph: &ModelGraph) -> u64 {
    graph
        .layers
        .iter()
        .map(|l| (l.weights.data.len() + l.bias.data.len()) as u64)
        .sum()
}

/// Sum of current costs of prunable layers — the portion of the model that
/// pruning decisions can remove. An episode is feasible iff
/// beta * c_all <= alpha_max * prunable_cost.
pub fn prunable_cost(graph: &ModelGraph) -> Macs {
    graph
        .layers
        .iter()
        .filter(|l| l.prunable_out)
        .map(|l| layer_cost(l, l.in_channels, l.out_channels))
        .sum()
}

/// Fails with InfeasibleBudget when even pruning every prunable layer at
/// alpha_max cannot reach `beta`.
pub fn check_feasible(graph: &ModelGraph, beta: &Rate, alpha_max: &Rate) -> Result<()> {
    let c_all = total_cost(graph);
    let reducible = prunable_cost(graph);
    let lhs = beta.as_big() * BigRational::from_integer(BigInt::from(c_all.0));
    let rhs = alpha_max.as_big() * BigRational::from_integer(BigInt::from(reducible.0));
    if lhs > rhs {
        return Err(Error::InfeasibleBudget {
            layer: 0,
            required: if reducible.0 == 0 {
                f64::INFINITY
            } else {
                (lhs / BigRational::from_integer(BigInt::from(reducible.0)))
                    .to_f64_lossy()
            },
            alpha_max: alpha_max.to_f64(),
        });
    }
    Ok(())
}

trait ToF64Lossy {
    fn to_f64_lossy(&self) -> f64;
}

impl ToF64Lossy for BigRational {
    fn to_f64_lossy(&self) -> f64 {
        num_traits::ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

fn big(m: Macs) -> BigRational {
    BigRational::from_integer(BigInt::from(m.0))
}

/// The reduction floor: beta * c_all - alpha_max * c_rest - c_reduced,
/// exact. Negative means no floor binds at this layer.
pub fn min_reduction_parts(
    beta: &Rate,
    alpha_max: &Rate,
    c_all: Macs,
    c_rest: Macs,
    c_reduced: Macs,
) -> Rate {
    let d = beta.as_big() * big(c_all) - alpha_max.as_big() * big(c_rest) - big(c_reduced);
    Rate::from_big(d)
}

/// max(proposed, floor_d / c_l), clipped into [0, alpha_max]. Errors when
/// the floor itself exceeds alpha_max.
pub fn apply_rate_floor(
    proposed: &Rate,
    floor_d: &Rate,
    c_l: Macs,
    alpha_max: &Rate,
    layer: usize,
) -> Result<Rate> {
    if c_l.0 == 0 {
        return Err(Error::InvalidRate(format!(
            "layer {layer} has zero cost, cannot derive a rate floor"
        )));
    }
    if proposed.is_negative() || proposed > alpha_max {
        return Err(Error::InvalidRate(format!(
            "proposed rate {} outside [0, {}]",
            proposed.to_f64(),
            alpha_max.to_f64()
        )));
    }
    let floor_rate = Rate::from_big(floor_d.as_big() / big(c_l));
    if &floor_rate > alpha_max {
        return Err(Error::InfeasibleBudget {
            layer,
            required: floor_rate.to_f64(),
            alpha_max: alpha_max.to_f64(),
        });
    }
    let clamped = proposed.clone().max(floor_rate).max(Rate::zero());
    Ok(clamped.min(alpha_max.clone()))
}

/// Per-episode cost bookkeeping for the layer-wise walk.
///
/// `current_costs` is recomputed from the evolving graph on every advance,
/// so reductions caused upstream (shrunken inputs) are attributed exactly
/// and `c_all == c_reduced + sum(current_costs)` holds as integer identity.
///
/// Two "rest" views coexist: [`rest_cost`](Self::rest_cost) is the full cost
/// of layers after the cursor (conservation, features); the floor in
/// [`min_reduction`](Self::min_reduction) uses only the prunable part of it,
/// since non-prunable layers cannot absorb any of the remaining duty.
#[derive(Debug, Clone)]
pub struct BudgetLedger {
    beta: Rate,
    alpha_max: Rate,
    c_all: Macs,
    current_costs: Vec<Macs>,
    prunable: Vec<bool>,
    layer_ids: Vec<String>,
    cursor: usize,
}

impl BudgetLedger {
    pub fn init(graph: &ModelGraph, beta: Rate, alpha_max: Rate) -> Result<Self> {
        if !beta.in_open_unit() {
            return Err(Error::InvalidRate(format!(
                "beta must lie in (0, 1), got {}",
                beta.to_f64()
            )));
        }
        if !alpha_max.in_half_open_unit() {
            return Err(Error::InvalidRate(format!(
                "alpha_max must lie in (0, 1], got {}",
                alpha_max.to_f64()
            )));
        }
        let current_costs: Vec<Macs> = graph
            .layers
            .iter()
            .map(|l| layer_cost(l, l.in_channels, l.out_channels))
            .collect();
        Ok(BudgetLedger {
            beta,
            alpha_max,
            c_all: current_costs.iter().copied().sum(),
            prunable: graph.layers.iter().map(|l| l.prunable_out).collect(),
            layer_ids: graph.layers.iter().map(|l| l.id.clone()).collect(),
            current_costs,
            cursor: 0,
        })
    }

    pub fn beta(&self) -> &Rate {
        &self.beta
    }

    pub fn alpha_max(&self) -> &Rate {
        &self.alpha_max
    }

    pub fn c_all(&self) -> Macs {
        self.c_all
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn layer_count(&self) -> usize {
        self.current_costs.len()
    }

    pub fn current_cost(&self, l: usize) -> Macs {
        self.current_costs[l]
    }

    /// C_reduced: everything removed so far.
    pub fn reduced_cost(&self) -> Macs {
        let current: u64 = self.current_costs.iter().map(|m| m.0).sum();
        Macs(self.c_all.0 - current)
    }

    /// Current cost of layers strictly after the cursor.
    pub fn rest_cost(&self) -> Macs {
        self.current_costs[self.cursor.min(self.current_costs.len())..]
            .iter()
            .skip(1)
            .copied()
            .sum()
    }

    fn rest_cost_prunable(&self) -> Macs {
        self.current_costs
            .iter()
            .zip(&self.prunable)
            .skip(self.cursor + 1)
            .filter(|(_, p)| **p)
            .map(|(c, _)| *c)
            .sum()
    }

    fn require_cursor(&self, l: usize) -> Result<()> {
        if l != self.cursor {
            return Err(Error::CursorMismatch {
                cursor: self.cursor,
                requested: l,
            });
        }
        Ok(())
    }

    /// The minimum cost that must still be removed at layer `l` (may be
    /// negative: no floor binds).
    pub fn min_reduction(&self, l: usize) -> Result<Rate> {
        self.require_cursor(l)?;
        Ok(min_reduction_parts(
            &self.beta,
            &self.alpha_max,
            self.c_all,
            self.rest_cost_prunable(),
            self.reduced_cost(),
        ))
    }

    /// Lifts `proposed` onto the Eq. 2 floor for layer `l`.
    pub fn clamp_rate(&self, l: usize, proposed: &Rate) -> Result<Rate> {
        self.require_cursor(l)?;
        let d = self.min_reduction(l)?;
        apply_rate_floor(proposed, &d, self.current_costs[l], &self.alpha_max, l)
    }

    /// Re-measures every layer on the achieved graph and moves the cursor
    /// past layer `l`.
    pub fn advance(&mut self, l: usize, achieved: &ModelGraph) -> Result<()> {
        self.require_cursor(l)?;
        if achieved.layers.len() != self.current_costs.len() {
            return Err(Error::PlanMismatch(format!(
                "achieved graph has {} layers, ledger tracks {}",
                achieved.layers.len(),
                self.current_costs.len()
            )));
        }
        for (layer, id) in achieved.layers.iter().zip(&self.layer_ids) {
            if &layer.id != id {
                return Err(Error::PlanMismatch(format!(
                    "achieved graph layer '{}' does not match ledger layer '{}'",
                    layer.id, id
                )));
            }
        }
        self.current_costs = achieved
            .layers
            .iter()
            .map(|layer| layer_cost(layer, layer.in_channels, layer.out_channels))
            .collect();
        self.cursor = l + 1;
        Ok(())
    }

    /// c_all == c_reduced + decided + rest, as exact integers.
    pub fn conservation_holds(&self) -> bool {
        let decided: u64 = self.current_costs[..self.cursor.min(self.current_costs.len())]
            .iter()
            .map(|m| m.0)
            .sum();
        let at_cursor = self
            .current_costs
            .get(self.cursor)
            .map(|m| m.0)
            .unwrap_or(0);
        self.c_all.0 == self.reduced_cost().0 + decided + at_cursor + self.rest_cost().0
    }

    /// The rounding-slack term contributed by deciding layer `l` now:
    /// current_C_l / (c_all * out_channels_l).
    pub fn rounding_slack_term(&self, l: usize, out_channels: usize) -> Rate {
        let num = big(self.current_costs[l]);
        let den = big(self.c_all) * BigRational::from_integer(BigInt::from(out_channels as u64));
        Rate::from_big(num / den)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;
    use crate::tensor::TensorBlob;

    fn conv(id: &str, in_ch: usize, out_ch: usize, kernel: usize, out_spatial: usize) -> LayerNode {
        LayerNode {
            id: id.into(),
            kind: LayerKind::Conv2D,
            in_channels: in_ch,
            out_channels: out_ch,
            kernel,
            stride: 1,
            out_spatial,
            weights: TensorBlob::zeros(vec![out_ch, in_ch, kernel, kernel]),
            bias: TensorBlob::zeros(vec![out_ch]),
            activation: Activation::ReLU,
            prunable_out: true,
        }
    }

    fn dense(id: &str, in_ch: usize, out_ch: usize) -> LayerNode {
        LayerNode {
            id: id.into(),
            kind: LayerKind::Dense,
            in_channels: in_ch,
            out_channels: out_ch,
            kernel: 1,
            stride: 1,
            out_spatial: 1,
            weights: TensorBlob::zeros(vec![out_ch, in_ch]),
            bias: TensorBlob::zeros(vec![out_ch]),
            activation: Activation::Identity,
            prunable_out: false,
        }
    }

    #[test]
    fn conv_cost_matches_loop_nest() {
        // 3x3 kernel, 4 -> 8 channels on an 8x8 output: 9*4*8*64.
        let layer = conv("c", 4, 8, 3, 8);
        assert_eq!(layer_cost(&layer, 4, 8), Macs(18_432));
        assert_eq!(layer_cost(&layer, 4, 0), Macs(0));
    }

    #[test]
    fn dense_cost_is_in_times_out() {
        let layer = dense("d", 16, 10);
        assert_eq!(layer_cost(&layer, 16, 10), Macs(160));
    }

    #[test]
    fn total_cost_sums_layers() {
        let graph = ModelGraph {
            layers: vec![conv("c", 4, 8, 3, 8), dense("d", 16, 10)],
            input_shape: [4, 10, 10],
            num_classes: 10,
        };
        assert_eq!(total_cost(&graph), Macs(18_592));
    }

    #[test]
    fn params_count_counts_elements() {
        let graph = ModelGraph {
            layers: vec![conv("c", 4, 8, 3, 8)],
            input_shape: [4, 10, 10],
            num_classes: 10,
        };
        assert_eq!(params_count(&graph), 296);
        assert_eq!(
            params_count(&ModelGraph {
                layers: vec![dense("d", 16, 10)],
                input_shape: [16, 1, 1],
                num_classes: 10
            }),
            170
        );
        let empty = ModelGraph {
            layers: vec![],
            input_shape: [1, 1, 1],
            num_classes: 1,
        };
        assert_eq!(params_count(&empty), 0);
    }

    fn rate(s: &str) -> Rate {
        Rate::parse_decimal(s).unwrap()
    }

    #[test]
    fn min_reduction_hand_values() {
        // 0.5*1000 - 0.8*400 - 100 = 80
        let d = min_reduction_parts(&rate("0.5"), &rate("0.8"), Macs(1000), Macs(400), Macs(100));
        assert_eq!(d, rate("80"));
        // 0.3*1000 - 0.8*800 - 0 = -340
        let d = min_reduction_parts(&rate("0.3"), &rate("0.8"), Macs(1000), Macs(800), Macs(0));
        assert_eq!(d, rate("-340"));
        // terminal boundary: c_rest = 0 and c_reduced = beta * c_all
        let d = min_reduction_parts(&rate("0.5"), &rate("0.8"), Macs(1000), Macs(0), Macs(500));
        assert_eq!(d, Rate::zero());
    }

    #[test]
    fn min_reduction_is_linear_in_rest_and_reduced() {
        let b = rate("0.37");
        let a = rate("0.8");
        let d0 = min_reduction_parts(&b, &a, Macs(5000), Macs(100), Macs(50));
        let d_rest = min_reduction_parts(&b, &a, Macs(5000), Macs(300), Macs(50));
        let d_red = min_reduction_parts(&b, &a, Macs(5000), Macs(100), Macs(250));
        // slope in c_rest is -alpha_max, slope in c_reduced is -1
        assert_eq!(&d0 - &d_rest, Rate::from_big(a.as_big() * big(Macs(200))));
        assert_eq!(&d0 - &d_red, rate("200"));
    }

    #[test]
    fn rate_floor_examples() {
        let amax = rate("0.8");
        // D=80, C=200, proposed 0.25 -> 0.4
        let r = apply_rate_floor(&rate("0.25"), &rate("80"), Macs(200), &amax, 0).unwrap();
        assert_eq!(r, rate("0.4"));
        // proposal above the floor passes through
        let r = apply_rate_floor(&rate("0.6"), &rate("80"), Macs(200), &amax, 0).unwrap();
        assert_eq!(r, rate("0.6"));
        // negative floor is inert
        let r = apply_rate_floor(&rate("0.33"), &rate("-340"), Macs(200), &amax, 0).unwrap();
        assert_eq!(r, rate("0.33"));
        // floor above alpha_max is infeasible
        match apply_rate_floor(&rate("0.1"), &rate("170"), Macs(200), &amax, 3) {
            Err(Error::InfeasibleBudget { layer: 3, .. }) => {}
            other => panic!("expected InfeasibleBudget, got {other:?}"),
        }
    }

    #[test]
    fn ledger_init_validates_rates() {
        let graph = ModelGraph {
            layers: vec![conv("c", 4, 8, 3, 8), dense("d", 8, 10)],
            input_shape: [4, 10, 10],
            num_classes: 10,
        };
        assert!(BudgetLedger::init(&graph, rate("1.2"), rate("0.8")).is_err());
        assert!(BudgetLedger::init(&graph, rate("0.5"), rate("0")).is_err());
        let ledger = BudgetLedger::init(&graph, rate("0.5"), rate("0.8")).unwrap();
        assert_eq!(ledger.reduced_cost(), Macs(0));
        assert_eq!(ledger.cursor(), 0);
        assert_eq!(ledger.rest_cost(), Macs(80));
        assert!(ledger.conservation_holds());
        // determinism: same inputs, same ledger
        let again = BudgetLedger::init(&graph, rate("0.5"), rate("0.8")).unwrap();
        assert_eq!(ledger.current_costs, again.current_costs);
    }

    #[test]
    fn cursor_mismatch_is_rejected() {
        let graph = ModelGraph {
            layers: vec![conv("c", 4, 8, 3, 8), dense("d", 8, 10)],
            input_shape: [4, 10, 10],
            num_classes: 10,
        };
        let ledger = BudgetLedger::init(&graph, rate("0.5"), rate("0.8")).unwrap();
        match ledger.min_reduction(1) {
            Err(Error::CursorMismatch { cursor: 0, requested: 1 }) => {}
            other => panic!("expected CursorMismatch, got {other:?}"),
        }
    }
}
