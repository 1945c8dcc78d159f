//! Behavioral source expressions.
//!
//! An expression tree over node voltages, branch currents and constants.
//! Evaluation returns both the value and the exact analytic partial
//! derivatives with respect to every referenced unknown, which is what the
//! Newton loop stamps as the Jacobian row. Evaluation is total on finite
//! inputs: division guards its denominator with a configurable epsilon and
//! sqrt clamps negative arguments to zero.

use super::layout::Layout;
use super::NodeId;
use thiserror::Error;

/// Epsilon used to guard divisions and the sqrt derivative.
pub const DIV_GUARD_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("table lookup at {x} outside range [{lo}, {hi}] with extrapolation disabled")]
    TableOutOfRange { x: f64, lo: f64, hi: f64 },
    #[error("expression references unknown branch '{0}'")]
    UnknownBranch(String),
    #[error("expression references node {0} outside the layout")]
    UnknownNode(NodeId),
}

/// Piecewise-linear lookup table with strictly increasing breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    pub points: Vec<(f64, f64)>,
    pub extrapolate: bool,
}

impl LookupTable {
    pub fn new(points: Vec<(f64, f64)>, extrapolate: bool) -> Self {
        debug_assert!(points.windows(2).all(|w| w[0].0 < w[1].0));
        LookupTable { points, extrapolate }
    }

    fn eval(&self, x: f64) -> Result<(f64, f64), ExprError> {
        let pts = &self.points;
        let lo = pts.first().map(|p| p.0).unwrap_or(0.0);
        let hi = pts.last().map(|p| p.0).unwrap_or(0.0);
        if pts.len() == 1 {
            return Ok((pts[0].1, 0.0));
        }
        if (x < lo || x > hi) && !self.extrapolate {
            return Err(ExprError::TableOutOfRange { x, lo, hi });
        }
        // segment index: clamped for extrapolation
        let seg = match pts.binary_search_by(|p| p.0.total_cmp(&x)) {
            Ok(i) => i.min(pts.len() - 2),
            Err(i) => i.clamp(1, pts.len() - 1) - 1,
        };
        let (x0, y0) = pts[seg];
        let (x1, y1) = pts[seg + 1];
        let slope = (y1 - y0) / (x1 - x0);
        Ok((y0 + slope * (x - x0), slope))
    }
}

/// Expression tree for behavioral sources.
#[derive(Debug, Clone, PartialEq)]
pub enum BehavioralExpr {
    Const(f64),
    /// Voltage of a node (0 for ground).
    V(NodeId),
    /// Current through the named branch-bearing primitive.
    I(String),
    Add(Box<BehavioralExpr>, Box<BehavioralExpr>),
    Sub(Box<BehavioralExpr>, Box<BehavioralExpr>),
    Mul(Box<BehavioralExpr>, Box<BehavioralExpr>),
    Div(Box<BehavioralExpr>, Box<BehavioralExpr>),
    Neg(Box<BehavioralExpr>),
    Sin(Box<BehavioralExpr>),
    Cos(Box<BehavioralExpr>),
    Exp(Box<BehavioralExpr>),
    Sqrt(Box<BehavioralExpr>),
    Min(Box<BehavioralExpr>, Box<BehavioralExpr>),
    Max(Box<BehavioralExpr>, Box<BehavioralExpr>),
    Clamp {
        arg: Box<BehavioralExpr>,
        lo: f64,
        hi: f64,
    },
    Table {
        arg: Box<BehavioralExpr>,
        table: LookupTable,
    },
}

impl BehavioralExpr {
    pub fn constant(v: f64) -> Self {
        BehavioralExpr::Const(v)
    }
    pub fn v(node: NodeId) -> Self {
        BehavioralExpr::V(node)
    }
    pub fn i(branch: impl Into<String>) -> Self {
        BehavioralExpr::I(branch.into())
    }
    pub fn clamp(self, lo: f64, hi: f64) -> Self {
        BehavioralExpr::Clamp {
            arg: Box::new(self),
            lo,
            hi,
        }
    }
    pub fn sqrt(self) -> Self {
        BehavioralExpr::Sqrt(Box::new(self))
    }
    pub fn sin(self) -> Self {
        BehavioralExpr::Sin(Box::new(self))
    }
    pub fn cos(self) -> Self {
        BehavioralExpr::Cos(Box::new(self))
    }
    pub fn exp(self) -> Self {
        BehavioralExpr::Exp(Box::new(self))
    }

    /// Resolves node/branch references to dense unknown indices.
    pub fn bind(&self, layout: &Layout) -> Result<BoundExpr, ExprError> {
        let node = match self {
            BehavioralExpr::Const(c) => BoundExpr::Const(*c),
            BehavioralExpr::V(n) => {
                if n.is_ground() {
                    BoundExpr::Const(0.0)
                } else {
                    let idx = layout
                        .node_index(*n)
                        .ok_or(ExprError::UnknownNode(*n))?;
                    BoundExpr::Unknown(idx)
                }
            }
            BehavioralExpr::I(name) => {
                let idx = layout
                    .branch_index(name)
                    .ok_or_else(|| ExprError::UnknownBranch(name.clone()))?;
                BoundExpr::Unknown(idx)
            }
            BehavioralExpr::Add(a, b) => {
                BoundExpr::Add(Box::new(a.bind(layout)?), Box::new(b.bind(layout)?))
            }
            BehavioralExpr::Sub(a, b) => {
                BoundExpr::Sub(Box::new(a.bind(layout)?), Box::new(b.bind(layout)?))
            }
            BehavioralExpr::Mul(a, b) => {
                BoundExpr::Mul(Box::new(a.bind(layout)?), Box::new(b.bind(layout)?))
            }
            BehavioralExpr::Div(a, b) => {
                BoundExpr::Div(Box::new(a.bind(layout)?), Box::new(b.bind(layout)?))
            }
            BehavioralExpr::Neg(a) => BoundExpr::Neg(Box::new(a.bind(layout)?)),
            BehavioralExpr::Sin(a) => BoundExpr::Sin(Box::new(a.bind(layout)?)),
            BehavioralExpr::Cos(a) => BoundExpr::Cos(Box::new(a.bind(layout)?)),
            BehavioralExpr::Exp(a) => BoundExpr::Exp(Box::new(a.bind(layout)?)),
            BehavioralExpr::Sqrt(a) => BoundExpr::Sqrt(Box::new(a.bind(layout)?)),
            BehavioralExpr::Min(a, b) => {
                BoundExpr::Min(Box::new(a.bind(layout)?), Box::new(b.bind(layout)?))
            }
            BehavioralExpr::Max(a, b) => {
                BoundExpr::Max(Box::new(a.bind(layout)?), Box::new(b.bind(layout)?))
            }
            BehavioralExpr::Clamp { arg, lo, hi } => BoundExpr::Clamp {
                arg: Box::new(arg.bind(layout)?),
                lo: *lo,
                hi: *hi,
            },
            BehavioralExpr::Table { arg, table } => BoundExpr::Table {
                arg: Box::new(arg.bind(layout)?),
                table: table.clone(),
            },
        };
        Ok(node)
    }
}

impl std::ops::Add for BehavioralExpr {
    type Output = BehavioralExpr;
    fn add(self, rhs: Self) -> Self {
        BehavioralExpr::Add(Box::new(self), Box::new(rhs))
    }
}
impl std::ops::Sub for BehavioralExpr {
    type Output = BehavioralExpr;
    fn sub(self, rhs: Self) -> Self {
        BehavioralExpr::Sub(Box::new(self), Box::new(rhs))
    }
}
impl std::ops::Mul for BehavioralExpr {
    type Output = BehavioralExpr;
    fn mul(self, rhs: Self) -> Self {
        BehavioralExpr::Mul(Box::new(self), Box::new(rhs))
    }
}
impl std::ops::Div for BehavioralExpr {
    type Output = BehavioralExpr;
    fn div(self, rhs: Self) -> Self {
        BehavioralExpr::Div(Box::new(self), Box::new(rhs))
    }
}
impl std::ops::Neg for BehavioralExpr {
    type Output = BehavioralExpr;
    fn neg(self) -> Self {
        BehavioralExpr::Neg(Box::new(self))
    }
}

/// Expression with references resolved to unknown-vector indices.
#[derive(Debug, Clone)]
pub enum BoundExpr {
    Const(f64),
    Unknown(usize),
    Add(Box<BoundExpr>, Box<BoundExpr>),
    Sub(Box<BoundExpr>, Box<BoundExpr>),
    Mul(Box<BoundExpr>, Box<BoundExpr>),
    Div(Box<BoundExpr>, Box<BoundExpr>),
    Neg(Box<BoundExpr>),
    Sin(Box<BoundExpr>),
    Cos(Box<BoundExpr>),
    Exp(Box<BoundExpr>),
    Sqrt(Box<BoundExpr>),
    Min(Box<BoundExpr>, Box<BoundExpr>),
    Max(Box<BoundExpr>, Box<BoundExpr>),
    Clamp {
        arg: Box<BoundExpr>,
        lo: f64,
        hi: f64,
    },
    Table {
        arg: Box<BoundExpr>,
        table: LookupTable,
    },
}

/// Value plus sparse gradient, index-sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub value: f64,
    pub partials: Vec<(usize, f64)>,
}

fn merge_partials(a: &[(usize, f64)], b: &[(usize, f64)], fa: f64, fb: f64) -> Vec<(usize, f64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(&(ka, va)), Some(&(kb, vb))) => {
                if ka == kb {
                    out.push((ka, fa * va + fb * vb));
                    i += 1;
                    j += 1;
                } else if ka < kb {
                    out.push((ka, fa * va));
                    i += 1;
                } else {
                    out.push((kb, fb * vb));
                    j += 1;
                }
            }
            (Some(&(ka, va)), None) => {
                out.push((ka, fa * va));
                i += 1;
            }
            (None, Some(&(kb, vb))) => {
                out.push((kb, fb * vb));
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    out
}

fn scale_partials(a: &[(usize, f64)], f: f64) -> Vec<(usize, f64)> {
    a.iter().map(|&(k, v)| (k, f * v)).collect()
}

impl BoundExpr {
    /// Evaluates at the candidate solution, returning the value and exact
    /// analytic partials with respect to every referenced unknown.
    pub fn eval(&self, x: &[f64]) -> Result<Evaluated, ExprError> {
        Ok(match self {
            BoundExpr::Const(c) => Evaluated {
                value: *c,
                partials: Vec::new(),
            },
            BoundExpr::Unknown(k) => Evaluated {
                value: x[*k],
                partials: vec![(*k, 1.0)],
            },
            BoundExpr::Add(a, b) => {
                let (ea, eb) = (a.eval(x)?, b.eval(x)?);
                Evaluated {
                    value: ea.value + eb.value,
                    partials: merge_partials(&ea.partials, &eb.partials, 1.0, 1.0),
                }
            }
            BoundExpr::Sub(a, b) => {
                let (ea, eb) = (a.eval(x)?, b.eval(x)?);
                Evaluated {
                    value: ea.value - eb.value,
                    partials: merge_partials(&ea.partials, &eb.partials, 1.0, -1.0),
                }
            }
            BoundExpr::Mul(a, b) => {
                let (ea, eb) = (a.eval(x)?, b.eval(x)?);
                Evaluated {
                    value: ea.value * eb.value,
                    partials: merge_partials(&ea.partials, &eb.partials, eb.value, ea.value),
                }
            }
            BoundExpr::Div(a, b) => {
                let (ea, eb) = (a.eval(x)?, b.eval(x)?);
                let den = if eb.value.abs() < DIV_GUARD_EPS {
                    DIV_GUARD_EPS.copysign(if eb.value == 0.0 { 1.0 } else { eb.value })
                } else {
                    eb.value
                };
                let value = ea.value / den;
                // d(u/v) = du/v - u dv/v^2, with the guarded denominator
                Evaluated {
                    value,
                    partials: merge_partials(
                        &ea.partials,
                        &eb.partials,
                        1.0 / den,
                        -ea.value / (den * den),
                    ),
                }
            }
            BoundExpr::Neg(a) => {
                let ea = a.eval(x)?;
                Evaluated {
                    value: -ea.value,
                    partials: scale_partials(&ea.partials, -1.0),
                }
            }
            BoundExpr::Sin(a) => {
                let ea = a.eval(x)?;
                Evaluated {
                    value: ea.value.sin(),
                    partials: scale_partials(&ea.partials, ea.value.cos()),
                }
            }
            BoundExpr::Cos(a) => {
                let ea = a.eval(x)?;
                Evaluated {
                    value: ea.value.cos(),
                    partials: scale_partials(&ea.partials, -ea.value.sin()),
                }
            }
            BoundExpr::Exp(a) => {
                let ea = a.eval(x)?;
                // clamp the exponent so intermediate overflow cannot poison
                // the Newton iteration with infinities
                let e = ea.value.min(700.0).exp();
                Evaluated {
                    value: e,
                    partials: scale_partials(&ea.partials, e),
                }
            }
            BoundExpr::Sqrt(a) => {
                let ea = a.eval(x)?;
                let v = ea.value.max(0.0);
                let root = v.sqrt();
                let d = 0.5 / root.max(DIV_GUARD_EPS);
                Evaluated {
                    value: root,
                    partials: scale_partials(&ea.partials, if ea.value <= 0.0 { 0.0 } else { d }),
                }
            }
            BoundExpr::Min(a, b) => {
                let (ea, eb) = (a.eval(x)?, b.eval(x)?);
                if ea.value <= eb.value {
                    ea
                } else {
                    eb
                }
            }
            BoundExpr::Max(a, b) => {
                let (ea, eb) = (a.eval(x)?, b.eval(x)?);
                if ea.value >= eb.value {
                    ea
                } else {
                    eb
                }
            }
            BoundExpr::Clamp { arg, lo, hi } => {
                let ea = arg.eval(x)?;
                if ea.value < *lo {
                    Evaluated {
                        value: *lo,
                        partials: Vec::new(),
                    }
                } else if ea.value > *hi {
                    Evaluated {
                        value: *hi,
                        partials: Vec::new(),
                    }
                } else {
                    ea
                }
            }
            BoundExpr::Table { arg, table } => {
                let ea = arg.eval(x)?;
                let (y, slope) = table.eval(ea.value)?;
                Evaluated {
                    value: y,
                    partials: scale_partials(&ea.partials, slope),
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{CircuitPrimitive, PrimitiveKind};
    use proptest::prelude::*;

    fn layout_for(nodes: u32) -> Layout {
        let prims: Vec<CircuitPrimitive> = (1..=nodes)
            .map(|i| {
                CircuitPrimitive::two_terminal(
                    format!("r{i}"),
                    PrimitiveKind::Resistor { ohms: 1.0 },
                    NodeId(i),
                    NodeId::GROUND,
                )
            })
            .collect();
        Layout::build(&prims).unwrap()
    }

    #[test]
    fn linear_case() {
        // 3 * v(1) at v(1) = 2 -> value 6, d/dv1 = 3
        let layout = layout_for(1);
        let e = (BehavioralExpr::constant(3.0) * BehavioralExpr::v(NodeId(1)))
            .bind(&layout)
            .unwrap();
        let r = e.eval(&[2.0]).unwrap();
        assert_eq!(r.value, 6.0);
        assert_eq!(r.partials, vec![(0, 3.0)]);
    }

    #[test]
    fn sine_case() {
        let layout = layout_for(1);
        let e = BehavioralExpr::v(NodeId(1)).sin().bind(&layout).unwrap();
        let r = e.eval(&[0.0]).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.partials, vec![(0, 1.0)]);
    }

    #[test]
    fn product_partials_match_finite_differences() {
        // v(1)*v(2) at (2, 5): value 10, partials (5, 2); oracle fd h=1e-6
        let layout = layout_for(2);
        let e = (BehavioralExpr::v(NodeId(1)) * BehavioralExpr::v(NodeId(2)))
            .bind(&layout)
            .unwrap();
        let x = [2.0, 5.0];
        let r = e.eval(&x).unwrap();
        assert_eq!(r.value, 10.0);
        let h = 1e-6;
        for (k, dk) in &r.partials {
            let mut xp = x;
            let mut xm = x;
            xp[*k] += h;
            xm[*k] -= h;
            let fd = (e.eval(&xp).unwrap().value - e.eval(&xm).unwrap().value) / (2.0 * h);
            assert!((dk - fd).abs() < 1e-6, "partial {k}: {dk} vs fd {fd}");
        }
        assert_eq!(r.partials[0].1, 5.0);
        assert_eq!(r.partials[1].1, 2.0);
    }

    #[test]
    fn table_out_of_range_errors() {
        let layout = layout_for(1);
        let table = LookupTable::new(vec![(0.0, 0.0), (1.0, 2.0)], false);
        let e = BoundExpr::Table {
            arg: Box::new(BehavioralExpr::v(NodeId(1)).bind(&layout).unwrap()),
            table,
        };
        assert!(matches!(
            e.eval(&[3.0]),
            Err(ExprError::TableOutOfRange { .. })
        ));
        let r = e.eval(&[0.5]).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.partials, vec![(0, 2.0)]);
    }

    #[test]
    fn division_guard_keeps_eval_total() {
        let layout = layout_for(2);
        let e = (BehavioralExpr::v(NodeId(1)) / BehavioralExpr::v(NodeId(2)))
            .bind(&layout)
            .unwrap();
        let r = e.eval(&[1.0, 0.0]).unwrap();
        assert!(r.value.is_finite());
    }

    /// Random smooth expression trees for the derivative property test.
    /// Min/Max/Clamp are piecewise-linear with deliberate subgradient
    /// choices at kinks, so they get directed tests instead.
    fn arb_expr(depth: u32) -> BoxedStrategy<BehavioralExpr> {
        let leaf = prop_oneof![
            (-3.0f64..3.0).prop_map(BehavioralExpr::Const),
            (1u32..=3).prop_map(|i| BehavioralExpr::V(NodeId(i))),
        ];
        leaf.prop_recursive(depth, 64, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
                inner.clone().prop_map(|a| a.sin()),
                inner.clone().prop_map(|a| a.cos()),
                inner.clone().prop_map(|a| BehavioralExpr::Neg(Box::new(a))),
            ]
        })
        .boxed()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        /// Analytic partials match central finite differences (h = 1e-6)
        /// within 1e-5 relative on random iterates.
        #[test]
        fn partials_match_finite_differences(
            expr in arb_expr(4),
            x in proptest::array::uniform3(-2.0f64..2.0),
        ) {
            let layout = layout_for(3);
            let bound = expr.bind(&layout).unwrap();
            let r = bound.eval(&x).unwrap();
            let h = 1e-6;
            for k in 0..3 {
                let mut xp = x; xp[k] += h;
                let mut xm = x; xm[k] -= h;
                let fp = bound.eval(&xp).unwrap().value;
                let fm = bound.eval(&xm).unwrap().value;
                let fd = (fp - fm) / (2.0 * h);
                let analytic = r
                    .partials
                    .iter()
                    .find(|&&(i, _)| i == k)
                    .map(|&(_, d)| d)
                    .unwrap_or(0.0);
                let denom = 1.0 + analytic.abs();
                prop_assert!(
                    (fd - analytic).abs() / denom < 1e-5,
                    "unknown {}: analytic {} vs fd {}", k, analytic, fd
                );
            }
        }
    }

    #[test]
    fn piecewise_ops_use_active_branch_derivative() {
        let layout = layout_for(2);
        let min = BehavioralExpr::Min(
            Box::new(BehavioralExpr::v(NodeId(1))),
            Box::new(BehavioralExpr::v(NodeId(2)) * BehavioralExpr::constant(2.0)),
        )
        .bind(&layout)
        .unwrap();
        // v1=1, v2=3 -> min is v1, derivative (1, 0)
        let r = min.eval(&[1.0, 3.0]).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.partials, vec![(0, 1.0)]);
        // v1=9, v2=3 -> min is 2*v2, derivative (0, 2)
        let r = min.eval(&[9.0, 3.0]).unwrap();
        assert_eq!(r.value, 6.0);
        assert_eq!(r.partials, vec![(1, 2.0)]);

        let clamp = BehavioralExpr::v(NodeId(1)).clamp(0.0, 1.0).bind(&layout).unwrap();
        let r = clamp.eval(&[1.5, 0.0]).unwrap();
        assert_eq!(r.value, 1.0);
        assert!(r.partials.is_empty());
        let r = clamp.eval(&[0.5, 0.0]).unwrap();
        assert_eq!(r.value, 0.5);
        assert_eq!(r.partials, vec![(0, 1.0)]);
    }
}
