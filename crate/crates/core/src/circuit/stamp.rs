//! Companion-model stamping of primitives into the MNA system.
//!
//! Sign conventions, used consistently by every stamp:
//! - KCL rows sum currents *leaving* the node.
//! - A branch current is positive when conventional current flows from the
//!   primitive's `p` terminal through the element to its `n` terminal.
//! - A current-source value (independent or behavioral) is the current
//!   driven from `p` to `n` through the source, i.e. injected into `n`.
//!
//! Reactive elements stamp discrete companions. The inductor keeps a branch
//! current unknown so the static (DC) system can short it exactly; the
//! capacitor stamps a Norton companion. History terms live in
//! [`PrimitiveState`] and are refreshed on step acceptance only.

use super::expr::{BoundExpr, ExprError};
use super::layout::{Layout, LayoutError};
use super::{CircuitPrimitive, PrimitiveKind};
use crate::sparse::{CsrMatrix, Triplet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StampError {
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("primitive '{prim}': {source}")]
    Expr { prim: String, source: ExprError },
    #[error("primitive '{prim}' controls from unknown branch '{branch}'")]
    UnknownControlBranch { prim: String, branch: String },
    #[error("unknown {0} has no stamp contribution")]
    UnstampedUnknown(String),
    #[error("no switch named '{0}'")]
    UnknownSwitch(String),
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),
}

/// Discrete integration rule used for the reactive companions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntegrationMethod {
    /// 2nd order, A-stable, no numerical damping.
    #[default]
    Trapezoidal,
    /// 1st order; used for the first step after a discontinuity because it
    /// only consumes state that is physically continuous.
    BackwardEuler,
    /// 2nd order BDF at locally fixed step; optional post-event damping.
    Gear2,
}

/// How the system is being assembled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StampMode {
    /// Static operating point: inductors short, capacitors open, sources at
    /// their frozen value.
    Dc,
    Transient {
        dt: f64,
        method: IntegrationMethod,
    },
}

/// Norton conductance of the trapezoidal inductor companion.
pub fn inductor_companion_conductance(henries: f64, dt: f64) -> f64 {
    dt / (2.0 * henries)
}

/// Norton conductance of the trapezoidal capacitor companion.
pub fn capacitor_companion_conductance(farads: f64, dt: f64) -> f64 {
    2.0 * farads / dt
}

/// Per-primitive history carried between accepted steps.
///
/// For a capacitor `v`/`i` are the voltage across and current through it at
/// the last accepted step (`v2`/`i2` one step earlier); for an inductor the
/// same quantities with `i` being the branch current.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PrimitiveState {
    pub v: f64,
    pub i: f64,
    pub v2: f64,
    pub i2: f64,
}

/// Assembled linear(ized) system for one Newton iteration.
#[derive(Debug, Clone)]
pub struct MnaSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

impl MnaSystem {
    /// Residual F(x) = A x - b of the system assembled at iterate x.
    /// Node rows are KCL residuals in amperes.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let ax = self.matrix.mul_vec(x);
        ax.iter().zip(&self.rhs).map(|(a, b)| a - b).collect()
    }
}

/// Owns the primitive list, resolves references, and stamps systems.
pub struct Assembler {
    primitives: Vec<CircuitPrimitive>,
    layout: Layout,
    bound: Vec<Option<BoundExpr>>,
    control_idx: Vec<Option<usize>>,
    switch_closed: Vec<Option<bool>>,
}

impl Assembler {
    pub fn new(primitives: Vec<CircuitPrimitive>) -> Result<Self, StampError> {
        for p in &primitives {
            p.validate().map_err(StampError::InvalidPrimitive)?;
        }
        let layout = Layout::build(&primitives)?;

        let mut bound = Vec::with_capacity(primitives.len());
        let mut control_idx = Vec::with_capacity(primitives.len());
        let mut switch_closed = Vec::with_capacity(primitives.len());
        for p in &primitives {
            let b = match &p.kind {
                PrimitiveKind::BehavioralVoltage { expr }
                | PrimitiveKind::BehavioralCurrent { expr } => {
                    Some(expr.bind(&layout).map_err(|source| StampError::Expr {
                        prim: p.name.clone(),
                        source,
                    })?)
                }
                _ => None,
            };
            bound.push(b);

            let ci = match &p.kind {
                PrimitiveKind::Ccvs { .. } | PrimitiveKind::Cccs { .. } => {
                    let branch = p.control_branch.as_deref().unwrap_or_default();
                    Some(layout.branch_index(branch).ok_or_else(|| {
                        StampError::UnknownControlBranch {
                            prim: p.name.clone(),
                            branch: branch.to_string(),
                        }
                    })?)
                }
                _ => None,
            };
            control_idx.push(ci);

            switch_closed.push(match p.kind {
                PrimitiveKind::Switch { closed, .. } => Some(closed),
                _ => None,
            });
        }

        let asm = Assembler {
            primitives,
            layout,
            bound,
            control_idx,
            switch_closed,
        };
        asm.check_coverage()?;
        Ok(asm)
    }

    /// Structural check that every unknown receives at least one matrix
    /// entry in its row and its column.
    fn check_coverage(&self) -> Result<(), StampError> {
        let n = self.layout.size();
        let mut row_hit = vec![false; n];
        let mut col_hit = vec![false; n];
        let hit = |idx: Option<usize>, rows: &mut Vec<bool>, cols: &mut Vec<bool>| {
            if let Some(i) = idx {
                rows[i] = true;
                cols[i] = true;
            }
        };
        for (pi, p) in self.primitives.iter().enumerate() {
            let ip = self.layout.node_index(p.p);
            let in_ = self.layout.node_index(p.n);
            let k = self.layout.branch_index(&p.name);
            hit(ip, &mut row_hit, &mut col_hit);
            hit(in_, &mut row_hit, &mut col_hit);
            hit(k, &mut row_hit, &mut col_hit);
            if let Some((cp, cn)) = p.control_nodes {
                if let Some(i) = self.layout.node_index(cp) {
                    col_hit[i] = true;
                }
                if let Some(i) = self.layout.node_index(cn) {
                    col_hit[i] = true;
                }
            }
            if let Some(ci) = self.control_idx[pi] {
                col_hit[ci] = true;
            }
            if let Some(b) = &self.bound[pi] {
                collect_expr_unknowns(b, &mut col_hit);
            }
        }
        for i in 0..n {
            if !row_hit[i] || !col_hit[i] {
                return Err(StampError::UnstampedUnknown(self.layout.unknown_name(i)));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn primitives(&self) -> &[CircuitPrimitive] {
        &self.primitives
    }

    /// Initial histories from declared initial conditions.
    pub fn init_state(&self) -> Vec<PrimitiveState> {
        self.primitives
            .iter()
            .map(|p| match p.kind {
                PrimitiveKind::Capacitor {
                    initial_voltage, ..
                } => PrimitiveState {
                    v: initial_voltage,
                    v2: initial_voltage,
                    ..Default::default()
                },
                PrimitiveKind::Inductor {
                    initial_current, ..
                } => PrimitiveState {
                    i: initial_current,
                    i2: initial_current,
                    ..Default::default()
                },
                _ => PrimitiveState::default(),
            })
            .collect()
    }

    pub fn set_switch(&mut self, name: &str, closed: bool) -> Result<(), StampError> {
        let idx = self
            .primitives
            .iter()
            .position(|p| p.name == name && matches!(p.kind, PrimitiveKind::Switch { .. }))
            .ok_or_else(|| StampError::UnknownSwitch(name.to_string()))?;
        self.switch_closed[idx] = Some(closed);
        Ok(())
    }

    pub fn switch_is_closed(&self, name: &str) -> Option<bool> {
        self.primitives
            .iter()
            .position(|p| p.name == name)
            .and_then(|i| self.switch_closed[i])
    }

    /// Stamps the full system at simulation time `t` and Newton iterate `x`.
    pub fn assemble(
        &self,
        mode: StampMode,
        t: f64,
        x: &[f64],
        states: &[PrimitiveState],
    ) -> Result<MnaSystem, StampError> {
        let n = self.layout.size();
        let mut tri: Vec<Triplet> = Vec::with_capacity(self.primitives.len() * 6);
        let mut rhs = vec![0.0; n];

        for (pi, p) in self.primitives.iter().enumerate() {
            self.stamp_one(pi, p, mode, t, x, &states[pi], &mut tri, &mut rhs)?;
        }

        Ok(MnaSystem {
            matrix: CsrMatrix::from_triplets(n, &tri),
            rhs,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn stamp_one(
        &self,
        pi: usize,
        p: &CircuitPrimitive,
        mode: StampMode,
        t: f64,
        x: &[f64],
        state: &PrimitiveState,
        tri: &mut Vec<Triplet>,
        rhs: &mut [f64],
    ) -> Result<(), StampError> {
        let ip = self.layout.node_index(p.p);
        let in_ = self.layout.node_index(p.n);

        let add = |tri: &mut Vec<Triplet>, r: Option<usize>, c: Option<usize>, v: f64| {
            if let (Some(r), Some(c)) = (r, c) {
                tri.push(Triplet::new(r, c, v));
            }
        };
        // conductance between p and n
        let stamp_conductance = |tri: &mut Vec<Triplet>, g: f64| {
            if let Some(r) = ip {
                tri.push(Triplet::new(r, r, g));
            }
            if let Some(r) = in_ {
                tri.push(Triplet::new(r, r, g));
            }
            if let (Some(a), Some(b)) = (ip, in_) {
                tri.push(Triplet::new(a, b, -g));
                tri.push(Triplet::new(b, a, -g));
            }
        };
        // current `i` from p to n through the element
        let stamp_current = |rhs: &mut [f64], i: f64| {
            if let Some(r) = ip {
                rhs[r] -= i;
            }
            if let Some(r) = in_ {
                rhs[r] += i;
            }
        };

        match &p.kind {
            PrimitiveKind::Resistor { ohms } => stamp_conductance(tri, 1.0 / ohms),

            PrimitiveKind::Switch {
                on_resistance,
                off_resistance,
                ..
            } => {
                let closed = self.switch_closed[pi].unwrap_or(false);
                let r = if closed { *on_resistance } else { *off_resistance };
                stamp_conductance(tri, 1.0 / r);
            }

            PrimitiveKind::Capacitor { farads, .. } => match mode {
                StampMode::Dc => {} // open circuit
                StampMode::Transient { dt, method } => {
                    let (g, ieq) = match method {
                        IntegrationMethod::Trapezoidal => {
                            let g = 2.0 * farads / dt;
                            (g, g * state.v + state.i)
                        }
                        IntegrationMethod::BackwardEuler => {
                            let g = farads / dt;
                            (g, g * state.v)
                        }
                        IntegrationMethod::Gear2 => {
                            let g = 1.5 * farads / dt;
                            (g, (farads / (2.0 * dt)) * (4.0 * state.v - state.v2))
                        }
                    };
                    stamp_conductance(tri, g);
                    // the history source opposes the companion conductance
                    stamp_current(rhs, -ieq);
                }
            },

            PrimitiveKind::Inductor { henries, .. } => {
                let k = self.layout.branch_index(&p.name);
                add(tri, ip, k, 1.0);
                add(tri, in_, k, -1.0);
                add(tri, k, ip, 1.0);
                add(tri, k, in_, -1.0);
                match mode {
                    StampMode::Dc => {} // v_p - v_n = 0: a short
                    StampMode::Transient { dt, method } => {
                        let (req, veq) = match method {
                            IntegrationMethod::Trapezoidal => {
                                let r = 2.0 * henries / dt;
                                (r, -(r * state.i + state.v))
                            }
                            IntegrationMethod::BackwardEuler => {
                                let r = henries / dt;
                                (r, -r * state.i)
                            }
                            IntegrationMethod::Gear2 => {
                                let r = 1.5 * henries / dt;
                                (r, -(henries / (2.0 * dt)) * (4.0 * state.i - state.i2))
                            }
                        };
                        add(tri, k, k, -req);
                        if let Some(k) = k {
                            rhs[k] += veq;
                        }
                    }
                }
            }

            PrimitiveKind::IndependentVoltage { wave } => {
                let k = self.layout.branch_index(&p.name);
                let v = match mode {
                    StampMode::Dc => wave.dc_value(),
                    StampMode::Transient { .. } => wave.value(t),
                };
                add(tri, ip, k, 1.0);
                add(tri, in_, k, -1.0);
                add(tri, k, ip, 1.0);
                add(tri, k, in_, -1.0);
                if let Some(k) = k {
                    rhs[k] += v;
                }
            }

            PrimitiveKind::IndependentCurrent { wave } => {
                let i = match mode {
                    StampMode::Dc => wave.dc_value(),
                    StampMode::Transient { .. } => wave.value(t),
                };
                stamp_current(rhs, i);
            }

            PrimitiveKind::Vcvs { gain } => {
                let k = self.layout.branch_index(&p.name);
                let (cp, cn) = p.control_nodes.expect("validated");
                let icp = self.layout.node_index(cp);
                let icn = self.layout.node_index(cn);
                add(tri, ip, k, 1.0);
                add(tri, in_, k, -1.0);
                add(tri, k, ip, 1.0);
                add(tri, k, in_, -1.0);
                add(tri, k, icp, -gain);
                add(tri, k, icn, *gain);
            }

            PrimitiveKind::Vccs { transconductance } => {
                let (cp, cn) = p.control_nodes.expect("validated");
                let icp = self.layout.node_index(cp);
                let icn = self.layout.node_index(cn);
                add(tri, ip, icp, *transconductance);
                add(tri, ip, icn, -transconductance);
                add(tri, in_, icp, -transconductance);
                add(tri, in_, icn, *transconductance);
            }

            PrimitiveKind::Ccvs { transresistance } => {
                let k = self.layout.branch_index(&p.name);
                let kc = self.control_idx[pi];
                add(tri, ip, k, 1.0);
                add(tri, in_, k, -1.0);
                add(tri, k, ip, 1.0);
                add(tri, k, in_, -1.0);
                add(tri, k, kc, -transresistance);
            }

            PrimitiveKind::Cccs { gain } => {
                let kc = self.control_idx[pi];
                add(tri, ip, kc, *gain);
                add(tri, in_, kc, -gain);
            }

            PrimitiveKind::BehavioralVoltage { .. } => {
                let k = self.layout.branch_index(&p.name);
                let ev = self.bound[pi]
                    .as_ref()
                    .expect("bound at construction")
                    .eval(x)
                    .map_err(|source| StampError::Expr {
                        prim: p.name.clone(),
                        source,
                    })?;
                add(tri, ip, k, 1.0);
                add(tri, in_, k, -1.0);
                add(tri, k, ip, 1.0);
                add(tri, k, in_, -1.0);
                let mut jx = 0.0;
                for &(j, dj) in &ev.partials {
                    add(tri, k, Some(j), -dj);
                    jx += dj * x[j];
                }
                if let Some(k) = k {
                    rhs[k] += ev.value - jx;
                }
            }

            PrimitiveKind::BehavioralCurrent { .. } => {
                let ev = self.bound[pi]
                    .as_ref()
                    .expect("bound at construction")
                    .eval(x)
                    .map_err(|source| StampError::Expr {
                        prim: p.name.clone(),
                        source,
                    })?;
                let mut jx = 0.0;
                for &(j, dj) in &ev.partials {
                    add(tri, ip, Some(j), dj);
                    add(tri, in_, Some(j), -dj);
                    jx += dj * x[j];
                }
                stamp_current(rhs, ev.value - jx);
            }
        }
        Ok(())
    }

    /// Refreshes companion histories after an accepted step of size `dt`
    /// under `method`, given the accepted solution `x`.
    pub fn update_state(
        &self,
        dt: f64,
        method: IntegrationMethod,
        x: &[f64],
        states: &mut [PrimitiveState],
    ) {
        for (pi, p) in self.primitives.iter().enumerate() {
            let vp = self
                .layout
                .node_index(p.p)
                .map(|i| x[i])
                .unwrap_or(0.0);
            let vn = self
                .layout
                .node_index(p.n)
                .map(|i| x[i])
                .unwrap_or(0.0);
            let v_new = vp - vn;
            match p.kind {
                PrimitiveKind::Capacitor { farads, .. } => {
                    let s = &mut states[pi];
                    let i_new = match method {
                        IntegrationMethod::Trapezoidal => {
                            let g = 2.0 * farads / dt;
                            g * (v_new - s.v) - s.i
                        }
                        IntegrationMethod::BackwardEuler => (farads / dt) * (v_new - s.v),
                        IntegrationMethod::Gear2 => {
                            (farads / (2.0 * dt)) * (3.0 * v_new - 4.0 * s.v + s.v2)
                        }
                    };
                    s.v2 = s.v;
                    s.i2 = s.i;
                    s.v = v_new;
                    s.i = i_new;
                }
                PrimitiveKind::Inductor { .. } => {
                    let s = &mut states[pi];
                    let i_new = self
                        .layout
                        .branch_index(&p.name)
                        .map(|k| x[k])
                        .unwrap_or(0.0);
                    s.v2 = s.v;
                    s.i2 = s.i;
                    s.v = v_new;
                    s.i = i_new;
                }
                _ => {}
            }
        }
    }

    /// Seeds histories from a static operating point: capacitor voltages and
    /// inductor branch currents are read off the solution, derivative
    /// history (currents through caps, voltages across inductors) is zero.
    pub fn seed_state_from_dc(&self, x: &[f64], states: &mut [PrimitiveState]) {
        for (pi, p) in self.primitives.iter().enumerate() {
            let vp = self.layout.node_index(p.p).map(|i| x[i]).unwrap_or(0.0);
            let vn = self.layout.node_index(p.n).map(|i| x[i]).unwrap_or(0.0);
            match p.kind {
                PrimitiveKind::Capacitor { .. } => {
                    states[pi] = PrimitiveState {
                        v: vp - vn,
                        v2: vp - vn,
                        ..Default::default()
                    };
                }
                PrimitiveKind::Inductor { .. } => {
                    let i = self
                        .layout
                        .branch_index(&p.name)
                        .map(|k| x[k])
                        .unwrap_or(0.0);
                    states[pi] = PrimitiveState {
                        i,
                        i2: i,
                        ..Default::default()
                    };
                }
                _ => {}
            }
        }
    }
}

fn collect_expr_unknowns(e: &BoundExpr, hit: &mut [bool]) {
    match e {
        BoundExpr::Const(_) => {}
        BoundExpr::Unknown(k) => hit[*k] = true,
        BoundExpr::Add(a, b)
        | BoundExpr::Sub(a, b)
        | BoundExpr::Mul(a, b)
        | BoundExpr::Div(a, b)
        | BoundExpr::Min(a, b)
        | BoundExpr::Max(a, b) => {
            collect_expr_unknowns(a, hit);
            collect_expr_unknowns(b, hit);
        }
        BoundExpr::Neg(a)
        | BoundExpr::Sin(a)
        | BoundExpr::Cos(a)
        | BoundExpr::Exp(a)
        | BoundExpr::Sqrt(a)
        | BoundExpr::Clamp { arg: a, .. }
        | BoundExpr::Table { arg: a, .. } => collect_expr_unknowns(a, hit),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{BehavioralExpr, NodeId, SourceWave};

    fn resistor(name: &str, p: u32, n: u32, ohms: f64) -> CircuitPrimitive {
        CircuitPrimitive::two_terminal(
            name,
            PrimitiveKind::Resistor { ohms },
            NodeId(p),
            NodeId(n),
        )
    }

    #[test]
    fn resistor_stamp_is_ohms_law() {
        // 2 ohm between nodes 1-0: G[1][1] += 0.5
        let asm = Assembler::new(vec![resistor("r1", 1, 0, 2.0)]).unwrap();
        let sys = asm
            .assemble(StampMode::Dc, 0.0, &[0.0], &asm.init_state())
            .unwrap();
        assert_eq!(sys.matrix.get(0, 0), 0.5);
    }

    #[test]
    fn capacitor_trapezoidal_companion() {
        // C = 1 F, dt = 1 s -> companion conductance 2C/dt = 2 S plus history
        let prims = vec![
            resistor("r1", 1, 0, 1.0),
            CircuitPrimitive::two_terminal(
                "c1",
                PrimitiveKind::Capacitor {
                    farads: 1.0,
                    initial_voltage: 3.0,
                },
                NodeId(1),
                NodeId(0),
            ),
        ];
        let asm = Assembler::new(prims).unwrap();
        let states = asm.init_state();
        let sys = asm
            .assemble(
                StampMode::Transient {
                    dt: 1.0,
                    method: IntegrationMethod::Trapezoidal,
                },
                1.0,
                &[0.0],
                &states,
            )
            .unwrap();
        // 1 S from the resistor + 2 S companion
        assert_eq!(sys.matrix.get(0, 0), 3.0);
        // history source g*v_prev + i_prev = 2*3 + 0 = 6 A into node 1
        assert_eq!(sys.rhs[0], 6.0);
    }

    #[test]
    fn vcvs_constraint_row() {
        // VCVS gain 2 controlled by v(3)-v(4), output 1-2:
        // branch row enforces v(1) - v(2) - 2(v(3) - v(4)) = 0
        let prims = vec![
            resistor("ra", 1, 2, 1.0),
            resistor("rb", 3, 4, 1.0),
            resistor("rc", 2, 0, 1.0),
            resistor("rd", 4, 0, 1.0),
            resistor("re", 3, 0, 1.0),
            resistor("rf", 1, 0, 1.0),
            CircuitPrimitive::voltage_controlled(
                "e1",
                PrimitiveKind::Vcvs { gain: 2.0 },
                NodeId(1),
                NodeId(2),
                NodeId(3),
                NodeId(4),
            ),
        ];
        let asm = Assembler::new(prims).unwrap();
        let k = asm.layout().branch_index("e1").unwrap();
        let sys = asm
            .assemble(StampMode::Dc, 0.0, &vec![0.0; asm.layout().size()], &asm.init_state())
            .unwrap();
        assert_eq!(sys.matrix.get(k, 0), 1.0); // v(1)
        assert_eq!(sys.matrix.get(k, 1), -1.0); // v(2)
        assert_eq!(sys.matrix.get(k, 2), -2.0); // v(3)
        assert_eq!(sys.matrix.get(k, 3), 2.0); // v(4)
        assert_eq!(sys.rhs[k], 0.0);
    }

    #[test]
    fn companion_conductances_are_monotone_in_dt() {
        // dt -> 0: inductor companion -> 0, capacitor companion -> infinity
        let dts = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];
        let mut prev_l = f64::INFINITY;
        let mut prev_c = 0.0;
        for &dt in &dts {
            let gl = inductor_companion_conductance(0.05, dt);
            let gc = capacitor_companion_conductance(2e-6, dt);
            assert!(gl < prev_l, "inductor conductance must shrink with dt");
            assert!(gc > prev_c, "capacitor conductance must grow as dt shrinks");
            prev_l = gl;
            prev_c = gc;
        }
        assert!(prev_l < 1e-6);
        assert!(prev_c > 1.0);
    }

    #[test]
    fn reciprocal_network_has_symmetric_pattern() {
        let prims = vec![
            resistor("r1", 1, 2, 10.0),
            resistor("r2", 2, 3, 20.0),
            resistor("r3", 3, 0, 5.0),
            CircuitPrimitive::two_terminal(
                "c1",
                PrimitiveKind::Capacitor {
                    farads: 1e-6,
                    initial_voltage: 0.0,
                },
                NodeId(2),
                NodeId(0),
            ),
            CircuitPrimitive::two_terminal(
                "l1",
                PrimitiveKind::Inductor {
                    henries: 1e-3,
                    initial_current: 0.0,
                },
                NodeId(1),
                NodeId(0),
            ),
        ];
        let asm = Assembler::new(prims).unwrap();
        let sys = asm
            .assemble(
                StampMode::Transient {
                    dt: 1e-6,
                    method: IntegrationMethod::Trapezoidal,
                },
                0.0,
                &vec![0.0; asm.layout().size()],
                &asm.init_state(),
            )
            .unwrap();
        assert!(sys.matrix.pattern_is_symmetric());
    }

    #[test]
    fn stamping_is_order_independent() {
        let build = |order: &[usize]| {
            let base = vec![
                resistor("r1", 1, 2, 3.0),
                resistor("r2", 2, 0, 7.0),
                resistor("r3", 1, 0, 11.0),
                resistor("r4", 1, 2, 0.37),
            ];
            let prims: Vec<_> = order.iter().map(|&i| base[i].clone()).collect();
            let asm = Assembler::new(prims).unwrap();
            asm.assemble(StampMode::Dc, 0.0, &[0.0, 0.0], &asm.init_state())
                .unwrap()
        };
        let a = build(&[0, 1, 2, 3]);
        let b = build(&[3, 1, 0, 2]);
        assert_eq!(a.matrix, b.matrix, "assembly must be bit-identical");
    }

    #[test]
    fn unstamped_unknown_is_reported() {
        // node 3 appears only as a VCVS control node: it gets a column entry
        // but never a KCL row, so the system cannot determine it
        let prims = vec![
            resistor("r1", 1, 0, 1.0),
            resistor("r2", 2, 0, 1.0),
            CircuitPrimitive::voltage_controlled(
                "e1",
                PrimitiveKind::Vcvs { gain: 1.0 },
                NodeId(2),
                NodeId(0),
                NodeId(3),
                NodeId(0),
            ),
        ];
        match Assembler::new(prims) {
            Err(StampError::UnstampedUnknown(name)) => assert!(name.contains("n3"), "{name}"),
            other => panic!("expected unstamped unknown, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn expression_on_undeclared_node_is_rejected() {
        // behavioral expressions may reference only declared nodes
        let prims = vec![
            resistor("r1", 1, 0, 1.0),
            CircuitPrimitive::two_terminal(
                "b1",
                PrimitiveKind::BehavioralVoltage {
                    expr: BehavioralExpr::v(NodeId(9)),
                },
                NodeId(1),
                NodeId(0),
            ),
        ];
        assert!(matches!(
            Assembler::new(prims),
            Err(StampError::Expr { .. })
        ));
    }

    #[test]
    fn unknown_control_branch_is_reported() {
        let prims = vec![
            resistor("r1", 1, 0, 1.0),
            CircuitPrimitive::current_controlled(
                "f1",
                PrimitiveKind::Cccs { gain: 1.0 },
                NodeId(1),
                NodeId(0),
                "nope",
            ),
        ];
        assert!(matches!(
            Assembler::new(prims),
            Err(StampError::UnknownControlBranch { .. })
        ));
    }

    #[test]
    fn independent_source_orientation() {
        // 1 A from ground into node 1 through 2 ohm -> v1 = 2 V
        let prims = vec![
            resistor("r1", 1, 0, 2.0),
            CircuitPrimitive::two_terminal(
                "i1",
                PrimitiveKind::IndependentCurrent {
                    wave: SourceWave::Dc(1.0),
                },
                NodeId(0),
                NodeId(1),
            ),
        ];
        let asm = Assembler::new(prims).unwrap();
        let sys = asm
            .assemble(StampMode::Dc, 0.0, &[0.0], &asm.init_state())
            .unwrap();
        let x = crate::sparse::solve(&sys.matrix, &sys.rhs).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-14);
    }
}
