//! Control blocks realized as circuit primitives.
//!
//! Dynamic blocks follow the one pattern: the state is a node with a
//! capacitor to ground whose capacitance encodes the time constant, driven
//! by a behavioral current source (`C dV/dt = f(V_i)`). Static blocks are a
//! single behavioral voltage source. Everything solves inside the unified
//! MNA system with the same integration rule as the network.

use crate::circuit::{BehavioralExpr, CircuitPrimitive, NodeAllocator, NodeId, PrimitiveKind};
use crate::solver::{InitMode, SolverConfig, TransientSim};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BlockError {
    #[error("block '{name}': {reason}")]
    Invalid { name: String, reason: String },
}

/// Exponential exciter saturation S_E(E_FD) = A_ex * exp(B_ex * E_FD).
pub fn saturation_se(efd: f64, a_ex: f64, b_ex: f64) -> f64 {
    a_ex * (b_ex * efd).exp()
}

/// Quadratic alternative: S_E = B (E - A)^2 / E for E > A, else 0.
pub fn saturation_se_quadratic(efd: f64, a_ex: f64, b_ex: f64) -> f64 {
    if efd <= a_ex || efd <= 0.0 {
        0.0
    } else {
        b_ex * (efd - a_ex) * (efd - a_ex) / efd
    }
}

/// Block vocabulary. Dynamic kinds own one state (the output or an internal
/// filter voltage).
#[derive(Debug, Clone, PartialEq)]
pub enum ControlBlock {
    /// K / (1 + sT)
    LowPass { k: f64, t: f64 },
    /// K sT / (1 + sT)
    HighPass { k: f64, t: f64 },
    Gain { k: f64 },
    /// sum of inputs with the given signs
    Adder { signs: Vec<f64> },
    /// 1 / (tau s)
    Integrator { tau: f64 },
    /// (1 + sT1) / (1 + sT2), realized as the sum of a low-pass and a
    /// high-pass sharing the T2 state; T1 may be negative (water column)
    LeadLag { t1: f64, t2: f64 },
    Limiter { min: f64, max: f64 },
    /// exponential saturation A_ex e^{B_ex u}
    Saturation { a_ex: f64, b_ex: f64 },
}

impl ControlBlock {
    pub fn validate(&self, name: &str) -> Result<(), BlockError> {
        let bad = |reason: &str| {
            Err(BlockError::Invalid {
                name: name.to_string(),
                reason: reason.to_string(),
            })
        };
        match self {
            ControlBlock::LowPass { t, .. } | ControlBlock::HighPass { t, .. } => {
                if *t <= 0.0 {
                    return bad("filter time constant must be > 0");
                }
            }
            ControlBlock::Integrator { tau } => {
                if *tau <= 0.0 {
                    return bad("integrator tau must be > 0");
                }
            }
            ControlBlock::LeadLag { t2, .. } => {
                if *t2 <= 0.0 {
                    return bad("lead-lag T2 must be > 0");
                }
            }
            ControlBlock::Limiter { min, max } => {
                if min >= max {
                    return bad("limiter needs min < max");
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Whether this kind carries an internal state.
    pub fn is_dynamic(&self) -> bool {
        matches!(
            self,
            ControlBlock::LowPass { .. }
                | ControlBlock::HighPass { .. }
                | ControlBlock::Integrator { .. }
                | ControlBlock::LeadLag { .. }
        )
    }
}

/// Compiled single-input block.
pub struct CompiledBlock {
    pub output: NodeId,
    /// internal state node for dynamic kinds
    pub state: Option<NodeId>,
    pub primitives: Vec<CircuitPrimitive>,
}

/// Lowers a block driven by `input`, with the state preloaded to
/// `state_init` (ignored for static kinds).
pub fn compile_block(
    name: &str,
    block: &ControlBlock,
    input: NodeId,
    state_init: f64,
    alloc: &mut NodeAllocator,
) -> Result<CompiledBlock, BlockError> {
    block.validate(name)?;
    let c = BehavioralExpr::constant;
    let v = BehavioralExpr::v;
    let mut prims = Vec::new();

    let state_node = |prims: &mut Vec<CircuitPrimitive>,
                      node: NodeId,
                      cap: f64,
                      init: f64,
                      f: BehavioralExpr| {
        prims.push(CircuitPrimitive::two_terminal(
            format!("{name}.c"),
            PrimitiveKind::Capacitor {
                farads: cap,
                initial_voltage: init,
            },
            node,
            NodeId::GROUND,
        ));
        prims.push(CircuitPrimitive::two_terminal(
            format!("{name}.f"),
            PrimitiveKind::BehavioralCurrent { expr: f },
            NodeId::GROUND,
            node,
        ));
    };
    let out_node = |prims: &mut Vec<CircuitPrimitive>, node: NodeId, f: BehavioralExpr| {
        prims.push(CircuitPrimitive::two_terminal(
            format!("{name}.y"),
            PrimitiveKind::BehavioralVoltage { expr: f },
            node,
            NodeId::GROUND,
        ));
    };

    let compiled = match block {
        ControlBlock::LowPass { k, t } => {
            // T dy/dt = K u - y
            let y = alloc.alloc(format!("{name}.y"));
            state_node(&mut prims, y, *t, state_init, c(*k) * v(input) - v(y));
            CompiledBlock {
                output: y,
                state: Some(y),
                primitives: prims,
            }
        }
        ControlBlock::HighPass { k, t } => {
            // T dx/dt = u - x; y = K (u - x)
            let x = alloc.alloc(format!("{name}.x"));
            let y = alloc.alloc(format!("{name}.y"));
            state_node(&mut prims, x, *t, state_init, v(input) - v(x));
            out_node(&mut prims, y, c(*k) * (v(input) - v(x)));
            CompiledBlock {
                output: y,
                state: Some(x),
                primitives: prims,
            }
        }
        ControlBlock::Gain { k } => {
            let y = alloc.alloc(format!("{name}.y"));
            out_node(&mut prims, y, c(*k) * v(input));
            CompiledBlock {
                output: y,
                state: None,
                primitives: prims,
            }
        }
        ControlBlock::Adder { .. } => {
            return Err(BlockError::Invalid {
                name: name.to_string(),
                reason: "adders take multiple inputs; use compile_adder".into(),
            })
        }
        ControlBlock::Integrator { tau } => {
            // tau dy/dt = u
            let y = alloc.alloc(format!("{name}.y"));
            state_node(&mut prims, y, *tau, state_init, v(input));
            CompiledBlock {
                output: y,
                state: Some(y),
                primitives: prims,
            }
        }
        ControlBlock::LeadLag { t1, t2 } => {
            // x = u/(1+sT2); y = x + (T1/T2)(u - x)
            let x = alloc.alloc(format!("{name}.x"));
            let y = alloc.alloc(format!("{name}.y"));
            state_node(&mut prims, x, *t2, state_init, v(input) - v(x));
            out_node(&mut prims, y, v(x) + c(t1 / t2) * (v(input) - v(x)));
            CompiledBlock {
                output: y,
                state: Some(x),
                primitives: prims,
            }
        }
        ControlBlock::Limiter { min, max } => {
            let y = alloc.alloc(format!("{name}.y"));
            out_node(&mut prims, y, v(input).clamp(*min, *max));
            CompiledBlock {
                output: y,
                state: None,
                primitives: prims,
            }
        }
        ControlBlock::Saturation { a_ex, b_ex } => {
            let y = alloc.alloc(format!("{name}.y"));
            out_node(&mut prims, y, c(*a_ex) * (c(*b_ex) * v(input)).exp());
            CompiledBlock {
                output: y,
                state: None,
                primitives: prims,
            }
        }
    };
    Ok(compiled)
}

/// Lowers a multi-input adder: y = sum signs_i * u_i.
pub fn compile_adder(
    name: &str,
    inputs: &[(f64, NodeId)],
    alloc: &mut NodeAllocator,
) -> CompiledBlock {
    let y = alloc.alloc(format!("{name}.y"));
    let mut expr = BehavioralExpr::constant(0.0);
    for (sign, node) in inputs {
        expr = expr + BehavioralExpr::constant(*sign) * BehavioralExpr::v(*node);
    }
    CompiledBlock {
        output: y,
        state: None,
        primitives: vec![CircuitPrimitive::two_terminal(
            format!("{name}.y"),
            PrimitiveKind::BehavioralVoltage { expr },
            y,
            NodeId::GROUND,
        )],
    }
}

/// Test harness around one block: drives the input with a constant and
/// steps the compiled mini-circuit with the network integrator at fixed dt.
pub struct BlockSim {
    sim: TransientSim,
    out_idx: usize,
    t: f64,
    dt: f64,
}

impl BlockSim {
    /// Builds the mini-circuit `u -> block -> y` with input held at `u`.
    pub fn new(block: &ControlBlock, u: f64, dt: f64) -> Self {
        let mut alloc = NodeAllocator::new();
        let input = alloc.alloc("u");
        let mut prims = vec![CircuitPrimitive::two_terminal(
            "u.src",
            PrimitiveKind::IndependentVoltage {
                wave: crate::circuit::SourceWave::Dc(u),
            },
            input,
            NodeId::GROUND,
        )];
        let compiled = compile_block("blk", block, input, 0.0, &mut alloc).unwrap();
        let out = compiled.output;
        prims.extend(compiled.primitives);
        let asm = crate::circuit::Assembler::new(prims).unwrap();
        let out_idx = asm.layout().node_index(out).unwrap();
        let config = SolverConfig {
            dt_init: dt,
            dt_min: dt * 1e-3,
            dt_max: dt,
            t_end: 1e9,
            fixed_dt: Some(dt),
            newton_tol: 1e-10,
            ..Default::default()
        };
        let sim = TransientSim::new(
            asm,
            config,
            &InitMode::Declared {
                node_guesses: vec![],
            },
        )
        .unwrap();
        BlockSim {
            sim,
            out_idx,
            t: 0.0,
            dt,
        }
    }

    /// Advances one fixed step and returns the block output.
    pub fn step(&mut self) -> f64 {
        let t_next = self.t + self.dt;
        let res = self
            .sim
            .integrate_step(self.dt, t_next)
            .expect("block step failed");
        assert!(res.accepted);
        self.t = t_next;
        res.solution[self.out_idx]
    }

    /// Steps until `t_end` and returns the final output.
    pub fn run_to(&mut self, t_end: f64) -> f64 {
        let mut out = self.output();
        while self.t < t_end - 1e-12 {
            out = self.step();
        }
        out
    }

    pub fn output(&self) -> f64 {
        self.sim.solution()[self.out_idx]
    }

    pub fn time(&self) -> f64 {
        self.t
    }
}
