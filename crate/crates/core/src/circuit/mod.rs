//! Circuit primitives, unknown layout, and MNA stamping.

mod expr;
mod layout;
mod stamp;

pub use expr::{BehavioralExpr, BoundExpr, ExprError, LookupTable};
pub use layout::{Layout, LayoutError};
pub use stamp::{
    capacitor_companion_conductance, inductor_companion_conductance, Assembler, IntegrationMethod,
    MnaSystem, PrimitiveState, StampError, StampMode,
};

use std::fmt;

/// Circuit node. Index 0 is the reserved ground node and never appears as an
/// MNA unknown; all other indices are dense 1..=N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const GROUND: NodeId = NodeId(0);

    pub fn is_ground(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Hands out fresh node ids and remembers a human-readable name per node.
#[derive(Debug, Clone)]
pub struct NodeAllocator {
    names: Vec<String>,
}

impl NodeAllocator {
    pub fn new() -> Self {
        NodeAllocator {
            names: vec!["gnd".to_string()],
        }
    }

    pub fn alloc(&mut self, name: impl Into<String>) -> NodeId {
        let id = NodeId(self.names.len() as u32);
        self.names.push(name.into());
        id
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn count(&self) -> usize {
        self.names.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| NodeId(i as u32))
    }
}

impl Default for NodeAllocator {
    fn default() -> Self {
        Self::new()
    }
}

/// Time function driving an independent source.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceWave {
    Dc(f64),
    /// offset + amplitude * cos(2*pi*freq_hz*t + phase_rad)
    Sine {
        amplitude: f64,
        freq_hz: f64,
        phase_rad: f64,
        offset: f64,
    },
    /// `before` for t < at, `after` from t >= at
    Step { before: f64, after: f64, at: f64 },
}

impl SourceWave {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            SourceWave::Dc(v) => v,
            SourceWave::Sine {
                amplitude,
                freq_hz,
                phase_rad,
                offset,
            } => offset + amplitude * (2.0 * std::f64::consts::PI * freq_hz * t + phase_rad).cos(),
            SourceWave::Step { before, after, at } => {
                if t < at {
                    before
                } else {
                    after
                }
            }
        }
    }

    /// Source value with time frozen (used by the static operating point).
    pub fn dc_value(&self) -> f64 {
        self.value(0.0)
    }
}

/// What a primitive is, with its electrical parameters.
#[derive(Debug, Clone)]
pub enum PrimitiveKind {
    Resistor {
        ohms: f64,
    },
    Inductor {
        henries: f64,
        initial_current: f64,
    },
    Capacitor {
        farads: f64,
        initial_voltage: f64,
    },
    IndependentVoltage {
        wave: SourceWave,
    },
    IndependentCurrent {
        wave: SourceWave,
    },
    /// v(out) = gain * v(control)
    Vcvs {
        gain: f64,
    },
    /// i(out) = transconductance * v(control)
    Vccs {
        transconductance: f64,
    },
    /// v(out) = transresistance * i(control branch)
    Ccvs {
        transresistance: f64,
    },
    /// i(out) = gain * i(control branch)
    Cccs {
        gain: f64,
    },
    /// v(out) = expr(unknowns)
    BehavioralVoltage {
        expr: BehavioralExpr,
    },
    /// i(out) = expr(unknowns), flowing from terminal p to terminal n
    BehavioralCurrent {
        expr: BehavioralExpr,
    },
    /// Two-state resistor; `closed` selects on_resistance.
    Switch {
        on_resistance: f64,
        off_resistance: f64,
        closed: bool,
    },
}

/// One atomic stampable element.
///
/// `name` must be unique within a circuit: it identifies branch-current
/// unknowns (for sources, inductors and controlled sources) and is the key
/// used by current-controlled elements and probes.
#[derive(Debug, Clone)]
pub struct CircuitPrimitive {
    pub name: String,
    pub kind: PrimitiveKind,
    /// Output terminals (p, n).
    pub p: NodeId,
    pub n: NodeId,
    /// Controlling node pair for VCVS / VCCS.
    pub control_nodes: Option<(NodeId, NodeId)>,
    /// Controlling branch (primitive name) for CCVS / CCCS.
    pub control_branch: Option<String>,
}

impl CircuitPrimitive {
    pub fn two_terminal(name: impl Into<String>, kind: PrimitiveKind, p: NodeId, n: NodeId) -> Self {
        CircuitPrimitive {
            name: name.into(),
            kind,
            p,
            n,
            control_nodes: None,
            control_branch: None,
        }
    }

    pub fn voltage_controlled(
        name: impl Into<String>,
        kind: PrimitiveKind,
        p: NodeId,
        n: NodeId,
        cp: NodeId,
        cn: NodeId,
    ) -> Self {
        CircuitPrimitive {
            name: name.into(),
            kind,
            p,
            n,
            control_nodes: Some((cp, cn)),
            control_branch: None,
        }
    }

    pub fn current_controlled(
        name: impl Into<String>,
        kind: PrimitiveKind,
        p: NodeId,
        n: NodeId,
        branch: impl Into<String>,
    ) -> Self {
        CircuitPrimitive {
            name: name.into(),
            kind,
            p,
            n,
            control_nodes: None,
            control_branch: Some(branch.into()),
        }
    }

    /// Whether this primitive owns a branch-current unknown.
    pub fn has_branch_current(&self) -> bool {
        matches!(
            self.kind,
            PrimitiveKind::IndependentVoltage { .. }
                | PrimitiveKind::Inductor { .. }
                | PrimitiveKind::Vcvs { .. }
                | PrimitiveKind::Ccvs { .. }
                | PrimitiveKind::BehavioralVoltage { .. }
        )
    }

    /// Checks the parameter invariants for this primitive.
    pub fn validate(&self) -> Result<(), String> {
        match &self.kind {
            PrimitiveKind::Resistor { ohms } => {
                if *ohms <= 0.0 || !ohms.is_finite() {
                    return Err(format!("{}: resistance must be > 0, got {ohms}", self.name));
                }
            }
            PrimitiveKind::Inductor { henries, .. } => {
                if *henries <= 0.0 || !henries.is_finite() {
                    return Err(format!("{}: inductance must be > 0, got {henries}", self.name));
                }
            }
            PrimitiveKind::Capacitor { farads, .. } => {
                if *farads <= 0.0 || !farads.is_finite() {
                    return Err(format!("{}: capacitance must be > 0, got {farads}", self.name));
                }
            }
            PrimitiveKind::Switch {
                on_resistance,
                off_resistance,
                ..
            } => {
                if *on_resistance <= 0.0 || *off_resistance <= 0.0 {
                    return Err(format!("{}: switch resistances must be > 0", self.name));
                }
                if on_resistance >= off_resistance {
                    return Err(format!(
                        "{}: switch on_resistance must be < off_resistance",
                        self.name
                    ));
                }
            }
            PrimitiveKind::Vcvs { .. } | PrimitiveKind::Vccs { .. } => {
                if self.control_nodes.is_none() {
                    return Err(format!("{}: missing control node pair", self.name));
                }
            }
            PrimitiveKind::Ccvs { .. } | PrimitiveKind::Cccs { .. } => {
                if self.control_branch.is_none() {
                    return Err(format!("{}: missing control branch", self.name));
                }
            }
            _ => {}
        }
        Ok(())
    }
}
