//! Power-system equipment expanded into circuit primitives.
//!
//! Every spec type carries the equipment parameters; `expand` lowers it to a
//! self-contained primitive list referencing only its bus terminals plus
//! freshly allocated internal nodes. Expansion is pure: the same spec and a
//! fresh allocator always produce the same list.

use crate::circuit::{CircuitPrimitive, NodeAllocator, NodeId, PrimitiveKind, SourceWave};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ComponentError {
    #[error("invalid spec for '{name}': {reason}")]
    InvalidSpec { name: String, reason: String },
}

fn invalid(name: &str, reason: impl Into<String>) -> ComponentError {
    ComponentError::InvalidSpec {
        name: name.to_string(),
        reason: reason.into(),
    }
}

/// Terminals of one three-phase bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusTerminals {
    pub a: NodeId,
    pub b: NodeId,
    pub c: NodeId,
}

impl BusTerminals {
    pub fn phases(&self) -> [NodeId; 3] {
        [self.a, self.b, self.c]
    }

    /// All three phases tied to ground (used as a neutral/return bus).
    pub const GROUND: BusTerminals = BusTerminals {
        a: NodeId::GROUND,
        b: NodeId::GROUND,
        c: NodeId::GROUND,
    };
}

pub const PHASE_NAMES: [&str; 3] = ["a", "b", "c"];

/// Phase angle offsets for the configured sequence, radians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhaseSequence {
    /// a-b-c positive sequence: 0, -120 deg, +120 deg
    #[default]
    Abc,
    /// a-c-b negative sequence: 0, +120 deg, -120 deg
    Acb,
}

impl PhaseSequence {
    pub fn offsets(self) -> [f64; 3] {
        match self {
            PhaseSequence::Abc => [0.0, -2.0 * PI / 3.0, 2.0 * PI / 3.0],
            PhaseSequence::Acb => [0.0, 2.0 * PI / 3.0, -2.0 * PI / 3.0],
        }
    }
}

/// pi-model transmission line: per phase a series R-L and half the total
/// shunt capacitance at each end.
#[derive(Debug, Clone)]
pub struct PiLineSpec {
    pub name: String,
    /// series resistance per phase, ohm
    pub r: f64,
    /// series inductance per phase, H
    pub l: f64,
    /// total shunt capacitance per phase, F (split half per end)
    pub c_total: f64,
    pub from: BusTerminals,
    pub to: BusTerminals,
}

/// Single two-winding transformer unit (per phase).
#[derive(Debug, Clone)]
pub struct Transformer2WSpec {
    pub name: String,
    /// turns ratios of winding 1 and 2 (V_rated / V_base per winding)
    pub tk1: f64,
    pub tk2: f64,
    /// per-winding leakage (ohm, H); either part may be zero
    pub leakage1: (f64, f64),
    pub leakage2: (f64, f64),
    /// optional magnetizing branch (R parallel L) on the core node
    pub magnetizing: Option<(f64, f64)>,
    /// winding terminals (p, n)
    pub w1: (NodeId, NodeId),
    pub w2: (NodeId, NodeId),
}

/// Single three-winding transformer unit sharing one magnetic core node.
#[derive(Debug, Clone)]
pub struct Transformer3WSpec {
    pub name: String,
    pub tk: [f64; 3],
    pub leakage: [(f64, f64); 3],
    pub windings: [(NodeId, NodeId); 3],
}

/// Three-phase delta-wye bank built from three single-phase units.
/// Winding 1 of unit k spans delta terminals (phase_k, phase_{k+1}) in
/// positive a-b-c order; winding 2 feeds the wye phase with its return
/// bonded to ground.
#[derive(Debug, Clone)]
pub struct DeltaWyeBankSpec {
    pub name: String,
    pub unit: Transformer2WUnitParams,
    pub delta: BusTerminals,
    pub wye: BusTerminals,
}

/// Electrical parameters shared by the three units of a bank.
#[derive(Debug, Clone)]
pub struct Transformer2WUnitParams {
    pub tk1: f64,
    pub tk2: f64,
    pub leakage1: (f64, f64),
    pub leakage2: (f64, f64),
    pub magnetizing: Option<(f64, f64)>,
}

/// Per-phase series R-L-C between two buses (either may be ground).
#[derive(Debug, Clone)]
pub struct SeriesRlcSpec {
    pub name: String,
    pub r: f64,
    pub l: f64,
    pub c: f64,
    pub from: BusTerminals,
    pub to: BusTerminals,
}

/// Three-phase sinusoidal EMF behind a series R-L per phase.
#[derive(Debug, Clone)]
pub struct NonIdealSourceSpec {
    pub name: String,
    /// peak line-to-ground EMF volts
    pub amplitude: f64,
    pub freq_hz: f64,
    /// phase of phase a, radians
    pub phase_rad: f64,
    pub sequence: PhaseSequence,
    pub r: f64,
    pub l: f64,
    pub bus: BusTerminals,
}

/// Three-phase breaker: one switch per phase between two buses.
#[derive(Debug, Clone)]
pub struct BreakerSpec {
    pub name: String,
    pub on_resistance: f64,
    pub off_resistance: f64,
    pub closed: bool,
    pub from: BusTerminals,
    pub to: BusTerminals,
}

/// Three-phase fault path: one switch per phase from the bus to ground
/// through the fault resistance, initially open.
#[derive(Debug, Clone)]
pub struct FaultSpec {
    /// bus name; switch names follow `fault.<bus>.<phase>`
    pub bus_name: String,
    pub resistance: f64,
    pub bus: BusTerminals,
}

/// Ideal transformer coupling: a VCVS forcing v(sec) = ratio * v(pri) and a
/// CCCS returning i(pri) = ratio * i(sec), power conserving by construction.
///
/// The CCCS senses the VCVS branch current by name, so the two primitives
/// must be inserted together.
pub fn ideal_coupling(
    name: &str,
    primary: (NodeId, NodeId),
    secondary: (NodeId, NodeId),
    ratio: f64,
) -> Result<[CircuitPrimitive; 2], ComponentError> {
    if ratio <= 0.0 || !ratio.is_finite() {
        return Err(invalid(name, format!("ratio must be > 0, got {ratio}")));
    }
    let vcvs_name = format!("{name}.vcvs");
    let vcvs = CircuitPrimitive::voltage_controlled(
        vcvs_name.clone(),
        PrimitiveKind::Vcvs { gain: ratio },
        secondary.0,
        secondary.1,
        primary.0,
        primary.1,
    );
    // the VCVS branch current flows secondary.0 -> secondary.1 through the
    // source; mirroring it scaled by the ratio into the primary port keeps
    // v1 i1 = v2 i2 at every instant
    let cccs = CircuitPrimitive::current_controlled(
        format!("{name}.cccs"),
        PrimitiveKind::Cccs { gain: ratio },
        primary.0,
        primary.1,
        vcvs_name,
    );
    Ok([vcvs, cccs])
}

/// Anything that expands into primitives.
pub trait ComponentSpec: Sync {
    fn name(&self) -> &str;
    fn expand(&self, alloc: &mut NodeAllocator) -> Result<Vec<CircuitPrimitive>, ComponentError>;
}

impl ComponentSpec for PiLineSpec {
    fn name(&self) -> &str {
        &self.name
    }

    fn expand(&self, alloc: &mut NodeAllocator) -> Result<Vec<CircuitPrimitive>, ComponentError> {
        if self.r < 0.0 {
            return Err(invalid(&self.name, "series R must be >= 0"));
        }
        if self.l <= 0.0 {
            return Err(invalid(&self.name, "series L must be > 0"));
        }
        if self.c_total < 0.0 {
            return Err(invalid(&self.name, "shunt C must be >= 0"));
        }
        let mut prims = Vec::with_capacity(12);
        for (ph, (&from, &to)) in PHASE_NAMES
            .iter()
            .zip(self.from.phases().iter().zip(self.to.phases().iter()))
        {
            let mid = alloc.alloc(format!("{}.{ph}.mid", self.name));
            prims.push(CircuitPrimitive::two_terminal(
                format!("{}.{ph}.r", self.name),
                PrimitiveKind::Resistor {
                    ohms: self.r.max(1e-9),
                },
                from,
                mid,
            ));
            prims.push(CircuitPrimitive::two_terminal(
                format!("{}.{ph}.l", self.name),
                PrimitiveKind::Inductor {
                    henries: self.l,
                    initial_current: 0.0,
                },
                mid,
                to,
            ));
            if self.c_total > 0.0 {
                let half = self.c_total / 2.0;
                prims.push(CircuitPrimitive::two_terminal(
                    format!("{}.{ph}.c_from", self.name),
                    PrimitiveKind::Capacitor {
                        farads: half,
                        initial_voltage: 0.0,
                    },
                    from,
                    NodeId::GROUND,
                ));
                prims.push(CircuitPrimitive::two_terminal(
                    format!("{}.{ph}.c_to", self.name),
                    PrimitiveKind::Capacitor {
                        farads: half,
                        initial_voltage: 0.0,
                    },
                    to,
                    NodeId::GROUND,
                ));
            }
        }
        Ok(prims)
    }
}

/// Expands one single-phase two-winding unit: per winding an optional
/// leakage branch plus an ideal coupling onto a common core node. Winding k
/// couples with ratio T_k, so v_w1 / v_w2 = T_k1 / T_k2 and ampere-turns
/// balance (T_k1 i_1 + T_k2 i_2 = i_mag) at the core.
fn expand_2w_unit(
    name: &str,
    params: &Transformer2WUnitParams,
    w1: (NodeId, NodeId),
    w2: (NodeId, NodeId),
    alloc: &mut NodeAllocator,
) -> Result<Vec<CircuitPrimitive>, ComponentError> {
    if params.tk1 <= 0.0 || params.tk2 <= 0.0 {
        return Err(invalid(name, "turns ratios must be > 0"));
    }
    let core = alloc.alloc(format!("{name}.core"));
    let mut prims = Vec::new();

    for (k, (tk, leakage, (wp, wn))) in [
        (params.tk1, params.leakage1, w1),
        (params.tk2, params.leakage2, w2),
    ]
    .into_iter()
    .enumerate()
    {
        let widx = k + 1;
        let emf = expand_leakage(name, widx, leakage, wp, alloc, &mut prims);
        // primary port of the coupling is the core, secondary the winding
        let pair = ideal_coupling(
            &format!("{name}.w{widx}"),
            (core, NodeId::GROUND),
            (emf, wn),
            tk,
        )?;
        prims.extend(pair);
    }

    if let Some((rm, lm)) = params.magnetizing {
        if rm > 0.0 {
            prims.push(CircuitPrimitive::two_terminal(
                format!("{name}.mag.r"),
                PrimitiveKind::Resistor { ohms: rm },
                core,
                NodeId::GROUND,
            ));
        }
        if lm > 0.0 {
            prims.push(CircuitPrimitive::two_terminal(
                format!("{name}.mag.l"),
                PrimitiveKind::Inductor {
                    henries: lm,
                    initial_current: 0.0,
                },
                core,
                NodeId::GROUND,
            ));
        }
    }
    Ok(prims)
}

/// Inserts the series R-L leakage of winding `widx` between `wp` and a new
/// EMF node; returns the node the ideal coupling should drive.
fn expand_leakage(
    name: &str,
    widx: usize,
    leakage: (f64, f64),
    wp: NodeId,
    alloc: &mut NodeAllocator,
    prims: &mut Vec<CircuitPrimitive>,
) -> NodeId {
    let (r, l) = leakage;
    if r <= 0.0 && l <= 0.0 {
        return wp;
    }
    let emf = alloc.alloc(format!("{name}.w{widx}.emf"));
    let mut from = wp;
    if r > 0.0 {
        let mid = if l > 0.0 {
            alloc.alloc(format!("{name}.w{widx}.rl"))
        } else {
            emf
        };
        prims.push(CircuitPrimitive::two_terminal(
            format!("{name}.w{widx}.r"),
            PrimitiveKind::Resistor { ohms: r },
            from,
            mid,
        ));
        from = mid;
    }
    if l > 0.0 {
        prims.push(CircuitPrimitive::two_terminal(
            format!("{name}.w{widx}.l"),
            PrimitiveKind::Inductor {
                henries: l,
                initial_current: 0.0,
            },
            from,
            emf,
        ));
    }
    emf
}

impl ComponentSpec for Transformer2WSpec {
    fn name(&self) -> &str {
        &self.name
    }

    fn expand(&self, alloc: &mut NodeAllocator) -> Result<Vec<CircuitPrimitive>, ComponentError> {
        expand_2w_unit(
            &self.name,
            &Transformer2WUnitParams {
                tk1: self.tk1,
                tk2: self.tk2,
                leakage1: self.leakage1,
                leakage2: self.leakage2,
                magnetizing: self.magnetizing,
            },
            self.w1,
            self.w2,
            alloc,
        )
    }
}

impl ComponentSpec for Transformer3WSpec {
    fn name(&self) -> &str {
        &self.name
    }

    fn expand(&self, alloc: &mut NodeAllocator) -> Result<Vec<CircuitPrimitive>, ComponentError> {
        for tk in self.tk {
            if tk <= 0.0 {
                return Err(invalid(&self.name, "turns ratios must be > 0"));
            }
        }
        let core = alloc.alloc(format!("{}.core", self.name));
        let mut prims = Vec::new();
        for (k, ((tk, leakage), (wp, wn))) in self
            .tk
            .iter()
            .zip(self.leakage.iter())
            .zip(self.windings.iter())
            .enumerate()
        {
            let widx = k + 1;
            let emf = expand_leakage(&self.name, widx, *leakage, *wp, alloc, &mut prims);
            let pair = ideal_coupling(
                &format!("{}.w{widx}", self.name),
                (core, NodeId::GROUND),
                (emf, *wn),
                *tk,
            )?;
            prims.extend(pair);
        }
        Ok(prims)
    }
}

impl ComponentSpec for DeltaWyeBankSpec {
    fn name(&self) -> &str {
        &self.name
    }

    fn expand(&self, alloc: &mut NodeAllocator) -> Result<Vec<CircuitPrimitive>, ComponentError> {
        let d = self.delta.phases();
        let y = self.wye.phases();
        let mut prims = Vec::new();
        // delta loop closes a->b, b->c, c->a; wye returns bonded to ground
        for (k, ph) in PHASE_NAMES.iter().enumerate() {
            let w1 = (d[k], d[(k + 1) % 3]);
            let w2 = (y[k], NodeId::GROUND);
            prims.extend(expand_2w_unit(
                &format!("{}.{ph}", self.name),
                &self.unit,
                w1,
                w2,
                alloc,
            )?);
        }
        Ok(prims)
    }
}

impl ComponentSpec for SeriesRlcSpec {
    fn name(&self) -> &str {
        &self.name
    }

    fn expand(&self, alloc: &mut NodeAllocator) -> Result<Vec<CircuitPrimitive>, ComponentError> {
        if self.r < 0.0 || self.l <= 0.0 || self.c <= 0.0 {
            return Err(invalid(&self.name, "need R >= 0, L > 0, C > 0"));
        }
        let mut prims = Vec::new();
        for (ph, (&from, &to)) in PHASE_NAMES
            .iter()
            .zip(self.from.phases().iter().zip(self.to.phases().iter()))
        {
            let m1 = alloc.alloc(format!("{}.{ph}.rl", self.name));
            let m2 = alloc.alloc(format!("{}.{ph}.lc", self.name));
            prims.push(CircuitPrimitive::two_terminal(
                format!("{}.{ph}.r", self.name),
                PrimitiveKind::Resistor {
                    ohms: self.r.max(1e-9),
                },
                from,
                m1,
            ));
            prims.push(CircuitPrimitive::two_terminal(
                format!("{}.{ph}.l", self.name),
                PrimitiveKind::Inductor {
                    henries: self.l,
                    initial_current: 0.0,
                },
                m1,
                m2,
            ));
            prims.push(CircuitPrimitive::two_terminal(
                format!("{}.{ph}.c", self.name),
                PrimitiveKind::Capacitor {
                    farads: self.c,
                    initial_voltage: 0.0,
                },
                m2,
                to,
            ));
        }
        Ok(prims)
    }
}

impl ComponentSpec for NonIdealSourceSpec {
    fn name(&self) -> &str {
        &self.name
    }

    fn expand(&self, alloc: &mut NodeAllocator) -> Result<Vec<CircuitPrimitive>, ComponentError> {
        if self.amplitude < 0.0 || self.freq_hz <= 0.0 {
            return Err(invalid(&self.name, "need amplitude >= 0 and f > 0"));
        }
        if self.r < 0.0 || self.l <= 0.0 {
            return Err(invalid(&self.name, "need R >= 0 and L > 0"));
        }
        let offsets = self.sequence.offsets();
        let mut prims = Vec::new();
        for ((ph, &bus), &off) in PHASE_NAMES
            .iter()
            .zip(self.bus.phases().iter())
            .zip(offsets.iter())
        {
            let emf = alloc.alloc(format!("{}.{ph}.emf", self.name));
            let mid = alloc.alloc(format!("{}.{ph}.rl", self.name));
            prims.push(CircuitPrimitive::two_terminal(
                format!("{}.{ph}.e", self.name),
                PrimitiveKind::IndependentVoltage {
                    wave: SourceWave::Sine {
                        amplitude: self.amplitude,
                        freq_hz: self.freq_hz,
                        phase_rad: self.phase_rad + off,
                        offset: 0.0,
                    },
                },
                emf,
                NodeId::GROUND,
            ));
            prims.push(CircuitPrimitive::two_terminal(
                format!("{}.{ph}.r", self.name),
                PrimitiveKind::Resistor {
                    ohms: self.r.max(1e-9),
                },
                emf,
                mid,
            ));
            prims.push(CircuitPrimitive::two_terminal(
                format!("{}.{ph}.l", self.name),
                PrimitiveKind::Inductor {
                    henries: self.l,
                    initial_current: 0.0,
                },
                mid,
                bus,
            ));
        }
        Ok(prims)
    }
}

impl ComponentSpec for BreakerSpec {
    fn name(&self) -> &str {
        &self.name
    }

    fn expand(&self, _alloc: &mut NodeAllocator) -> Result<Vec<CircuitPrimitive>, ComponentError> {
        if self.on_resistance >= self.off_resistance {
            return Err(invalid(&self.name, "on_resistance must be < off_resistance"));
        }
        let mut prims = Vec::new();
        for (ph, (&from, &to)) in PHASE_NAMES
            .iter()
            .zip(self.from.phases().iter().zip(self.to.phases().iter()))
        {
            prims.push(CircuitPrimitive::two_terminal(
                format!("{}.{ph}", self.name),
                PrimitiveKind::Switch {
                    on_resistance: self.on_resistance,
                    off_resistance: self.off_resistance,
                    closed: self.closed,
                },
                from,
                to,
            ));
        }
        Ok(prims)
    }
}

impl ComponentSpec for FaultSpec {
    fn name(&self) -> &str {
        &self.bus_name
    }

    fn expand(&self, _alloc: &mut NodeAllocator) -> Result<Vec<CircuitPrimitive>, ComponentError> {
        let names = crate::solver::fault_switch_names(&self.bus_name);
        Ok(self
            .bus
            .phases()
            .iter()
            .zip(names)
            .map(|(&node, name)| {
                CircuitPrimitive::two_terminal(
                    name,
                    PrimitiveKind::Switch {
                        on_resistance: self.resistance.max(1e-6),
                        off_resistance: 1e9,
                        closed: false,
                    },
                    node,
                    NodeId::GROUND,
                )
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(alloc: &mut NodeAllocator, name: &str) -> BusTerminals {
        BusTerminals {
            a: alloc.alloc(format!("{name}.a")),
            b: alloc.alloc(format!("{name}.b")),
            c: alloc.alloc(format!("{name}.c")),
        }
    }

    #[test]
    fn pi_line_expands_to_twelve_primitives() {
        let mut alloc = NodeAllocator::new();
        let from = bus(&mut alloc, "b1");
        let to = bus(&mut alloc, "b2");
        let line = PiLineSpec {
            name: "line1".into(),
            r: 1.0,
            l: 0.01,
            c_total: 2e-6,
            from,
            to,
        };
        let prims = line.expand(&mut alloc).unwrap();
        assert_eq!(prims.len(), 12);
        let caps: Vec<_> = prims
            .iter()
            .filter_map(|p| match p.kind {
                PrimitiveKind::Capacitor { farads, .. } => Some(farads),
                _ => None,
            })
            .collect();
        assert_eq!(caps.len(), 6);
        assert!(caps.iter().all(|&c| c == 1e-6));
    }

    #[test]
    fn expansion_is_deterministic() {
        let build = || {
            let mut alloc = NodeAllocator::new();
            let from = bus(&mut alloc, "b1");
            let to = bus(&mut alloc, "b2");
            let line = PiLineSpec {
                name: "line1".into(),
                r: 0.5,
                l: 0.02,
                c_total: 1e-6,
                from,
                to,
            };
            line.expand(&mut alloc)
                .unwrap()
                .iter()
                .map(|p| (p.name.clone(), p.p, p.n))
                .collect::<Vec<_>>()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn unity_ratio_transformer_has_unit_gains() {
        let mut alloc = NodeAllocator::new();
        let w1 = (alloc.alloc("w1p"), alloc.alloc("w1n"));
        let w2 = (alloc.alloc("w2p"), alloc.alloc("w2n"));
        let t = Transformer2WSpec {
            name: "t1".into(),
            tk1: 1.0,
            tk2: 1.0,
            leakage1: (0.0, 0.0),
            leakage2: (0.0, 0.0),
            magnetizing: None,
            w1,
            w2,
        };
        let prims = t.expand(&mut alloc).unwrap();
        for p in &prims {
            match &p.kind {
                PrimitiveKind::Vcvs { gain } => assert_eq!(*gain, 1.0),
                PrimitiveKind::Cccs { gain } => assert_eq!(*gain, 1.0),
                other => panic!("unexpected primitive {other:?}"),
            }
        }
        assert_eq!(prims.len(), 4);
    }

    #[test]
    fn invalid_turns_ratio_is_rejected() {
        let mut alloc = NodeAllocator::new();
        let w1 = (alloc.alloc("w1p"), NodeId::GROUND);
        let w2 = (alloc.alloc("w2p"), NodeId::GROUND);
        let t = Transformer2WSpec {
            name: "t1".into(),
            tk1: 0.0,
            tk2: 1.0,
            leakage1: (0.0, 0.0),
            leakage2: (0.0, 0.0),
            magnetizing: None,
            w1,
            w2,
        };
        assert!(matches!(
            t.expand(&mut alloc),
            Err(ComponentError::InvalidSpec { .. })
        ));
    }
}
