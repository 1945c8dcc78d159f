//! IEEEG3 hydro governor-turbine compiled to circuit primitives.
//!
//! Structure: speed deviation plus permanent droop (sigma) and dashpot
//! temporary droop (delta sT_R/(1+sT_R)) feed the pilot valve 1/(1+sT_P);
//! the gate servo integrates the pilot output through 1/T_G with gate
//! velocity limits (Uo, Uc) and position limits; the water column transfer
//! a23 (1 + s(a11 - a13 a21 / a23) T_W) / (1 + s a11 T_W) turns gate into
//! mechanical power. The numerator constant is negative for a physical
//! water column (non-minimum-phase response).

use super::MachineError;
use crate::circuit::{BehavioralExpr, CircuitPrimitive, NodeAllocator, NodeId, PrimitiveKind};

#[derive(Debug, Clone)]
pub struct GovernorSpec {
    /// pilot valve time constant, s
    pub tp: f64,
    /// gate servo time constant, s
    pub tg: f64,
    /// permanent droop
    pub sigma: f64,
    /// temporary droop
    pub delta: f64,
    /// dashpot time constant, s
    pub tr: f64,
    /// water starting time, s
    pub tw: f64,
    pub a11: f64,
    pub a13: f64,
    pub a21: f64,
    pub a23: f64,
    /// gate opening velocity limit, pu/s (> 0)
    pub uo: f64,
    /// gate closing velocity limit, pu/s (< 0)
    pub uc: f64,
    pub pmax: f64,
    pub pmin: f64,
}

pub struct CompiledGovernor {
    pub primitives: Vec<CircuitPrimitive>,
    pub guesses: Vec<(NodeId, f64)>,
    /// mechanical power output node, pu
    pub pm: NodeId,
    /// back-solved speed/load reference
    pub reference: f64,
}

impl GovernorSpec {
    pub fn validate(&self, name: &str) -> Result<(), MachineError> {
        let bad = |reason: &str| {
            Err(MachineError::Invalid {
                name: name.to_string(),
                reason: reason.to_string(),
            })
        };
        if self.tp <= 0.0 || self.tg <= 0.0 || self.tr <= 0.0 || self.tw <= 0.0 {
            return bad("time constants T_P, T_G, T_R, T_W must be > 0");
        }
        if self.sigma < 0.0 || self.delta < 0.0 {
            return bad("droops must be >= 0");
        }
        if self.a11 <= 0.0 || self.a23 <= 0.0 {
            return bad("water column coefficients a11, a23 must be > 0");
        }
        if self.uo <= 0.0 || self.uc >= 0.0 {
            return bad("need opening rate Uo > 0 and closing rate Uc < 0");
        }
        if self.pmin >= self.pmax {
            return bad("need Pmin < Pmax");
        }
        Ok(())
    }

    /// Lowers the governor; `omega` is the rotor speed node (pu) and `pm0`
    /// the equilibrium mechanical power the gate is back-solved from.
    pub fn compile(
        &self,
        name: &str,
        omega: NodeId,
        pm0: f64,
        alloc: &mut NodeAllocator,
    ) -> Result<CompiledGovernor, MachineError> {
        self.validate(name)?;
        let g0 = pm0 / self.a23;
        if g0 < self.pmin || g0 > self.pmax {
            return Err(MachineError::Invalid {
                name: name.to_string(),
                reason: format!(
                    "equilibrium gate {g0:.3} outside limits [{}, {}]",
                    self.pmin, self.pmax
                ),
            });
        }
        let reference = self.sigma * g0;

        let c = BehavioralExpr::constant;
        let v = BehavioralExpr::v;

        let xr = alloc.alloc(format!("{name}.xr")); // dashpot state
        let pilot_in = alloc.alloc(format!("{name}.e"));
        let xp = alloc.alloc(format!("{name}.xp")); // pilot valve state
        let gate = alloc.alloc(format!("{name}.gate"));
        let glim = alloc.alloc(format!("{name}.glim"));
        let xt = alloc.alloc(format!("{name}.xt")); // water column state
        let pm = alloc.alloc(format!("{name}.pm"));

        let mut prims = Vec::new();
        let algebraic =
            |prims: &mut Vec<CircuitPrimitive>, node: NodeId, f: BehavioralExpr, label: &str| {
                prims.push(CircuitPrimitive::two_terminal(
                    format!("{name}.{label}"),
                    PrimitiveKind::BehavioralVoltage { expr: f },
                    node,
                    NodeId::GROUND,
                ));
            };
        let state = |prims: &mut Vec<CircuitPrimitive>,
                     node: NodeId,
                     cap: f64,
                     init: f64,
                     f: BehavioralExpr,
                     label: &str| {
            prims.push(CircuitPrimitive::two_terminal(
                format!("{name}.{label}.c"),
                PrimitiveKind::Capacitor {
                    farads: cap,
                    initial_voltage: init,
                },
                node,
                NodeId::GROUND,
            ));
            prims.push(CircuitPrimitive::two_terminal(
                format!("{name}.{label}.f"),
                PrimitiveKind::BehavioralCurrent { expr: f },
                NodeId::GROUND,
                node,
            ));
        };

        // temporary droop: delta sT_R/(1+sT_R) on the gate
        state(&mut prims, xr, self.tr, g0, v(gate) - v(xr), "xr");
        // pilot input: reference - speed deviation - droops
        algebraic(
            &mut prims,
            pilot_in,
            c(reference) - (v(omega) - c(1.0)) - c(self.sigma) * v(gate)
                - c(self.delta) * (v(gate) - v(xr)),
            "e",
        );
        // pilot valve 1/(1+sT_P)
        state(&mut prims, xp, self.tp, 0.0, v(pilot_in) - v(xp), "xp");
        // gate servo: dg/dt = clamp(x_p/T_G, Uc, Uo), with a stiff pullback
        // beyond the position limits instead of a hard anti-windup latch
        let aw_gain = 100.0 / self.tg;
        let gate_rate = (v(xp) / c(self.tg)).clamp(self.uc, self.uo)
            - c(aw_gain) * (v(gate) - v(gate).clamp(self.pmin, self.pmax));
        state(&mut prims, gate, 1.0, g0, gate_rate, "gate");
        algebraic(
            &mut prims,
            glim,
            v(gate).clamp(self.pmin, self.pmax),
            "glim",
        );
        // water column lead-lag times a23
        let t2 = self.a11 * self.tw;
        let t1 = (self.a11 - self.a13 * self.a21 / self.a23) * self.tw;
        state(&mut prims, xt, t2, g0, v(glim) - v(xt), "xt");
        algebraic(
            &mut prims,
            pm,
            c(self.a23) * (v(xt) + c(t1 / t2) * (v(glim) - v(xt))),
            "pm",
        );

        let guesses = vec![
            (xr, g0),
            (pilot_in, 0.0),
            (xp, 0.0),
            (gate, g0),
            (glim, g0),
            (xt, g0),
            (pm, pm0),
        ];

        Ok(CompiledGovernor {
            primitives: prims,
            guesses,
            pm,
            reference,
        })
    }
}
