//! DC1A-type excitation system compiled to circuit primitives.
//!
//! Structure: voltage error -> regulator K_A/(1+sT_A) with output limits ->
//! exciter integrator T_E dE_FD/dt = V_R - (K_E + S_E(E_FD)) E_FD, with the
//! washout rate feedback sK_F/(1+sT_F) from E_FD closing the loop. The
//! reference voltage is back-solved so the given equilibrium holds.

use super::blocks::{saturation_se, saturation_se_quadratic};
use super::MachineError;
use crate::circuit::{BehavioralExpr, CircuitPrimitive, NodeAllocator, NodeId, PrimitiveKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SaturationForm {
    #[default]
    Exponential,
    Quadratic,
}

#[derive(Debug, Clone)]
pub struct ExciterSpec {
    pub ka: f64,
    pub ta: f64,
    pub ke: f64,
    pub te: f64,
    pub kf: f64,
    pub tf: f64,
    pub vr_min: f64,
    pub vr_max: f64,
    pub a_ex: f64,
    pub b_ex: f64,
    pub saturation_form: SaturationForm,
}

pub struct CompiledExciter {
    pub primitives: Vec<CircuitPrimitive>,
    pub guesses: Vec<(NodeId, f64)>,
    /// field voltage output node
    pub efd: NodeId,
    /// back-solved reference voltage, pu
    pub v_ref: f64,
}

impl ExciterSpec {
    pub fn validate(&self, name: &str) -> Result<(), MachineError> {
        let bad = |reason: &str| {
            Err(MachineError::Invalid {
                name: name.to_string(),
                reason: reason.to_string(),
            })
        };
        if self.ka <= 0.0 || self.ta <= 0.0 || self.te <= 0.0 || self.tf <= 0.0 {
            return bad("gains K_A and time constants T_A, T_E, T_F must be > 0");
        }
        if self.kf < 0.0 {
            return bad("K_F must be >= 0");
        }
        if self.vr_min >= self.vr_max {
            return bad("need V_Rmin < V_Rmax");
        }
        Ok(())
    }

    fn se(&self, efd: f64) -> f64 {
        match self.saturation_form {
            SaturationForm::Exponential => saturation_se(efd, self.a_ex, self.b_ex),
            SaturationForm::Quadratic => saturation_se_quadratic(efd, self.a_ex, self.b_ex),
        }
    }

    /// Lowers the exciter; `vt` is the terminal-voltage-magnitude node (pu)
    /// and the equilibrium (vt0, efd0) pins the internal states and V_ref.
    pub fn compile(
        &self,
        name: &str,
        vt: NodeId,
        vt0: f64,
        efd0: f64,
        alloc: &mut NodeAllocator,
    ) -> Result<CompiledExciter, MachineError> {
        self.validate(name)?;
        let vr0 = (self.ke + self.se(efd0)) * efd0;
        if vr0 < self.vr_min || vr0 > self.vr_max {
            return Err(MachineError::Invalid {
                name: name.to_string(),
                reason: format!(
                    "equilibrium regulator output {vr0:.3} outside limits [{}, {}]",
                    self.vr_min, self.vr_max
                ),
            });
        }
        let v_ref = vt0 + vr0 / self.ka;

        let c = BehavioralExpr::constant;
        let v = BehavioralExpr::v;

        let verr = alloc.alloc(format!("{name}.verr"));
        let xa = alloc.alloc(format!("{name}.xa"));
        let vr = alloc.alloc(format!("{name}.vr"));
        let efd = alloc.alloc(format!("{name}.efd"));
        let xf = alloc.alloc(format!("{name}.xf"));
        let vf = alloc.alloc(format!("{name}.vf"));

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

        // error: V_ref - V_t - V_F
        algebraic(&mut prims, verr, c(v_ref) - v(vt) - v(vf), "verr");
        // regulator low-pass T_A dx/dt = K_A e - x, then the output limiter
        state(
            &mut prims,
            xa,
            self.ta,
            vr0,
            c(self.ka) * v(verr) - v(xa),
            "xa",
        );
        algebraic(&mut prims, vr, v(xa).clamp(self.vr_min, self.vr_max), "vr");
        // exciter: T_E dE/dt = V_R - (K_E + S_E(E)) E
        let se_expr = match self.saturation_form {
            SaturationForm::Exponential => c(self.a_ex) * (c(self.b_ex) * v(efd)).exp(),
            SaturationForm::Quadratic => {
                let over = BehavioralExpr::Max(
                    Box::new(v(efd) - c(self.a_ex)),
                    Box::new(c(0.0)),
                );
                c(self.b_ex) * over.clone() * over / v(efd)
            }
        };
        state(
            &mut prims,
            efd,
            self.te,
            efd0,
            v(vr) - (c(self.ke) + se_expr) * v(efd),
            "efd",
        );
        // washout rate feedback: V_F = (K_F/T_F)(E_FD - x_F)
        state(&mut prims, xf, self.tf, efd0, v(efd) - v(xf), "xf");
        algebraic(
            &mut prims,
            vf,
            c(self.kf / self.tf) * (v(efd) - v(xf)),
            "vf",
        );

        let guesses = vec![
            (verr, vr0 / self.ka),
            (xa, vr0),
            (vr, vr0),
            (efd, efd0),
            (xf, efd0),
            (vf, 0.0),
        ];

        Ok(CompiledExciter {
            primitives: prims,
            guesses,
            efd,
            v_ref,
        })
    }
}
