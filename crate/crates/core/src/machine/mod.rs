//! Park transform interface, the synchronous generator as a dq-frame
//! current-source device, and the governor/exciter control blocks.
//!
//! # Transform and axis convention
//!
//! `park` applies the power-invariant matrix with rows
//! `sqrt(2/3) * [cos, cos(-2pi/3 shift), cos(+2pi/3 shift)]`,
//! `sqrt(2/3) * [sin, ...]` and a constant `1/sqrt(2)` zero row. With the
//! `+sin` second row the q axis *lags* the d axis by 90 electrical degrees.
//! The machine equations internally use the common q-leading textbook
//! components, which differ from the transform output only by the sign of
//! the q component; the generator compiler applies that sign explicitly
//! where it converts between frames.
//!
//! The machine itself integrates inside the MNA system: each of its six
//! states is a node with a capacitor and a behavioral current source
//! (`C dV/dt = f`), and the stator coupling appears as three behavioral
//! current injections at the bus.

mod blocks;
mod exciter;
mod governor;

pub use blocks::{saturation_se, saturation_se_quadratic, BlockSim, ControlBlock};
pub use exciter::ExciterSpec;
pub use governor::GovernorSpec;

use crate::circuit::{BehavioralExpr, CircuitPrimitive, NodeAllocator, NodeId, PrimitiveKind};
use crate::components::BusTerminals;
use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MachineError {
    #[error("machine '{name}': {reason}")]
    Invalid { name: String, reason: String },
    #[error("machine '{name}' is not initialized")]
    NotInitialized { name: String },
}

const SQRT_2_3: f64 = 0.816_496_580_927_726; // sqrt(2/3)
const TWO_PI_3: f64 = 2.0 * PI / 3.0;

/// Park transform: x_dq0 = K(theta) x_abc.
pub fn park(theta: f64, x_abc: [f64; 3]) -> [f64; 3] {
    let angles = [theta, theta - TWO_PI_3, theta + TWO_PI_3];
    let mut d = 0.0;
    let mut q = 0.0;
    let mut z = 0.0;
    for (a, x) in angles.iter().zip(x_abc.iter()) {
        d += a.cos() * x;
        q += a.sin() * x;
        z += x / std::f64::consts::SQRT_2;
    }
    [SQRT_2_3 * d, SQRT_2_3 * q, SQRT_2_3 * z]
}

/// Inverse Park transform: x_abc = K(theta)^T x_dq0 (K is orthogonal).
pub fn inverse_park(theta: f64, x_dq0: [f64; 3]) -> [f64; 3] {
    let angles = [theta, theta - TWO_PI_3, theta + TWO_PI_3];
    let mut out = [0.0; 3];
    for (o, a) in out.iter_mut().zip(angles.iter()) {
        *o = SQRT_2_3
            * (a.cos() * x_dq0[0] + a.sin() * x_dq0[1] + x_dq0[2] / std::f64::consts::SQRT_2);
    }
    out
}

/// Sixth-order subtransient generator parameters (per unit on the machine
/// base, time constants in seconds).
#[derive(Debug, Clone)]
pub struct GeneratorParams {
    pub name: String,
    pub bus: BusTerminals,
    /// three-phase power base, VA
    pub s_base: f64,
    /// peak line-to-ground voltage base, V
    pub v_base: f64,
    pub h: f64,
    pub d: f64,
    pub ra: f64,
    pub xd: f64,
    pub xq: f64,
    pub xd_p: f64,
    pub xq_p: f64,
    pub xd_pp: f64,
    pub xq_pp: f64,
    pub td0_p: f64,
    pub tq0_p: f64,
    pub td0_pp: f64,
    pub tq0_pp: f64,
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<(), MachineError> {
        let bad = |reason: &str| {
            Err(MachineError::Invalid {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if self.s_base <= 0.0 || self.v_base <= 0.0 {
            return bad("bases must be > 0");
        }
        if self.h <= 0.0 {
            return bad("inertia H must be > 0");
        }
        if self.d < 0.0 {
            return bad("damping D must be >= 0");
        }
        for (label, t) in [
            ("td0_p", self.td0_p),
            ("tq0_p", self.tq0_p),
            ("td0_pp", self.td0_pp),
            ("tq0_pp", self.tq0_pp),
        ] {
            if t <= 0.0 {
                return bad(&format!("time constant {label} must be > 0"));
            }
        }
        if !(self.xd_pp <= self.xd_p && self.xd_p <= self.xd) {
            return bad("need xd'' <= xd' <= xd");
        }
        if !(self.xq_pp <= self.xq_p && self.xq_p <= self.xq) {
            return bad("need xq'' <= xq' <= xq");
        }
        if self.xd_pp <= 0.0 || self.xq_pp <= 0.0 {
            return bad("subtransient reactances must be > 0");
        }
        Ok(())
    }

    /// Peak phase-current base: S = (3/2) V_pk I_pk.
    pub fn i_base(&self) -> f64 {
        2.0 * self.s_base / (3.0 * self.v_base)
    }
}

/// Steady-state operating point used to back-solve machine states.
#[derive(Debug, Clone, Copy)]
pub struct OperatingPoint {
    /// terminal voltage magnitude, pu
    pub v_mag: f64,
    /// terminal voltage angle, rad
    pub v_angle: f64,
    /// active power out, pu
    pub p: f64,
    /// reactive power out, pu
    pub q: f64,
}

/// Back-solved equilibrium of the six states plus inputs.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorInit {
    pub delta: f64,
    pub omega: f64,
    pub eq_p: f64,
    pub ed_p: f64,
    pub eq_pp: f64,
    pub ed_pp: f64,
    pub efd: f64,
    pub pm: f64,
    /// transform angle at t = 0 (theta = omega_s t + delta - pi/2)
    pub theta0: f64,
    pub vd: f64,
    pub vq: f64,
    pub id: f64,
    pub iq: f64,
}

/// Phasor initialization: from the terminal phasor and power output,
/// back-solve rotor angle, internal voltages, field voltage and mechanical
/// power (q-leading internal components).
pub fn initialize(
    params: &GeneratorParams,
    op: &OperatingPoint,
) -> Result<GeneratorInit, MachineError> {
    params.validate()?;
    if op.v_mag <= 0.0 {
        return Err(MachineError::Invalid {
            name: params.name.clone(),
            reason: "terminal voltage magnitude must be > 0".into(),
        });
    }
    let v = Complex64::from_polar(op.v_mag, op.v_angle);
    let s = Complex64::new(op.p, op.q);
    let i = (s / v).conj();
    let e_locator = v + Complex64::new(params.ra, params.xq) * i;
    let delta = e_locator.arg();

    let rot = Complex64::from_polar(1.0, FRAC_PI_2 - delta);
    let vdq = v * rot;
    let idq = i * rot;
    let (vd, vq) = (vdq.re, vdq.im);
    let (id, iq) = (idq.re, idq.im);

    let eq_p = vq + params.ra * iq + params.xd_p * id;
    let ed_p = vd + params.ra * id - params.xq_p * iq;
    let eq_pp = vq + params.ra * iq + params.xd_pp * id;
    let ed_pp = vd + params.ra * id - params.xq_pp * iq;
    let efd = eq_p + (params.xd - params.xd_p) * id;
    let te = ed_pp * id + eq_pp * iq + (params.xq_pp - params.xd_pp) * id * iq;

    Ok(GeneratorInit {
        delta,
        omega: 1.0,
        eq_p,
        ed_p,
        eq_pp,
        ed_pp,
        efd,
        pm: te,
        theta0: delta - FRAC_PI_2,
        vd,
        vq,
        id,
        iq,
    })
}

/// Continuous-time state derivatives of the 6th-order model, pu.
/// State order: [delta, omega, eq_p, ed_p, eq_pp, ed_pp].
pub fn derivatives(
    params: &GeneratorParams,
    state: &[f64; 6],
    vd: f64,
    vq: f64,
    efd: f64,
    pm: f64,
    omega_s: f64,
) -> [f64; 6] {
    let [_, omega, eq_p, ed_p, eq_pp, ed_pp] = *state;
    let (id, iq) = stator_currents(params, eq_pp, ed_pp, vd, vq);
    let te = ed_pp * id + eq_pp * iq + (params.xq_pp - params.xd_pp) * id * iq;
    [
        omega_s * (omega - 1.0),
        (pm / omega - te - params.d * (omega - 1.0)) / (2.0 * params.h),
        (efd - eq_p - (params.xd - params.xd_p) * id) / params.td0_p,
        (-ed_p + (params.xq - params.xq_p) * iq) / params.tq0_p,
        (eq_p - eq_pp - (params.xd_p - params.xd_pp) * id) / params.td0_pp,
        (ed_p - ed_pp + (params.xq_p - params.xq_pp) * iq) / params.tq0_pp,
    ]
}

/// Stator algebra: solve the subtransient stator equations for (id, iq)
/// given terminal dq voltage, pu.
pub fn stator_currents(
    params: &GeneratorParams,
    eq_pp: f64,
    ed_pp: f64,
    vd: f64,
    vq: f64,
) -> (f64, f64) {
    let det = params.ra * params.ra + params.xd_pp * params.xq_pp;
    let (fd, fq) = (ed_pp - vd, eq_pp - vq);
    let id = (params.ra * fd + params.xq_pp * fq) / det;
    let iq = (-params.xd_pp * fd + params.ra * fq) / det;
    (id, iq)
}

/// Three-phase current injection (SI amperes) for the given transform angle
/// and pu dq currents.
pub fn injection_abc(theta: f64, id: f64, iq: f64, i_base: f64) -> [f64; 3] {
    // q-leading internal components map to the transform frame with the
    // sign flip on q
    inverse_park(
        theta,
        [
            (1.5f64).sqrt() * i_base * id,
            -(1.5f64).sqrt() * i_base * iq,
            0.0,
        ],
    )
}

/// Node handles of one compiled generator.
#[derive(Debug, Clone)]
pub struct GeneratorNodes {
    pub theta: NodeId,
    pub omega: NodeId,
    pub eq_p: NodeId,
    pub ed_p: NodeId,
    pub eq_pp: NodeId,
    pub ed_pp: NodeId,
    pub vd: NodeId,
    pub vq: NodeId,
    pub id: NodeId,
    pub iq: NodeId,
    pub vt: NodeId,
    pub efd: NodeId,
    pub pm: NodeId,
}

/// Compiled generator: primitives plus the guesses that seed the first
/// Newton solve.
pub struct CompiledGenerator {
    pub primitives: Vec<CircuitPrimitive>,
    pub guesses: Vec<(NodeId, f64)>,
    pub nodes: GeneratorNodes,
    pub init: GeneratorInit,
}

/// Lowers the generator to circuit primitives.
///
/// When `efd_node`/`pm_node` are supplied (exciter/governor outputs) the
/// machine consumes them; otherwise it pins constant inputs at the
/// back-solved equilibrium values.
pub fn compile_generator(
    params: &GeneratorParams,
    op: &OperatingPoint,
    f0: f64,
    efd_node: Option<NodeId>,
    pm_node: Option<NodeId>,
    alloc: &mut NodeAllocator,
) -> Result<CompiledGenerator, MachineError> {
    let init = initialize(params, op)?;
    let omega_s = 2.0 * PI * f0;
    let name = params.name.clone();

    let theta = alloc.alloc(format!("{name}.theta"));
    let omega = alloc.alloc(format!("{name}.omega"));
    let eq_p = alloc.alloc(format!("{name}.eqp"));
    let ed_p = alloc.alloc(format!("{name}.edp"));
    let eq_pp = alloc.alloc(format!("{name}.eqpp"));
    let ed_pp = alloc.alloc(format!("{name}.edpp"));
    let vd = alloc.alloc(format!("{name}.vd"));
    let vq = alloc.alloc(format!("{name}.vq"));
    let id = alloc.alloc(format!("{name}.id"));
    let iq = alloc.alloc(format!("{name}.iq"));
    let vt = alloc.alloc(format!("{name}.vt"));
    let efd = match efd_node {
        Some(n) => n,
        None => alloc.alloc(format!("{name}.efd")),
    };
    let pm = match pm_node {
        Some(n) => n,
        None => alloc.alloc(format!("{name}.pm")),
    };

    let mut prims = Vec::new();
    let c = BehavioralExpr::constant;
    let v = BehavioralExpr::v;

    // state node: capacitor C to ground + behavioral current C dV/dt = f
    let state = |prims: &mut Vec<CircuitPrimitive>,
                 node: NodeId,
                 cap: f64,
                 init_v: f64,
                 f: BehavioralExpr,
                 label: &str| {
        prims.push(CircuitPrimitive::two_terminal(
            format!("{name}.{label}.c"),
            PrimitiveKind::Capacitor {
                farads: cap,
                initial_voltage: init_v,
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
    // algebraic node pinned by a behavioral voltage source
    let algebraic =
        |prims: &mut Vec<CircuitPrimitive>, node: NodeId, f: BehavioralExpr, label: &str| {
            prims.push(CircuitPrimitive::two_terminal(
                format!("{name}.{label}"),
                PrimitiveKind::BehavioralVoltage { expr: f },
                node,
                NodeId::GROUND,
            ));
        };

    // terminal dq voltage, pu; 2/(3 V_base) folds the power-invariant
    // scaling and the pu conversion into one factor
    let kv = 2.0 / (3.0 * params.v_base);
    let [ba, bb, bc] = params.bus.phases();
    let cos_t = |shift: f64| {
        if shift == 0.0 {
            v(theta).cos()
        } else {
            (v(theta) + c(shift)).cos()
        }
    };
    let sin_t = |shift: f64| {
        if shift == 0.0 {
            v(theta).sin()
        } else {
            (v(theta) + c(shift)).sin()
        }
    };
    let vd_expr =
        c(kv) * (cos_t(0.0) * v(ba) + cos_t(-TWO_PI_3) * v(bb) + cos_t(TWO_PI_3) * v(bc));
    let vq_expr =
        c(-kv) * (sin_t(0.0) * v(ba) + sin_t(-TWO_PI_3) * v(bb) + sin_t(TWO_PI_3) * v(bc));
    algebraic(&mut prims, vd, vd_expr, "vd");
    algebraic(&mut prims, vq, vq_expr, "vq");

    // stator currents from the subtransient algebra
    let det = params.ra * params.ra + params.xd_pp * params.xq_pp;
    let fd = || v(ed_pp) - v(vd);
    let fq = || v(eq_pp) - v(vq);
    let id_expr = (c(params.ra) * fd() + c(params.xq_pp) * fq()) / c(det);
    let iq_expr = (c(-params.xd_pp) * fd() + c(params.ra) * fq()) / c(det);
    algebraic(&mut prims, id, id_expr, "id");
    algebraic(&mut prims, iq, iq_expr, "iq");

    // terminal voltage magnitude, pu
    algebraic(&mut prims, vt, (v(vd) * v(vd) + v(vq) * v(vq)).sqrt(), "vt");

    if efd_node.is_none() {
        algebraic(&mut prims, efd, c(init.efd), "efd_const");
    }
    if pm_node.is_none() {
        algebraic(&mut prims, pm, c(init.pm), "pm_const");
    }

    // rotor states
    state(
        &mut prims,
        theta,
        1.0,
        init.theta0,
        c(omega_s) * v(omega),
        "theta",
    );
    let te =
        v(ed_pp) * v(id) + v(eq_pp) * v(iq) + c(params.xq_pp - params.xd_pp) * v(id) * v(iq);
    state(
        &mut prims,
        omega,
        2.0 * params.h,
        init.omega,
        v(pm) / v(omega) - te - c(params.d) * (v(omega) - c(1.0)),
        "omega",
    );
    state(
        &mut prims,
        eq_p,
        params.td0_p,
        init.eq_p,
        v(efd) - v(eq_p) - c(params.xd - params.xd_p) * v(id),
        "eqp",
    );
    state(
        &mut prims,
        ed_p,
        params.tq0_p,
        init.ed_p,
        c(params.xq - params.xq_p) * v(iq) - v(ed_p),
        "edp",
    );
    state(
        &mut prims,
        eq_pp,
        params.td0_pp,
        init.eq_pp,
        v(eq_p) - v(eq_pp) - c(params.xd_p - params.xd_pp) * v(id),
        "eqpp",
    );
    state(
        &mut prims,
        ed_pp,
        params.tq0_pp,
        init.ed_pp,
        v(ed_p) - v(ed_pp) + c(params.xq_p - params.xq_pp) * v(iq),
        "edpp",
    );

    // stator injection into the bus, SI amperes, q sign flipped into the
    // transform frame
    let ki = params.i_base();
    for (ph, (&bus, shift)) in ["a", "b", "c"]
        .iter()
        .zip(params.bus.phases().iter().zip([0.0, -TWO_PI_3, TWO_PI_3]))
    {
        let inj = c(ki) * (cos_t(shift) * v(id) - sin_t(shift) * v(iq));
        prims.push(CircuitPrimitive::two_terminal(
            format!("{name}.inj.{ph}"),
            PrimitiveKind::BehavioralCurrent { expr: inj },
            NodeId::GROUND,
            bus,
        ));
    }

    let guesses = vec![
        (theta, init.theta0),
        (omega, init.omega),
        (eq_p, init.eq_p),
        (ed_p, init.ed_p),
        (eq_pp, init.eq_pp),
        (ed_pp, init.ed_pp),
        (vd, init.vd),
        (vq, init.vq),
        (id, init.id),
        (iq, init.iq),
        (vt, op.v_mag),
        (efd, init.efd),
        (pm, init.pm),
    ];

    Ok(CompiledGenerator {
        primitives: prims,
        guesses,
        nodes: GeneratorNodes {
            theta,
            omega,
            eq_p,
            ed_p,
            eq_pp,
            ed_pp,
            vd,
            vq,
            id,
            iq,
            vt,
            efd,
            pm,
        },
        init,
    })
}
