use super::restrictions::{audit_restrictions, RestrictionAudit};
use crate::delay::{
    plant_rhs, DelayError, DelaySystem, DelayedActivation, FieldHistory, ModelParams, Past, SharedInput, StateLayout,
};
use crate::field::weighted_l2_norm;
use crate::observer::{flat_hs, ErrorCoordinates};
use crate::Result;

pub struct SimInputs<'a> {
    pub z: &'a [f64],
    pub z_past: &'a dyn FieldHistory,
    pub what: &'a [f64],
    pub v: &'a [f64],
}

/// `u = v - alpha (z - zref) + z - int what S(z(t-d))`.
pub fn control_sim(params: &ModelParams, t: f64, inp: &SimInputs<'_>, u: &mut [f64]) -> Result<(), DelayError> {
    let g = &params.grid;
    let mut drive = vec![0.0; u.len()];
    DelayedActivation::compute(params.coupling(0, 0), g, inp.z_past, t)?.accumulate(
        inp.what,
        params.dims[0],
        g,
        &mut drive,
    );
    for k in 0..u.len() {
        u[k] = inp.v[k] - params.alpha * (inp.z[k] - params.zref1[k]) + inp.z[k] - drive[k];
    }
    Ok(())
}

pub struct SimRates<'a> {
    pub zhat: &'a mut [f64],
    pub what: &'a mut [f64],
}

/// ```text
/// tau zhat' = -alpha (zhat - zref) + v
/// tau what' = -(zhat - z) S(z(t-d))^T
/// ```
///
/// `zhat` filters the excitation and does not copy `z`.
pub fn sim_observer_rhs(
    params: &ModelParams,
    t: f64,
    zhat: &[f64],
    inp: &SimInputs<'_>,
    out: SimRates<'_>,
) -> Result<(), DelayError> {
    let tau = &params.tau[0];
    let innovation: Vec<f64> = zhat.iter().zip(inp.z).map(|(a, b)| a - b).collect();
    for k in 0..zhat.len() {
        out.zhat[k] = (-params.alpha * (zhat[k] - params.zref1[k]) + inp.v[k]) / tau[k];
    }
    DelayedActivation::compute(params.coupling(0, 0), &params.grid, inp.z_past, t)?.outer_into(
        &innovation,
        tau,
        -1.0,
        out.what,
    );
    Ok(())
}

pub const SIM_METRICS: [&str; 7] = ["norm_z", "dev_z", "norm_v", "norm_zhat", "err_z", "err_w", "norm_u"];

/// Fully measured plant under the practical controller with excitation `v`.
pub struct SimLoop {
    pub params: ModelParams,
    pub excitation: SharedInput,
    pub audit: RestrictionAudit,
    layout: StateLayout,
}

impl SimLoop {
    /// Fails on any violated hypothesis other than local linearity.
    pub fn new(params: ModelParams, excitation: SharedInput) -> Result<Self> {
        params.validate()?;
        let audit = audit_restrictions(&params);
        audit.require()?;
        let n = params.n_points();
        let n1 = params.dims[0];
        let layout = StateLayout::builder()
            .field("z", n, n1, true)
            .field("zhat", n, n1, false)
            .kernel("what", n, n1, params.coupling(0, 0).kernel.col_dim())
            .build();
        Ok(Self {
            params,
            excitation,
            audit,
            layout,
        })
    }

    pub fn initial_state(&self, z: f64, zhat: f64) -> Vec<f64> {
        let mut y = vec![0.0; self.layout.len()];
        y[self.layout.component("z").range()].fill(z);
        y[self.layout.component("zhat").range()].fill(zhat);
        y
    }

    fn terms(&self, t: f64, y: &[f64], past: &Past<'_>) -> Result<(Vec<f64>, Vec<f64>), DelayError> {
        let l = &self.layout;
        let n = self.params.n_points();
        let h = past.field(l.component("z").offset, n, self.params.dims[0]);
        let mut v = vec![0.0; l.component("z").range().len()];
        self.excitation.eval_into(t, &mut v);
        let mut u = vec![0.0; v.len()];
        control_sim(
            &self.params,
            t,
            &SimInputs {
                z: l.slice(y, "z"),
                z_past: &h,
                what: l.slice(y, "what"),
                v: &v,
            },
            &mut u,
        )?;
        Ok((v, u))
    }
}

impl DelaySystem for SimLoop {
    fn layout(&self) -> &StateLayout {
        &self.layout
    }

    fn max_delay(&self) -> f64 {
        self.params.max_delay()
    }

    fn min_delay(&self) -> f64 {
        self.params.min_delay()
    }

    fn rhs(&self, t: f64, y: &[f64], past: &Past<'_>, dy: &mut [f64]) -> Result<(), DelayError> {
        let p = &self.params;
        let l = &self.layout;
        let n = p.n_points();
        let h = past.field(l.component("z").offset, n, p.dims[0]);
        let (v, u) = self.terms(t, y, past)?;
        let z = l.slice(y, "z");
        let [dz, dzh, dw] = l.split_mut(dy, ["z", "zhat", "what"]);
        plant_rhs(p, t, [z, &[]], [&h, &h], [&u, &[]], [dz, &mut []])?;
        sim_observer_rhs(
            p,
            t,
            l.slice(y, "zhat"),
            &SimInputs {
                z,
                z_past: &h,
                what: l.slice(y, "what"),
                v: &v,
            },
            SimRates { zhat: dzh, what: dw },
        )
    }

    fn metric_names(&self) -> Vec<String> {
        SIM_METRICS.iter().map(|s| s.to_string()).collect()
    }

    fn metrics(&self, t: f64, y: &[f64], past: &Past<'_>, out: &mut Vec<f64>) -> Result<(), DelayError> {
        let p = &self.params;
        let g = &p.grid;
        let n1 = p.dims[0];
        let l = &self.layout;
        let (v, u) = self.terms(t, y, past)?;
        let z = l.slice(y, "z");
        let dev: Vec<f64> = z.iter().zip(&p.zref1).map(|(a, b)| a - b).collect();
        let [e, _, wt, _] = self.error_parts(y);
        out.push(weighted_l2_norm(z, n1, g));
        out.push(weighted_l2_norm(&dev, n1, g));
        out.push(weighted_l2_norm(&v, n1, g));
        out.push(weighted_l2_norm(l.slice(y, "zhat"), n1, g));
        out.push(weighted_l2_norm(&e, n1, g));
        out.push(flat_hs(&wt, p));
        out.push(weighted_l2_norm(&u, n1, g));
        Ok(())
    }
}

impl ErrorCoordinates for SimLoop {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    /// `(zhat - z, -, what - w, -)`.
    fn error_parts(&self, y: &[f64]) -> [Vec<f64>; 4] {
        let l = &self.layout;
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();
        [
            d(l.slice(y, "zhat"), l.slice(y, "z")),
            Vec::new(),
            d(l.slice(y, "what"), self.params.coupling(0, 0).kernel.data()),
            Vec::new(),
        ]
    }

    fn ztilde2_from_history(&self, _row: &[f64]) -> Vec<f64> {
        Vec::new()
    }
}
