use crate::delay::{plant_rhs, DelayError, DelaySystem, ModelParams, Past, StateLayout};
use crate::field::weighted_l2_norm;
use crate::Result;

/// Plant under the static law `u1 = -alpha gamma(r) (z1 - zref1)`, `u2 = 0`.
pub struct HighGainLoop {
    pub params: ModelParams,
    /// Per-point gain profile, point-major like `z1`.
    pub gamma: Vec<f64>,
    layout: StateLayout,
}

impl HighGainLoop {
    /// Unit gain profile.
    pub fn new(params: ModelParams) -> Result<Self> {
        let gamma = vec![1.0; params.n_points() * params.dims[0]];
        Self::with_gamma(params, gamma)
    }

    pub fn with_gamma(params: ModelParams, gamma: Vec<f64>) -> Result<Self> {
        params.validate()?;
        if gamma.len() != params.zref1.len() {
            return Err(crate::Error::Config(format!(
                "gain profile has {} entries, expected {}",
                gamma.len(),
                params.zref1.len()
            )));
        }
        let n = params.n_points();
        let layout = StateLayout::builder()
            .field("z1", n, params.dims[0], true)
            .field("z2", n, params.dims[1], true)
            .build();
        Ok(Self { params, gamma, layout })
    }

    pub fn initial_state(&self, z1: f64, z2: f64) -> Vec<f64> {
        let mut y = vec![0.0; self.layout.len()];
        y[self.layout.component("z1").range()].fill(z1);
        y[self.layout.component("z2").range()].fill(z2);
        y
    }

    fn control(&self, z1: &[f64]) -> Vec<f64> {
        let p = &self.params;
        z1.iter()
            .zip(&p.zref1)
            .zip(&self.gamma)
            .map(|((z, r), g)| -p.alpha * g * (z - r))
            .collect()
    }
}

impl DelaySystem for HighGainLoop {
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
        let n = p.n_points();
        let [n1, n2] = p.dims;
        let l = &self.layout;
        let h1 = past.field(l.component("z1").offset, n, n1);
        let h2 = past.field(l.component("z2").offset, n, n2);
        let z1 = l.slice(y, "z1");
        let u1 = self.control(z1);
        let u2 = vec![0.0; n * n2];
        let [dz1, dz2] = l.split_mut(dy, ["z1", "z2"]);
        plant_rhs(p, t, [z1, l.slice(y, "z2")], [&h1, &h2], [&u1, &u2], [dz1, dz2])
    }

    fn metric_names(&self) -> Vec<String> {
        ["dev_z1", "norm_z1", "norm_z2", "norm_u1"].map(String::from).to_vec()
    }

    fn metrics(&self, _t: f64, y: &[f64], _past: &Past<'_>, out: &mut Vec<f64>) -> Result<(), DelayError> {
        let p = &self.params;
        let g = &p.grid;
        let [n1, n2] = p.dims;
        let z1 = self.layout.slice(y, "z1");
        let u1 = self.control(z1);
        let dev: Vec<f64> = z1.iter().zip(&p.zref1).map(|(a, b)| a - b).collect();
        out.push(weighted_l2_norm(&dev, n1, g));
        out.push(weighted_l2_norm(z1, n1, g));
        out.push(weighted_l2_norm(self.layout.slice(y, "z2"), n2, g));
        out.push(weighted_l2_norm(&u1, n1, g));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::{integrate, IntegrateOptions, Interp, SimState};
    use crate::field::{build_grid, MeasureKind};

    fn run(alpha: f64) -> f64 {
        let mut p = ModelParams::table1(build_grid(8, MeasureKind::Lebesgue).unwrap()).unwrap();
        p.alpha = alpha;
        let sys = HighGainLoop::new(p).unwrap();
        let mut st =
            SimState::with_constant_history(&sys, 0.0, sys.initial_state(1.0, 1.0), 1e-3, Interp::CubicHermite).unwrap();
        let tr = integrate(
            &sys,
            &mut st,
            &IntegrateOptions {
                t_end: 2.0,
                stride: 2000,
                ..Default::default()
            },
            &mut [],
        )
        .unwrap();
        *tr.metric("dev_z1").unwrap().last().unwrap()
    }

    #[test]
    fn larger_gain_gives_smaller_offset() {
        let (lo, hi) = (run(2.0), run(50.0));
        assert!(hi < lo);
        assert!(hi < 0.1);
    }

    #[test]
    fn gain_profile_length_is_checked() {
        let p = ModelParams::table1(build_grid(4, MeasureKind::Lebesgue).unwrap()).unwrap();
        assert!(HighGainLoop::with_gamma(p, vec![1.0; 3]).is_err());
    }
}
