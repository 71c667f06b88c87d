use serde::Serialize;

use crate::delay::ModelParams;
use crate::{Error, Result};

/// Outcome of one item of the simultaneous-design hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum ItemStatus {
    Satisfied,
    /// Not required to run, but voids the kernel-convergence guarantee.
    Warning(String),
    Violated(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestrictionItem {
    /// Roman numeral of the item, `"i"` to `"vii"`.
    pub item: &'static str,
    pub status: ItemStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestrictionAudit {
    pub items: Vec<RestrictionItem>,
}

impl RestrictionAudit {
    /// All seven items hold, kernel convergence is guaranteed for small PE
    /// excitations.
    pub fn certified(&self) -> bool {
        self.items.iter().all(|i| i.status == ItemStatus::Satisfied)
    }

    pub fn warnings(&self) -> impl Iterator<Item = (&'static str, &str)> {
        self.items.iter().filter_map(|i| match &i.status {
            ItemStatus::Warning(w) => Some((i.item, w.as_str())),
            _ => None,
        })
    }

    /// First hard violation as an error.
    pub fn require(&self) -> Result<()> {
        for i in &self.items {
            if let ItemStatus::Violated(reason) = &i.status {
                return Err(Error::Restriction {
                    item: i.item,
                    reason: reason.clone(),
                });
            }
        }
        Ok(())
    }
}

fn item(item: &'static str, status: ItemStatus) -> RestrictionItem {
    RestrictionItem { item, status }
}

/// Checks the measured-only closed loop against its standing hypotheses.
/// Item (i) holds by construction of the practical controller and item (iii)
/// by the finite grid.
pub fn audit_restrictions(params: &ModelParams) -> RestrictionAudit {
    use ItemStatus::*;
    let n1 = params.dims[0];
    let n = params.n_points();
    let c = params.coupling(0, 0);
    let mut items = vec![item("i", Satisfied)];

    items.push(item(
        "ii",
        if params.dims[1] == 0 {
            Satisfied
        } else {
            Violated(format!("{} unmeasured components per point", params.dims[1]))
        },
    ));
    items.push(item(
        "iii",
        if n > 0 {
            Satisfied
        } else {
            Violated("empty grid".into())
        },
    ));
    items.push(item(
        "iv",
        match c.delay.constant_value() {
            Some(_) => Satisfied,
            None => Violated("delay depends on the pair of points".into()),
        },
    ));
    let uniform = params.tau[0].windows(2).all(|w| w[0] == w[1]);
    items.push(item(
        "v",
        if uniform {
            Satisfied
        } else {
            Violated("time constants differ across points or components".into())
        },
    ));

    let zref = &params.zref1;
    let constant = n1 == 0 || zref.chunks(n1).all(|p| p == &zref[..n1]);
    let vi = if !constant {
        Violated("reference varies in space".into())
    } else {
        let s = c.activation.eval(&zref[..n1.min(zref.len())], c.kernel.col_dim());
        let size = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        if size > 1e-12 {
            Violated(format!("activation at the reference is {size}, not zero"))
        } else {
            Satisfied
        }
    };
    items.push(item("vi", vi));

    let vii = match c.activation.center() {
        Some(center) if c.activation.is_locally_linear() => {
            if constant && center == &zref[..n1.min(zref.len())] {
                Satisfied
            } else {
                Warning("linear region is not centered at the reference".into())
            }
        }
        _ => Warning("activation is not locally linear with invertible slope at the reference".into()),
    };
    items.push(item("vii", vii));
    RestrictionAudit { items }
}
