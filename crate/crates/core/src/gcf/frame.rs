use crate::dgp::FirmPanel;
use crate::error::{Error, Result};

/// Column names available in an [`EstimationTable`].
pub const TABLE_COLUMNS: [&str; 12] = [
    "q", "k", "v", "p", "pV", "pK", "q_lag", "k_lag", "v_lag", "p_lag", "pV_lag", "pK_lag",
];

/// One row per firm and period `t >= 1`, with period `t - 1` values aligned
/// as `*_lag` columns. Rows are ordered by firm, then period.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationTable {
    pub firm: Vec<usize>,
    pub period: Vec<usize>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    pub p_v: Vec<f64>,
    pub p_k: Vec<f64>,
    pub q_lag: Vec<f64>,
    pub k_lag: Vec<f64>,
    pub v_lag: Vec<f64>,
    pub p_lag: Vec<f64>,
    pub p_v_lag: Vec<f64>,
    pub p_k_lag: Vec<f64>,
    /// `omega + eps` per row when the panel carried latents.
    pub omega_plus_eps: Option<Vec<f64>>,
}

impl EstimationTable {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        Ok(match name {
            "q" => &self.q,
            "k" => &self.k,
            "v" => &self.v,
            "p" => &self.p,
            "pV" => &self.p_v,
            "pK" => &self.p_k,
            "q_lag" => &self.q_lag,
            "k_lag" => &self.k_lag,
            "v_lag" => &self.v_lag,
            "p_lag" => &self.p_lag,
            "pV_lag" => &self.p_v_lag,
            "pK_lag" => &self.p_k_lag,
            other => {
                return Err(Error::Config(format!(
                    "unknown table column `{other}` (available: {})",
                    TABLE_COLUMNS.join(", ")
                )))
            }
        })
    }

    pub fn columns(&self, names: &[String]) -> Result<Vec<&[f64]>> {
        names.iter().map(|n| self.column(n)).collect()
    }

    /// Rows reordered by `perm` (row `i` of the result is row `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let pick = |x: &Vec<f64>| perm.iter().map(|&i| x[i]).collect::<Vec<_>>();
        Self {
            firm: perm.iter().map(|&i| self.firm[i]).collect(),
            period: perm.iter().map(|&i| self.period[i]).collect(),
            q: pick(&self.q),
            k: pick(&self.k),
            v: pick(&self.v),
            p: pick(&self.p),
            p_v: pick(&self.p_v),
            p_k: pick(&self.p_k),
            q_lag: pick(&self.q_lag),
            k_lag: pick(&self.k_lag),
            v_lag: pick(&self.v_lag),
            p_lag: pick(&self.p_lag),
            p_v_lag: pick(&self.p_v_lag),
            p_k_lag: pick(&self.p_k_lag),
            omega_plus_eps: self.omega_plus_eps.as_ref().map(pick),
        }
    }
}

/// Aligns each observation with its own firm's previous period.
pub fn build_lagged_frame(panel: &FirmPanel) -> Result<EstimationTable> {
    panel.validate()?;
    if panel.n_periods < 2 {
        return Err(Error::Data(format!(
            "need at least 2 periods to form lags, panel has {}",
            panel.n_periods
        )));
    }
    let rows = panel.n_firms * (panel.n_periods - 1);
    let mut t = EstimationTable {
        firm: Vec::with_capacity(rows),
        period: Vec::with_capacity(rows),
        q: Vec::with_capacity(rows),
        k: Vec::with_capacity(rows),
        v: Vec::with_capacity(rows),
        p: Vec::with_capacity(rows),
        p_v: Vec::with_capacity(rows),
        p_k: Vec::with_capacity(rows),
        q_lag: Vec::with_capacity(rows),
        k_lag: Vec::with_capacity(rows),
        v_lag: Vec::with_capacity(rows),
        p_lag: Vec::with_capacity(rows),
        p_v_lag: Vec::with_capacity(rows),
        p_k_lag: Vec::with_capacity(rows),
        omega_plus_eps: panel.latents.as_ref().map(|_| Vec::with_capacity(rows)),
    };
    for i in 0..panel.n_firms {
        for s in 1..panel.n_periods {
            let j = panel.index(i, s);
            let l = panel.index(i, s - 1);
            t.firm.push(i);
            t.period.push(s);
            t.q.push(panel.q[j]);
            t.k.push(panel.k[j]);
            t.v.push(panel.v[j]);
            t.p.push(panel.p[j]);
            t.p_v.push(panel.p_v[j]);
            t.p_k.push(panel.p_k[j]);
            t.q_lag.push(panel.q[l]);
            t.k_lag.push(panel.k[l]);
            t.v_lag.push(panel.v[l]);
            t.p_lag.push(panel.p[l]);
            t.p_v_lag.push(panel.p_v[l]);
            t.p_k_lag.push(panel.p_k[l]);
            if let (Some(out), Some(lat)) = (t.omega_plus_eps.as_mut(), panel.latents.as_ref()) {
                out.push(lat.omega[j] + lat.eps[j]);
            }
        }
    }
    Ok(t)
}
