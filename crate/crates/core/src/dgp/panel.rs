//! Balanced firm panels and their delimited-text export.
//!
//! Table layout: `firm_id,period,q,p,k,v,pK,pV` followed, when latents are
//! retained, by `q_star,omega,delta1,delta2,xi,eps`. Rows are ordered by firm,
//! then period. A JSON sidecar (`<table>.meta.json`) records the generating
//! configuration and the solved process coefficients.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{DgpConfig, ProcessCoefficients};

pub const OBSERVED_COLUMNS: [&str; 8] = ["firm_id", "period", "q", "p", "k", "v", "pK", "pV"];
pub const LATENT_COLUMNS: [&str; 6] = ["q_star", "omega", "delta1", "delta2", "xi", "eps"];

/// Unobserved columns kept alongside the data for diagnostics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Latents {
    pub q_star: Vec<f64>,
    pub omega: Vec<f64>,
    pub delta1: Vec<f64>,
    pub delta2: Vec<f64>,
    pub xi: Vec<f64>,
    pub eps: Vec<f64>,
}

/// Record of how a panel was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelMetadata {
    pub config: DgpConfig,
    pub processes: ProcessCoefficients,
}

/// Balanced panel stored column-wise; observation `(i, t)` sits at `i * n_periods + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirmPanel {
    pub n_firms: usize,
    pub n_periods: usize,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub p_k: Vec<f64>,
    pub p_v: Vec<f64>,
    pub latents: Option<Latents>,
    pub metadata: Option<PanelMetadata>,
}

impl FirmPanel {
    #[inline]
    pub fn index(&self, firm: usize, period: usize) -> usize {
        firm * self.n_periods + period
    }

    pub fn len(&self) -> usize {
        self.n_firms * self.n_periods
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_latents(&self) -> bool {
        self.latents.is_some()
    }

    pub fn without_latents(mut self) -> Self {
        self.latents = None;
        self
    }

    /// Checks that every column has `n_firms * n_periods` entries.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let mut cols: Vec<(&str, usize)> = vec![
            ("q", self.q.len()),
            ("p", self.p.len()),
            ("k", self.k.len()),
            ("v", self.v.len()),
            ("pK", self.p_k.len()),
            ("pV", self.p_v.len()),
        ];
        if let Some(l) = &self.latents {
            cols.extend([
                ("q_star", l.q_star.len()),
                ("omega", l.omega.len()),
                ("delta1", l.delta1.len()),
                ("delta2", l.delta2.len()),
                ("xi", l.xi.len()),
                ("eps", l.eps.len()),
            ]);
        }
        for (name, len) in cols {
            if len != n {
                return Err(Error::Dimension {
                    what: format!("panel column {name}"),
                    expected: n,
                    got: len,
                });
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        let mut header: Vec<&str> = OBSERVED_COLUMNS.to_vec();
        if self.latents.is_some() {
            header.extend(LATENT_COLUMNS);
        }
        w.write_record(&header)?;
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.n_firms {
            for t in 0..self.n_periods {
                let j = self.index(i, t);
                row.clear();
                row.push(i.to_string());
                row.push(t.to_string());
                for x in [
                    self.q[j],
                    self.p[j],
                    self.k[j],
                    self.v[j],
                    self.p_k[j],
                    self.p_v[j],
                ] {
                    row.push(x.to_string());
                }
                if let Some(l) = &self.latents {
                    for x in [
                        l.q_star[j],
                        l.omega[j],
                        l.delta1[j],
                        l.delta2[j],
                        l.xi[j],
                        l.eps[j],
                    ] {
                        row.push(x.to_string());
                    }
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        if let Some(meta) = &self.metadata {
            let mut f = BufWriter::new(File::create(metadata_path(path))?);
            serde_json::to_writer_pretty(&mut f, meta)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a table written by [`FirmPanel::write_csv`]; the sidecar is
    /// loaded when present.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        let with_latents = match header.len() {
            8 => false,
            14 => true,
            n => return Err(Error::Data(format!("expected 8 or 14 columns, found {n}"))),
        };
        let expected = OBSERVED_COLUMNS.iter().chain(LATENT_COLUMNS.iter());
        for (got, want) in header.iter().zip(expected) {
            if got != want {
                return Err(Error::Data(format!(
                    "unexpected column `{got}`, wanted `{want}`"
                )));
            }
        }

        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len() - 2];
        let mut firm_ids = Vec::new();
        let mut periods = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse_idx = |c: usize| -> Result<usize> {
                rec[c].trim().parse::<usize>().map_err(|e| {
                    Error::Data(format!("row {}: column {}: {e}", line + 2, header[c]))
                })
            };
            firm_ids.push(parse_idx(0)?);
            periods.push(parse_idx(1)?);
            for (c, col) in cols.iter_mut().enumerate() {
                let x = rec[c + 2].trim().parse::<f64>().map_err(|e| {
                    Error::Data(format!("row {}: column {}: {e}", line + 2, header[c + 2]))
                })?;
                col.push(x);
            }
        }

        let n_firms = firm_ids.last().map_or(0, |&i| i + 1);
        let n_periods = periods.iter().copied().max().map_or(0, |t| t + 1);
        if n_firms * n_periods != firm_ids.len() {
            return Err(Error::Data(format!(
                "panel is not balanced: {} rows for {n_firms} firms x {n_periods} periods",
                firm_ids.len()
            )));
        }
        for (j, (&i, &t)) in firm_ids.iter().zip(&periods).enumerate() {
            if i * n_periods + t != j {
                return Err(Error::Data(format!(
                    "row {} is out of (firm, period) order",
                    j + 2
                )));
            }
        }

        let mut it = cols.into_iter();
        let mut next = || it.next().unwrap_or_default();
        let (q, p, k, v, p_k, p_v) = (next(), next(), next(), next(), next(), next());
        let latents = with_latents.then(|| Latents {
            q_star: next(),
            omega: next(),
            delta1: next(),
            delta2: next(),
            xi: next(),
            eps: next(),
        });

        let meta_path = metadata_path(path);
        let metadata = if meta_path.exists() {
            Some(serde_json::from_reader(BufReader::new(File::open(
                meta_path,
            )?))?)
        } else {
            None
        };

        let panel = FirmPanel {
            n_firms,
            n_periods,
            q,
            p,
            k,
            v,
            p_k,
            p_v,
            latents,
            metadata,
        };
        panel.validate()?;
        Ok(panel)
    }
}

/// Sidecar location for a panel table: `panel.csv` -> `panel.meta.json`.
pub fn metadata_path(table: &Path) -> PathBuf {
    table.with_extension("meta.json")
}
