//! Market observations and the CSV exchange format.
//!
//! The header names `P`, `Y`, then `ZD1..ZDk`, `ZS1..ZSk`, `W1..Wk`. Column
//! order is free on input; output always uses the order above.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketObservation {
    pub p: f64,
    pub y: f64,
    pub zd: Vec<f64>,
    pub zs: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetShape {
    pub dim_zd: usize,
    pub dim_zs: usize,
    pub dim_w: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Ingested,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub observations: Vec<MarketObservation>,
    pub shape: DatasetShape,
    pub seed: Option<u64>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        observations: Vec<MarketObservation>,
        shape: DatasetShape,
        seed: Option<u64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::EmptyInput("dataset has no rows".into()));
        }
        for (i, o) in observations.iter().enumerate() {
            if o.zd.len() != shape.dim_zd || o.zs.len() != shape.dim_zs || o.w.len() != shape.dim_w {
                return Err(Error::dims(format!("row {i} does not match the dataset shape")));
            }
        }
        Ok(Self {
            observations,
            shape,
            seed,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn prices(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.observations.iter().map(|o| o.p))
    }

    pub fn quantities(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.observations.iter().map(|o| o.y))
    }

    pub fn zd(&self) -> DMatrix<f64> {
        self.block(self.shape.dim_zd, |o| &o.zd)
    }

    pub fn zs(&self) -> DMatrix<f64> {
        self.block(self.shape.dim_zs, |o| &o.zs)
    }

    pub fn w(&self) -> DMatrix<f64> {
        self.block(self.shape.dim_w, |o| &o.w)
    }

    fn block(&self, k: usize, pick: impl Fn(&MarketObservation) -> &Vec<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), k, |i, j| pick(&self.observations[i])[j])
    }

    /// Copy with a constant column prepended to `W`.
    pub fn with_constant(&self) -> Self {
        let mut out = self.clone();
        for o in &mut out.observations {
            o.w.insert(0, 1.0);
        }
        out.shape.dim_w += 1;
        out
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["P".to_string(), "Y".to_string()];
        h.extend((1..=self.shape.dim_zd).map(|j| format!("ZD{j}")));
        h.extend((1..=self.shape.dim_zs).map(|j| format!("ZS{j}")));
        h.extend((1..=self.shape.dim_w).map(|j| format!("W{j}")));
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(self.header())?;
        for o in &self.observations {
            let row: Vec<String> = [o.p, o.y]
                .iter()
                .chain(&o.zd)
                .chain(&o.zs)
                .chain(&o.w)
                .map(|&x| fmt_f64(x))
                .collect();
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Parse the CSV exchange format, reporting schema problems with the
    /// offending line number (header is line 1).
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = rdr.headers()?.clone();
        let layout = ColumnLayout::from_header(&header)?;
        let mut observations = Vec::new();
        for (k, record) in rdr.records().enumerate() {
            let line = k + 2;
            let record = record.map_err(|e| Error::Schema {
                line: Some(line),
                message: e.to_string(),
            })?;
            if record.len() != header.len() {
                return Err(Error::Schema {
                    line: Some(line),
                    message: format!("expected {} fields, found {}", header.len(), record.len()),
                });
            }
            let value = |col: usize| -> Result<f64> {
                let raw = &record[col];
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Schema {
                        line: Some(line),
                        message: format!("column `{}`: `{raw}` is not a finite number", &header[col]),
                    })
            };
            let many = |cols: &[usize]| cols.iter().map(|&c| value(c)).collect::<Result<Vec<_>>>();
            observations.push(MarketObservation {
                p: value(layout.p)?,
                y: value(layout.y)?,
                zd: many(&layout.zd)?,
                zs: many(&layout.zs)?,
                w: many(&layout.w)?,
            });
        }
        if observations.is_empty() {
            return Err(Error::Schema {
                line: None,
                message: "no data rows".into(),
            });
        }
        let shape = DatasetShape {
            dim_zd: layout.zd.len(),
            dim_zs: layout.zs.len(),
            dim_w: layout.w.len(),
        };
        Dataset::new(observations, shape, None, Provenance::Ingested)
    }

    pub fn read_csv_path(path: &std::path::Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

struct ColumnLayout {
    p: usize,
    y: usize,
    zd: Vec<usize>,
    zs: Vec<usize>,
    w: Vec<usize>,
}

impl ColumnLayout {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let schema = |message: String| Error::Schema {
            line: Some(1),
            message,
        };
        let mut index: HashMap<String, usize> = HashMap::new();
        for (i, name) in header.iter().enumerate() {
            let key = name.to_ascii_uppercase();
            if index.insert(key, i).is_some() {
                return Err(schema(format!("duplicate column `{name}`")));
            }
        }
        let required = |name: &str| index.get(name).copied().ok_or_else(|| schema(format!("missing column `{name}`")));
        let p = required("P")?;
        let y = required("Y")?;
        let numbered = |prefix: &str| -> Result<Vec<usize>> {
            let mut count = 0;
            for key in index.keys() {
                if let Some(rest) = key.strip_prefix(prefix) {
                    if !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()) {
                        count += 1;
                    }
                }
            }
            (1..=count)
                .map(|j| required(&format!("{prefix}{j}")))
                .collect()
        };
        let zd = numbered("ZD")?;
        let zs = numbered("ZS")?;
        let w = numbered("W")?;
        let known = 2 + zd.len() + zs.len() + w.len();
        if known != header.len() {
            let used: Vec<usize> = [p, y].into_iter().chain(zd.iter().copied()).chain(zs.iter().copied()).chain(w.iter().copied()).collect();
            let stray = (0..header.len()).find(|i| !used.contains(i)).unwrap_or(0);
            return Err(schema(format!("unrecognized column `{}`", &header[stray])));
        }
        // Each curve needs at least one excluded shifter.
        for (cols, first) in [(&zd, "ZD1"), (&zs, "ZS1")] {
            if cols.is_empty() {
                return Err(schema(format!("missing column `{first}`")));
            }
        }
        Ok(Self { p, y, zd, zs, w })
    }
}
