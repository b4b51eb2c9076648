//! Trial cohort types and CSV ingestion.
//!
//! The on-disk layout is a header `id,arm,cost,effect,<factor_1>,...,<factor_m>`
//! followed by one row per patient. Row order is preserved on load because
//! DBSCAN tie-breaks depend on it.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ID_COLUMN: &str = "id";
pub const ARM_COLUMN: &str = "arm";
pub const COST_COLUMN: &str = "cost";
pub const EFFECT_COLUMN: &str = "effect";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: non-numeric value {value:?}")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: unknown arm label {label:?}")]
    UnknownArmLabel { row: usize, label: String },
    #[error("duplicate patient id {0:?}")]
    DuplicateId(String),
    #[error("{0} arm has no patients")]
    EmptyArm(Arm),
    #[error("row {row}, column `{column}`: non-finite value")]
    NonFiniteValue { row: usize, column: String },
    #[error("row {row}: negative cost {value}")]
    NegativeCost { row: usize, value: f64 },
    #[error("patient {id:?} has {found} factors, expected {expected}")]
    FactorLength {
        id: String,
        found: usize,
        expected: usize,
    },
    #[error("no factor columns declared")]
    NoFactors,
    #[error("dataset needs at least 2 patients, found {0}")]
    TooFewPatients(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Treatment arm of a patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Experimental,
    Control,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Experimental => "experimental",
            Arm::Control => "control",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = ();

    /// Case-insensitive; accepts `experimental`, `e`, `treatment`, `control`, `c`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "experimental" | "e" | "treatment" => Ok(Arm::Experimental),
            "control" | "c" => Ok(Arm::Control),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub arm: Arm,
    pub cost: f64,
    pub effect: f64,
    pub factors: Vec<f64>,
}

/// A validated cohort. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    factor_names: Vec<String>,
    records: Vec<PatientRecord>,
    n_experimental: usize,
    n_control: usize,
}

impl TrialDataset {
    /// Validates every cohort invariant. Errors carry 1-based data row numbers.
    pub fn new(
        factor_names: Vec<String>,
        records: Vec<PatientRecord>,
    ) -> Result<Self, DatasetError> {
        let m = factor_names.len();
        if m == 0 {
            return Err(DatasetError::NoFactors);
        }
        let mut seen = HashSet::with_capacity(records.len());
        let (mut n_e, mut n_c) = (0, 0);
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if !seen.insert(r.id.as_str()) {
                return Err(DatasetError::DuplicateId(r.id.clone()));
            }
            if r.factors.len() != m {
                return Err(DatasetError::FactorLength {
                    id: r.id.clone(),
                    found: r.factors.len(),
                    expected: m,
                });
            }
            if !r.cost.is_finite() {
                return Err(DatasetError::NonFiniteValue {
                    row,
                    column: COST_COLUMN.into(),
                });
            }
            if r.cost < 0.0 {
                return Err(DatasetError::NegativeCost { row, value: r.cost });
            }
            if !r.effect.is_finite() {
                return Err(DatasetError::NonFiniteValue {
                    row,
                    column: EFFECT_COLUMN.into(),
                });
            }
            if let Some(j) = r.factors.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::NonFiniteValue {
                    row,
                    column: factor_names[j].clone(),
                });
            }
            match r.arm {
                Arm::Experimental => n_e += 1,
                Arm::Control => n_c += 1,
            }
        }
        if n_e == 0 {
            return Err(DatasetError::EmptyArm(Arm::Experimental));
        }
        if n_c == 0 {
            return Err(DatasetError::EmptyArm(Arm::Control));
        }
        if records.len() < 2 {
            return Err(DatasetError::TooFewPatients(records.len()));
        }
        Ok(Self {
            factor_names,
            records,
            n_experimental: n_e,
            n_control: n_c,
        })
    }

    pub fn factor_names(&self) -> &[String] {
        &self.factor_names
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn m(&self) -> usize {
        self.factor_names.len()
    }

    pub fn n_experimental(&self) -> usize {
        self.n_experimental
    }

    pub fn n_control(&self) -> usize {
        self.n_control
    }

    /// Builds a dataset with every cost mapped through `f`, keeping everything else.
    pub fn map_costs(&self, f: impl Fn(f64) -> f64) -> Result<Self, DatasetError> {
        let records = self
            .records
            .iter()
            .map(|r| PatientRecord {
                cost: f(r.cost),
                ..r.clone()
            })
            .collect();
        Self::new(self.factor_names.clone(), records)
    }

    pub fn map_effects(&self, f: impl Fn(f64) -> f64) -> Result<Self, DatasetError> {
        let records = self
            .records
            .iter()
            .map(|r| PatientRecord {
                effect: f(r.effect),
                ..r.clone()
            })
            .collect();
        Self::new(self.factor_names.clone(), records)
    }
}

/// Which columns of the CSV are key factors.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum FactorSchema {
    /// Every column other than id/arm/cost/effect, in header order.
    #[default]
    AllRemaining,
    Named(Vec<String>),
}

pub fn load_dataset<R: Read>(source: R, schema: &FactorSchema) -> Result<TrialDataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let id_col = find(ID_COLUMN)?;
    let arm_col = find(ARM_COLUMN)?;
    let cost_col = find(COST_COLUMN)?;
    let effect_col = find(EFFECT_COLUMN)?;

    let factor_cols: Vec<(usize, String)> = match schema {
        FactorSchema::AllRemaining => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![id_col, arm_col, cost_col, effect_col].contains(i))
            .map(|(i, h)| (i, h.to_string()))
            .collect(),
        FactorSchema::Named(names) => names
            .iter()
            .map(|name| find(name).map(|i| (i, name.clone())))
            .collect::<Result<_, _>>()?,
    };
    if factor_cols.is_empty() {
        return Err(DatasetError::NoFactors);
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let row_no = i + 1;
        let number = |col: usize, name: &str| -> Result<f64, DatasetError> {
            let cell = row.get(col).unwrap_or("");
            let value: f64 = cell.parse().map_err(|_| DatasetError::NonNumericCell {
                row: row_no,
                column: name.to_string(),
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(DatasetError::NonFiniteValue {
                    row: row_no,
                    column: name.to_string(),
                });
            }
            Ok(value)
        };
        let label = row.get(arm_col).unwrap_or("");
        let arm = label.parse().map_err(|_| DatasetError::UnknownArmLabel {
            row: row_no,
            label: label.to_string(),
        })?;
        let factors = factor_cols
            .iter()
            .map(|(col, name)| number(*col, name))
            .collect::<Result<Vec<_>, _>>()?;
        records.push(PatientRecord {
            id: row.get(id_col).unwrap_or("").to_string(),
            arm,
            cost: number(cost_col, COST_COLUMN)?,
            effect: number(effect_col, EFFECT_COLUMN)?,
            factors,
        });
    }
    let names = factor_cols.into_iter().map(|(_, name)| name).collect();
    TrialDataset::new(names, records)
}

/// Writes the dataset in the canonical column order. Floats use Rust's
/// shortest round-trip rendering, so reloading reproduces every value exactly.
pub fn write_dataset<W: Write>(ds: &TrialDataset, sink: W) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec![ID_COLUMN, ARM_COLUMN, COST_COLUMN, EFFECT_COLUMN];
    header.extend(ds.factor_names.iter().map(String::as_str));
    writer.write_record(&header)?;
    for r in &ds.records {
        let mut fields = vec![
            r.id.clone(),
            r.arm.as_str().to_string(),
            r.cost.to_string(),
            r.effect.to_string(),
        ];
        fields.extend(r.factors.iter().map(f64::to_string));
        writer.write_record(&fields)?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// n×m matrix whose row i is record i's factor vector.
pub fn factor_matrix(ds: &TrialDataset) -> DMatrix<f64> {
    DMatrix::from_fn(ds.n(), ds.m(), |i, j| ds.records[i].factors[j])
}
