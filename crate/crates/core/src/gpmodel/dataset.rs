use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PursuitError, Result};
use crate::geometry::Vec6;

/// Column names of the dataset CSV: six pose inputs, six velocity outputs.
pub const DATASET_HEADER: [&str; 12] = [
    "px", "py", "pz", "rx", "ry", "rz", "vx", "vy", "vz", "wx", "wy", "wz",
];

/// Training pairs `(ǧ_wo, y)` for one motion profile.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec6>,
    pub outputs: Vec<Vec6>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec6>, outputs: Vec<Vec6>) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(PursuitError::InvalidArgument(format!(
                "dataset has {} inputs but {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        let finite = |v: &Vec6| v.iter().all(|x| x.is_finite());
        if !inputs.iter().all(finite) || !outputs.iter().all(finite) {
            return Err(PursuitError::InvalidArgument(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(Dataset { inputs, outputs })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Column `i` of the outputs.
    pub fn output_column(&self, i: usize) -> Vec<f64> {
        self.outputs.iter().map(|y| y[i]).collect()
    }

    pub fn concat(parts: &[Dataset]) -> Dataset {
        let mut out = Dataset::empty();
        for p in parts {
            out.inputs.extend_from_slice(&p.inputs);
            out.outputs.extend_from_slice(&p.outputs);
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(DATASET_HEADER)?;
        for (x, y) in self.inputs.iter().zip(&self.outputs) {
            let row: Vec<String> = x.iter().chain(y.iter()).map(|v| format!("{v:e}")).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.len() != 12 {
            return Err(PursuitError::Format(format!(
                "dataset CSV needs 12 columns, found {}",
                header.len()
            )));
        }
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != 12 {
                return Err(PursuitError::Format(format!(
                    "row {} has {} columns",
                    line + 2,
                    rec.len()
                )));
            }
            let vals = rec
                .iter()
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| {
                        PursuitError::Format(format!("row {}: '{s}': {e}", line + 2))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            inputs.push(Vec6::from_column_slice(&vals[..6]));
            outputs.push(Vec6::from_column_slice(&vals[6..]));
        }
        Dataset::new(inputs, outputs)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}
