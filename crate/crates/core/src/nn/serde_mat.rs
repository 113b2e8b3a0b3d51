//! Row-major JSON encoding for matrices: `{"rows": r, "cols": c, "data": [...]}`.

use nalgebra::DMatrix;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
struct Record {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn to_record(m: &DMatrix<f64>) -> Record {
    Record {
        rows: m.nrows(),
        cols: m.ncols(),
        data: (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect(),
    }
}

fn from_record<E: de::Error>(r: Record) -> Result<DMatrix<f64>, E> {
    if r.data.len() != r.rows * r.cols {
        return Err(E::custom(format!("matrix {}x{} with {} entries", r.rows, r.cols, r.data.len())));
    }
    Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    to_record(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    from_record(Record::deserialize(d)?)
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(to_record).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Vec::<Record>::deserialize(d)?.into_iter().map(from_record).collect()
    }
}

pub mod opt {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(to_record).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        Option::<Record>::deserialize(d)?.map(from_record).transpose()
    }
}
