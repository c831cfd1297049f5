//! Serialization helpers shared by the data products.

use nalgebra::{DMatrix, DVector};

/// Plain decimal rendering of an `f64` (never scientific notation); `null` for non-finite values.
pub fn decimal_string(x: f64) -> String {
    if x.is_finite() {
        let s = format!("{}", x);
        if s == "-0" {
            "0".to_string()
        } else {
            s
        }
    } else {
        "null".to_string()
    }
}

/// Serde adapters writing matrices and vectors as nested JSON arrays of plain decimals.
pub mod decimal {
    use super::decimal_string;
    use serde::de::Deserializer;
    use serde::ser::{SerializeSeq, Serializer};
    use serde::Deserialize;
    use serde_json::value::RawValue;

    fn raw(x: f64) -> Box<RawValue> {
        RawValue::from_string(decimal_string(x)).expect("decimal literal is valid JSON")
    }

    fn de_f64(v: Option<f64>) -> f64 {
        v.unwrap_or(f64::NAN)
    }

    pub mod matrix {
        use super::*;
        use nalgebra::DMatrix;

        pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(m.nrows()))?;
            for r in 0..m.nrows() {
                let row: Vec<Box<RawValue>> = m.row(r).iter().map(|x| raw(*x)).collect();
                seq.serialize_element(&row)?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
            let rows: Vec<Vec<Option<f64>>> = Vec::deserialize(d)?;
            let nr = rows.len();
            let nc = rows.first().map(|r| r.len()).unwrap_or(0);
            if rows.iter().any(|r| r.len() != nc) {
                return Err(serde::de::Error::custom("ragged matrix rows"));
            }
            Ok(DMatrix::from_fn(nr, nc, |i, j| de_f64(rows[i][j])))
        }
    }

    pub mod vector {
        use super::*;
        use nalgebra::DVector;

        pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v.iter() {
                seq.serialize_element(&raw(*x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
            let v: Vec<Option<f64>> = Vec::deserialize(d)?;
            Ok(DVector::from_iterator(v.len(), v.into_iter().map(de_f64)))
        }
    }

    pub mod scalar {
        use super::*;

        pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
            serde::Serialize::serialize(&raw(*x), s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            Ok(de_f64(Option::<f64>::deserialize(d)?))
        }
    }

    pub mod matrix_list {
        use super::*;
        use nalgebra::DMatrix;

        #[derive(serde::Serialize, serde::Deserialize)]
        struct W(#[serde(with = "super::matrix")] DMatrix<f64>);

        pub fn serialize<S: Serializer>(v: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for m in v {
                seq.serialize_element(&W(m.clone()))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
            let v: Vec<W> = Vec::deserialize(d)?;
            Ok(v.into_iter().map(|w| w.0).collect())
        }
    }
}

/// A matrix serialized through [`decimal::matrix`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct Mat(#[serde(with = "decimal::matrix")] pub DMatrix<f64>);

/// CSV with a header row; values written as plain decimals.
pub fn matrix_csv(header: &[String], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.iter().map(|x| decimal_string(*x)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// Columns of `m` as CSV rows (one row per sample), header `prefix1..prefixk`.
pub fn columns_csv(prefix: &str, m: &DMatrix<f64>) -> String {
    let header: Vec<String> = (0..m.nrows()).map(|i| format!("{}{}", prefix, i + 1)).collect();
    let rows: Vec<Vec<f64>> = (0..m.ncols()).map(|c| m.column(c).iter().copied().collect()).collect();
    matrix_csv(&header, &rows)
}

pub fn vec_to_string(v: &DVector<f64>) -> String {
    format!("[{}]", v.iter().map(|x| decimal_string(*x)).collect::<Vec<_>>().join(", "))
}
