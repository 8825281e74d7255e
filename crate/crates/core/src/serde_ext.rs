//! Serde adapters writing non-finite floats as the strings `"inf"`, `"-inf"` and `"nan"`.

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Num {
    F(f64),
    S(String),
}

fn to_num(x: f64) -> Num {
    if x.is_finite() {
        Num::F(x)
    } else if x.is_nan() {
        Num::S("nan".into())
    } else if x > 0.0 {
        Num::S("inf".into())
    } else {
        Num::S("-inf".into())
    }
}

fn from_num<E: de::Error>(n: Num) -> Result<f64, E> {
    match n {
        Num::F(x) => Ok(x),
        Num::S(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(E::custom(format!("expected a number, got {other:?}"))),
        },
    }
}

pub mod float {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_num(*x).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_num(Num::deserialize(d)?)
    }
}

pub mod float_vec {
    use super::*;

    pub fn serialize<S: Serializer>(x: &[f64], s: S) -> Result<S::Ok, S::Error> {
        x.iter()
            .map(|&v| to_num(v))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Num>::deserialize(d)?
            .into_iter()
            .map(from_num)
            .collect()
    }
}

pub mod float_opt {
    use super::*;

    pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        x.map(to_num).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<Num>::deserialize(d)?.map(from_num).transpose()
    }
}
