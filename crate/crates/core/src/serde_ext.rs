//! JSON has no infinities, so log weights that may be `-inf` are written as
//! the string `"-inf"` and finite values as ordinary numbers.

use serde::de::{self, Deserializer, Visitor};
use serde::Serializer;
use std::fmt;

pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
    if value.is_finite() {
        s.serialize_f64(*value)
    } else if *value == f64::NEG_INFINITY {
        s.serialize_str("-inf")
    } else if *value == f64::INFINITY {
        s.serialize_str("inf")
    } else {
        Err(serde::ser::Error::custom("NaN is not a valid log weight"))
    }
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    struct WeightVisitor;

    impl<'de> Visitor<'de> for WeightVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or one of \"-inf\", \"inf\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                "inf" | "infinity" => Ok(f64::INFINITY),
                _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
            }
        }
    }

    d.deserialize_any(WeightVisitor)
}
