use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Info,
}

/// Where a reference value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Stated in the published analysis.
    Published,
    /// Follows immediately from the definitions.
    Exact,
    /// Produced by an independent computation.
    Computed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub measured: Option<f64>,
    pub reference: Option<f64>,
    pub source: Option<Source>,
    pub tolerance: Option<f64>,
}

impl Check {
    /// `|measured − reference| ≤ tolerance`.
    pub fn within(
        name: impl Into<String>,
        measured: f64,
        reference: f64,
        tolerance: f64,
        source: Source,
    ) -> Self {
        let ok = (measured - reference).abs() <= tolerance;
        Check {
            name: name.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            measured: Some(measured),
            reference: Some(reference),
            source: Some(source),
            tolerance: Some(tolerance),
        }
    }

    /// `measured ≤ limit`.
    pub fn at_most(name: impl Into<String>, measured: f64, limit: f64, source: Source) -> Self {
        Check {
            name: name.into(),
            status: if measured <= limit {
                Status::Pass
            } else {
                Status::Fail
            },
            measured: Some(measured),
            reference: Some(limit),
            source: Some(source),
            tolerance: Some(0.0),
        }
    }

    /// `measured ≥ limit`.
    pub fn at_least(name: impl Into<String>, measured: f64, limit: f64, source: Source) -> Self {
        Check {
            status: if measured >= limit {
                Status::Pass
            } else {
                Status::Fail
            },
            ..Check::at_most(name, measured, limit, source)
        }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Check {
            name: name.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            measured: None,
            reference: None,
            source: Some(Source::Exact),
            tolerance: None,
        }
    }

    pub fn info(name: impl Into<String>, measured: f64, reference: Option<(f64, Source)>) -> Self {
        Check {
            name: name.into(),
            status: Status::Info,
            measured: Some(measured),
            reference: reference.map(|r| r.0),
            source: reference.map(|r| r.1),
            tolerance: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: Vec<String>,
    pub config: Value,
    pub status: Status,
    pub checks: Vec<Check>,
    pub data: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_seconds: Option<f64>,
}

impl Report {
    pub fn new(command: Vec<String>, config: Value, checks: Vec<Check>, data: Value) -> Self {
        let failed = checks.iter().any(|c| c.status == Status::Fail);
        Report {
            command,
            config,
            status: if failed { Status::Fail } else { Status::Pass },
            checks,
            data,
            elapsed_seconds: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

/// Pretty JSON with every float written to 17 significant digits.
struct Digits17<'a>(PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident $(, $arg:ident: $ty:ty)*;)*) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.0.$name(w $(, $arg)*)
            }
        )*
    };
}

impl Formatter for Digits17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    delegate! {
        begin_array;
        end_array;
        begin_array_value, first: bool;
        end_array_value;
        begin_object;
        end_object;
        begin_object_key, first: bool;
        end_object_key;
        begin_object_value;
        end_object_value;
    }
}

pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, Digits17(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits() {
        let text =
            to_json(&serde_json::json!({"x": 0.1, "n": 3, "v": [1.0, -2.5e-300], "nan": f64::NAN}))
                .unwrap();
        assert!(text.contains("\"x\": 1.0000000000000001e-1"));
        assert!(text.contains("\"n\": 3"));
        assert!(text.contains("-2.5000000000000000e-300"));
        assert!(text.contains("\"nan\": null"));
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["x"].as_f64(), Some(0.1));
    }

    #[test]
    fn status_follows_checks() {
        let pass = Check::within("a", 1.0, 1.0, 0.0, Source::Exact);
        let info = Check::info("b", 2.0, None);
        assert!(Report::new(vec![], Value::Null, vec![pass.clone(), info], Value::Null).passed());
        let fail = Check::at_least("c", 0.0, 1.0, Source::Computed);
        assert!(!Report::new(vec![], Value::Null, vec![pass, fail], Value::Null).passed());
    }
}
