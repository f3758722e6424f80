//! JSON report model and writer.
//!
//! Floats are written with 17 significant digits (`{:.16e}`), enough to
//! round-trip every `f64`; non-finite values become `null`. Everything but
//! `timing` is a deterministic function of the configuration and flags.

use std::io;

use biconf_core::{
    Aggregate, ChartSpec, Component, Involutivity, PointRecord, PointStatus, SkipReason,
    Tolerances, Verdict,
};
use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

pub const TOOL_NAME: &str = "biconf";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tool {
    pub name: String,
    pub version: String,
}

impl Default for Tool {
    fn default() -> Self {
        Tool {
            name: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub index: Vec<usize>,
    /// Coordinate names of `index`.
    pub names: Vec<String>,
    pub value: f64,
}

impl ComponentReport {
    pub fn new(c: &Component, chart: &ChartSpec) -> Self {
        ComponentReport {
            index: c.index.clone(),
            names: c.index.iter().map(|&i| chart.coords()[i].clone()).collect(),
            value: c.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub residual: f64,
    pub scale: f64,
    pub status: PointStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub index: usize,
    pub point: Vec<f64>,
    pub status: PointStatus,
    pub pass: bool,
    /// `T-test`, `B-test` or `trivial`; absent for skipped points.
    pub case: Option<String>,
    pub p: Option<usize>,
    pub residual: f64,
    pub scale: f64,
    pub threshold: f64,
    pub skipped_reason: Option<SkipReason>,
    pub worst_component: Option<ComponentReport>,
    pub failing_components: Vec<ComponentReport>,
    pub flatness: FlatnessReport,
    pub projector_residual: f64,
}

impl PointReport {
    pub fn new(r: &PointRecord, chart: &ChartSpec) -> Self {
        PointReport {
            index: r.index,
            point: r.point.clone(),
            status: r.status,
            pass: r.pass(),
            case: r.case.map(|c| c.as_str().to_string()),
            p: r.p,
            residual: r.residual,
            scale: r.scale,
            threshold: r.threshold,
            skipped_reason: r.skipped.clone(),
            worst_component: r.worst_component.as_ref().map(|c| ComponentReport::new(c, chart)),
            failing_components: r
                .failing_components
                .iter()
                .map(|c| ComponentReport::new(c, chart))
                .collect(),
            flatness: FlatnessReport {
                residual: r.flat_residual,
                scale: r.flat_scale,
                status: r.flat_status,
            },
            projector_residual: r.projector_residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum InvolutivityReport {
    Ok {
        max_residual: f64,
        points_checked: usize,
    },
    Fail {
        point: Vec<f64>,
        witness: String,
        residual: f64,
    },
}

impl From<&Involutivity> for InvolutivityReport {
    fn from(i: &Involutivity) -> Self {
        match i {
            Involutivity::Ok {
                max_residual,
                points_checked,
            } => InvolutivityReport::Ok {
                max_residual: *max_residual,
                points_checked: *points_checked,
            },
            Involutivity::Fail {
                point,
                witness,
                residual,
            } => InvolutivityReport::Fail {
                point: point.clone(),
                witness: witness.clone(),
                residual: *residual,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub involutivity: Option<InvolutivityReport>,
    pub points_total: usize,
    pub points_evaluated: usize,
    pub points_skipped: usize,
    /// Largest projector-identity residual over evaluated points.
    pub max_projector_residual: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartReport {
    pub dimension: usize,
    pub coordinates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: Tool,
    pub command: String,
    pub config_sha256: String,
    pub chart: ChartReport,
    pub tolerances: Tolerances,
    pub points: Vec<PointReport>,
    /// `conformally-flat`, `not-conformally-flat`,
    /// `indeterminate-near-tolerance` or `indeterminate-degenerate`.
    pub aggregate: Option<Aggregate>,
    /// `flat`, `not-flat` or `indeterminate` (leaf curvature `R̄^||`).
    pub flatness: Option<biconf_core::FlatnessVerdict>,
    pub diagnostics: Diagnostics,
    /// Free-form payload of the `tensors` and `verify` subcommands.
    pub details: Option<serde_json::Value>,
    pub timing: Timing,
}

pub const POINTWISE_NOTE: &str =
    "verdicts are pointwise evidence at the sampled points, not a global certificate";

impl Report {
    pub fn new(command: &str, digest: &str, chart: &ChartSpec, tolerances: Tolerances) -> Self {
        Report {
            tool: Tool::default(),
            command: command.into(),
            config_sha256: digest.into(),
            chart: ChartReport {
                dimension: chart.dim(),
                coordinates: chart.coords().to_vec(),
            },
            tolerances,
            points: vec![],
            aggregate: None,
            flatness: None,
            diagnostics: Diagnostics {
                involutivity: None,
                points_total: 0,
                points_evaluated: 0,
                points_skipped: 0,
                max_projector_residual: 0.0,
                notes: vec![POINTWISE_NOTE.into()],
            },
            details: None,
            timing: Timing { seconds: 0.0 },
        }
    }

    pub fn with_verdict(mut self, v: &Verdict, chart: &ChartSpec) -> Self {
        self.points = v.records.iter().map(|r| PointReport::new(r, chart)).collect();
        self.aggregate = Some(v.aggregate);
        self.flatness = Some(v.flatness);
        let d = &mut self.diagnostics;
        d.involutivity = Some((&v.involutivity).into());
        d.points_total = v.records.len();
        d.points_skipped = v.records.iter().filter(|r| r.status == PointStatus::Skipped).count();
        d.points_evaluated = d.points_total - d.points_skipped;
        d.max_projector_residual = v
            .records
            .iter()
            .map(|r| r.projector_residual)
            .fold(0.0, f64::max);
        self
    }

    pub fn to_json(&self) -> String {
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, SeventeenDigits::default());
        self.serialize(&mut ser).expect("report serializes");
        buf.push(b'\n');
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Pretty printer with 17-significant-digit floats.
#[derive(Default)]
pub struct SeventeenDigits {
    inner: serde_json::ser::PrettyFormatter<'static>,
}

impl Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        if v.is_finite() {
            write!(w, "{v:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Writes `value` with the report number format.
pub fn to_json_value_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SeventeenDigits::default());
    value.serialize(&mut ser).expect("serializes");
    String::from_utf8(buf).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use biconf_core::charts::schwarzschild;

    #[test]
    fn floats_use_seventeen_digits_and_round_trip() {
        let vals = [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0];
        let s = to_json_value_string(&vals);
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vals);
        assert_eq!(to_json_value_string(&f64::NAN), "null");
    }

    #[test]
    fn report_round_trips() {
        let chart = schwarzschild(1.0);
        let mut r = Report::new("analyze", "ab", &chart, Tolerances::default());
        r.aggregate = Some(Aggregate::ConformallyFlat);
        r.points.push(PointReport {
            index: 0,
            point: vec![0.0, 3.0, std::f64::consts::FRAC_PI_4, 0.0],
            status: PointStatus::Skipped,
            pass: false,
            case: None,
            p: None,
            residual: 0.0,
            scale: 0.0,
            threshold: 0.0,
            skipped_reason: Some(SkipReason::DegenerateDistribution {
                value: 1e-20,
                threshold: 1e-10,
            }),
            worst_component: Some(ComponentReport {
                index: vec![3, 2, 3],
                names: vec!["ph".into(), "th".into(), "ph".into()],
                value: -1.25,
            }),
            failing_components: vec![],
            flatness: FlatnessReport {
                residual: 0.1,
                scale: 0.2,
                status: PointStatus::Fail,
            },
            projector_residual: 1e-17,
        });
        let text = r.to_json();
        assert_eq!(Report::from_json(&text).unwrap(), r);
        assert!(text.contains("\"aggregate\": \"conformally-flat\""));
    }
}
