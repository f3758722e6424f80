//! Line-oriented run configuration.
//!
//! ```text
//! # comment
//! [chart]
//! dimension = 4
//! coordinates = t, r, th, ph
//!
//! [parameters]
//! M = 1
//!
//! [metric]
//! g[0][0] = "-(1 - 2*M/r)"
//! g[0][1] = "0"
//! ...
//!
//! [distribution]
//! kind = oneform
//! omega = "1", "0", "0", "0"
//!
//! [sampling]
//! kind = explicit
//! point = 0, 3, pi/4, 0
//! ```
//!
//! Every upper-triangle metric entry `g[i][j]`, `i <= j`, must be given
//! (either index order is accepted); the lower triangle is filled by
//! symmetry. `kind = span` takes repeated `field = ...` lines. `kind = box`
//! sampling takes `low`, `high`, `count` and `seed`. Optional sections:
//! `[tolerances]` (`atol`, `rtol`), `[output]` (`report`, `verbosity`),
//! `[oracle]` (`slice`, `max_deviation`).

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use biconf_core::{
    parse_expression, ChartSpec, DistributionSpec, ExprAst, ExprError, SamplePlan, Tolerances,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: `{key}`: {message}")]
    Schema {
        key: String,
        line: usize,
        message: String,
    },
    #[error("line {line}: `{key}`: {source}")]
    Expr {
        key: String,
        line: usize,
        source: ExprError,
    },
    #[error("`{key}`: {message}")]
    Missing { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSettings {
    pub slice: Option<usize>,
    pub max_deviation: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            slice: None,
            max_deviation: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub chart: ChartSpec,
    pub distribution: DistributionSpec,
    pub sampling: SamplePlan,
    pub tolerances: Tolerances,
    pub report: Option<PathBuf>,
    pub verbosity: u8,
    pub oracle: OracleSettings,
    /// SHA-256 of the configuration text.
    pub digest: String,
}

#[derive(Debug)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

type Sections = BTreeMap<String, Vec<Entry>>;

const SECTIONS: &[&str] = &[
    "chart",
    "parameters",
    "metric",
    "distribution",
    "sampling",
    "tolerances",
    "output",
    "oracle",
];

fn schema(key: impl Into<String>, line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Schema {
        key: key.into(),
        line,
        message: message.into(),
    }
}

fn split_sections(text: &str) -> Result<Sections, ConfigError> {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = strip_comment(raw).trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| schema(trimmed, line, "unterminated section header"))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(schema(format!("[{name}]"), line, "unknown section"));
            }
            if sections.contains_key(name) {
                return Err(schema(format!("[{name}]"), line, "section repeated"));
            }
            sections.insert(name.to_string(), vec![]);
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| schema(trimmed, line, "expected `key = value`"))?;
        let section = current
            .as_ref()
            .ok_or_else(|| schema(key.trim(), line, "key outside any section"))?;
        sections.get_mut(section).unwrap().push(Entry {
            key: key.trim().to_string(),
            value: value.trim().to_string(),
            line,
        });
    }
    Ok(sections)
}

/// Drops a `#` comment that is not inside a quoted string.
fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Comma-separated list; items may be double-quoted.
fn split_list(value: &str, key: &str, line: usize) -> Result<Vec<String>, ConfigError> {
    let mut items = vec![];
    let mut cur = String::new();
    let mut quoted = false;
    let mut was_quoted = false;
    for c in value.chars() {
        match c {
            '"' => {
                quoted = !quoted;
                was_quoted = true;
            }
            ',' if !quoted => {
                items.push(std::mem::take(&mut cur).trim().to_string());
                was_quoted = false;
            }
            _ if quoted || !was_quoted => cur.push(c),
            c if c.is_whitespace() => {}
            _ => return Err(schema(key, line, "text after closing quote")),
        }
    }
    if quoted {
        return Err(schema(key, line, "unterminated string"));
    }
    items.push(cur.trim().to_string());
    if items.iter().any(String::is_empty) {
        return Err(schema(key, line, "empty list item"));
    }
    Ok(items)
}

fn unquote(value: &str, key: &str, line: usize) -> Result<String, ConfigError> {
    let items = split_list(value, key, line)?;
    match items.as_slice() {
        [one] => Ok(one.clone()),
        _ => Err(schema(key, line, "expected a single value")),
    }
}

struct Section<'a> {
    name: &'a str,
    entries: &'a [Entry],
    used: HashSet<usize>,
}

impl<'a> Section<'a> {
    fn new(sections: &'a Sections, name: &'a str) -> Self {
        static EMPTY: Vec<Entry> = Vec::new();
        Section {
            name,
            entries: sections.get(name).map(Vec::as_slice).unwrap_or(&EMPTY),
            used: HashSet::new(),
        }
    }

    fn path(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn all(&mut self, key: &str) -> Vec<&'a Entry> {
        let mut out = vec![];
        for (i, e) in self.entries.iter().enumerate() {
            if e.key == key {
                self.used.insert(i);
                out.push(e);
            }
        }
        out
    }

    fn get(&mut self, key: &str) -> Result<Option<&'a Entry>, ConfigError> {
        let all = self.all(key);
        match all.as_slice() {
            [] => Ok(None),
            [one] => Ok(Some(one)),
            [_, second, ..] => Err(schema(self.path(key), second.line, "key repeated")),
        }
    }

    fn require(&mut self, key: &str) -> Result<&'a Entry, ConfigError> {
        self.get(key)?.ok_or_else(|| ConfigError::Missing {
            key: self.path(key),
            message: "required key missing".into(),
        })
    }

    fn finish(self) -> Result<(), ConfigError> {
        for (i, e) in self.entries.iter().enumerate() {
            if !self.used.contains(&i) {
                return Err(schema(self.path(&e.key), e.line, "unknown key"));
            }
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(e: &Entry, path: &str) -> Result<T, ConfigError> {
    unquote(&e.value, path, e.line)?
        .parse()
        .map_err(|_| schema(path, e.line, format!("cannot parse `{}`", e.value)))
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Constant expression (parameters allowed, no coordinates).
fn constant(
    text: &str,
    params: &BTreeMap<String, f64>,
    key: &str,
    line: usize,
) -> Result<f64, ConfigError> {
    let names: Vec<String> = params.keys().cloned().collect();
    let ast = parse_expression(text, &[], &names).map_err(|source| ConfigError::Expr {
        key: key.into(),
        line,
        source,
    })?;
    let ctx = biconf_core::EvalContext {
        point: &[],
        params,
    };
    let v = ast.eval(&ctx).map_err(|source| ConfigError::Expr {
        key: key.into(),
        line,
        source,
    })?;
    if !v.is_finite() {
        return Err(schema(key, line, "value is not finite"));
    }
    Ok(v)
}

fn expression(
    text: &str,
    coords: &[String],
    params: &[String],
    key: &str,
    line: usize,
) -> Result<ExprAst, ConfigError> {
    parse_expression(text, coords, params).map_err(|source| ConfigError::Expr {
        key: key.into(),
        line,
        source,
    })
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    use sha2::{Digest, Sha256};
    let digest = hex::encode(Sha256::digest(text.as_bytes()));
    let sections = split_sections(text)?;

    let mut chart = Section::new(&sections, "chart");
    let dim_entry = chart.require("dimension")?;
    let n: usize = parse_num(dim_entry, "chart.dimension")?;
    if n < 2 {
        return Err(schema("chart.dimension", dim_entry.line, "dimension must be at least 2"));
    }
    let ce = chart.require("coordinates")?;
    let coords = split_list(&ce.value, "chart.coordinates", ce.line)?;
    if coords.len() != n {
        return Err(schema(
            "chart.coordinates",
            ce.line,
            format!("{} names for dimension {n}", coords.len()),
        ));
    }
    for (i, c) in coords.iter().enumerate() {
        if !is_identifier(c) {
            return Err(schema("chart.coordinates", ce.line, format!("`{c}` is not an identifier")));
        }
        if coords[..i].contains(c) {
            return Err(schema("chart.coordinates", ce.line, format!("`{c}` declared twice")));
        }
    }
    chart.finish()?;

    let mut params = BTreeMap::new();
    for e in sections.get("parameters").map(Vec::as_slice).unwrap_or(&[]) {
        let key = format!("parameters.{}", e.key);
        if !is_identifier(&e.key) {
            return Err(schema(key, e.line, "not an identifier"));
        }
        if coords.contains(&e.key) {
            return Err(schema(key, e.line, "name is also a coordinate"));
        }
        if params.contains_key(&e.key) {
            return Err(schema(key, e.line, "parameter declared twice"));
        }
        let text = unquote(&e.value, &key, e.line)?;
        let v = constant(&text, &params, &key, e.line)?;
        params.insert(e.key.clone(), v);
    }
    let param_names: Vec<String> = params.keys().cloned().collect();

    let mut metric: Vec<Option<ExprAst>> = vec![None; n * n];
    for e in sections.get("metric").map(Vec::as_slice).unwrap_or(&[]) {
        let key = format!("metric.{}", e.key);
        let (i, j) = parse_metric_key(&e.key)
            .ok_or_else(|| schema(&key, e.line, "expected `g[i][j]`"))?;
        if i >= n || j >= n {
            return Err(schema(&key, e.line, format!("index out of range for dimension {n}")));
        }
        let (a, b) = (i.min(j), i.max(j));
        if metric[a * n + b].is_some() {
            return Err(schema(&key, e.line, format!("entry g[{a}][{b}] given twice")));
        }
        let text = unquote(&e.value, &key, e.line)?;
        metric[a * n + b] = Some(expression(&text, &coords, &param_names, &key, e.line)?);
    }
    let mut full = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (i.min(j), i.max(j));
            match &metric[a * n + b] {
                Some(e) => full.push(e.clone()),
                None => {
                    return Err(ConfigError::Missing {
                        key: format!("metric.g[{a}][{b}]"),
                        message: "metric entry missing".into(),
                    })
                }
            }
        }
    }
    let chart = ChartSpec::new(coords.clone(), params.clone(), full).map_err(|e| ConfigError::Missing {
        key: "metric".into(),
        message: e.to_string(),
    })?;

    let distribution = parse_distribution(&sections, &coords, &param_names, n)?;
    let sampling = parse_sampling(&sections, &params, n)?;

    let mut tol = Section::new(&sections, "tolerances");
    let mut tolerances = Tolerances::default();
    if let Some(e) = tol.get("atol")? {
        tolerances.atol = parse_num(e, "tolerances.atol")?;
    }
    if let Some(e) = tol.get("rtol")? {
        tolerances.rtol = parse_num(e, "tolerances.rtol")?;
    }
    tol.finish()?;
    if !(tolerances.atol >= 0.0 && tolerances.rtol >= 0.0) {
        return Err(ConfigError::Missing {
            key: "tolerances".into(),
            message: "tolerances must be non-negative".into(),
        });
    }

    let mut out = Section::new(&sections, "output");
    let report = match out.get("report")? {
        Some(e) => Some(PathBuf::from(unquote(&e.value, "output.report", e.line)?)),
        None => None,
    };
    let verbosity = match out.get("verbosity")? {
        Some(e) => parse_num(e, "output.verbosity")?,
        None => 1,
    };
    out.finish()?;

    let mut or = Section::new(&sections, "oracle");
    let mut oracle = OracleSettings::default();
    if let Some(e) = or.get("slice")? {
        let s: usize = parse_num(e, "oracle.slice")?;
        if s >= n {
            return Err(schema("oracle.slice", e.line, "slice index out of range"));
        }
        oracle.slice = Some(s);
    }
    if let Some(e) = or.get("max_deviation")? {
        oracle.max_deviation = parse_num(e, "oracle.max_deviation")?;
    }
    or.finish()?;

    Ok(RunConfig {
        chart,
        distribution,
        sampling,
        tolerances,
        report,
        verbosity,
        oracle,
        digest,
    })
}

fn parse_metric_key(key: &str) -> Option<(usize, usize)> {
    let rest = key.strip_prefix("g[")?;
    let (i, rest) = rest.split_once("][")?;
    let j = rest.strip_suffix(']')?;
    Some((i.trim().parse().ok()?, j.trim().parse().ok()?))
}

fn parse_distribution(
    sections: &Sections,
    coords: &[String],
    params: &[String],
    n: usize,
) -> Result<DistributionSpec, ConfigError> {
    let mut s = Section::new(sections, "distribution");
    let kind = s.require("kind")?;
    let row = |e: &Entry, key: &str| -> Result<Vec<ExprAst>, ConfigError> {
        let items = split_list(&e.value, key, e.line)?;
        if items.len() != n {
            return Err(schema(key, e.line, format!("{} components for dimension {n}", items.len())));
        }
        items
            .iter()
            .map(|t| expression(t, coords, params, key, e.line))
            .collect()
    };
    let spec = match unquote(&kind.value, "distribution.kind", kind.line)?.as_str() {
        "oneform" => {
            let e = s.require("omega")?;
            DistributionSpec::OneForm(row(e, "distribution.omega")?)
        }
        "span" => {
            let fields = s.all("field");
            if fields.is_empty() || fields.len() >= n {
                return Err(schema(
                    "distribution.field",
                    kind.line,
                    format!("span needs between 1 and {} fields, got {}", n - 1, fields.len()),
                ));
            }
            DistributionSpec::Span(
                fields
                    .iter()
                    .map(|e| row(e, "distribution.field"))
                    .collect::<Result<_, _>>()?,
            )
        }
        other => {
            return Err(schema(
                "distribution.kind",
                kind.line,
                format!("`{other}` is not one of oneform, span"),
            ))
        }
    };
    s.finish()?;
    Ok(spec)
}

fn parse_sampling(
    sections: &Sections,
    params: &BTreeMap<String, f64>,
    n: usize,
) -> Result<SamplePlan, ConfigError> {
    let mut s = Section::new(sections, "sampling");
    let kind = s.require("kind")?;
    let vector = |e: &Entry, key: &str| -> Result<Vec<f64>, ConfigError> {
        let items = split_list(&e.value, key, e.line)?;
        if items.len() != n {
            return Err(schema(key, e.line, format!("{} coordinates for dimension {n}", items.len())));
        }
        items.iter().map(|t| constant(t, params, key, e.line)).collect()
    };
    let plan = match unquote(&kind.value, "sampling.kind", kind.line)?.as_str() {
        "explicit" => {
            let points = s.all("point");
            if points.is_empty() {
                return Err(ConfigError::Missing {
                    key: "sampling.point".into(),
                    message: "explicit sampling needs at least one point".into(),
                });
            }
            SamplePlan::Explicit(
                points
                    .iter()
                    .map(|e| vector(e, "sampling.point"))
                    .collect::<Result<_, _>>()?,
            )
        }
        "box" => {
            let low = vector(s.require("low")?, "sampling.low")?;
            let high = vector(s.require("high")?, "sampling.high")?;
            let ce = s.require("count")?;
            let count: usize = parse_num(ce, "sampling.count")?;
            if count == 0 {
                return Err(schema("sampling.count", ce.line, "count must be at least 1"));
            }
            let seed = match s.get("seed")? {
                Some(e) => parse_num(e, "sampling.seed")?,
                None => 0,
            };
            if let Some(i) = (0..n).find(|&i| !(low[i] < high[i])) {
                return Err(schema("sampling.high", kind.line, format!("high[{i}] must exceed low[{i}]")));
            }
            SamplePlan::Box {
                low,
                high,
                count,
                seed,
            }
        }
        other => {
            return Err(schema(
                "sampling.kind",
                kind.line,
                format!("`{other}` is not one of explicit, box"),
            ))
        }
    };
    s.finish()?;
    Ok(plan)
}
