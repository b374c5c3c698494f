//! Plain-text scenario files.
//!
//! One `key = value` pair per line. Keys are dotted (`problem.p`) or relative
//! to the most recent `[section]` header. `#` starts a comment. Lists are
//! comma separated. Every key can be overridden from the environment as
//! `CONC_<SECTION>_<KEY>`, e.g. `CONC_RUN_EPSILON=0.05`.

use std::collections::BTreeMap;

use conc::potential::PotentialModel;
use conc::profile::{critical_exponent, LimitProblem};
use conc::ParseError;
use serde::Serialize;

const KNOWN: &[&str] = &[
    "problem.n",
    "problem.k",
    "problem.p",
    "geometry.instance",
    "geometry.radius",
    "geometry.length",
    "geometry.nodes",
    "geometry.bracket",
    "potential.model",
    "potential.value",
    "potential.floor",
    "potential.center",
    "run.I",
    "run.epsilon",
    "run.epsilon_min",
    "run.epsilon_max",
    "run.epsilon_count",
    "run.e",
    "run.delta",
    "run.lambda",
    "run.tol_fp",
    "run.tol_final",
    "run.max_iter",
    "run.gap_c",
    "run.window",
    "run.r_max",
    "run.grid_step",
    "run.grid_far",
    "run.out",
];

/// Where a value came from, for diagnostics.
#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
    column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Instance {
    Circle,
    Line,
    GreatCircle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Radius {
    /// Root of `dℰ/dr` inside the bracket.
    Stationary,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Problem {
    pub n: usize,
    pub k: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Geometry {
    pub instance: Instance,
    pub radius: Radius,
    pub length: f64,
    pub nodes: usize,
    pub bracket: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Run {
    #[serde(rename = "I")]
    pub order: usize,
    pub epsilons: Vec<f64>,
    pub e: f64,
    pub delta: Option<f64>,
    pub lambda: f64,
    pub tol_fp: f64,
    pub tol_final: f64,
    pub max_iter: usize,
    pub gap_c: f64,
    pub window: f64,
    pub r_max: f64,
    pub grid_step: f64,
    pub grid_far: f64,
    pub out: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub problem: Problem,
    pub geometry: Geometry,
    pub potential: PotentialModel,
    pub run: Run,
}

/// Derived quantities reported by `validate`.
#[derive(Debug, Clone, Serialize)]
pub struct Validation {
    pub n: usize,
    pub k: usize,
    #[serde(rename = "N")]
    pub codim: usize,
    pub p: f64,
    pub sigma: f64,
    /// `(N+2)/(N−2)`, absent when every `p > 1` is admissible.
    pub critical_exponent: Option<f64>,
    /// `p_c − p`; infinite without an upper bound.
    pub subcriticality_margin: f64,
}

impl Scenario {
    pub fn codim(&self) -> usize {
        self.problem.n - self.problem.k
    }

    pub fn sigma(&self) -> f64 {
        conc::k_ops::sigma(self.problem.p, self.codim())
    }

    pub fn validation(&self) -> Validation {
        let pc = critical_exponent(self.codim());
        Validation {
            n: self.problem.n,
            k: self.problem.k,
            codim: self.codim(),
            p: self.problem.p,
            sigma: self.sigma(),
            critical_exponent: pc,
            subcriticality_margin: pc.map_or(f64::INFINITY, |c| c - self.problem.p),
        }
    }
}

fn err(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError { line, column, message: message.into() }
}

fn tokenize(text: &str) -> Result<BTreeMap<String, Entry>, ParseError> {
    let mut map = BTreeMap::new();
    let mut section = String::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let body = raw.split('#').next().unwrap_or("");
        let trimmed = body.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = body.len() - body.trim_start().len();
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(line, indent + 1, "unterminated section header"))?
                .trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(err(line, indent + 2, format!("bad section name `{name}`")));
            }
            section = name.to_string();
            continue;
        }
        let eq = body.find('=').ok_or_else(|| err(line, indent + 1, "expected `key = value`"))?;
        let key = body[..eq].trim();
        if key.is_empty() {
            return Err(err(line, indent + 1, "missing key before `=`"));
        }
        let full = if key.contains('.') || section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
        let after = &body[eq + 1..];
        let value = after.trim();
        let column = eq + 2 + (after.len() - after.trim_start().len());
        if !KNOWN.contains(&full.as_str()) {
            return Err(err(line, indent + 1, format!("unknown key `{full}`")));
        }
        if value.is_empty() {
            return Err(err(line, column, format!("empty value for `{full}`")));
        }
        if map.contains_key(&full) {
            return Err(err(line, indent + 1, format!("duplicate key `{full}`")));
        }
        map.insert(full, Entry { value: value.to_string(), line, column });
    }
    Ok(map)
}

struct Fields {
    map: BTreeMap<String, Entry>,
    end: usize,
}

impl Fields {
    fn required(&self, key: &str) -> Result<&Entry, ParseError> {
        self.map.get(key).ok_or_else(|| err(self.end, 1, format!("missing required key `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, e: &Entry, key: &str, what: &str) -> Result<T, ParseError> {
        e.value.parse().map_err(|_| err(e.line, e.column, format!("`{key}` expects {what}, got `{}`", e.value)))
    }

    fn float(&self, key: &str, default: Option<f64>) -> Result<f64, ParseError> {
        match (self.map.get(key), default) {
            (Some(e), _) => self.parse(e, key, "a number"),
            (None, Some(d)) => Ok(d),
            (None, None) => self.parse(self.required(key)?, key, "a number"),
        }
    }

    fn int(&self, key: &str, default: Option<usize>) -> Result<usize, ParseError> {
        match (self.map.get(key), default) {
            (Some(e), _) => self.parse(e, key, "a non-negative integer"),
            (None, Some(d)) => Ok(d),
            (None, None) => self.parse(self.required(key)?, key, "a non-negative integer"),
        }
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>, ParseError> {
        let Some(e) = self.map.get(key) else { return Ok(None) };
        e.value
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| err(e.line, e.column, format!("`{key}` expects a list of numbers, got `{}`", e.value))))
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn text(&self, key: &str) -> Option<&Entry> {
        self.map.get(key)
    }

    fn positive(&self, key: &str, v: f64) -> Result<f64, ParseError> {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            let (line, column) = self.map.get(key).map_or((self.end, 1), |e| (e.line, e.column));
            Err(err(line, column, format!("`{key}` must be positive, got {v}")))
        }
    }
}

/// Parses a scenario, applying `CONC_*` overrides from `env`.
pub fn parse_with_env<I>(name: &str, text: &str, env: I) -> Result<Scenario, ParseError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut map = tokenize(text)?;
    let end = text.lines().count() + 1;
    for (k, v) in env {
        let Some(rest) = k.strip_prefix("CONC_") else { continue };
        let lowered = rest.to_ascii_lowercase();
        let Some((section, key)) = lowered.split_once('_') else { continue };
        let candidate = format!("{section}.{key}");
        if let Some(full) = KNOWN.iter().find(|kn| kn.to_ascii_lowercase() == candidate) {
            map.insert(full.to_string(), Entry { value: v.trim().to_string(), line: 0, column: 0 });
        }
    }
    let f = Fields { map, end };

    let n = f.int("problem.n", None)?;
    let k = f.int("problem.k", Some(1))?;
    let p = f.float("problem.p", None)?;
    let pe = f.required("problem.p")?;
    if k == 0 || k >= n {
        let e = f.required("problem.k").unwrap_or(pe);
        return Err(err(e.line, e.column, format!("need 1 ≤ k < n, got n = {n}, k = {k}")));
    }
    let codim = n - k;
    if !(1..=3).contains(&codim) {
        let e = f.required("problem.n")?;
        return Err(err(e.line, e.column, format!("N = n − k = {codim} unsupported (N must be 1, 2 or 3)")));
    }
    if let Err(e) = LimitProblem::new(codim, p) {
        return Err(err(pe.line, pe.column, e.to_string()));
    }
    if k != 1 {
        let e = f.required("problem.k")?;
        return Err(err(e.line, e.column, "only one-dimensional submanifolds (k = 1) are supported"));
    }

    let instance = match f.text("geometry.instance") {
        None => Instance::Circle,
        Some(e) => match e.value.as_str() {
            "circle" => Instance::Circle,
            "line" => Instance::Line,
            "great_circle" => Instance::GreatCircle,
            other => return Err(err(e.line, e.column, format!("unknown geometry.instance `{other}`"))),
        },
    };
    let radius = match f.text("geometry.radius") {
        None => Radius::Fixed(1.0),
        Some(e) if e.value == "stationary" => Radius::Stationary,
        Some(e) => Radius::Fixed(f.positive("geometry.radius", f.parse(e, "geometry.radius", "a number or `stationary`")?)?),
    };
    let bracket = match f.list("geometry.bracket")? {
        None => (0.3, 1.0),
        Some(b) if b.len() == 2 && b[0] < b[1] => (b[0], b[1]),
        Some(_) => {
            let e = f.required("geometry.bracket")?;
            return Err(err(e.line, e.column, "`geometry.bracket` expects two increasing numbers"));
        }
    };
    let geometry = Geometry {
        instance,
        radius,
        length: f.positive("geometry.length", f.float("geometry.length", Some(2.0 * std::f64::consts::PI))?)?,
        nodes: f.int("geometry.nodes", Some(256))?,
        bracket,
    };

    let model = f.text("potential.model").map_or("constant", |e| e.value.as_str());
    let potential = match model {
        "constant" => PotentialModel::constant(f.positive("potential.value", f.float("potential.value", Some(1.0))?)?),
        "gaussian" => {
            let floor = f.float("potential.floor", Some(0.1))?;
            let center = f.list("potential.center")?.unwrap_or_default();
            PotentialModel::Gaussian { floor, center }
        }
        "polynomial" => PotentialModel::Polynomial,
        other => {
            let e = f.required("potential.model")?;
            return Err(err(e.line, e.column, format!("unknown potential.model `{other}`")));
        }
    };

    let epsilons = match f.list("run.epsilon")? {
        Some(v) => v,
        None if f.map.contains_key("run.epsilon_min") || f.map.contains_key("run.epsilon_max") => {
            let lo = f.positive("run.epsilon_min", f.float("run.epsilon_min", None)?)?;
            let hi = f.positive("run.epsilon_max", f.float("run.epsilon_max", None)?)?;
            let count = f.int("run.epsilon_count", Some(100))?.max(2);
            (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
        }
        None => vec![0.05],
    };
    for (i, e) in epsilons.iter().enumerate() {
        if !(*e > 0.0) {
            let en = f.required("run.epsilon")?;
            return Err(err(en.line, en.column, format!("epsilon #{} = {e} must be positive", i + 1)));
        }
    }
    let delta = match f.text("run.delta") {
        None => None,
        Some(e) => Some(f.positive("run.delta", f.parse(e, "run.delta", "a number")?)?),
    };
    let run = Run {
        order: f.int("run.I", Some(3))?,
        epsilons,
        e: f.float("run.e", Some(0.0))?,
        delta,
        lambda: f.positive("run.lambda", f.float("run.lambda", Some(10.0))?)?,
        tol_fp: f.positive("run.tol_fp", f.float("run.tol_fp", Some(1e-10))?)?,
        tol_final: f.positive("run.tol_final", f.float("run.tol_final", Some(1e-6))?)?,
        max_iter: f.int("run.max_iter", Some(200))?,
        gap_c: f.float("run.gap_c", Some(0.05))?,
        window: f.positive("run.window", f.float("run.window", Some(20.0))?)?,
        r_max: f.positive("run.r_max", f.float("run.r_max", Some(20.0))?)?,
        grid_step: f.positive("run.grid_step", f.float("run.grid_step", Some(1e-3))?)?,
        grid_far: f.positive("run.grid_far", f.float("run.grid_far", Some(60.0))?)?,
        out: f.text("run.out").map(|e| e.value.clone()),
    };
    if !(1..=conc::ansatz::MAX_ORDER).contains(&run.order) {
        let (line, column) = f.text("run.I").map_or((end, 1), |e| (e.line, e.column));
        return Err(err(line, column, format!("`run.I` must lie in 1..={}", conc::ansatz::MAX_ORDER)));
    }

    Ok(Scenario { name: name.to_string(), problem: Problem { n, k, p }, geometry, potential, run })
}

/// Parses without environment overrides.
pub fn parse(name: &str, text: &str) -> Result<Scenario, ParseError> {
    parse_with_env(name, text, std::iter::empty())
}
