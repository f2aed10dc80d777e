//! The model file: a TOML document with a fixed key set.
//!
//! ```toml
//! b_mean = 3.0
//! b_rel_sigma = 0.0          # 0 means exact
//! b_form = "exact"           # exact | gamma-from-count | truncated-gaussian
//! eff_mean = 1.0
//! eff_rel_sigma = 0.1
//! eff_form = "gamma-from-count"
//! tau = 2.0                  # optional conditioning exposure ratio
//! ```
//!
//! A missing `*_form` defaults to `exact` when the relative sigma is zero and
//! to `gamma-from-count` otherwise.

use countstat::{CountingModel, Nuisance, SubsidiaryForm};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    b_mean: f64,
    #[serde(default)]
    b_rel_sigma: f64,
    b_form: Option<SubsidiaryForm>,
    #[serde(default = "one")]
    eff_mean: f64,
    #[serde(default)]
    eff_rel_sigma: f64,
    eff_form: Option<SubsidiaryForm>,
    tau: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn nuisance(mean: f64, rel: f64, form: Option<SubsidiaryForm>) -> Nuisance {
    let form = form.unwrap_or(if rel == 0.0 {
        SubsidiaryForm::Exact
    } else {
        SubsidiaryForm::GammaFromCount
    });
    Nuisance {
        mean,
        rel_sigma: rel,
        form,
    }
}

/// Line of the first assignment to any key mentioned in `msg`.
fn anchor(text: &str, msg: &str) -> Option<usize> {
    const KEYS: [&str; 7] = [
        "b_rel_sigma",
        "b_mean",
        "b_form",
        "eff_rel_sigma",
        "eff_mean",
        "eff_form",
        "tau",
    ];
    let key = KEYS.iter().find(|k| msg.contains(*k)).or_else(|| {
        if msg.starts_with("b ") || msg.contains(" b ") {
            Some(&"b_form")
        } else if msg.starts_with("eff ") {
            Some(&"eff_form")
        } else {
            None
        }
    })?;
    key_line(text, key)
}

fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| l.trim_start().split(['=', ' ']).next() == Some(key))
        .map(|i| i + 1)
}

pub fn parse(text: &str, path: &str) -> Result<CountingModel, String> {
    let file: ModelFile = toml::from_str(text).map_err(|e| {
        let unknown = e
            .message()
            .strip_prefix("unknown field `")
            .and_then(|m| m.split('`').next());
        let line = match (unknown, e.span()) {
            (Some(key), _) => key_line(text, key),
            (None, span) => span.map(|s| text[..s.start].lines().count().max(1)),
        };
        match line {
            Some(l) => format!("{path}:{l}: {}", e.message()),
            None => format!("{path}: {}", e.message()),
        }
    })?;
    let model = CountingModel::new(
        nuisance(file.b_mean, file.b_rel_sigma, file.b_form),
        nuisance(file.eff_mean, file.eff_rel_sigma, file.eff_form),
    )
    .and_then(|m| match file.tau {
        Some(t) => m.with_tau(t),
        None => Ok(m),
    });
    model.map_err(|e| {
        let msg = e.to_string();
        match anchor(text, &msg) {
            Some(l) => format!("{path}:{l}: {msg}"),
            None => format!("{path}: {msg}"),
        }
    })
}

pub fn load(path: &str) -> Result<CountingModel, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?;
    parse(&text, path)
}
