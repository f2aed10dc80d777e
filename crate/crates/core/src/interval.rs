use serde::{Deserialize, Serialize};

/// The procedure that produced an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMethod {
    FeldmanCousins,
    Classical,
    Central,
    Bayes,
    Profile,
    FlipFlop,
    Cls,
}

impl std::fmt::Display for IntervalMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IntervalMethod::FeldmanCousins => "fc",
            IntervalMethod::Classical => "classical",
            IntervalMethod::Central => "central",
            IntervalMethod::Bayes => "bayes",
            IntervalMethod::Profile => "profile",
            IntervalMethod::FlipFlop => "flip-flop",
            IntervalMethod::Cls => "cls",
        })
    }
}

/// A confidence or credible interval for the signal. Empty intervals are a
/// legitimate result (no signal value makes the data likely), not an error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "IntervalRecord", try_from = "IntervalRecord")]
pub struct IntervalResult {
    bounds: Option<(f64, f64)>,
    cl: f64,
    method: IntervalMethod,
}

impl IntervalResult {
    /// # Panics
    /// If `lower > upper`, `lower < 0`, or `cl` is outside (0, 1).
    pub fn new(lower: f64, upper: f64, cl: f64, method: IntervalMethod) -> Self {
        assert!(
            lower >= 0.0 && lower <= upper,
            "invalid interval [{lower}, {upper}]"
        );
        assert!(cl > 0.0 && cl < 1.0, "confidence level {cl} outside (0, 1)");
        IntervalResult {
            bounds: Some((lower, upper)),
            cl,
            method,
        }
    }

    pub fn empty(cl: f64, method: IntervalMethod) -> Self {
        assert!(cl > 0.0 && cl < 1.0, "confidence level {cl} outside (0, 1)");
        IntervalResult {
            bounds: None,
            cl,
            method,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_none()
    }

    pub fn lower(&self) -> Option<f64> {
        self.bounds.map(|b| b.0)
    }

    pub fn upper(&self) -> Option<f64> {
        self.bounds.map(|b| b.1)
    }

    pub fn cl(&self) -> f64 {
        self.cl
    }

    pub fn method(&self) -> IntervalMethod {
        self.method
    }

    /// Closed-interval membership; empty intervals contain nothing.
    pub fn contains(&self, s: f64) -> bool {
        matches!(self.bounds, Some((lo, hi)) if lo <= s && s <= hi)
    }
}

#[derive(Serialize, Deserialize)]
struct IntervalRecord {
    lower: Option<f64>,
    upper: Option<f64>,
    cl: f64,
    method: IntervalMethod,
    empty: bool,
}

impl From<IntervalResult> for IntervalRecord {
    fn from(r: IntervalResult) -> Self {
        IntervalRecord {
            lower: r.lower(),
            upper: r.upper(),
            cl: r.cl,
            method: r.method,
            empty: r.is_empty(),
        }
    }
}

impl TryFrom<IntervalRecord> for IntervalResult {
    type Error = String;

    fn try_from(r: IntervalRecord) -> Result<Self, String> {
        if !(r.cl > 0.0 && r.cl < 1.0) {
            return Err(format!("cl {} outside (0, 1)", r.cl));
        }
        match (r.empty, r.lower, r.upper) {
            (true, None, None) => Ok(IntervalResult::empty(r.cl, r.method)),
            (false, Some(lo), Some(hi)) if lo >= 0.0 && lo <= hi => {
                Ok(IntervalResult::new(lo, hi, r.cl, r.method))
            }
            _ => Err("inconsistent interval record".into()),
        }
    }
}
