//! One function per subcommand, each returning a result table.

use countstat::combine::{self, Measurement, MeasurementSet, Weighting};
use countstat::coverage::{self, CoverageMethod, ExperimentModel};
use countstat::frequentist::{self, Ordering};
use countstat::gof::{self, BinnedData, NullRegime, PeakModel, Polynomial, TwoSample};
use countstat::significance::{self, CombineRule, NuisanceStrategy};
use countstat::special::{p_to_sigma_two_sided, sigma_to_p};
use countstat::{bayes, profile, CountingModel, IntervalResult, Observation, SubsidiaryCounts};

use crate::output::{Cell, Table};
use crate::*;

pub struct Outcome {
    pub name: String,
    pub table: Table,
    pub model: Option<CountingModel>,
}

type Res<T> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> Res<T> {
    Err(CliError::Usage(msg.into()))
}

fn seed(cli: &Cli, what: &str) -> Res<u64> {
    cli.seed
        .ok_or_else(|| CliError::Usage(format!("{what} is stochastic: pass --seed explicitly")))
}

fn model(cli: &Cli, inline: &Inline) -> Res<CountingModel> {
    match (&cli.model, inline.b, inline.eff) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            usage("give either --model or --b/--eff, not both")
        }
        (Some(path), None, None) => model_file::load(path).map_err(CliError::Usage),
        (None, Some(b), eff) => Ok(CountingModel::exact(b, eff.unwrap_or(1.0))
            .map_err(|e| CliError::Usage(e.to_string()))?),
        (None, None, _) => usage("the background is needed: pass --b or --model"),
    }
}

fn observation(
    m: &CountingModel,
    n: u64,
    m_b: Option<u64>,
    m_eff: Option<u64>,
) -> Res<Observation> {
    let counts = SubsidiaryCounts {
        background: m.background().nominal_count().map(|k| m_b.unwrap_or(k)),
        efficiency: m.efficiency().nominal_count().map(|k| m_eff.unwrap_or(k)),
    };
    if m_b.is_some() && counts.background.is_none()
        || m_eff.is_some() && counts.efficiency.is_none()
    {
        return usage("subsidiary counts only apply to gamma-from-count nuisances");
    }
    Ok(Observation::new(m, n, counts)?)
}

fn need_n(n: Option<u64>, method: &str) -> Res<u64> {
    n.ok_or_else(|| CliError::Usage(format!("--n is required for {method}")))
}

/// lnL drop whose two-sided Gaussian coverage is `cl`.
fn delta_for(cl: f64) -> Res<f64> {
    let z = p_to_sigma_two_sided(1.0 - cl)?;
    Ok(0.5 * z * z)
}

fn interval_record(r: &IntervalResult, extra: Vec<(&str, Cell)>) -> Table {
    let mut pairs = vec![("method", Cell::from(r.method().to_string()))];
    pairs.extend(extra);
    pairs.extend([
        ("cl", r.cl().into()),
        ("lower", r.lower().into()),
        ("upper", r.upper().into()),
        ("empty", r.is_empty().into()),
    ]);
    Table::record(pairs)
}

fn scaled(r: IntervalResult, eff: f64) -> IntervalResult {
    match (r.lower(), r.upper()) {
        (Some(lo), Some(hi)) => IntervalResult::new(lo / eff, hi / eff, r.cl(), r.method()),
        _ => r,
    }
}

fn exact_only(m: &CountingModel, what: &str) -> Res<()> {
    if m.is_exact() {
        Ok(())
    } else {
        Err(CliError::Compute(
            countstat::Error::Mismatch(format!("{what} needs exact nuisance parameters"))
                .to_string(),
        ))
    }
}

pub fn run(cli: &Cli) -> Res<Outcome> {
    let (name, table, model) = match &cli.command {
        Command::Limit(a) => limit(cli, a)?,
        Command::Pvalue(a) => pvalue(cli, a)?,
        Command::Cls(a) => cls(cli, a)?,
        Command::Sensitivity(a) => sensitivity(cli, a)?,
        Command::Coverage(a) => coverage_cmd(cli, a)?,
        Command::Systematics(a) => ("systematics", systematics(cli, a)?, None),
        Command::Combine(a) => ("combine", combine_cmd(cli, a)?, None),
        Command::Blind(a) => ("blind", blind(a)?, None),
        Command::Unblind(a) => ("unblind", unblind(a)?, None),
        Command::Gof(g) => gof_cmd(cli, g)?,
    };
    Ok(Outcome {
        name: name.to_string(),
        table,
        model,
    })
}

type Run = (&'static str, Table, Option<CountingModel>);

fn limit(cli: &Cli, a: &LimitArgs) -> Res<Run> {
    if !(a.cl > 0.0 && a.cl < 1.0) {
        return usage(format!("--cl {} must lie in (0, 1)", a.cl));
    }
    if a.method == LimitMethod::FlipFlop {
        let x = a.x.ok_or_else(|| {
            CliError::Usage("flip-flop needs the Gaussian measurement --x".into())
        })?;
        let r = frequentist::flip_flop_interval(x, a.cl, a.switch_sigma)?;
        return Ok(("limit", interval_record(&r, vec![("x", x.into())]), None));
    }
    let m = model(cli, &a.inline)?;
    let n = need_n(a.n, "limit")?;
    let obs = observation(&m, n, a.m_b, a.m_eff)?;
    let r = match a.method {
        LimitMethod::Fc => coverage::counting_interval(CoverageMethod::Fc, &m, &obs, a.cl)?,
        LimitMethod::Classical => {
            coverage::counting_interval(CoverageMethod::Classical, &m, &obs, a.cl)?
        }
        LimitMethod::Central => {
            exact_only(&m, "central")?;
            scaled(
                frequentist::neyman_interval(n, m.b_mean(), a.cl, Ordering::Central)?,
                m.eff_mean(),
            )
        }
        LimitMethod::Cls => {
            exact_only(&m, "cls")?;
            scaled(
                significance::cls_upper_limit(n, m.b_mean(), a.cl)?,
                m.eff_mean(),
            )
        }
        LimitMethod::Bayes => bayes::upper_limit(&m, &obs, a.cl)?,
        LimitMethod::Profile => {
            let delta = match a.delta {
                Some(d) => d,
                None => delta_for(a.cl)?,
            };
            profile::profile_interval(&m, &obs, delta, a.cl)?
        }
        LimitMethod::FlipFlop => unreachable!(),
    };
    let t = interval_record(
        &r,
        vec![
            ("n", n.into()),
            ("b", m.b_mean().into()),
            ("eff", m.eff_mean().into()),
        ],
    );
    Ok(("limit", t, Some(m)))
}

fn pvalue(cli: &Cli, a: &PvalueArgs) -> Res<Run> {
    if let Some(ps) = &a.combine {
        let rule = match a.rule {
            Some(Rule::Min) => CombineRule::Min,
            Some(Rule::Product) => CombineRule::Product,
            None => {
                return usage(
                    "--rule is required with --combine; there is no default combination rule",
                )
            }
        };
        let r = significance::combine_pvalues(ps, rule)?;
        let t = Table::record(vec![
            ("method", r.method.into()),
            ("p", r.p.into()),
            ("sigma_equiv", r.sigma_equiv.into()),
        ]);
        return Ok(("pvalue", t, None));
    }
    let m = model(cli, &a.inline)?;
    let n = need_n(a.n, "pvalue")?;
    let r = if m.background().is_exact() && a.strategy.is_none() {
        significance::pvalue_counting(n, m.b_mean())?
    } else {
        let strategy = match a.strategy {
            None => return usage("the background is uncertain: choose --strategy"),
            Some(Strategy::PlugIn) => NuisanceStrategy::PlugIn,
            Some(Strategy::PriorPredictive) => NuisanceStrategy::PriorPredictive,
            Some(Strategy::PosteriorPredictive) => NuisanceStrategy::PosteriorPredictive,
            Some(Strategy::Conditioning) => NuisanceStrategy::Conditioning,
            Some(Strategy::Supremum) => match (a.b_lo, a.b_hi) {
                (Some(lo), Some(hi)) => NuisanceStrategy::Supremum { lo, hi },
                _ => return usage("supremum needs --b-lo and --b-hi"),
            },
            Some(Strategy::CiAdjusted) => {
                let interval = match (a.b_lo, a.b_hi) {
                    (Some(lo), Some(hi)) => Some((lo, hi)),
                    (None, None) => None,
                    _ => return usage("give both --b-lo and --b-hi, or neither"),
                };
                NuisanceStrategy::CiAdjusted {
                    gamma: a.gamma,
                    interval,
                }
            }
        };
        let obs = observation(&m, n, a.m_b, None)?;
        significance::pvalue_nuisance(&obs, &m, strategy)?
    };
    let t = Table::record(vec![
        ("method", r.method.into()),
        ("n", n.into()),
        ("b", m.b_mean().into()),
        ("p", r.p.into()),
        ("sigma_equiv", r.sigma_equiv.into()),
    ]);
    Ok(("pvalue", t, Some(m)))
}

fn cls(cli: &Cli, a: &ClsArgs) -> Res<Run> {
    let m = model(cli, &a.inline)?;
    exact_only(&m, "cls")?;
    let t = match a.s {
        Some(s) => {
            let r = significance::cls_counting(a.n, m.b_mean(), s * m.eff_mean())?;
            Table::record(vec![
                ("n", a.n.into()),
                ("b", m.b_mean().into()),
                ("s", s.into()),
                ("cls", r.cls.into()),
                ("one_minus_p1", r.one_minus_p1.into()),
                ("one_minus_p0", r.one_minus_p0.into()),
                ("excluded", r.excluded.into()),
            ])
        }
        None => {
            let r = scaled(
                significance::cls_upper_limit(a.n, m.b_mean(), a.cl)?,
                m.eff_mean(),
            );
            interval_record(&r, vec![("n", a.n.into()), ("b", m.b_mean().into())])
        }
    };
    Ok(("cls", t, Some(m)))
}

fn sensitivity(cli: &Cli, a: &SensitivityArgs) -> Res<Run> {
    let m = model(cli, &a.inline)?;
    match a.kind {
        SensitivityKind::Punzi => {
            let alpha = a.alpha.unwrap_or_else(|| sigma_to_p(a.alpha_sigma));
            let r = significance::punzi_sensitivity(&m, alpha, a.cl.unwrap_or(0.95))?;
            let t = Table::record(vec![
                ("b", m.b_mean().into()),
                ("alpha", r.alpha_target.into()),
                ("t_crit", r.t_crit.into()),
                ("alpha_achieved", r.alpha.into()),
                ("power", r.cl.into()),
                ("s_min", r.s_min.into()),
            ]);
            Ok(("sensitivity", t, Some(m)))
        }
        SensitivityKind::Median => {
            let seed = seed(cli, "median sensitivity")?;
            let cl = a.cl.unwrap_or(0.9);
            let method = match a.method {
                LimitMethod::Fc => CoverageMethod::Fc,
                LimitMethod::Classical => CoverageMethod::Classical,
                LimitMethod::Bayes => CoverageMethod::Bayes,
                LimitMethod::Profile => CoverageMethod::Profile {
                    delta: delta_for(cl)?,
                },
                other => {
                    return usage(format!(
                    "median sensitivity supports fc, classical, bayes and profile, not {other:?}"
                ))
                }
            };
            let r = significance::median_sensitivity(&m, a.toys, seed, |o: &Observation| {
                coverage::counting_interval(method, &m, o, cl)
            })?;
            let t = Table::record(vec![
                ("b", m.b_mean().into()),
                ("method", method.name().into()),
                ("cl", cl.into()),
                ("toys", a.toys.into()),
                ("median_upper", r.median.into()),
            ]);
            Ok(("sensitivity", t, Some(m)))
        }
    }
}

fn grid(lo: f64, hi: f64, step: f64) -> Res<Vec<f64>> {
    if !(step > 0.0 && hi >= lo && lo >= 0.0) {
        return usage(format!(
            "grid {lo}..{hi} step {step} is not a non-negative ascending grid"
        ));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + step * i as f64).collect())
}

fn coverage_cmd(cli: &Cli, a: &CoverageArgs) -> Res<Run> {
    let seed = seed(cli, "coverage")?;
    let s_grid = grid(a.s_min, a.s_max, a.s_step)?;
    let (method, exp, m) = match a.method {
        CoverageKind::FlipFlop => {
            if cli.model.is_some() || a.inline.b.is_some() {
                return usage("flip-flop coverage uses the unit-Gaussian model; drop --model/--b");
            }
            (
                CoverageMethod::FlipFlop {
                    switch_sigma: a.switch_sigma,
                },
                ExperimentModel::UnitGaussian,
                None,
            )
        }
        kind => {
            let m = model(cli, &a.inline)?;
            let method = match kind {
                CoverageKind::Fc => CoverageMethod::Fc,
                CoverageKind::Classical => CoverageMethod::Classical,
                CoverageKind::Bayes => CoverageMethod::Bayes,
                _ => CoverageMethod::Profile {
                    delta: a.delta.map_or_else(|| delta_for(a.cl), Ok)?,
                },
            };
            (method, ExperimentModel::Counting(m), Some(m))
        }
    };
    let c = coverage::coverage_scan(method, &exp, &s_grid, a.cl, a.toys, seed)?;
    let mut t = Table::new(&["s_true", "coverage", "stderr", "n_toys"]);
    for i in 0..c.s_true.len() {
        t.push(vec![
            c.s_true[i].into(),
            c.coverage[i].into(),
            c.stderr[i].into(),
            c.n_toys.into(),
        ]);
    }
    Ok(("coverage", t, m))
}

fn parse_matrix(text: &str) -> Res<Vec<Vec<f64>>> {
    text.split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| CliError::Usage(format!("covariance entry '{v}': {e}")))
                })
                .collect()
        })
        .collect()
}

fn systematics(cli: &Cli, a: &SystematicsArgs) -> Res<Table> {
    let seed = seed(cli, "systematics")?;
    let d = a.nominal.len();
    let cov = parse_matrix(&a.covariance)?;
    let lin = a.linear.clone().unwrap_or_else(|| vec![0.0; d]);
    let quad = a.quadratic.clone().unwrap_or_else(|| vec![0.0; d]);
    if lin.len() != d || quad.len() != d {
        return usage(format!("--linear and --quadratic need {d} coefficients"));
    }
    if a.linear.is_none() && a.quadratic.is_none() {
        return usage("give the response through --linear and/or --quadratic");
    }
    let response = |x: &[f64]| {
        x.iter()
            .zip(&lin)
            .zip(&quad)
            .map(|((x, l), q)| l * x + q * x * x)
            .sum::<f64>()
    };
    let r = coverage::systematics_compare(response, &a.nominal, &cov, a.multisim, seed)?;
    let mut pairs: Vec<(String, Cell)> = r
        .unisim_shifts
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("unisim_{}", i + 1), Cell::from(*s)))
        .collect();
    pairs.extend([
        ("quadrature".to_string(), r.quadrature.into()),
        ("multisim".to_string(), r.multisim.into()),
        ("multisim_error".to_string(), r.multisim_error.into()),
    ]);
    let mut t = Table {
        columns: pairs.iter().map(|p| p.0.clone()).collect(),
        rows: Vec::new(),
    };
    t.push(pairs.into_iter().map(|p| p.1).collect());
    Ok(t)
}

fn read_csv(path: &str) -> Res<Vec<csv::StringRecord>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
    r.records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(format!("{path}: {e}")))
}

/// Numeric rows of a CSV, skipping a leading header row.
fn numeric_rows(path: &str, min_cols: usize) -> Res<Vec<Vec<f64>>> {
    let recs = read_csv(path)?;
    let mut out = Vec::new();
    for (i, rec) in recs.iter().enumerate() {
        let vals: Result<Vec<f64>, _> = rec
            .iter()
            .take_while(|f| !f.is_empty())
            .map(|f| f.parse::<f64>())
            .collect();
        match vals {
            Ok(v) if v.len() >= min_cols => out.push(v),
            Err(_) if i == 0 => continue,
            _ => {
                return usage(format!(
                    "{path}:{}: expected at least {min_cols} numeric columns",
                    i + 1
                ))
            }
        }
    }
    if out.is_empty() {
        return usage(format!("{path}: no data rows"));
    }
    Ok(out)
}

fn combine_cmd(cli: &Cli, a: &CombineArgs) -> Res<Table> {
    if let Some(w) = a.weight_bias {
        let seed = seed(cli, "the weight-bias simulation")?;
        let weighting = match w {
            WeightingArg::Observed => Weighting::Observed,
            WeightingArg::ExpectedAtEstimate => Weighting::ExpectedAtEstimate,
            WeightingArg::Iterated => Weighting::Iterated,
        };
        let r = combine::poisson_weight_bias(a.true_mean, a.repeats, weighting, seed)?;
        return Ok(Table::record(vec![
            ("weighting", weighting.name().into()),
            ("true_mean", r.true_mean.into()),
            ("repeats", r.n_repeats.into()),
            ("bias", r.bias.into()),
            ("stderr", r.stderr.into()),
        ]));
    }
    let path = a
        .input
        .as_deref()
        .ok_or_else(|| CliError::Usage("--input measurement CSV is required".into()))?;
    let recs = read_csv(path)?;
    let mut ms = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in recs.iter().enumerate() {
        let value = rec.get(0).and_then(|v| v.parse::<f64>().ok());
        let sigma = rec.get(1).and_then(|v| v.parse::<f64>().ok());
        match (value, sigma) {
            (Some(v), Some(s)) => {
                ms.push(
                    Measurement::new(v, s)
                        .map_err(|e| CliError::Usage(format!("{path}:{}: {e}", i + 1)))?,
                );
                labels.push(
                    rec.get(2)
                        .filter(|l| !l.is_empty())
                        .map_or_else(|| format!("m{}", ms.len()), str::to_string),
                );
            }
            _ if i == 0 => continue,
            _ => return usage(format!("{path}:{}: expected value,sigma[,label]", i + 1)),
        }
    }
    let corr = match (&a.correlation, a.rho) {
        (Some(_), Some(_)) => return usage("give --correlation or --rho, not both"),
        (Some(p), None) => Some(numeric_rows(p, ms.len())?),
        (None, Some(rho)) if ms.len() == 2 => Some(vec![vec![1.0, rho], vec![rho, 1.0]]),
        (None, Some(_)) => return usage("--rho applies to exactly two measurements"),
        (None, None) => None,
    };
    let r = match corr {
        None => combine::weighted_average(&ms)?,
        Some(c) => {
            let mut set = MeasurementSet::from_correlation(&ms, &c)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            set.labels = labels;
            combine::correlated_average(&set)?
        }
    };
    Ok(Table::record(vec![
        ("a_best", r.a_best.into()),
        ("sigma_best", r.sigma_best.into()),
        ("S", r.s.into()),
        ("scale_factor", r.scale_factor.into()),
        ("scaled_sigma", r.scaled_sigma.into()),
        ("outside_range", r.outside_range.into()),
    ]))
}

/// Shortest decimal that parses back to the same `f64`, so the blinded
/// value and carry survive CSV output bit for bit.
fn exact(v: f64) -> Cell {
    Cell::Text(format!("{v:?}"))
}

fn blind(a: &BlindArgs) -> Res<Table> {
    let b = combine::blind(a.value, a.key.as_bytes(), (a.lo, a.hi))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Table::record(vec![
        ("blinded", exact(b.value)),
        ("carry", exact(b.carry)),
    ]))
}

fn unblind(a: &UnblindArgs) -> Res<Table> {
    let blinded = combine::Blinded {
        value: a.value,
        carry: a.carry,
    };
    let v = combine::unblind(blinded, a.key.as_bytes(), (a.lo, a.hi))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Table::record(vec![("value", exact(v))]))
}

fn histogram(path: &str, with_prediction: bool) -> Res<(BinnedData, Vec<f64>)> {
    let rows = numeric_rows(path, if with_prediction { 4 } else { 3 })?;
    let mut edges = vec![rows[0][0]];
    for (i, r) in rows.iter().enumerate() {
        if i > 0 && r[0] != edges[i] {
            return usage(format!(
                "{path}: bin {} starts at {} but the previous bin ends at {}",
                i + 1,
                r[0],
                edges[i]
            ));
        }
        edges.push(r[1]);
    }
    let counts = rows.iter().map(|r| r[2]).collect();
    let pred = if with_prediction {
        rows.iter().map(|r| r[3]).collect()
    } else {
        Vec::new()
    };
    let variance = (with_prediction && rows.iter().all(|r| r.len() >= 5))
        .then(|| rows.iter().map(|r| r[4]).collect());
    let data = BinnedData::new(edges, counts, variance)
        .map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
    Ok((data, pred))
}

fn gof_cmd(cli: &Cli, g: &GofCommand) -> Res<Run> {
    let t = match g {
        GofCommand::Chi2(a) => {
            let (data, pred) = histogram(&a.data, true)?;
            let r = gof::chi2_binned(&data, &pred, a.n_fitted)?;
            Table::record(vec![
                ("S", r.s.into()),
                ("ndof", r.ndof.into()),
                ("p", r.p.into()),
                ("low_prediction", r.low_prediction.into()),
            ])
        }
        GofCommand::DeltaChi2(a) => {
            let r = match (&a.data, a.chi2_restricted, a.chi2_extended) {
                (None, Some(c0), Some(c1)) => {
                    let k = a.k.ok_or_else(|| {
                        CliError::Usage("--k (extra parameters) is required".into())
                    })?;
                    if a.regime == Regime::McNull {
                        return usage("a Monte Carlo null needs --data to generate toys from");
                    }
                    gof::delta_chi2_from_values(c0, c1, k)?
                }
                (Some(path), None, None) => {
                    let (data, _) = histogram(path, false)?;
                    let regime = match a.regime {
                        Regime::Wilks => NullRegime::Wilks,
                        Regime::McNull => NullRegime::McNull {
                            n_toys: a.toys,
                            seed: seed(cli, "a Monte Carlo null")?,
                        },
                    };
                    let restricted = Polynomial::new(a.degree, &data.edges);
                    match a.extension {
                        Extension::Polynomial => gof::chi2_difference(
                            &data,
                            &restricted,
                            &Polynomial::new(a.degree + 1, &data.edges),
                            a.k.unwrap_or(1),
                            regime,
                        )?,
                        Extension::Peak => gof::chi2_difference(
                            &data,
                            &restricted,
                            &PeakModel::new(a.degree, &data.edges),
                            a.k.unwrap_or(3),
                            regime,
                        )?,
                    }
                }
                _ => return usage("give either --chi2-restricted and --chi2-extended, or --data"),
            };
            Table::record(vec![
                ("chi2_restricted", r.chi2_restricted.into()),
                ("chi2_extended", r.chi2_extended.into()),
                ("delta_chi2", r.delta.into()),
                ("k", r.k_extra.into()),
                ("p", r.p.into()),
                ("sigma", r.sigma.into()),
            ])
        }
        GofCommand::Energy(a) => {
            let seed = seed(cli, "the energy test")?;
            let (pa, pb) = (numeric_rows(&a.a, 1)?, numeric_rows(&a.b, 1)?);
            let d = pa[0].len();
            let scales = a.scales.clone().unwrap_or_else(|| vec![1.0; d]);
            let ts = TwoSample::new(pa, pb, scales).map_err(|e| CliError::Usage(e.to_string()))?;
            let r = gof::energy_test(&ts, a.epsilon, a.perm, seed)?;
            Table::record(vec![
                ("E", r.e.into()),
                ("p", r.p.into()),
                ("epsilon", r.epsilon.into()),
                ("relabelings", r.n_relabelings.into()),
                ("exhaustive", r.exhaustive.into()),
            ])
        }
    };
    Ok(("gof", t, None))
}
