use std::collections::BTreeSet;
use std::io::Cursor;

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use scaleup_core::ccfr::{discretize_delay, estimate_true_cases};
use scaleup_core::filter::apply_filters;
use scaleup_core::ingest::{
    builtin_region_table, parse_official_series, parse_region_table, parse_responses,
    write_responses,
};
use scaleup_core::model::parse_date;
use scaleup_core::report::{
    compare as join_series, read_ccfr, read_estimates, write_ccfr, write_compare, write_estimates,
    CompareOptions,
};
use scaleup_core::serology::scale_symptomatic_to_total;
use scaleup_core::simulator::{
    bias_experiment, coverage_experiment, simulate_responses, write_truth, EstimatorKind,
};
use scaleup_core::survey::{rolling_country_series, rolling_region_series};
use scaleup_core::{
    Baseline, CcfrError, CountryCode, CountryInfo, RespondentModel, Scenario, SurveyResponse,
};

use crate::manifest::{read_input, RunManifest};
use crate::{
    CcfrArgs, Cli, CompareArgs, EstimateArgs, EstimatorArg, ExperimentArg, MethodArg, Output,
    SimulateArgs,
};

const DEFAULT_SIM_RESPONSES: usize = 300;
const DEFAULT_SIM_DATE: &str = "2020-04-15";

fn base_manifest(cli: &Cli, command: &str) -> RunManifest {
    let mut m = RunManifest::new(command);
    m.param("strict", cli.strict);
    if let Some(seed) = cli.seed {
        m.param("seed", seed);
    }
    m
}

fn country_code(s: &str) -> Result<CountryCode> {
    CountryCode::parse(s).map_err(|e| anyhow!("--country: {e}"))
}

fn date_arg(flag: &str, s: &str) -> Result<NaiveDate> {
    parse_date(s).map_err(|e| anyhow!("{flag}: {e}"))
}

fn pick_country(rows: &[SurveyResponse], requested: Option<&str>) -> Result<Option<CountryCode>> {
    if let Some(code) = requested {
        return country_code(code).map(Some);
    }
    let present: BTreeSet<CountryCode> = rows.iter().map(SurveyResponse::country).collect();
    match present.len() {
        0 => Ok(None),
        1 => Ok(present.into_iter().next()),
        _ => {
            let list: Vec<&str> = present.iter().map(CountryCode::as_str).collect();
            bail!(
                "responses cover several countries ({}); pick one with --country",
                list.join(", ")
            )
        }
    }
}

fn region_table(
    args: &EstimateArgs,
    country: CountryCode,
    manifest: &mut RunManifest,
) -> Result<CountryInfo> {
    let info = match &args.regions {
        Some(path) => {
            let bytes = read_input(path, manifest)?;
            parse_region_table(&bytes[..]).with_context(|| format!("in {}", path.display()))?
        }
        None => builtin_region_table(country)
            .ok_or_else(|| anyhow!("no built-in region table for {country}; pass --regions"))?,
    };
    if info.country() != country {
        bail!(
            "region table is for {}, responses are for {country}",
            info.country()
        );
    }
    Ok(info)
}

pub fn estimate(cli: &Cli, args: &EstimateArgs) -> Result<Output> {
    let mut manifest = base_manifest(cli, "estimate");
    let method = match args.method {
        MethodArg::Region => "region",
        MethodArg::Country => "country",
    };
    manifest.param("method", method);
    manifest.param("a_min", args.a_min);
    manifest.param("amin_country", args.amin_country);
    manifest.param("z", args.z);
    manifest.param("ratio_cap", args.ratio_cap);
    if let Some(f) = args.scale_symptomatic {
        manifest.param("scale_symptomatic", f);
    }
    if !(args.ratio_cap > 0.0 && args.ratio_cap <= 1.0) {
        bail!("--ratio-cap must lie in (0, 1]");
    }
    if !(args.z > 0.0 && args.z.is_finite()) {
        bail!("--z must be positive");
    }
    if args.a_min == 0 || args.amin_country == 0 {
        bail!("window minimums must be at least 1");
    }

    let bytes = read_input(&args.responses, &mut manifest)?;
    let file = parse_responses(&bytes[..], cli.strict)
        .with_context(|| format!("in {}", args.responses.display()))?;
    if let Some(first) = file.rejects.first() {
        eprintln!(
            "warning: skipped {} malformed row(s); first at line {}: {}",
            file.rejects.len(),
            first.line,
            first.reason
        );
    }

    let country = pick_country(&file.rows, args.country.as_deref())?;
    let mut results = Vec::new();
    if let Some(country) = country {
        manifest.param("country", country);
        let batch: Vec<SurveyResponse> = file
            .rows
            .iter()
            .filter(|r| r.country() == country)
            .cloned()
            .collect();
        let info = match args.method {
            MethodArg::Region => Some(region_table(args, country, &mut manifest)?),
            MethodArg::Country => None,
        };
        if !batch.is_empty() {
            let report = apply_filters(&batch, args.ratio_cap)?;
            eprintln!(
                "{country}: kept {} of {} responses (reach fence {}, {} over fence, {} over ratio cap)",
                report.kept.len(),
                batch.len(),
                report.reach_fence,
                report.removed_reach.len(),
                report.removed_ratio.len()
            );
            results = match &info {
                Some(info) => rolling_region_series(&report.kept, info, args.a_min, args.z),
                None => rolling_country_series(&report.kept, args.amin_country, args.z),
            };
        }
    }
    if let Some(f) = args.scale_symptomatic {
        results = results
            .iter()
            .map(|e| scale_symptomatic_to_total(e, f))
            .collect::<Result<_, _>>()?;
    }

    let mut primary = Vec::new();
    write_estimates(&mut primary, &results)?;
    Ok(Output {
        primary,
        extra: Vec::new(),
        manifest,
    })
}

pub fn ccfr(cli: &Cli, args: &CcfrArgs) -> Result<Output> {
    let mut manifest = base_manifest(cli, "ccfr");
    manifest.param("baseline_deaths", args.baseline_deaths);
    manifest.param("baseline_cases", args.baseline_cases);
    manifest.param("delay_mean", args.delay_mean);
    manifest.param("delay_sd", args.delay_sd);
    manifest.param("delay_horizon", args.delay_horizon);
    manifest.param("z", args.z);

    let baseline = Baseline::new(args.baseline_deaths, args.baseline_cases)?;
    let delay = discretize_delay(args.delay_mean, args.delay_sd, args.delay_horizon)?;
    let bytes = read_input(&args.series, &mut manifest)?;
    let series = parse_official_series(&bytes[..])
        .with_context(|| format!("in {}", args.series.display()))?;
    let rows = match estimate_true_cases(&series, &delay, &baseline, args.z) {
        Ok(rows) => rows,
        Err(CcfrError::EmptySeries) => Vec::new(),
        Err(e) => return Err(e.into()),
    };

    let mut primary = Vec::new();
    write_ccfr(&mut primary, &rows)?;
    Ok(Output {
        primary,
        extra: Vec::new(),
        manifest,
    })
}

pub fn compare(cli: &Cli, args: &CompareArgs) -> Result<Output> {
    let mut manifest = base_manifest(cli, "compare");
    let population = match (args.population, &args.country) {
        (Some(n), _) => n,
        (None, Some(code)) => {
            let code = country_code(code)?;
            builtin_region_table(code)
                .ok_or_else(|| anyhow!("no built-in population for {code}; pass --population"))?
                .population()
        }
        (None, None) => bail!("pass --population or --country"),
    };
    if population == 0 {
        bail!("--population must be positive");
    }
    if let Some(f) = args.scale_symptomatic {
        if !(f > 0.0 && f <= 1.0) {
            bail!("--scale-symptomatic must lie in (0, 1]");
        }
    }
    let from = args
        .from
        .as_deref()
        .map(|s| date_arg("--from", s))
        .transpose()?;
    let to = args
        .to
        .as_deref()
        .map(|s| date_arg("--to", s))
        .transpose()?;
    manifest.param("population", population);
    for (key, value) in [
        ("scale_symptomatic", args.scale_symptomatic),
        ("serology_reference", args.serology_reference),
    ] {
        if let Some(v) = value {
            manifest.param(key, v);
        }
    }
    for (key, value) in [("from", from), ("to", to)] {
        if let Some(d) = value {
            manifest.param(key, d);
        }
    }

    let survey_bytes = read_input(&args.survey, &mut manifest)?;
    let survey = read_estimates(Cursor::new(survey_bytes))
        .with_context(|| format!("in {}", args.survey.display()))?;
    let ccfr_bytes = read_input(&args.ccfr, &mut manifest)?;
    let ccfr = read_ccfr(Cursor::new(ccfr_bytes))
        .with_context(|| format!("in {}", args.ccfr.display()))?;
    let official = match &args.official {
        Some(path) => {
            let bytes = read_input(path, &mut manifest)?;
            Some(
                parse_official_series(&bytes[..])
                    .with_context(|| format!("in {}", path.display()))?,
            )
        }
        None => None,
    };

    let opts = CompareOptions {
        population,
        symptomatic_fraction: args.scale_symptomatic,
        serology_reference: args.serology_reference,
        from,
        to,
    };
    let rows = join_series(&survey, &ccfr, official.as_deref(), &opts);
    if rows.is_empty() && !survey.is_empty() && !ccfr.is_empty() {
        eprintln!("warning: survey and cCFR series share no dates in range; output is empty");
    }

    let mut primary = Vec::new();
    write_compare(&mut primary, &rows)?;
    Ok(Output {
        primary,
        extra: Vec::new(),
        manifest,
    })
}

fn summary_line(out: &mut String, key: &str, value: impl std::fmt::Display) {
    out.push_str(&format!("{key}={value}\n"));
}

pub fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<Output> {
    let mut manifest = base_manifest(cli, "simulate");
    let bytes = read_input(&args.scenario, &mut manifest)?;
    let text = String::from_utf8(bytes).context("scenario is not UTF-8")?;
    let scenario =
        Scenario::parse(&text).with_context(|| format!("in {}", args.scenario.display()))?;
    let world = match cli.seed {
        Some(seed) => scenario.world.with_seed(seed),
        None => scenario.world.clone(),
    };
    let n = args
        .n
        .or(scenario.responses)
        .unwrap_or(DEFAULT_SIM_RESPONSES);
    let date = match &args.date {
        Some(s) => date_arg("--date", s)?,
        None => match scenario.date {
            Some(d) => d,
            None => date_arg("date", DEFAULT_SIM_DATE)?,
        },
    };
    manifest.param("seed", world.rng_seed);
    manifest.param("n", n);
    manifest.param("date", date);

    let mut extra = Vec::new();
    if let Some(path) = &args.truth {
        let mut buf = Vec::new();
        write_truth(&mut buf, &world)?;
        extra.push((path.clone(), buf));
    }
    let draw = || -> Result<Vec<u8>> {
        let responses = simulate_responses(&world, &scenario.model, n, date)?;
        let mut buf = Vec::new();
        write_responses(&mut buf, &responses)?;
        Ok(buf)
    };

    let primary = match args.experiment {
        None => draw()?,
        Some(experiment) => {
            if let Some(path) = &args.responses {
                extra.push((path.clone(), draw()?));
            }
            manifest.param("trials", args.trials);
            let mut s = String::new();
            match experiment {
                ExperimentArg::Coverage => {
                    let (kind, name) = match args.estimator {
                        EstimatorArg::Stratified => (EstimatorKind::Stratified, "stratified"),
                        EstimatorArg::Pooled => (EstimatorKind::Pooled, "pooled"),
                    };
                    manifest.param("experiment", "coverage");
                    manifest.param("estimator", name);
                    let r = coverage_experiment(&world, &scenario.model, n, args.trials, kind)?;
                    summary_line(&mut s, "experiment", "coverage");
                    summary_line(&mut s, "estimator", name);
                    summary_line(&mut s, "seed", world.rng_seed);
                    summary_line(&mut s, "n", n);
                    summary_line(&mut s, "trials", r.trials);
                    summary_line(&mut s, "truth", fmt(r.truth));
                    summary_line(&mut s, "covered", r.covered);
                    summary_line(&mut s, "undefined", r.undefined);
                    summary_line(&mut s, "coverage", fmt(r.coverage));
                }
                ExperimentArg::Bias => {
                    manifest.param("experiment", "bias");
                    let population_weights = RespondentModel::unbiased(&world).region_bias;
                    let unbiased = RespondentModel {
                        region_bias: population_weights.clone(),
                        ..scenario.model.clone()
                    };
                    let biased = if scenario.model.region_bias != population_weights {
                        scenario.model.clone()
                    } else {
                        manifest.param("bias_factor", args.bias_factor);
                        let top = world
                            .true_prevalence
                            .iter()
                            .max_by(|a, b| a.1.total_cmp(b.1))
                            .map(|(code, _)| code.clone())
                            .expect("scenario has regions");
                        unbiased.biased_toward(&top, args.bias_factor)
                    };
                    let r = bias_experiment(&world, &biased, &unbiased, n, args.trials)?;
                    summary_line(&mut s, "experiment", "bias");
                    summary_line(&mut s, "seed", world.rng_seed);
                    summary_line(&mut s, "n", n);
                    summary_line(&mut s, "trials", r.trials);
                    summary_line(&mut s, "truth", fmt(r.truth));
                    summary_line(&mut s, "pooled_mae_biased", fmt(r.pooled_biased));
                    summary_line(&mut s, "stratified_mae_biased", fmt(r.stratified_biased));
                    summary_line(&mut s, "pooled_mae_unbiased", fmt(r.pooled_unbiased));
                    summary_line(
                        &mut s,
                        "stratified_mae_unbiased",
                        fmt(r.stratified_unbiased),
                    );
                }
            }
            s.into_bytes()
        }
    };
    Ok(Output {
        primary,
        extra,
        manifest,
    })
}

fn fmt(x: f64) -> String {
    scaleup_core::report::fmt_sig6(x)
}
